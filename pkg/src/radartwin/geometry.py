"""Point-cloud primitives shared by the registration, scattering, and radar stages.

Clouds are plain ``(N, 3)`` float64 arrays wrapped in :class:`PointCloudFrame`
together with optional unit normals and a slow-time timestamp. All operations
are pure functions of immutable inputs and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhood, MismatchedFrameShape, ParseError

_NORMAL_TOL = 1e-6


def _as_points(arr) -> np.ndarray:
    pts = np.asarray(arr, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


@dataclass
class PointCloudFrame:
    """A timestamped set of 3-D points with optional per-point unit normals.

    Parameters
    ----------
    points : (N, 3) array
        Coordinates in meters.
    normals : (N, 3) array, optional
        Unit vectors, one per point.
    timestamp : float
        Slow time of the frame in seconds, non-negative.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = _as_points(self.points)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            if nrm.shape != self.points.shape:
                raise ValueError("normals must match points in shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if not np.all(np.abs(lengths - 1.0) <= _NORMAL_TOL):
                raise ValueError("normals must have unit length")
            self.normals = nrm
        self.timestamp = float(self.timestamp)
        if not np.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError("timestamp must be finite and non-negative")

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_normals(self, normals: np.ndarray) -> "PointCloudFrame":
        return PointCloudFrame(self.points.copy(), normals, self.timestamp)


@dataclass
class SurfaceSampling:
    """A cloud plus per-point area weights discretising a surface integral."""

    points: PointCloudFrame
    area_weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.area_weights, dtype=float)
        if w.shape != (len(self.points),):
            raise ValueError("one area weight per point required")
        if not np.all(w > 0):
            raise ValueError("area weights must be positive")
        self.area_weights = w


def estimate_normals(cloud: PointCloudFrame, k_neighbors: int = 16,
                     viewpoint=(0.0, 0.0, 0.0)) -> PointCloudFrame:
    """Estimate outward unit normals by local PCA over ``k_neighbors`` neighbours.

    The normal of each point is the smallest-eigenvalue eigenvector of its
    neighbourhood covariance, sign-flipped so that it points toward
    ``viewpoint`` (the sensing geometry guarantees visible surface normals
    face the sensor cluster).

    Raises
    ------
    DegenerateNeighborhood
        If any neighbourhood covariance has rank < 2 (collinear samples).
    """
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    pts = cloud.points
    if len(cloud) < k_neighbors + 1:
        raise ValueError("cloud must contain at least k_neighbors + 1 points")
    viewpoint = np.asarray(viewpoint, dtype=float)

    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k_neighbors + 1)
    neigh = pts[idx]                                  # (N, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k_neighbors + 1)
    evals, evecs = np.linalg.eigh(cov)                # ascending eigenvalues

    lam_max = evals[:, 2]
    degenerate = (lam_max <= 0) | (evals[:, 1] <= 1e-12 * np.maximum(lam_max, 1e-300))
    if np.any(degenerate):
        bad = int(np.argmax(degenerate))
        raise DegenerateNeighborhood(
            f"rank-deficient neighbourhood at point {bad} (collinear samples)")

    normals = evecs[:, :, 0]
    flip = np.einsum("ni,ni->n", normals, viewpoint - pts) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloudFrame(pts.copy(), normals, cloud.timestamp)


def time_average_frames(frames: list[PointCloudFrame]) -> PointCloudFrame:
    """Average a per-index-corresponding frame sequence into one cloud.

    Point ``k`` of the output is the arithmetic mean over frames of point
    ``k``; the timestamp is the mean timestamp. Normals are dropped (estimate
    them on the averaged geometry if needed).
    """
    if not frames:
        raise ValueError("at least one frame required")
    n = len(frames[0])
    for i, f in enumerate(frames):
        if len(f) != n:
            raise MismatchedFrameShape(
                f"frame 0 has {n} points but frame {i} has {len(f)}")
    pts = np.mean([f.points for f in frames], axis=0)
    ts = float(np.mean([f.timestamp for f in frames]))
    return PointCloudFrame(pts, None, ts)


def subsample(cloud: PointCloudFrame, target_count: int, seed: int = 0) -> PointCloudFrame:
    """Farthest-point subsampling to ``target_count`` points.

    Greedy selection maximises the minimum pairwise distance of the output.
    The start point is the sample farthest from the centroid, which makes the
    result deterministic; ``seed`` is accepted for interface stability but the
    selection does not depend on it.
    """
    n = len(cloud)
    if not 1 <= target_count <= n:
        raise ValueError("target_count must be within [1, point count]")
    pts = cloud.points
    start = int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    selected = np.empty(target_count, dtype=int)
    selected[0] = start
    min_d = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, target_count):
        nxt = int(np.argmax(min_d))
        selected[i] = nxt
        np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1), out=min_d)
    normals = cloud.normals[selected] if cloud.normals is not None else None
    return PointCloudFrame(pts[selected], normals, cloud.timestamp)


def surface_sampling(cloud: PointCloudFrame, k_density: int = 6) -> SurfaceSampling:
    """Attach density-adaptive area weights: weight_k = pi * d_k**2 with d_k the
    mean distance to the ``k_density`` nearest neighbours, so that the weighted
    sum over points approximates the surface integral."""
    pts = cloud.points
    if len(cloud) < k_density + 1:
        raise ValueError("cloud too small for density estimation")
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=k_density + 1)
    mean_d = dists[:, 1:].mean(axis=1)
    if np.any(mean_d <= 0):
        raise DegenerateNeighborhood("coincident points give zero local spacing")
    return SurfaceSampling(cloud, np.pi * mean_d ** 2)


# ---------------------------------------------------------------------------
# ASCII PLY I/O (diff-able fixtures; binary dialects rejected)
# ---------------------------------------------------------------------------

_FLOAT_TYPES = {"float", "float32", "double", "float64"}


def save_ply(cloud: PointCloudFrame, path) -> None:
    """Write an ASCII PLY with x,y,z (and nx,ny,nz when normals are present).

    Coordinates are serialised with 9 significant digits. The frame timestamp
    is persisted in a ``comment timestamp`` header line so that a round trip
    is self-contained.
    """
    path = Path(path)
    has_n = cloud.normals is not None
    header = [
        "ply",
        "format ascii 1.0",
        f"comment timestamp {cloud.timestamp:.9g}",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_n:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append("end_header")

    rows = []
    for i in range(len(cloud)):
        vals = list(cloud.points[i])
        if has_n:
            vals += list(cloud.normals[i])
        rows.append(" ".join(f"{v:.9g}" for v in vals))
    path.write_text("\n".join(header + rows) + "\n")


def load_ply(path) -> PointCloudFrame:
    """Parse an ASCII PLY with float x,y,z properties and optional nx,ny,nz.

    Raises :class:`ParseError` carrying the offending line number on malformed
    input; binary dialects are rejected.
    """
    lines = Path(path).read_text().splitlines()
    ln = 0

    def expect(cond, msg):
        if not cond:
            raise ParseError(msg, ln)

    expect(len(lines) >= 1 and lines[0].strip() == "ply", "missing 'ply' magic")
    n_vertex = None
    props: list[str] = []
    timestamp = 0.0
    fmt_seen = False
    i = 1
    while i < len(lines):
        ln = i + 1
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format":
            expect(len(tok) >= 2 and tok[1] == "ascii", f"unsupported format '{' '.join(tok[1:])}' (ASCII only)")
            fmt_seen = True
        elif tok[0] == "comment":
            if len(tok) >= 3 and tok[1] == "timestamp":
                try:
                    timestamp = float(tok[2])
                except ValueError:
                    raise ParseError("malformed timestamp comment", ln)
        elif tok[0] == "obj_info":
            continue
        elif tok[0] == "element":
            expect(len(tok) == 3, "malformed element declaration")
            expect(tok[1] == "vertex", f"unsupported element '{tok[1]}'")
            expect(n_vertex is None, "duplicate vertex element")
            try:
                n_vertex = int(tok[2])
            except ValueError:
                raise ParseError("vertex count is not an integer", ln)
        elif tok[0] == "property":
            expect(n_vertex is not None, "property before element declaration")
            expect(len(tok) == 3, "malformed property declaration")
            expect(tok[1] in _FLOAT_TYPES, f"unsupported property type '{tok[1]}'")
            props.append(tok[2])
        elif tok[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header token '{tok[0]}'", ln)
    else:
        raise ParseError("missing end_header", ln)

    expect(fmt_seen, "missing format line")
    expect(n_vertex is not None, "missing vertex element")
    for name in ("x", "y", "z"):
        if name not in props:
            ln = i
            raise ParseError(f"missing {name} property", ln)
    normal_names = ("nx", "ny", "nz")
    has_n = all(n in props for n in normal_names)
    if any(n in props for n in normal_names) and not has_n:
        ln = i
        raise ParseError("incomplete normal properties (need nx, ny and nz)", ln)

    data = np.empty((n_vertex, len(props)))
    for row in range(n_vertex):
        ln = i + row + 1
        if i + row >= len(lines):
            raise ParseError(f"expected {n_vertex} vertex rows, file ended early", ln)
        tok = lines[i + row].split()
        if len(tok) != len(props):
            raise ParseError(f"expected {len(props)} values, got {len(tok)}", ln)
        try:
            data[row] = [float(t) for t in tok]
        except ValueError:
            raise ParseError("non-numeric vertex value", ln)

    cols = {name: data[:, props.index(name)] for name in props}
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    normals = None
    if has_n:
        normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-6):
            ln = i + int(np.argmax(np.abs(lengths - 1.0))) + 1
            raise ParseError("normal is not unit length", ln)
        normals = normals / lengths[:, None]
    return PointCloudFrame(pts, normals, timestamp)
