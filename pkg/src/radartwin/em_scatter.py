"""Physical-optics scattering from a sampled conducting surface.

The surface is treated as a perfect electric conductor illuminated by an
infinitesimal dipole: induced currents are J = 2 n x H_inc on lit samples
(zero in shadow), and the field at an observer is the area-weighted sum of
each current element radiated through the free-space dyadic Green's function.
A raised-cosine "eye" window localises the contribution of a surface
neighbourhood, which is what turns the integral into a per-point scattering
map.

Time convention: exp(+j omega t), so outgoing waves carry exp(-j k0 R).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .errors import NearFieldSingular, SourceCoincident
from .geometry import SurfaceSampling

C_LIGHT = 2.99792458e8
MU_0 = 4.0e-7 * np.pi


@dataclass
class EmConstants:
    """Radar-band constants derived from the centre frequency."""

    frequency: float               # Hz
    k0: float = 0.0                # rad/m
    omega: float = 0.0             # rad/s
    mu: float = MU_0               # H/m
    c: float = C_LIGHT             # m/s

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        self.omega = 2.0 * np.pi * self.frequency
        self.k0 = self.omega / self.c

    @property
    def wavelength(self) -> float:
        return self.c / self.frequency


@dataclass
class DipoleSource:
    """Infinitesimal dipole: position, axis (local z), and moment I0*l in A*m."""

    position: np.ndarray
    axis: np.ndarray
    moment: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("axis must be a unit vector")
        self.axis = axis / n


@dataclass
class SurfaceCurrents:
    """Induced surface current density J(r_S) per sample, tangent to the surface."""

    sampling: SurfaceSampling
    currents: np.ndarray           # (N, 3) complex, A/m

    def __post_init__(self):
        J = np.asarray(self.currents, dtype=complex)
        if J.shape != (len(self.sampling.points), 3):
            raise ValueError("one current vector per surface sample required")
        normals = self.sampling.points.normals
        if normals is not None:
            mag = np.linalg.norm(J, axis=1)
            perp = np.abs(np.einsum("ni,ni->n", normals, J))
            if np.any(perp > 1e-9 * np.maximum(mag, 1e-300)):
                raise ValueError("currents must be tangent to the surface")
        self.currents = J


@dataclass
class ScatteringMap:
    """Localised scattered-field magnitude per surface point, for one Tx/Rx pair."""

    points: np.ndarray             # (N, 3) window-centre positions
    observation_point: np.ndarray  # (3,)
    magnitudes: np.ndarray         # (N,) V/m, >= 0
    eye_radius: float              # m

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.observation_point = np.asarray(self.observation_point, dtype=float).reshape(3)
        m = np.asarray(self.magnitudes, dtype=float)
        if m.shape != (self.points.shape[0],):
            raise ValueError("one magnitude per point required")
        if not (np.all(np.isfinite(m)) and np.all(m >= 0)):
            raise ValueError("magnitudes must be finite and non-negative")
        self.magnitudes = m
        if self.eye_radius <= 0:
            raise ValueError("eye_radius must be positive")


def incident_h_field(source: DipoleSource, consts: EmConstants, r_s) -> np.ndarray:
    """Incident magnetic field of the dipole at surface points ``r_s``.

    The field is azimuthal about the dipole axis. With r the vector from the
    dipole to the point, the exact small-dipole expression is

        H = (j k0 m / (4 pi r)) (1 + 1/(j k0 r)) e^{-j k0 r} (axis x r_hat),

    where ``axis x r_hat`` carries both sin(theta_pol) and the azimuthal
    direction, so no explicit frame rotation is needed. Accepts a single point
    or an (N, 3) batch.
    """
    pts = np.asarray(r_s, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    rel = pts - source.position
    r = np.linalg.norm(rel, axis=1)
    if np.any(r == 0):
        raise SourceCoincident("field requested at the dipole position")
    k0 = consts.k0
    factor = (1j * k0 * source.moment / (4.0 * np.pi * r)
              * (1.0 + 1.0 / (1j * k0 * r))
              * np.exp(-1j * k0 * r))
    h = factor[:, None] * np.cross(np.broadcast_to(source.axis, rel.shape), rel / r[:, None])
    return h[0] if single else h


def surface_current(normal, h_inc) -> np.ndarray:
    """PO current 2 n x H for unit normals; batch-aware."""
    n = np.asarray(normal, dtype=float)
    lengths = np.linalg.norm(np.atleast_2d(n), axis=1)
    if np.any(np.abs(lengths - 1.0) > 1e-9):
        raise ValueError("normals must be unit length")
    return 2.0 * np.cross(n, np.asarray(h_inc))


def induced_currents(sampling: SurfaceSampling, source: DipoleSource,
                     consts: EmConstants, shadowing: bool = True) -> SurfaceCurrents:
    """Currents over a full sampled surface; shadowed samples are zeroed.

    A sample is lit when its outward normal faces the source, i.e. when
    n . (r_s - source) < 0.
    """
    cloud = sampling.points
    if cloud.normals is None:
        raise ValueError("sampling must carry normals")
    h = incident_h_field(source, consts, cloud.points)
    J = surface_current(cloud.normals, h)
    if shadowing:
        lit = np.einsum("ni,ni->n", cloud.normals, cloud.points - source.position) < 0
        J[~lit] = 0.0
    return SurfaceCurrents(sampling, J)


def _green_apply(consts: EmConstants, rel: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Dyadic Green's function applied to current vectors.

    G.J = g(R) [ (1 - j/(k0 R) - 1/(k0 R)^2) J
                 - (1 - 3j/(k0 R) - 3/(k0 R)^2) (R_hat . J) R_hat ],
    g(R) = e^{-j k0 R} / (4 pi R), the closed-form expansion of
    (I + grad grad / k0^2) g for the e^{+j omega t} convention.
    """
    R = np.linalg.norm(rel, axis=1)
    if np.any(R < consts.wavelength / (2.0 * np.pi)):
        raise NearFieldSingular("observation point within one radian-distance of a sample")
    rhat = rel / R[:, None]
    inv = 1.0 / (consts.k0 * R)
    a = 1.0 - 1j * inv - inv ** 2
    b = 1.0 - 3j * inv - 3.0 * inv ** 2
    g = np.exp(-1j * consts.k0 * R) / (4.0 * np.pi * R)
    radial = np.einsum("ni,ni->n", rhat, J)
    return g[:, None] * (a[:, None] * J - (b * radial)[:, None] * rhat)


def radiation_vectors(currents: SurfaceCurrents, consts: EmConstants, r) -> np.ndarray:
    """Per-sample field contribution at observer ``r`` with unit window weight:
    -j omega mu * area_k * (G(r; r_k) . J_k)."""
    r = np.asarray(r, dtype=float).reshape(3)
    pts = currents.sampling.points.points
    gj = _green_apply(consts, r - pts, currents.currents)
    return (-1j * consts.omega * consts.mu) * currents.sampling.area_weights[:, None] * gj


def radiate(currents: SurfaceCurrents, consts: EmConstants, r,
            weights: np.ndarray | None = None) -> np.ndarray:
    """Total scattered E field at ``r``: weighted quadrature over all samples."""
    vec = radiation_vectors(currents, consts, r)
    if weights is not None:
        vec = np.asarray(weights, dtype=float)[:, None] * vec
    return vec.sum(axis=0)


def eye_weight(r_s, r0, a0: float) -> np.ndarray:
    """Raised-cosine window: 0.5 (cos(pi d / a0) + 1) for d <= a0, else 0."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    pts = np.asarray(r_s, dtype=float)
    single = pts.ndim == 1
    d = np.linalg.norm(np.atleast_2d(pts) - np.asarray(r0, dtype=float), axis=1)
    w = np.where(d <= a0, 0.5 * (np.cos(np.pi * np.minimum(d, a0) / a0) + 1.0), 0.0)
    return float(w[0]) if single else w


def scattered_field_magnitude(currents: SurfaceCurrents, consts: EmConstants,
                              r, r0, a0: float) -> float:
    """|E| at ``r`` due to scattering from the neighbourhood of surface point ``r0``."""
    w = eye_weight(currents.sampling.points.points, r0, a0)
    return float(np.linalg.norm(radiate(currents, consts, r, weights=w)))


def eye_window_matrix(pts: np.ndarray, a0: float):
    """Sparse symmetric (N, N) matrix of eye-window weights with unit diagonal."""
    n = pts.shape[0]
    tree = cKDTree(pts)
    pairs = tree.query_pairs(a0, output_type="ndarray")
    if pairs.size:
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        w = 0.5 * (np.cos(np.pi * d / a0) + 1.0)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        vals = np.concatenate([w, w, np.ones(n)])
    else:
        rows = cols = np.arange(n)
        vals = np.ones(n)
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def windowed_field_magnitudes(sampling: SurfaceSampling, vectors: np.ndarray,
                              a0: float, centers: np.ndarray | None = None) -> np.ndarray:
    """Eye-windowed |E| for every window centre (all points by default).

    ``vectors`` are the per-sample radiation vectors for one observer; the
    window matrix is sparse, so this scales with the neighbour count rather
    than N^2.
    """
    W = eye_window_matrix(sampling.points.points, a0)
    if centers is not None:
        W = W[np.asarray(centers, dtype=int)]
    return np.linalg.norm(W @ vectors, axis=1)


def scattering_map(sampling: SurfaceSampling, source: DipoleSource, consts: EmConstants,
                   r_obs, a0: float, shadowing: bool = True) -> ScatteringMap:
    """Localised scattered-field magnitude for every surface point.

    Currents are computed once; the eye window is then slid across all points.
    Output magnitudes are aligned with the cloud indexing.
    """
    currents = induced_currents(sampling, source, consts, shadowing=shadowing)
    vec = radiation_vectors(currents, consts, r_obs)
    mags = windowed_field_magnitudes(sampling, vec, a0)
    return ScatteringMap(points=sampling.points.points.copy(),
                         observation_point=np.asarray(r_obs, dtype=float),
                         magnitudes=mags, eye_radius=a0)


def save_map_csv(smap: ScatteringMap, path) -> None:
    """CSV columns: index, x, y, z, magnitude."""
    lines = ["index,x_m,y_m,z_m,magnitude_v_per_m"]
    for i, (p, m) in enumerate(zip(smap.points, smap.magnitudes)):
        lines.append(f"{i},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},{m:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")
