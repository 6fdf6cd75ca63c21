"""Virtual-array geometry, scattering-center handling, and IF-signal synthesis.

Two synthesis models share one kernel:

* time-averaged model: scattering centers are picked once on a time-averaged
  cloud, tracked along lines of sight through the raw frames, and given
  constant amplitudes;
* time-resolved model: a persistent index set is selected on the deformed
  template sequence and both range and amplitude vary per frame.

With constant amplitude series the two produce bit-identical cubes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .em_scatter import C_LIGHT, ScatteringMap
from .errors import EmptySelection
from .geometry import PointCloudFrame


@dataclass
class ChirpParams:
    """FMCW chirp and sampling parameters.

    gamma is always bandwidth / chirp_duration; fs_fast defaults to
    n_fast / chirp_duration so the ADC spans exactly one chirp.
    """

    f_min: float = 77.2e9          # Hz, chirp start
    bandwidth: float = 3.6e9       # Hz
    chirp_duration: float = 100e-6  # s
    n_fast: int = 256
    fs_fast: float | None = None   # Hz
    slow_rate: float = 100.0       # Hz

    def __post_init__(self):
        if min(self.f_min, self.bandwidth, self.chirp_duration, self.slow_rate) <= 0:
            raise ValueError("chirp parameters must be positive")
        if self.n_fast < 2:
            raise ValueError("n_fast must be at least 2")
        if self.fs_fast is None:
            self.fs_fast = self.n_fast / self.chirp_duration

    @property
    def gamma(self) -> float:
        return self.bandwidth / self.chirp_duration

    @property
    def f_center(self) -> float:
        return self.f_min + 0.5 * self.bandwidth

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.f_center

    @property
    def fast_axis(self) -> np.ndarray:
        return np.arange(self.n_fast) / self.fs_fast


@dataclass
class VirtualElement:
    tx_index: int
    rx_index: int
    phase_center: np.ndarray       # (tx + rx) / 2


@dataclass
class VirtualArray:
    """All Tx-Rx pairs of a collinear MIMO layout, sorted along the array axis."""

    tx_positions: np.ndarray       # (n_tx, 3)
    rx_positions: np.ndarray       # (n_rx, 3)
    elements: list[VirtualElement]
    axis: np.ndarray
    origin: np.ndarray

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def phase_centers(self) -> np.ndarray:
        return np.array([e.phase_center for e in self.elements])

    def pitch_stats(self) -> tuple[float, float]:
        """(mean consecutive spacing, spacing variance) along the axis."""
        if self.n_elements < 2:
            return 0.0, 0.0
        proj = (self.phase_centers - self.origin) @ self.axis
        diffs = np.diff(proj)
        return float(diffs.mean()), float(diffs.var())


def build_virtual_array(n_tx: int, tx_pitch: float, n_rx: int, rx_pitch: float,
                        array_origin=(0.0, 0.0, 0.0), axis=(1.0, 0.0, 0.0)) -> VirtualArray:
    """Collinear Tx/Rx lattices and their pairwise-midpoint virtual elements.

    With tx_pitch = n_rx * rx_pitch the virtual centers come out uniformly
    spaced at rx_pitch / 2. Elements are sorted by position along the axis.
    """
    if tx_pitch <= 0 or rx_pitch <= 0:
        raise ValueError("antenna pitches must be positive")
    origin = np.asarray(array_origin, dtype=float).reshape(3)
    ax = np.asarray(axis, dtype=float).reshape(3)
    ax = ax / np.linalg.norm(ax)
    tx = origin + np.arange(n_tx)[:, None] * tx_pitch * ax
    rx = origin + np.arange(n_rx)[:, None] * rx_pitch * ax
    elements = [VirtualElement(i, j, 0.5 * (tx[i] + rx[j]))
                for i in range(n_tx) for j in range(n_rx)]
    elements.sort(key=lambda e: float((e.phase_center - origin) @ ax))
    return VirtualArray(tx, rx, elements, ax, origin)


@dataclass
class ScatterCenter:
    """One scattering point driving the IF sum.

    times : (n_t,) sample instants of the series below
    ranges : (N_R, n_t) distance from each virtual element, > 0
    amplitudes : (N_R, n_t) field magnitude per element; constant-amplitude
        models pass the same value along the time axis
    eta : unit-magnitude complex scattering phase
    """

    index: int
    times: np.ndarray
    ranges: np.ndarray
    amplitudes: np.ndarray
    eta: complex = -1.0 + 0.0j

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.ranges = np.asarray(self.ranges, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        n_t = self.times.shape[0]
        if self.ranges.ndim != 2 or self.ranges.shape[1] != n_t:
            raise ValueError("ranges must be (N_R, n_t)")
        if self.amplitudes.shape != self.ranges.shape:
            raise ValueError("amplitudes must match ranges in shape")
        if not np.all(self.ranges > 0):
            raise ValueError("ranges must be strictly positive")
        if abs(abs(complex(self.eta)) - 1.0) > 1e-9:
            raise ValueError("eta must have unit magnitude")


@dataclass
class IFCube:
    """Complex IF samples indexed [virtual element, fast time, slow time]."""

    samples: np.ndarray
    fast_axis: np.ndarray
    slow_axis: np.ndarray
    chirp: ChirpParams

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3:
            raise ValueError("samples must be (N_R, n_fast, n_slow)")
        if s.shape[1] != self.fast_axis.shape[0] or s.shape[2] != self.slow_axis.shape[0]:
            raise ValueError("axes do not match sample dimensions")
        if not np.all(np.isfinite(s.view(float))):
            raise ValueError("samples must be finite")
        self.samples = s


def select_centers_conventional(avg_map: ScatteringMap, theta_scat: float) -> np.ndarray:
    """Indices of local maxima whose squared magnitude clears the threshold.

    A point qualifies when it is greater than every neighbour within the eye
    radius and its |E|^2 is at least theta_scat times the map maximum.
    """
    if not 0.0 < theta_scat <= 1.0:
        raise ValueError("theta_scat must lie in (0, 1]")
    mags2 = avg_map.magnitudes ** 2
    if mags2.size == 0:
        raise EmptySelection("empty scattering map")
    thresh = theta_scat * mags2.max()
    from scipy.spatial import cKDTree
    tree = cKDTree(avg_map.points)
    selected = []
    for i in np.flatnonzero(mags2 >= thresh):
        neigh = tree.query_ball_point(avg_map.points[i], avg_map.eye_radius)
        neigh = [j for j in neigh if j != i]
        if all(mags2[i] > mags2[j] for j in neigh):
            selected.append(int(i))
    if not selected:
        raise EmptySelection("no local maximum clears theta_scat; lower the threshold")
    return np.array(sorted(selected), dtype=int)


def select_index_set(maps_over_time: list[ScatteringMap], theta_thresh: float) -> np.ndarray:
    """Template indices that scatter strongly at least once over the sequence.

    k is kept when max_t |E(k, t)|^2 >= theta_thresh * max_{k', t'} |E|^2.
    """
    if not 0.0 < theta_thresh <= 1.0:
        raise ValueError("theta_thresh must lie in (0, 1]")
    mags2 = np.array([m.magnitudes for m in maps_over_time]) ** 2
    peak = mags2.max()
    if peak <= 0:
        raise EmptySelection("all-zero scattering maps")
    keep = np.flatnonzero(mags2.max(axis=0) >= theta_thresh * peak)
    if keep.size == 0:
        raise EmptySelection("no index clears theta_thresh")
    return keep


def track_centers_conventional(frames: list[PointCloudFrame], avg_cloud: PointCloudFrame,
                               center_indices: np.ndarray,
                               element: VirtualElement) -> np.ndarray:
    """Line-of-sight range histories for selected time-averaged centers.

    At each frame the candidate whose direction from the element phase center
    best aligns (max cosine) with the direction of the averaged center is
    matched; the output is the (K, n_frames) array of distances to the matched
    points.
    """
    pc = element.phase_center
    refs = avg_cloud.points[np.asarray(center_indices, dtype=int)] - pc
    refs = refs / np.linalg.norm(refs, axis=1, keepdims=True)       # (K, 3)
    ranges = np.empty((refs.shape[0], len(frames)))
    for t, frame in enumerate(frames):
        rel = frame.points - pc                                     # (N, 3)
        dist = np.linalg.norm(rel, axis=1)
        cosines = (rel / dist[:, None]) @ refs.T                    # (N, K)
        match = np.argmax(cosines, axis=0)
        ranges[:, t] = dist[match]
    return ranges


def _resample_ranges(times: np.ndarray, ranges: np.ndarray, slow_grid: np.ndarray) -> np.ndarray:
    """Cubic-spline range resampling; phase is ~3 rad/mm so ranges get the
    smooth interpolant. Falls back to linear below 4 knots."""
    if times.shape[0] == 1:
        return np.repeat(ranges, slow_grid.shape[0], axis=1)
    if times.shape[0] < 4:
        return np.vstack([np.interp(slow_grid, times, row) for row in ranges])
    return CubicSpline(times, ranges, axis=1, extrapolate=True)(slow_grid)


def _resample_amplitudes(times: np.ndarray, amps: np.ndarray, slow_grid: np.ndarray) -> np.ndarray:
    """Linear resampling with edge clamping; amplitudes vary slowly."""
    if times.shape[0] == 1:
        return np.repeat(amps, slow_grid.shape[0], axis=1)
    return np.vstack([np.interp(slow_grid, times, row) for row in amps])


def _synthesize(centers: list[ScatterCenter], chirp: ChirpParams,
                slow_grid: np.ndarray) -> IFCube:
    """Shared IF kernel: s_i(tau, t) = sum_k A_ik(t) eta_k
    exp{ j 4 pi (gamma R_ik(t) tau / c + f_min R_ik(t) / c) }."""
    slow_grid = np.asarray(slow_grid, dtype=float)
    tau = chirp.fast_axis
    n_r = centers[0].ranges.shape[0] if centers else 0
    cube = np.zeros((n_r, chirp.n_fast, slow_grid.shape[0]), dtype=complex)
    four_pi_c = 4.0 * np.pi / C_LIGHT
    for c in centers:
        if c.ranges.shape[0] != n_r:
            raise ValueError("all centers must share the element count")
        R = _resample_ranges(c.times, c.ranges, slow_grid)          # (N_R, n_slow)
        A = _resample_amplitudes(c.times, c.amplitudes, slow_grid)
        for i in range(n_r):
            carrier = A[i] * c.eta * np.exp(1j * four_pi_c * chirp.f_min * R[i])
            beat = np.exp(1j * four_pi_c * chirp.gamma * np.outer(tau, R[i]))
            cube[i] += carrier[None, :] * beat
    return IFCube(cube, tau, slow_grid, chirp)


def synth_if_conventional(centers: list[ScatterCenter], chirp: ChirpParams,
                          slow_grid: np.ndarray) -> IFCube:
    """IF cube under the constant-amplitude assumption.

    Amplitude series are flattened to their per-element value before entering
    the shared kernel, so the result is identical to the time-resolved path
    with constant series.
    """
    flat = []
    for c in centers:
        amax, amin = c.amplitudes.max(axis=1), c.amplitudes.min(axis=1)
        if np.any(amax != amin):
            raise ValueError("conventional synthesis requires constant amplitude series")
        flat.append(ScatterCenter(c.index, c.times, c.ranges,
                                  np.broadcast_to(amax[:, None], c.ranges.shape),
                                  c.eta))
    return _synthesize(flat, chirp, slow_grid)


def synth_if_proposed(centers: list[ScatterCenter], chirp: ChirpParams,
                      slow_grid: np.ndarray) -> IFCube:
    """IF cube with per-frame amplitudes, resampled to the radar slow rate."""
    return _synthesize(centers, chirp, slow_grid)


def constant_amplitude_center(index: int, times: np.ndarray, ranges: np.ndarray,
                              amplitude_per_element: np.ndarray,
                              eta: complex = -1.0 + 0.0j) -> ScatterCenter:
    """Convenience wrapper broadcasting per-element amplitudes along time."""
    ranges = np.asarray(ranges, dtype=float)
    amps = np.broadcast_to(np.asarray(amplitude_per_element, dtype=float)[:, None],
                           ranges.shape)
    return ScatterCenter(index, times, ranges, amps, eta)


# ---------------------------------------------------------------------------
# Cube serialisation: binary samples plus a JSON sidecar for inspection
# ---------------------------------------------------------------------------

_HEADER_FMT = "<3q4d"


def save_cube(cube: IFCube, path) -> None:
    """Little-endian header {N_R, n_fast, n_slow, fs_fast, slow_rate, f_min,
    gamma} followed by interleaved (re, im) float64 in [element][slow][fast]
    order, plus a JSON sidecar duplicating the header."""
    path = Path(path)
    n_r, n_fast, n_slow = cube.samples.shape
    chirp = cube.chirp
    header = struct.pack(_HEADER_FMT, n_r, n_fast, n_slow,
                         chirp.fs_fast, chirp.slow_rate, chirp.f_min, chirp.gamma)
    data = np.ascontiguousarray(cube.samples.transpose(0, 2, 1)).astype("<c16")
    path.write_bytes(header + data.tobytes())
    sidecar = {
        "n_elements": n_r, "n_fast": n_fast, "n_slow": n_slow,
        "fs_fast_hz": chirp.fs_fast, "slow_rate_hz": chirp.slow_rate,
        "f_min_hz": chirp.f_min, "gamma_hz_per_s": chirp.gamma,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_cube(path) -> IFCube:
    """Inverse of :func:`save_cube`. The chirp duration is reconstructed from
    n_fast / fs_fast (the package's sampling convention)."""
    raw = Path(path).read_bytes()
    head = struct.calcsize(_HEADER_FMT)
    n_r, n_fast, n_slow, fs_fast, slow_rate, f_min, gamma = struct.unpack(
        _HEADER_FMT, raw[:head])
    t_c = n_fast / fs_fast
    chirp = ChirpParams(f_min=f_min, bandwidth=gamma * t_c, chirp_duration=t_c,
                        n_fast=n_fast, fs_fast=fs_fast, slow_rate=slow_rate)
    data = np.frombuffer(raw[head:], dtype="<c16").reshape(n_r, n_slow, n_fast)
    samples = np.ascontiguousarray(data.transpose(0, 2, 1))
    slow_axis = np.arange(n_slow) / slow_rate
    return IFCube(samples, chirp.fast_axis, slow_axis, chirp)
