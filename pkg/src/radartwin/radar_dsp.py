"""Baseline array-radar processing: range FFT, FFT beamforming, peak-pixel
phase tracking, and displacement smoothing/de-trending."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window

from .em_scatter import C_LIGHT
from .errors import NonuniformArray, ZeroSample
from .radar_model import IFCube, VirtualArray

_PITCH_VAR_TOL = 1e-12  # m^2


@dataclass
class RangeProfileSet:
    """Per-element range-compressed signals [element, range bin, slow time]."""

    samples: np.ndarray
    range_axis: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.range_axis, dtype=float)
        if r.ndim != 1 or r.shape[0] != self.samples.shape[1]:
            raise ValueError("range_axis must match the range dimension")
        steps = np.diff(r)
        if r.shape[0] > 1 and (np.any(steps <= 0)
                               or np.ptp(steps) > 1e-9 * steps[0]):
            raise ValueError("range_axis must be strictly increasing and uniform")
        self.range_axis = r


@dataclass
class RangeAngleMap:
    """Beamformed complex image [range bin, angle bin, slow time]."""

    samples: np.ndarray
    range_axis: np.ndarray
    theta_axis: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta_axis, dtype=float)
        if np.any(np.abs(th) >= np.pi / 2):
            raise ValueError("theta_axis must lie within (-pi/2, pi/2)")
        self.theta_axis = th


@dataclass
class DisplacementWaveform:
    """Slow-time displacement in meters."""

    values: np.ndarray
    rate: float
    smoothed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("displacement values must be finite")
        self.values = v

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) / self.rate


def range_profile(cube: IFCube, window: str = "hann", zero_pad: int = 4) -> RangeProfileSet:
    """Windowed fast-time FFT mapped to range by r = f c / (2 gamma).

    Zero padding (default x4) refines the peak grid without adding content;
    pass ``window='rect'`` and ``zero_pad=1`` for energy-exact spectra.
    """
    chirp = cube.chirp
    n_fast = chirp.n_fast
    name = "boxcar" if window in ("rect", "rectangular") else window
    taper = get_window(name, n_fast, fftbins=True)
    n_range = zero_pad * n_fast
    spec = np.fft.fft(cube.samples * taper[None, :, None], n=n_range, axis=1)
    freqs = np.arange(n_range) * (chirp.fs_fast / n_range)
    return RangeProfileSet(spec, freqs * C_LIGHT / (2.0 * chirp.gamma))


def crop_range(profiles: RangeProfileSet, r_min: float, r_max: float) -> RangeProfileSet:
    """Restrict profiles to a range window (keeps bins in [r_min, r_max])."""
    keep = (profiles.range_axis >= r_min) & (profiles.range_axis <= r_max)
    if not np.any(keep):
        raise ValueError("range window selects no bins")
    return RangeProfileSet(profiles.samples[:, keep, :], profiles.range_axis[keep])


def beamform(profiles: RangeProfileSet, array: VirtualArray, theta_grid,
             wavelength: float) -> RangeAngleMap:
    """Steer the uniform virtual array over the angle grid.

    The steering phase per element index i is +(4 pi / wavelength) i d0
    sin(theta): two-way propagation to the pairwise-midpoint phase centers
    doubles the usual one-way term, and the sign matches angles measured
    toward the positive array axis.
    """
    theta = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    n_r = profiles.samples.shape[0]
    if n_r > 1:
        d0, var = array.pitch_stats()
        if var > _PITCH_VAR_TOL:
            raise NonuniformArray(f"pitch variance {var:.3e} m^2 exceeds {_PITCH_VAR_TOL}")
    else:
        d0 = 0.0
    idx = np.arange(n_r)
    steer = np.exp(1j * (4.0 * np.pi / wavelength) * np.outer(idx, d0 * np.sin(theta)))
    out = np.einsum("irt,iq->rqt", profiles.samples, steer)
    return RangeAngleMap(out, profiles.range_axis, theta)


def select_peak_pixel(ra_map: RangeAngleMap) -> tuple[int, int]:
    """(range bin, angle bin) maximising time-averaged power.

    Ties go to the smaller range, then to the smaller |theta|.
    """
    power = np.mean(np.abs(ra_map.samples) ** 2, axis=2)
    peak = power.max()
    cand = np.argwhere(power == peak)
    order = np.lexsort((np.abs(ra_map.theta_axis[cand[:, 1]]), cand[:, 0]))
    ir, iq = cand[order[0]]
    return int(ir), int(iq)


def unwrap_phase(series: np.ndarray) -> np.ndarray:
    """1-D phase unwrap: successive differences mapped to (-pi, pi]."""
    s = np.asarray(series)
    if np.any(np.abs(s) == 0):
        raise ZeroSample("phase undefined for zero-magnitude samples")
    phases = np.angle(s)
    d = np.diff(phases)
    wrapped = np.pi - np.mod(np.pi - d, 2.0 * np.pi)
    return np.concatenate([[phases[0]], phases[0] + np.cumsum(wrapped)])


def displacement(series: np.ndarray, wavelength: float, rate: float) -> DisplacementWaveform:
    """Mean-removed displacement (wavelength / 4 pi) * unwrapped phase.

    Positive values correspond to increasing range (two-way path growth).
    """
    phi = unwrap_phase(series)
    vals = (wavelength / (4.0 * np.pi)) * phi
    return DisplacementWaveform(vals - vals.mean(), rate, smoothed=False)


def _odd_window(seconds: float, rate: float, n: int) -> int:
    length = int(round(seconds * rate))
    length = max(1, min(length, n if n % 2 == 1 else n - 1))
    return length if length % 2 == 1 else length + 1


def smooth_detrend(wave: DisplacementWaveform, smooth_window_s: float | None = 0.3,
                   detrend_window_s: float | None = 10.0) -> DisplacementWaveform:
    """Zero-phase moving-average smoothing followed by moving-average de-trending.

    Either window may be None to skip that stage; windows longer than the
    record are clamped to it (a full-record trend is just the mean).
    """
    vals = wave.values.copy()
    n = vals.shape[0]
    if smooth_window_s is not None:
        vals = uniform_filter1d(vals, _odd_window(smooth_window_s, wave.rate, n),
                                mode="reflect")
    if detrend_window_s is not None:
        trend = uniform_filter1d(vals, _odd_window(detrend_window_s, wave.rate, n),
                                 mode="reflect")
        vals = vals - trend
    return DisplacementWaveform(vals, wave.rate, smoothed=True)


def save_waveform_csv(wave: DisplacementWaveform, path) -> None:
    """CSV columns t_s, d_m with 9 significant digits."""
    lines = ["t_s,d_m"]
    for t, d in zip(wave.times, wave.values):
        lines.append(f"{t:.9g},{d:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_waveform_csv(path) -> DisplacementWaveform:
    rows = Path(path).read_text().strip().splitlines()[1:]
    data = np.array([[float(v) for v in r.split(",")] for r in rows])
    if data.shape[0] < 2:
        raise ValueError("waveform CSV needs at least two rows")
    rate = 1.0 / float(np.mean(np.diff(data[:, 0])))
    return DisplacementWaveform(data[:, 1], rate)


def save_range_angle_csv(ra_map: RangeAngleMap, path) -> None:
    """Time-averaged power snapshot as CSV columns r_m, theta_rad, power."""
    power = np.mean(np.abs(ra_map.samples) ** 2, axis=2)
    lines = ["r_m,theta_rad,power"]
    for ir, r in enumerate(ra_map.range_axis):
        for iq, th in enumerate(ra_map.theta_axis):
            lines.append(f"{r:.9g},{th:.9g},{power[ir, iq]:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")
