"""Waveform agreement metrics: RMS error, Pearson correlation, and
lag-compensated maximum cross-correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, ZeroVariance


@dataclass
class MetricReport:
    rms_error: float     # m
    max_xcorr: float
    lag_s: float
    pcc: float
    smoothed: bool = False

    def as_dict(self) -> dict:
        # Reports carry millimetres to match the usual presentation of
        # sub-centimetre physiological motion.
        return {
            "rms_error_mm": self.rms_error * 1e3,
            "max_xcorr": self.max_xcorr,
            "lag_s": self.lag_s,
            "pcc": self.pcc,
            "smoothed": self.smoothed,
        }


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"waveform shapes differ: {a.shape} vs {b.shape}")


def rms_error(a, b) -> float:
    """Root-mean-square difference after aligning both waveforms to zero mean."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_lengths(a, b)
    if a.size < 1:
        raise LengthMismatch("waveforms must be non-empty")
    resid = (a - a.mean()) - (b - b.mean())
    return float(np.sqrt(np.mean(resid ** 2)))


def pearson(a, b) -> float:
    """Centered correlation coefficient; raises ZeroVariance on constant input."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_lengths(a, b)
    if a.size < 2:
        raise LengthMismatch("need at least two samples")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 or nb == 0:
        raise ZeroVariance("correlation undefined for constant waveforms")
    return float(np.dot(da, db) / (na * nb))


def max_crosscorr(a, b, max_lag_s: float, rate: float) -> tuple[float, float]:
    """Maximum Pearson correlation of ``a`` against ``b`` shifted by up to
    ``max_lag_s`` either way, on the overlapping segment.

    The reported lag is positive when ``b`` lags ``a`` (i.e. b[n] ~ a[n - lag]).
    Ties go to the smallest |lag|, scanning positive before negative.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_lengths(a, b)
    max_lag = int(round(max_lag_s * rate))
    if max_lag >= a.size:
        raise ValueError("max_lag_s must be shorter than the record")
    best_corr, best_lag = -np.inf, 0
    for mag in range(max_lag + 1):
        for lag in ((mag,) if mag == 0 else (mag, -mag)):
            if lag >= 0:
                seg_a, seg_b = a[:a.size - lag], b[lag:]
            else:
                seg_a, seg_b = a[-lag:], b[:b.size + lag]
            corr = pearson(seg_a, seg_b)
            if corr > best_corr:
                best_corr, best_lag = corr, lag
    return float(best_corr), best_lag / rate
