"""Coherent-point-drift non-rigid registration of a template cloud to a frame.

The template Y (M points) is treated as the centroids of a Gaussian mixture
with a shared isotropic variance sigma2 and a uniform outlier component of
weight ``outlier_w``; the frame X (N points) is the observed data. The
deformation is a kernel-smoothed displacement field T = Y + G W, where
G_ij = exp(-|y_i - y_j|^2 / (2 beta^2)) and W is learned by EM with a motion
coherence penalty (lambda_reg / 2) * tr(W' G W).

All functions are pure and re-entrant; registrations of independent frames
may run concurrently except when warm starting, which chains consecutive
frames through their W estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DegenerateInit, SingularSystem, UnsupportedRows
from .geometry import PointCloudFrame

_ROW_SUPPORT_EPS = 1e-12


@dataclass
class CpdParams:
    """Registration hyperparameters.

    beta : kernel width in meters (> 0)
    lambda_reg : motion-coherence weight (>= 0)
    outlier_w : uniform outlier mass in [0, 1)
    max_iters : EM iteration cap
    tol : relative sigma2 change considered converged (> 0)
    sigma2_floor : lower clamp on sigma2 in m^2; reaching it counts as converged
    """

    beta: float = 0.1
    lambda_reg: float = 2.0
    outlier_w: float = 0.1
    max_iters: int = 100
    tol: float = 1e-6
    sigma2_floor: float = 1e-10

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.outlier_w < 1.0:
            raise ValueError("outlier_w must lie in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be non-negative")


@dataclass
class Correspondence:
    """Posterior assignment probabilities, one column per frame point."""

    posterior: np.ndarray  # (M, N), entries in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.posterior, dtype=float)
        if p.ndim != 2:
            raise ValueError("posterior must be an (M, N) matrix")
        self.posterior = p


@dataclass
class DeformationField:
    """Converged (or iteration-capped) registration state.

    ``apply_deformation`` turns this into the deformed template T = Y + G W,
    preserving the template's point indexing.
    """

    template: PointCloudFrame
    kernel: np.ndarray                      # (M, M) symmetric, unit diagonal
    weights: np.ndarray                     # (M, 3) in meters
    sigma2: float
    iterations_run: int
    neg_log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = True
    params: CpdParams = field(default_factory=CpdParams)
    frame_timestamp: float = 0.0


def init_sigma2(X: PointCloudFrame, Y: PointCloudFrame) -> float:
    """Mean squared pairwise distance over (M, N, D): sum |x_n - y_m|^2 / (D M N)."""
    d2 = cdist(Y.points, X.points, "sqeuclidean")
    s2 = float(d2.sum()) / (3.0 * d2.size)
    if s2 == 0.0:
        raise DegenerateInit("clouds coincide; perturb or skip registration")
    return s2


def build_kernel(Y: PointCloudFrame, beta: float) -> np.ndarray:
    """Gaussian affinity matrix G_ij = exp(-|y_i - y_j|^2 / (2 beta^2))."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    d2 = cdist(Y.points, Y.points, "sqeuclidean")
    return np.exp(-d2 / (2.0 * beta * beta))


def e_step(X: PointCloudFrame, Y_deformed: PointCloudFrame, sigma2: float,
           outlier_w: float) -> Correspondence:
    """Posterior probabilities of frame points under the deformed mixture.

    p_mn = exp(-d_mn / 2 sigma2) /
           (sum_k exp(-d_kn / 2 sigma2) + (M w / (N (1 - w))) (2 pi sigma2)^{3/2})

    Each column is evaluated in log space (per-column max subtraction), which
    is exact and avoids underflow when sigma2 is small.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    M, N = len(Y_deformed), len(X)
    log_num = -cdist(Y_deformed.points, X.points, "sqeuclidean") / (2.0 * sigma2)
    if outlier_w > 0:
        log_c = (np.log(M * outlier_w / (N * (1.0 - outlier_w)))
                 + 1.5 * np.log(2.0 * np.pi * sigma2))
        log_den = np.logaddexp(logsumexp(log_num, axis=0), log_c)
    else:
        log_den = logsumexp(log_num, axis=0)
    return Correspondence(np.exp(log_num - log_den[None, :]))


def m_step(X: PointCloudFrame, Y: PointCloudFrame, G: np.ndarray, P: Correspondence,
           sigma2_prev: float, lambda_reg: float,
           sigma2_floor: float = 1e-10) -> tuple[np.ndarray, float, PointCloudFrame]:
    """Solve for the displacement weights and update the mixture variance.

    The weight update solves (Pt G + lambda sigma2 I) W = P X - Pt Y with
    Pt = diag(row sums of P), the row-scaled equivalent of the textbook
    update: it stays well-posed when template rows carry little mass, because
    regularisation pins their displacement to zero instead of inverting a
    near-zero row weight. Returns (W, sigma2, T) with T = Y + G W and sigma2
    clamped from below at ``sigma2_floor``.
    """
    p = P.posterior
    M = len(Y)
    pt = p.sum(axis=1)                       # row masses, diag of Pt
    unsupported = np.flatnonzero(pt <= _ROW_SUPPORT_EPS)
    if unsupported.size and lambda_reg * sigma2_prev <= 0.0:
        raise UnsupportedRows(unsupported)

    n_p = float(pt.sum())
    if n_p <= _ROW_SUPPORT_EPS:
        raise SingularSystem("no correspondence mass at all")

    lhs = pt[:, None] * G + (lambda_reg * sigma2_prev) * np.eye(M)
    px = p @ X.points
    rhs = px - pt[:, None] * Y.points
    try:
        W = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(lhs)
        raise SingularSystem(f"M-step solve failed (cond ~ {cond:.3e})")
    if not np.all(np.isfinite(W)):
        cond = np.linalg.cond(lhs)
        raise SingularSystem(f"M-step produced non-finite weights (cond ~ {cond:.3e})")

    T = Y.points + G @ W
    pb = p.sum(axis=0)                       # column masses, diag of Pb
    xpx = float(np.einsum("n,n->", pb, np.einsum("ni,ni->n", X.points, X.points)))
    cross = float(np.einsum("ni,ni->", px, T))
    tpt = float(np.einsum("m,m->", pt, np.einsum("mi,mi->m", T, T)))
    s2 = (xpx - 2.0 * cross + tpt) / (3.0 * n_p)
    s2 = max(s2, sigma2_floor)
    return W, s2, PointCloudFrame(T, None, X.timestamp)


def _objective(X: PointCloudFrame, T: np.ndarray, sigma2: float, W: np.ndarray,
               G: np.ndarray, params: CpdParams) -> float:
    """Penalised negative log-likelihood of the mixture (outlier mass included)."""
    M, N = T.shape[0], len(X)
    w = params.outlier_w
    log_comp = (np.log((1.0 - w) / M) - 1.5 * np.log(2.0 * np.pi * sigma2)
                - cdist(T, X.points, "sqeuclidean") / (2.0 * sigma2))
    log_px = logsumexp(log_comp, axis=0)
    if w > 0:
        log_px = np.logaddexp(log_px, np.log(w / N))
    nll = -float(log_px.sum())
    if params.lambda_reg > 0:
        nll += 0.5 * params.lambda_reg * float(np.einsum("mi,mi->", W, G @ W))
    return nll


def register(X: PointCloudFrame, Y: PointCloudFrame, params: CpdParams,
             w_init: np.ndarray | None = None,
             sigma2_init: float | None = None) -> DeformationField:
    """Fit the template Y to the frame X by EM.

    Alternates :func:`e_step` and :func:`m_step` from the variance
    initialisation until the relative sigma2 change drops below
    ``params.tol``, the variance floor is reached, or ``params.max_iters``
    expires. Exhausting the iteration budget is not an error: the field is
    returned with ``converged=False``.

    ``w_init`` warm-starts the displacement weights (e.g. from the previous
    frame); the variance is then re-initialised against the warm-started
    deformed template.

    ``sigma2_init`` overrides the mean-pairwise-distance initialisation. The
    default anneals from the cloud-extent scale, which is the right prior for
    unaligned clouds but lets the first EM steps contract a pre-aligned
    template toward the data centroid; when the clouds share a calibrated
    frame, pass the expected residual scale (sensor noise plus template
    spacing) squared instead, and budget ``max_iters`` tightly: once the
    variance stalls at that scale, further EM slowly redistributes template
    points toward a centroidal (k-means-like) layout, which is tangential to
    the fitted surface and only degrades point-wise tracking.
    """
    G = build_kernel(Y, params.beta)
    M = len(Y)
    if w_init is not None:
        W = np.asarray(w_init, dtype=float)
        if W.shape != (M, 3):
            raise ValueError("w_init must be (M, 3)")
    else:
        W = np.zeros((M, 3))
    T = PointCloudFrame(Y.points + G @ W, None, X.timestamp)
    if sigma2_init is not None:
        if sigma2_init <= 0:
            raise ValueError("sigma2_init must be positive")
        sigma2 = float(sigma2_init)
    else:
        sigma2 = init_sigma2(X, T)

    trace = [_objective(X, T.points, sigma2, W, G, params)]
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iters + 1):
        P = e_step(X, T, sigma2, params.outlier_w)
        W, s2_new, T = m_step(X, Y, G, P, sigma2, params.lambda_reg,
                              params.sigma2_floor)
        if s2_new <= params.sigma2_floor:
            # Variance hit the sensor-accuracy floor: call it converged and do
            # not log this clamped step (the clamp may nudge the objective up).
            sigma2 = params.sigma2_floor
            converged = True
            break
        obj = _objective(X, T.points, s2_new, W, G, params)
        if obj > trace[-1] - 1e-9:
            # Objective stalled at solver round-off level: EM is done; keep the
            # trace strictly improving rather than logging the wiggle.
            sigma2 = s2_new
            converged = True
            break
        trace.append(obj)
        rel = abs(s2_new - sigma2) / sigma2
        sigma2 = s2_new
        if rel < params.tol:
            converged = True
            break

    return DeformationField(template=Y, kernel=G, weights=W, sigma2=sigma2,
                            iterations_run=iterations,
                            neg_log_likelihood_trace=trace, converged=converged,
                            params=params, frame_timestamp=X.timestamp)


def apply_deformation(fld: DeformationField) -> PointCloudFrame:
    """Deformed template T = Y + G W, preserving the template point indexing."""
    pts = fld.template.points + fld.kernel @ fld.weights
    return PointCloudFrame(pts, None, fld.frame_timestamp)


def save_field(fld: DeformationField, basepath) -> None:
    """Persist W as a CSV of M rows plus a JSON header next to it."""
    basepath = Path(basepath)
    rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in fld.weights)
    basepath.with_suffix(".csv").write_text("wx_m,wy_m,wz_m\n" + rows + "\n")
    header = {
        "beta": fld.params.beta,
        "lambda": fld.params.lambda_reg,
        "w": fld.params.outlier_w,
        "sigma2": fld.sigma2,
        "iterations": fld.iterations_run,
        "converged": fld.converged,
        "frame_timestamp": fld.frame_timestamp,
        "template_points": len(fld.template),
    }
    basepath.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_field(basepath, template: PointCloudFrame) -> DeformationField:
    """Rebuild a field from :func:`save_field` output and its template cloud."""
    basepath = Path(basepath)
    header = json.loads(basepath.with_suffix(".json").read_text())
    lines = basepath.with_suffix(".csv").read_text().strip().splitlines()[1:]
    W = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    if W.shape != (len(template), 3):
        raise ValueError("weight rows do not match the template point count")
    params = CpdParams(beta=header["beta"], lambda_reg=header["lambda"],
                       outlier_w=header["w"])
    return DeformationField(template=template, kernel=build_kernel(template, params.beta),
                            weights=W, sigma2=header["sigma2"],
                            iterations_run=header["iterations"],
                            neg_log_likelihood_trace=[], converged=header["converged"],
                            params=params, frame_timestamp=header["frame_timestamp"])
