import numpy as np
import pytest

from radartwin import (Correspondence, CpdParams, DegenerateInit, PointCloudFrame,
                       UnsupportedRows, apply_deformation, build_kernel, e_step,
                       init_sigma2, m_step, register)
from radartwin.cpd import load_field, save_field


def surface_cloud(n=120, seed=0, extent=0.15):
    """Gently curved patch, the kind of cloud registrations actually see."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-extent, extent, (n, 2))
    z = 0.8 + 0.05 * (xy[:, 0] ** 2 + xy[:, 1] ** 2) / extent ** 2
    return PointCloudFrame(np.column_stack([xy, z]))


class TestInitSigma2:
    def test_single_pair(self):
        x = PointCloudFrame([[1, 0, 0]])
        y = PointCloudFrame([[0, 0, 0]])
        assert init_sigma2(x, y) == pytest.approx(1.0 / 3.0)

    def test_degenerate(self):
        p = PointCloudFrame([[0, 0, 0]])
        with pytest.raises(DegenerateInit):
            init_sigma2(p, PointCloudFrame([[0, 0, 0]]))

    def test_hand_sum(self):
        x = PointCloudFrame([[1, 0, 0], [-1, 0, 0]])
        y = PointCloudFrame([[0, 0, 0]])
        assert init_sigma2(x, y) == pytest.approx((1 + 1) / (3 * 1 * 2))


class TestKernel:
    def test_unit_diagonal(self):
        G = build_kernel(surface_cloud(30), beta=0.05)
        assert np.allclose(np.diag(G), 1.0)
        assert np.allclose(G, G.T)

    def test_closed_form_value(self):
        beta = 0.2
        y = PointCloudFrame([[0, 0, 0], [beta * np.sqrt(2), 0, 0]])
        G = build_kernel(y, beta)
        assert G[0, 1] == pytest.approx(np.exp(-1.0))

    def test_distant_underflow(self):
        beta = 0.1
        y = PointCloudFrame([[0, 0, 0], [10 * beta, 0, 0]])
        G = build_kernel(y, beta)
        assert G[0, 1] == pytest.approx(np.exp(-50.0), rel=1e-12)
        assert G[0, 1] < 1e-21


class TestEStep:
    def test_single_component_no_outlier(self):
        X = PointCloudFrame([[0, 0, 0], [1, 1, 1], [5, 0, 0]])
        T = PointCloudFrame([[0.3, 0, 0]])
        P = e_step(X, T, sigma2=0.5, outlier_w=0.0)
        assert np.allclose(P.posterior, 1.0)

    def test_symmetric_split(self):
        X = PointCloudFrame([[0, 0, 0]])
        T = PointCloudFrame([[1, 0, 0], [-1, 0, 0]])
        P = e_step(X, T, sigma2=0.7, outlier_w=0.0)
        assert np.allclose(P.posterior, 0.5)

    def test_scalar_brute_force_with_outlier(self):
        # direct evaluation of the posterior formula for M=2, N=1, w=0.5
        sigma2 = 0.09
        d = np.sqrt(2 * sigma2)
        X = PointCloudFrame([[0, 0, 0]])
        T = PointCloudFrame([[d, 0, 0], [-d, 0, 0]])
        w = 0.5
        P = e_step(X, T, sigma2, w)
        M, N = 2, 1
        denom = 2 * np.exp(-1.0) + (M * w / (N * (1 - w))) * (2 * np.pi * sigma2) ** 1.5
        expected = np.exp(-1.0) / denom
        assert np.allclose(P.posterior, expected, rtol=1e-12)

    def test_column_mass(self):
        X = surface_cloud(60, seed=1)
        T = surface_cloud(40, seed=2)
        P0 = e_step(X, T, 0.01, 0.0)
        assert np.allclose(P0.posterior.sum(axis=0), 1.0, atol=1e-9)
        Pw = e_step(X, T, 0.01, 0.2)
        sums = Pw.posterior.sum(axis=0)
        assert np.all(sums < 1.0)
        assert np.all(Pw.posterior >= 0) and np.all(Pw.posterior <= 1)


class TestMStep:
    def test_perfect_alignment(self):
        Y = surface_cloud(25, seed=3)
        X = PointCloudFrame(Y.points.copy())
        G = build_kernel(Y, 0.05)
        P = Correspondence(np.eye(25))
        W, s2, T = m_step(X, Y, G, P, sigma2_prev=1e-4, lambda_reg=2.0)
        assert np.allclose(W, 0.0, atol=1e-12)
        assert np.allclose(T.points, Y.points)
        assert s2 == pytest.approx(1e-10)  # floored

    def test_scalar_solve(self):
        X = PointCloudFrame([[2.0, -1.0, 0.5]])
        Y = PointCloudFrame([[1.0, 1.0, 1.0]])
        G = np.array([[1.0]])
        P = Correspondence(np.array([[1.0]]))
        W, _, T = m_step(X, Y, G, P, sigma2_prev=0.3, lambda_reg=0.0)
        assert np.allclose(W, X.points - Y.points)
        assert np.allclose(T.points, X.points)

    def test_matches_explicit_inverse_form(self):
        # numerically-equivalent row-scaled solve vs the textbook expression
        rng = np.random.default_rng(4)
        Y = PointCloudFrame(rng.standard_normal((5, 3)))
        X = PointCloudFrame(rng.standard_normal((5, 3)))
        G = build_kernel(Y, 0.8)
        p = rng.uniform(0.05, 1.0, (5, 5))
        p /= p.sum(axis=0) * 1.3
        sigma2, lam = 0.2, 1.5
        W, _, _ = m_step(X, Y, G, Correspondence(p), sigma2, lam)
        pt = p.sum(axis=1)
        ref = np.linalg.solve(G + lam * sigma2 * np.diag(1.0 / pt),
                              (p @ X.points) / pt[:, None] - Y.points)
        assert np.allclose(W, ref, rtol=1e-8)

    def test_unsupported_rows_without_regularisation(self):
        Y = surface_cloud(10, seed=5)
        X = surface_cloud(10, seed=6)
        G = build_kernel(Y, 0.05)
        p = np.full((10, 10), 0.1)
        p[3] = 0.0
        with pytest.raises(UnsupportedRows) as exc:
            m_step(X, Y, G, Correspondence(p), sigma2_prev=0.01, lambda_reg=0.0)
        assert exc.value.indices == [3]

    def test_unsupported_rows_absorbed_with_regularisation(self):
        Y = surface_cloud(10, seed=5)
        X = surface_cloud(10, seed=6)
        G = build_kernel(Y, 0.05)
        p = np.full((10, 10), 0.1)
        p[3] = 0.0
        W, _, _ = m_step(X, Y, G, Correspondence(p), sigma2_prev=0.01, lambda_reg=2.0)
        assert np.all(np.isfinite(W))


class TestRegister:
    def test_identity_registration(self):
        Y = surface_cloud(150, seed=7)
        X = PointCloudFrame(Y.points.copy())
        params = CpdParams(beta=0.1, lambda_reg=2.0, outlier_w=0.0, max_iters=200)
        fld = register(X, Y, params)
        assert fld.converged
        gw = fld.kernel @ fld.weights
        assert np.linalg.norm(gw, axis=1).max() < 1e-6
        assert fld.sigma2 == pytest.approx(params.sigma2_floor)

    def test_translation_recovery(self):
        Y = surface_cloud(200, seed=8)
        X = PointCloudFrame(Y.points + np.array([0, 0, 0.005]))
        params = CpdParams(beta=0.1, lambda_reg=2.0, outlier_w=0.0, max_iters=200)
        fld = register(X, Y, params)
        T = apply_deformation(fld)
        err = np.linalg.norm(T.points - X.points, axis=1)
        assert err.mean() < 5e-4

    def test_outlier_weight_helps(self):
        rng = np.random.default_rng(9)
        Y = surface_cloud(150, seed=10)
        pts = Y.points.copy()
        n_out = 15
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        idx = rng.choice(len(pts), n_out, replace=False)
        pts[idx] = rng.uniform(lo, hi, (n_out, 3))
        X = PointCloudFrame(pts)
        inliers = np.setdiff1d(np.arange(len(pts)), idx)

        def inlier_error(w):
            params = CpdParams(beta=0.1, lambda_reg=2.0, outlier_w=w, max_iters=60)
            T = apply_deformation(register(X, Y, params))
            return np.linalg.norm(T.points[inliers] - Y.points[inliers], axis=1).mean()

        assert inlier_error(0.1) < inlier_error(0.0)

    def test_monotone_objective(self):
        Y = surface_cloud(80, seed=11)
        rng = np.random.default_rng(12)
        X = PointCloudFrame(Y.points + 0.002 * rng.standard_normal(Y.points.shape))
        fld = register(X, Y, CpdParams(beta=0.08, lambda_reg=2.0, outlier_w=0.1,
                                       max_iters=80))
        diffs = np.diff(fld.neg_log_likelihood_trace)
        assert np.all(diffs <= 1e-8)

    def test_nonconvergence_flag(self):
        Y = surface_cloud(60, seed=13)
        X = PointCloudFrame(Y.points + np.array([0, 0, 0.01]))
        fld = register(X, Y, CpdParams(beta=0.1, max_iters=2, tol=1e-15))
        assert not fld.converged
        assert fld.iterations_run == 2

    def test_coherence_limit_reduces_variance(self):
        # a huge lambda drives the one-step field toward a rigid-like shift
        rng = np.random.default_rng(14)
        Y = surface_cloud(80, seed=15)
        X = PointCloudFrame(Y.points + np.array([0, 0, 0.004])
                            + 0.002 * rng.standard_normal((80, 3)))
        G = build_kernel(Y, 0.08)
        sigma2 = 1e-4
        P = e_step(X, PointCloudFrame(Y.points.copy()), sigma2, 0.0)

        def field_variance(lam):
            W, _, _ = m_step(X, Y, G, P, sigma2, lam)
            return (G @ W).var(axis=0).sum()

        assert field_variance(1e6) < field_variance(0.0)


class TestApplyDeformation:
    def test_zero_weights(self):
        Y = surface_cloud(40, seed=16)
        fld = register(PointCloudFrame(Y.points.copy()), Y,
                       CpdParams(max_iters=1))
        fld.weights[:] = 0.0
        assert np.array_equal(apply_deformation(fld).points, Y.points)

    def test_single_point(self):
        Y = PointCloudFrame([[1.0, 2.0, 3.0]])
        X = PointCloudFrame([[1.5, 2.0, 3.0]])
        fld = register(X, Y, CpdParams(beta=0.1, lambda_reg=0.0, outlier_w=0.0,
                                       max_iters=1))
        expected = Y.points + fld.kernel @ fld.weights
        assert np.allclose(apply_deformation(fld).points, expected)

    def test_permutation_equivariance(self):
        Y = surface_cloud(40, seed=17)
        X = PointCloudFrame(Y.points + np.array([0, 0, 0.003]))
        params = CpdParams(beta=0.08, lambda_reg=2.0, outlier_w=0.0,
                           max_iters=5, tol=1e-300)
        rng = np.random.default_rng(18)
        perm = rng.permutation(40)
        base = apply_deformation(register(X, Y, params)).points
        permuted = apply_deformation(
            register(X, PointCloudFrame(Y.points[perm]), params)).points
        unpermuted = np.empty_like(permuted)
        unpermuted[perm] = permuted
        assert np.allclose(unpermuted, base, atol=1e-9)


def test_field_round_trip(tmp_path):
    Y = surface_cloud(30, seed=19)
    X = PointCloudFrame(Y.points + np.array([0, 0, 0.002]))
    fld = register(X, Y, CpdParams(beta=0.1, max_iters=5))
    save_field(fld, tmp_path / "fld")
    back = load_field(tmp_path / "fld", Y)
    assert np.allclose(back.weights, fld.weights)
    assert back.sigma2 == pytest.approx(fld.sigma2)
    assert back.iterations_run == fld.iterations_run
