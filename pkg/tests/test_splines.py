import math

import numpy as np
import pytest

from netgps import DegenerateBasisError, ValidationError
from netgps import splines as S


class TestRadialKernel:
    def test_d3_linear(self):
        # d=3: m=2, C(r) = r^(4-3) = r
        assert S.default_order(3) == 2
        assert S.radial_kernel(2.0, 2, 3) == pytest.approx(2.0)

    def test_zero_radius_both_parities(self):
        assert S.radial_kernel(0.0, 2, 3) == 0.0
        assert S.radial_kernel(0.0, 2, 2) == 0.0

    def test_d2_log_branch(self):
        # d=2: m=2, C(r) = r^2 log r; C(e) = e^2
        assert S.default_order(2) == 2
        assert S.radial_kernel(math.e, 2, 2) == pytest.approx(math.e**2, rel=1e-12)

    def test_order_positivity_enforced(self):
        with pytest.raises(ValidationError):
            S.radial_kernel(1.0, 1, 3)
        with pytest.raises(ValidationError):
            S.radial_kernel(-0.1, 2, 3)

    def test_default_orders(self):
        assert [S.default_order(d) for d in (1, 2, 3, 4)] == [1, 2, 2, 3]


class TestSelectKnots:
    def test_all_points_when_k_equals_distinct(self):
        pts = np.random.default_rng(0).normal(size=(10, 2))
        knots = S.select_knots(pts, 10, seed=1)
        assert np.array_equal(knots, np.unique(pts, axis=0))

    def test_duplicates_removed_first(self):
        pts = np.array([[0.0, 0], [1, 0], [0, 1], [0, 0], [1, 0], [0, 1]])
        knots = S.select_knots(pts, 3, seed=0)
        assert knots.shape == (3, 2)
        assert np.unique(knots, axis=0).shape[0] == 3
        with pytest.raises(ValidationError):
            S.select_knots(pts, 4, seed=0)

    def test_candidate_cap(self):
        pts = np.random.default_rng(2).normal(size=(5000, 2))
        knots = S.select_knots(pts, 15, seed=3, max_locations=2000)
        assert knots.shape == (15, 2)

    def test_deterministic(self):
        pts = np.random.default_rng(4).normal(size=(300, 3))
        a = S.select_knots(pts, 12, seed=5)
        b = S.select_knots(pts, 12, seed=5)
        assert np.array_equal(a, b)

    def test_knots_are_data_locations(self):
        pts = np.random.default_rng(6).normal(size=(80, 2))
        knots = S.select_knots(pts, 8, seed=7)
        rows = {tuple(r) for r in pts}
        assert all(tuple(k) in rows for k in knots)

    def test_spread_better_than_random_prefix(self):
        # k-means++ D^2 choice should cover more space than the first-k rows
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(400, 2))
        knots = S.select_knots(pts, 20, seed=9)
        d_pp = _fill_distance(pts, knots)
        d_prefix = _fill_distance(pts, pts[:20])
        assert d_pp <= d_prefix


def _fill_distance(pts, knots):
    d2 = ((pts[:, None, :] - knots[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min(axis=1)).max())


def _psdified(omega):
    w, q = np.linalg.eigh(0.5 * (omega + omega.T))
    return (q * np.abs(w)) @ q.T


class TestBuildBasis:
    def test_points_equal_knots_identity(self):
        pts = np.random.default_rng(0).normal(size=(12, 3))
        u, basis = S.build_basis(pts, knots=pts)
        # |lambda| convention: U U^T equals the PSD-ified Gram
        assert np.allclose(u @ u.T, _psdified(basis.omega), atol=1e-8)

    def test_sandwich_identity_on_retained_space(self):
        pts = np.random.default_rng(1).normal(size=(40, 3))
        _, basis = S.build_basis(pts, n_knots=10, seed=2)
        q = basis.eigvecs
        sandwich = basis.whiten @ _psdified(basis.omega) @ basis.whiten
        err = np.abs(q.T @ sandwich @ q - np.eye(basis.rank)).max()
        assert err <= 1e-8

    def test_uut_matches_dense_oracle(self):
        # dense linear-algebra oracle on 50x3 points, 10 knots
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(50, 3))
        u, basis = S.build_basis(pts, n_knots=10, seed=4)
        sp = basis.transform.transform(pts)
        d2 = ((sp[:, None, :] - basis.knots[None, :, :]) ** 2).sum(-1)
        r = np.sqrt(np.maximum(d2, 0.0))  # d=3 kernel: C(r)=r
        w, q = np.linalg.eigh(basis.omega)
        keep = np.abs(w) >= S.EIG_TRUNCATION
        pinv_abs = (q[:, keep] / np.abs(w[keep])) @ q[:, keep].T
        assert np.allclose(u @ u.T, r @ pinv_abs @ r.T, atol=1e-6)

    def test_singleton_knot_degenerate(self):
        pts = np.random.default_rng(5).normal(size=(6, 3))
        with pytest.raises(DegenerateBasisError):
            S.build_basis(pts, knots=pts[:1])

    def test_rotation_invariance_without_standardization(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(30, 3))
        idx = rng.choice(30, 8, replace=False)
        qmat, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        u1, _ = S.build_basis(pts, knots=pts[idx], standardize=False)
        u2, _ = S.build_basis(pts @ qmat, knots=(pts @ qmat)[idx], standardize=False)
        assert np.allclose(u1, u2, atol=1e-8)

    def test_affine_rescaling_invariance_with_standardization(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(40, 3))
        idx = rng.choice(40, 9, replace=False)
        scaled = pts.copy()
        scaled[:, 1] = 5.0 * scaled[:, 1] - 2.0
        u1, _ = S.build_basis(pts, knots=pts[idx])
        u2, _ = S.build_basis(scaled, knots=scaled[idx])
        assert np.allclose(u1, u2, atol=1e-10)

    def test_design_reproduces_training_matrix(self):
        pts = np.random.default_rng(8).normal(size=(25, 2))
        u, basis = S.build_basis(pts, n_knots=6, seed=9)
        assert np.allclose(basis.design(pts), u, atol=1e-12)

    def test_constant_coordinate_tolerated(self):
        pts = np.column_stack([
            np.random.default_rng(9).random(20),
            np.full(20, 0.7),
        ])
        u, basis = S.build_basis(pts, n_knots=5, seed=10)
        assert np.isfinite(u).all()

    def test_default_knot_count(self):
        assert S.default_knot_count(500) == 80
        assert S.default_knot_count(80) == 16
        assert S.default_knot_count(30) == 10  # floor
        assert S.default_knot_count(10**6) == 80  # cap
