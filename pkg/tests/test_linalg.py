import math

import numpy as np
import pytest

from lanton.linalg import (
    SvdConvergenceError,
    frobenius_norm,
    jacobi_svd,
    spectral_norm_power,
)


@pytest.mark.parametrize("mat,expected", [
    ([[3.0, 4.0], [0.0, 0.0]], 5.0),
    ([[0.0, 0.0], [0.0, 0.0]], 0.0),
    ([[1.0, 1.0], [1.0, 1.0]], 2.0),
])
def test_frobenius_examples(mat, expected):
    assert frobenius_norm(np.array(mat)) == pytest.approx(expected, abs=0)


def test_frobenius_zero_iff_zero_matrix():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 5))
    assert frobenius_norm(a) > 0
    assert frobenius_norm(np.zeros((4, 4))) == 0.0


class TestJacobiSvd:
    def test_diagonal(self):
        res = jacobi_svd(np.diag([3.0, 4.0]))
        assert np.allclose(res.s, [4.0, 3.0])

    def test_zero_wide_matrix(self):
        res = jacobi_svd(np.zeros((2, 3)))
        assert np.array_equal(res.s, [0.0, 0.0])
        assert res.u.shape == (2, 2) and res.vt.shape == (2, 3)
        assert np.allclose(res.u.T @ res.u, np.eye(2), atol=1e-12)
        assert np.allclose(res.vt @ res.vt.T, np.eye(2), atol=1e-12)

    @pytest.mark.parametrize("shape,seed", [((8, 5), 0), ((5, 8), 1), ((12, 12), 2), ((1, 6), 3), ((7, 1), 4)])
    def test_result_invariants(self, shape, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(shape)
        res = jacobi_svd(a)
        k = min(shape)
        assert res.u.shape == (shape[0], k)
        assert res.vt.shape == (k, shape[1])
        assert np.all(res.s >= 0)
        assert np.all(np.diff(res.s) <= 0)
        assert np.abs(res.u.T @ res.u - np.eye(k)).max() <= 1e-10
        assert np.abs(res.vt @ res.vt.T - np.eye(k)).max() <= 1e-10
        recon = res.u @ np.diag(res.s) @ res.vt
        assert np.linalg.norm(recon - a) <= 1e-9 * (1.0 + np.linalg.norm(a))

    def test_matches_lapack_singular_values(self):
        # independent route: LAPACK's divide-and-conquer vs our Jacobi sweeps
        rng = np.random.default_rng(7)
        for shape in ((6, 4), (9, 9), (3, 11)):
            a = rng.standard_normal(shape)
            ours = jacobi_svd(a).s
            ref = np.linalg.svd(a, compute_uv=False)
            assert np.abs(ours - ref).max() <= 1e-10 * max(1.0, ref[0])

    def test_permutation_invariance_of_spectrum(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((7, 5))
        s0 = jacobi_svd(a).s
        perm_rows = rng.permutation(7)
        perm_cols = rng.permutation(5)
        s1 = jacobi_svd(a[perm_rows][:, perm_cols]).s
        assert np.abs(s0 - s1).max() <= 1e-9

    def test_rank_deficient_keeps_orthonormal_u(self):
        u = np.array([3.0, 4.0]) / 5.0
        v = np.array([1.0, 0.0])
        res = jacobi_svd(np.outer(u, v))
        assert res.s[0] == pytest.approx(1.0, rel=1e-12)
        assert res.s[1] <= 1e-12
        assert np.abs(res.u.T @ res.u - np.eye(2)).max() <= 1e-10

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 6))
        r1 = jacobi_svd(a)
        r2 = jacobi_svd(a)
        assert np.array_equal(r1.u, r2.u)
        assert np.array_equal(r1.s, r2.s)
        assert np.array_equal(r1.vt, r2.vt)

    def test_rejects_non_finite(self):
        a = np.array([[1.0, np.nan], [0.0, 1.0]])
        with pytest.raises(ValueError):
            jacobi_svd(a)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            jacobi_svd(np.zeros(3))

    def test_sweep_cap_raises(self, monkeypatch):
        import lanton.linalg as linalg

        monkeypatch.setattr(linalg, "_JACOBI_MAX_SWEEPS", 0)
        rng = np.random.default_rng(6)
        with pytest.raises(SvdConvergenceError):
            jacobi_svd(rng.standard_normal((4, 4)))


class TestSpectralNormPower:
    def test_diagonal(self):
        est = spectral_norm_power(np.diag([2.0, 0.5]), iters=50, seed=0)
        assert est == pytest.approx(2.0, abs=1e-8)

    def test_identity(self):
        est = spectral_norm_power(np.eye(3), iters=10, seed=0)
        assert est == pytest.approx(1.0, abs=1e-8)

    def test_matches_jacobi_on_random(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((16, 16))
        est = spectral_norm_power(a, iters=300, seed=2)
        top = jacobi_svd(a).s[0]
        assert abs(est - top) <= 1e-6 * top

    def test_zero_matrix(self):
        assert spectral_norm_power(np.zeros((3, 4)), iters=5, seed=0) == 0.0

    def test_never_overshoots(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            a = rng.standard_normal((6, 9))
            est = spectral_norm_power(a, iters=20, seed=seed)
            top = np.linalg.svd(a, compute_uv=False)[0]
            assert est <= top * (1.0 + 1e-6)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((8, 8))
        assert spectral_norm_power(a, iters=25, seed=4) == spectral_norm_power(a, iters=25, seed=4)


def test_norm_sandwich_invariant():
    # spectral <= frobenius <= sqrt(min dim) * spectral
    rng = np.random.default_rng(21)
    for _ in range(25):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        a = rng.standard_normal(shape)
        spec = spectral_norm_power(a, iters=200, seed=0)
        fro = frobenius_norm(a)
        assert spec <= fro * (1.0 + 1e-9)
        assert fro <= math.sqrt(min(shape)) * spec + 1e-9 * (1.0 + fro)
