import numpy as np
import pytest

from fortomo.csinvert import (CsConfig, WaveletBasis, cs_gradient, cs_objective,
                              default_lam, fista_solve, lipschitz_estimate,
                              soft_threshold, steering_power_gram, wavelet_basis)
from fortomo.geometry import make_height_grid, steering_matrix, synthesize_geometry
from fortomo.simulator import (draw_speckle_stack, sample_covariance,
                               true_covariance)


def tiny_setup(n_z=16, resolution=6.0, n_tracks=6):
    grid = make_height_grid(0.0, 15.0, n_z)
    geom = synthesize_geometry(n_tracks, resolution)
    return grid, steering_matrix(geom, grid)


class TestWaveletBasis:
    def test_two_point_haar(self):
        basis = wavelet_basis(2)
        expect = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
        assert np.allclose(basis.psi, expect, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("n_z", [2, 4, 8, 32, 128, 512])
    def test_orthonormal(self, n_z):
        basis = wavelet_basis(n_z)
        gram = basis.psi.T @ basis.psi
        assert np.abs(gram - np.eye(n_z)).max() < 1e-12

    def test_full_depth_constant_column(self):
        basis = wavelet_basis(8)
        assert basis.level == 3
        assert np.allclose(basis.psi[:, 0], 1.0 / np.sqrt(8.0), rtol=1e-15)

    def test_partial_level(self):
        basis = wavelet_basis(8, level=1)
        assert basis.level == 1
        gram = basis.psi.T @ basis.psi
        assert np.abs(gram - np.eye(8)).max() < 1e-12
        # single level: first 4 columns are pair averages
        assert np.allclose(basis.psi[:2, 0], 1.0 / np.sqrt(2.0))
        assert np.allclose(basis.psi[2:, 0], 0.0)

    def test_reconstruction_identity(self, rng):
        basis = wavelet_basis(64)
        x = rng.standard_normal(64)
        assert np.allclose(basis.psi @ (basis.psi.T @ x), x, rtol=0, atol=1e-12)

    def test_rejects_bad_sizes_and_families(self):
        with pytest.raises(ValueError):
            wavelet_basis(12)
        with pytest.raises(ValueError):
            wavelet_basis(1)
        with pytest.raises(ValueError):
            wavelet_basis(16, family="daubechies4")
        with pytest.raises(ValueError):
            wavelet_basis(16, level=5)

    def test_constructor_orthonormality_check(self):
        with pytest.raises(ValueError):
            WaveletBasis(psi=np.ones((4, 4)), family="haar", level=1)


class TestSoftThreshold:
    def test_formula(self):
        v = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        assert np.array_equal(soft_threshold(v, 1.0),
                              np.array([-1.0, 0.0, 0.0, 0.0, 1.0]))

    def test_zero_threshold_is_identity(self, rng):
        v = rng.standard_normal(32)
        assert np.array_equal(soft_threshold(v, 0.0), v)

    def test_shrinks_toward_zero(self, rng):
        v = rng.standard_normal(32)
        s = soft_threshold(v, 0.3)
        assert np.all(np.abs(s) <= np.abs(v))
        assert np.all(s * v >= 0)


class TestObjectiveAndGradient:
    def test_objective_at_zero(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((32, 6)) + 1j * rng.standard_normal((32, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        h0 = cs_objective(np.zeros(grid.n_z), sigma, steer, basis, lam=0.7)
        assert h0 == pytest.approx(np.linalg.norm(sigma, "fro") ** 2, rel=1e-14)

    def test_exact_fit_is_zero(self, rng):
        grid, steer = tiny_setup()
        p = rng.uniform(0.0, 1.0, grid.n_z)
        sigma = true_covariance(steer, p, 0.0)
        basis = wavelet_basis(grid.n_z)
        alpha = basis.psi.T @ p
        assert cs_objective(alpha, sigma, steer, basis, lam=0.0) < 1e-18

    def test_matches_bruteforce_expansion(self, rng):
        # oracle: evaluate the Frobenius data term entry by entry in python
        grid, steer = tiny_setup(n_z=8)
        y = rng.standard_normal((16, 6)) + 1j * rng.standard_normal((16, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(8)
        alpha = rng.standard_normal(8)
        lam = 0.31
        p = basis.psi @ alpha
        acc = 0.0
        for m in range(6):
            for n in range(6):
                model_mn = sum(p[k] * steer.a[m, k] * np.conj(steer.a[n, k])
                               for k in range(8))
                acc += abs(model_mn - sigma[m, n]) ** 2
        expect = acc + lam * np.abs(alpha).sum()
        assert cs_objective(alpha, sigma, steer, basis, lam) == pytest.approx(
            expect, rel=1e-12)

    def test_gradient_zero_at_exact_fit(self, rng):
        grid, steer = tiny_setup()
        p = rng.uniform(0.0, 1.0, grid.n_z)
        sigma = true_covariance(steer, p, 0.0)
        basis = wavelet_basis(grid.n_z)
        grad = cs_gradient(basis.psi.T @ p, sigma, steer, basis)
        assert np.abs(grad).max() < 1e-10

    def test_gradient_matches_finite_differences(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((24, 6)) + 1j * rng.standard_normal((24, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        alpha = rng.standard_normal(grid.n_z) * 0.1
        grad = cs_gradient(alpha, sigma, steer, basis)
        fd = np.empty_like(grad)
        h = 1e-6
        for i in range(alpha.size):
            up, dn = alpha.copy(), alpha.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (cs_objective(up, sigma, steer, basis, 0.0)
                     - cs_objective(dn, sigma, steer, basis, 0.0)) / (2 * h)
        assert np.linalg.norm(fd - grad) / np.linalg.norm(grad) < 1e-6

    def test_gradient_at_zero_is_beamforming_numerator(self, rng):
        # -grad(0)/2 = Psi^T b with b the unnormalized beamforming powers
        from fortomo.spectral import beamforming

        grid, steer = tiny_setup()
        y = rng.standard_normal((24, 6)) + 1j * rng.standard_normal((24, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        grad0 = cs_gradient(np.zeros(grid.n_z), sigma, steer, basis)
        b = beamforming(sigma, steer).profile * 36.0
        assert np.allclose(-0.5 * grad0, basis.psi.T @ b, rtol=1e-10)


class TestLipschitz:
    def test_single_column(self):
        grid = make_height_grid(0.0, 1.0, 2)
        geom = synthesize_geometry(4, 50.0)
        steer = steering_matrix(geom, grid)
        one_col = steering_matrix(geom, make_height_grid(0.0, 1.0, 2))
        # direct: N_z = 2 small case against dense eigenvalues
        g = steering_power_gram(one_col)
        expect = 2.0 * np.linalg.eigvalsh(g)[-1]
        assert lipschitz_estimate(one_col) == pytest.approx(expect, rel=1e-10)

    def test_orthogonal_columns_give_2n2(self):
        # grid spacing resolution * (N-1)/N makes the steering columns the
        # N-point DFT directions, hence exactly orthogonal
        geom = synthesize_geometry(4, 10.0)
        grid = make_height_grid(0.0, 22.5, 4)  # spacing 7.5 = 10 * 3/4
        steer = steering_matrix(geom, grid)
        gram = steer.a.conj().T @ steer.a
        assert np.allclose(gram - np.diag(gram.diagonal()), 0.0, atol=1e-12)
        assert lipschitz_estimate(steer) == pytest.approx(2.0 * 16.0, rel=1e-12)

    def test_matches_dense_eigendecomposition(self, steer15):
        g = steering_power_gram(steer15)
        expect = 2.0 * np.linalg.eigvalsh(g)[-1]
        assert lipschitz_estimate(steer15) == pytest.approx(expect, rel=1e-3)

    def test_gram_structure(self, steer15):
        g = steering_power_gram(steer15)
        assert np.array_equal(g, g.T)
        assert np.allclose(g.diagonal(), 36.0, rtol=1e-13)
        assert g.min() >= 0


class TestFistaSolve:
    def test_huge_lambda_gives_zero(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((16, 6)) + 1j * rng.standard_normal((16, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        res = fista_solve(sigma, steer, basis,
                          CsConfig(lam=1e9, max_iter=50))
        assert np.array_equal(res.alpha, np.zeros(grid.n_z))
        assert np.array_equal(res.profile, np.zeros(grid.n_z))

    def test_monotone_objectives(self, rng):
        grid, steer = tiny_setup()
        basis = wavelet_basis(grid.n_z)
        for trial in range(10):
            y = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
            sigma = sample_covariance(y).sigma
            res = fista_solve(sigma, steer, basis, CsConfig(max_iter=300))
            assert np.all(np.diff(res.objectives) <= 0.0)
            assert res.objectives[0] == pytest.approx(
                np.linalg.norm(sigma, "fro") ** 2, rel=1e-14)

    def test_recovers_single_scatterer(self):
        # auto lambda: the l1 pressure is what concentrates the estimate,
        # since 16 spatial atoms over 6 uniform tracks are linearly dependent
        grid, steer = tiny_setup(n_z=16, resolution=4.0)
        i0 = 5
        p = np.zeros(16)
        p[i0] = 1.0
        sigma = true_covariance(steer, p, 0.0)
        basis = wavelet_basis(16)
        res = fista_solve(sigma, steer, basis,
                          CsConfig(max_iter=4000, rel_tol=1e-12))
        mass = res.profile / res.profile.sum()
        assert mass.argmax() == i0
        assert mass[i0 - 1:i0 + 2].sum() > 0.99

    def test_lambda_zero_fits_exactly(self, rng):
        # grid span well below the ambiguity height res * (N-1) = 15 m, so
        # all four spatial atoms are distinct and the exact fit is unique
        grid = make_height_grid(0.0, 6.0, 4)
        steer = steering_matrix(synthesize_geometry(6, 3.0), grid)
        p = rng.uniform(0.1, 1.0, 4)
        sigma = true_covariance(steer, p, 0.0)
        basis = wavelet_basis(4)
        res = fista_solve(sigma, steer, basis,
                          CsConfig(lam=0.0, max_iter=20000, rel_tol=1e-16))
        assert np.allclose(res.profile, p, rtol=1e-4)
        assert res.objectives[-1] < 1e-8 * np.linalg.norm(sigma, "fro") ** 2

    def test_scale_equivariance(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((16, 6)) + 1j * rng.standard_normal((16, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        c = 12.5
        base = fista_solve(sigma, steer, basis, CsConfig(lam=0.05))
        scaled = fista_solve(c * sigma, steer, basis, CsConfig(lam=c * 0.05))
        assert np.allclose(scaled.profile, c * base.profile, rtol=1e-9,
                           atol=1e-12)

    def test_default_lambda_tracks_scale(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((16, 6)) + 1j * rng.standard_normal((16, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        lam1 = default_lam(sigma, steer, basis)
        lam2 = default_lam(3.0 * sigma, steer, basis)
        assert lam2 == pytest.approx(3.0 * lam1, rel=1e-12)
        # solutions then scale too
        a = fista_solve(sigma, steer, basis)
        b = fista_solve(3.0 * sigma, steer, basis)
        assert np.allclose(b.profile, 3.0 * a.profile, rtol=1e-9, atol=1e-12)

    def test_converged_flag_and_iteration_count(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((16, 6)) + 1j * rng.standard_normal((16, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        res = fista_solve(sigma, steer, basis, CsConfig(max_iter=2000))
        assert res.converged
        assert res.iterations == res.objectives.size - 1
        capped = fista_solve(sigma, steer, basis, CsConfig(max_iter=3))
        assert not capped.converged
        assert capped.iterations == 3

    def test_nonneg_projection_toggle(self, rng):
        grid, steer = tiny_setup()
        y = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
        sigma = sample_covariance(y).sigma
        basis = wavelet_basis(grid.n_z)
        on = fista_solve(sigma, steer, basis, CsConfig(max_iter=200))
        off = fista_solve(sigma, steer, basis,
                          CsConfig(max_iter=200, nonneg_projection=False))
        assert np.all(on.profile >= 0)
        assert np.array_equal(on.profile, np.maximum(off.profile, 0.0))
        assert np.array_equal(on.alpha, off.alpha)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CsConfig(lam=-1.0)
        with pytest.raises(ValueError):
            CsConfig(max_iter=0)
        with pytest.raises(ValueError):
            CsConfig(rel_tol=0.0)

    def test_basis_size_mismatch(self, rng):
        grid, steer = tiny_setup()
        with pytest.raises(ValueError):
            fista_solve(np.eye(6, dtype=complex), steer, wavelet_basis(8))
