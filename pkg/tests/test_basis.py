import numpy as np
import pytest
from scipy.integrate import simpson

from cyltomo.basis import (
    BasisSet,
    IllConditionedBasisError,
    basis_from_json_dict,
    basis_to_json_dict,
    build_basis,
    exp_monomial_moments,
    project,
    reconstruct,
)


@pytest.fixture(scope="module")
def basis8() -> BasisSet:
    return build_basis(8, 1.0)


def quadrature_gram(basis: BasisSet, n_pts: int = 20001) -> np.ndarray:
    """Independent oracle: Gram matrix by dense Simpson quadrature."""
    z = np.linspace(0.0, basis.length, n_pts)
    p = basis.evaluation_matrix(z)
    return np.array(
        [[simpson(p[:, i] * p[:, j], x=z) for j in range(basis.size)] for i in range(basis.size)]
    )


class TestMoments:
    def test_against_quadrature(self):
        mom = exp_monomial_moments(16, 1.0)
        z = np.linspace(0, 1, 40001)
        for k in (0, 3, 8, 16):
            oracle = simpson(z**k * np.exp(2 * z), x=z)
            assert mom[k] == pytest.approx(oracle, rel=1e-8)

    def test_first_moment_closed_form(self):
        mom = exp_monomial_moments(1, 1.0)
        assert mom[0] == pytest.approx((np.e**2 - 1) / 2, rel=1e-15)


class TestConstruction:
    def test_normalization_n1(self):
        # oracle: psi_0 = e^z / sqrt(int_0^1 e^{2z} dz); frozen value below
        bs = build_basis(1, 1.0)
        assert bs.evaluate(0, 0.0) == pytest.approx(0.559495563431321, abs=1e-12)

    def test_gram_identity(self, basis8):
        g = quadrature_gram(basis8)
        assert np.abs(g - np.eye(8)).max() < 1e-10

    def test_a_matrix_triangularity(self, basis8):
        a = basis8.a_matrix
        assert np.abs(np.diag(a) - 1.0).max() < 1e-10
        below = np.abs(np.tril(a, k=-1)).max()
        assert below < 1e-10

    def test_det_is_one(self, basis8):
        assert np.linalg.det(basis8.a_matrix) == pytest.approx(1.0, abs=1e-8)

    def test_a_entry_against_quadrature(self, basis8):
        z = np.linspace(0, 1, 20001)
        p = basis8.evaluation_matrix(z)
        dp = basis8.derivative_matrix(z)
        for m, n in ((0, 0), (2, 5), (1, 7)):
            oracle = simpson(p[:, m] * dp[:, n], x=z)
            assert basis8.a_matrix[m, n] == pytest.approx(oracle, abs=1e-8)

    def test_a00_equals_one(self):
        # psi_0' = psi_0, so <psi_0, psi_0'> is the squared norm
        bs = build_basis(1, 1.0)
        assert bs.a_matrix[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_ill_conditioning_names_stable_size(self):
        with pytest.raises(IllConditionedBasisError) as exc:
            build_basis(14, 1.0)
        assert exc.value.n_stable >= 8
        assert "largest stable N" in str(exc.value)

    def test_other_interval_lengths(self):
        for b in (0.5, 2.0):
            bs = build_basis(6, b)
            g = quadrature_gram(bs)
            assert np.abs(g - np.eye(6)).max() < 1e-10


class TestEvaluation:
    def test_exponential_ratio(self, basis8):
        # P_0 is constant, so psi_0(z)/psi_0(0) = e^z
        z = np.linspace(0, 1, 11)
        ratio = basis8.evaluate(0, z) / basis8.evaluate(0, 0.0)
        assert np.allclose(ratio, np.exp(z), rtol=1e-13)

    def test_derivative_matches_finite_difference(self, basis8):
        rng = np.random.default_rng(7)
        z = rng.uniform(0.05, 0.95, 10)
        h = 1e-6
        for n in range(basis8.size):
            fd = (basis8.evaluate(n, z + h) - basis8.evaluate(n, z - h)) / (2 * h)
            assert np.abs(fd - basis8.evaluate_derivative(n, z)).max() < 1e-8

    def test_index_out_of_range(self, basis8):
        with pytest.raises(IndexError):
            basis8.evaluate(8, 0.5)
        with pytest.raises(IndexError):
            basis8.evaluate_derivative(-1, 0.5)

    def test_matrix_forms_agree_with_scalar(self, basis8):
        z = np.linspace(0, 1, 9)
        p = basis8.evaluation_matrix(z)
        dp = basis8.derivative_matrix(z)
        for n in (0, 4, 7):
            assert np.allclose(p[:, n], basis8.evaluate(n, z), rtol=1e-13)
            assert np.allclose(dp[:, n], basis8.evaluate_derivative(n, z), rtol=1e-13)


class TestProjection:
    def test_basis_element_reproduced(self, basis8):
        z = np.linspace(0, 1, 21)
        c = project(basis8.evaluate(2, z), z, basis8)
        want = np.zeros(8)
        want[2] = 1.0
        assert np.abs(c - want).max() < 1e-6

    def test_zero_function(self, basis8):
        z = np.linspace(0, 1, 21)
        assert np.all(project(np.zeros_like(z), z, basis8) == 0.0)

    def test_span_reproduction_random_combination(self, basis8):
        rng = np.random.default_rng(3)
        z = np.linspace(0, 1, 21)
        coef = rng.normal(size=8)
        f = reconstruct(coef, z, basis8)
        assert np.abs(project(f, z, basis8) - coef).max() < 1e-9

    def test_least_squares_optimality(self, basis8):
        # projection residual is discretely orthogonal to the span
        rng = np.random.default_rng(5)
        z = np.linspace(0, 1, 33)
        f = np.sin(4 * z) + rng.normal(scale=0.1, size=z.shape)
        c = project(f, z, basis8)
        resid = f - reconstruct(c, z, basis8)
        w = np.full_like(z, z[1] - z[0])
        w[0] = w[-1] = 0.5 * (z[1] - z[0])
        psi = basis8.evaluation_matrix(z)
        assert np.abs(psi.T @ (w * resid)).max() < 1e-10

    def test_batched_projection(self, basis8):
        z = np.linspace(0, 1, 21)
        f = np.stack([basis8.evaluate(0, z), basis8.evaluate(3, z)])
        c = project(f, z, basis8)
        assert c.shape == (2, 8)
        assert np.abs(c[0] - np.eye(8)[0]).max() < 1e-9
        assert np.abs(c[1] - np.eye(8)[3]).max() < 1e-9

    def test_coarse_grid_rejected(self, basis8):
        z = np.linspace(0, 1, 7)
        with pytest.raises(ValueError, match="at least 8 nodes"):
            project(np.zeros_like(z), z, basis8)

    def test_non_finite_rejected(self, basis8):
        z = np.linspace(0, 1, 21)
        f = np.zeros_like(z)
        f[3] = np.nan
        with pytest.raises(ValueError):
            project(f, z, basis8)


class TestJsonExport:
    def test_round_trip(self, basis8):
        doc = basis_to_json_dict(basis8)
        bs = basis_from_json_dict(doc)
        z = np.linspace(0, 1, 13)
        assert np.allclose(bs.evaluation_matrix(z), basis8.evaluation_matrix(z), rtol=1e-14)
        assert np.allclose(bs.a_matrix, basis8.a_matrix, rtol=1e-14)
