import numpy as np
import pytest

from cyltomo.basis import build_basis, reconstruct
from cyltomo.eikonal import solve_eikonal
from cyltomo.geometry import CartGrid, CylGrid, CylinderSpec
from cyltomo.observations import (
    BoundaryData,
    DataError,
    IncompleteDataError,
    add_noise,
    extract_boundary_data,
    smooth_and_differentiate,
)
from cyltomo.phantom import RefractiveField

SPEC = CylinderSpec()


@pytest.fixture(scope="module")
def setup():
    cart = CartGrid.cover_cylinder(SPEC, spacing=1.0 / 40.0)
    cyl = CylGrid(SPEC, n_r=40, n_phi=40, n_z=40)
    field = RefractiveField(cart, np.ones(cart.shape))
    z0 = CylGrid(SPEC, n_r=20, n_phi=20, n_z=20).z_nodes  # source grid
    tables = [solve_eikonal(field, z) for z in z0]
    data = extract_boundary_data(tables, cyl)
    return cart, cyl, z0, data


def analytic_p(cyl, z0):
    # homogeneous medium: p = sqrt(R^2 + (z - z0)^2)
    z = cyl.z_nodes[None, :, None]
    return np.broadcast_to(
        np.sqrt(SPEC.radius**2 + (z - z0[None, None, :]) ** 2),
        (cyl.n_phi, cyl.n_z + 1, len(z0)),
    )


class TestExtraction:
    def test_lateral_trace_matches_homogeneous(self, setup):
        cart, cyl, z0, data = setup
        assert np.abs(data.p - analytic_p(cyl, z0)).max() <= 2.0 * cart.spacing

    def test_bottom_trace_matches_homogeneous(self, setup):
        cart, cyl, z0, data = setup
        r = cyl.r_nodes[:, None, None]
        want = np.sqrt(r**2 + z0[None, None, :] ** 2)
        assert np.abs(data.p0 - want).max() <= 2.0 * cart.spacing

    def test_phi_independence_for_symmetric_field(self, setup):
        cart, cyl, z0, data = setup
        spread = np.abs(data.p - data.p.mean(axis=0, keepdims=True)).max()
        assert spread <= 2.0 * cart.spacing

    def test_positivity(self, setup):
        _, _, _, data = setup
        assert data.p.min() > 0 and data.p0.min() > 0 and data.pB.min() > 0

    def test_empty_tables_rejected(self, setup):
        _, cyl, _, _ = setup
        with pytest.raises(IncompleteDataError):
            extract_boundary_data([], cyl)


class TestNoise:
    def test_zero_delta_identity(self, setup):
        _, _, _, data = setup
        noisy = add_noise(data, 0.0, seed=1)
        assert noisy.p is data.p

    def test_bounded_uniform_noise_on_discs(self, setup):
        _, _, _, data = setup
        noisy = add_noise(data, 0.01, seed=2)
        rel = np.abs(noisy.p0 / data.p0 - 1.0)
        assert rel.max() <= 0.01 + 1e-12

    def test_determinism(self, setup):
        _, _, _, data = setup
        a = add_noise(data, 0.03, seed=42)
        b = add_noise(data, 0.03, seed=42)
        assert np.array_equal(a.p, b.p)
        assert np.array_equal(a.p0, b.p0)
        c = add_noise(data, 0.03, seed=43)
        assert not np.array_equal(a.p, c.p)

    def test_mean_preserving_over_seeds(self, setup):
        _, _, _, data = setup
        acc = np.zeros_like(data.p)
        n_seeds = 200
        for seed in range(n_seeds):
            acc += add_noise(data, 0.01, seed=seed).p
        acc /= n_seeds
        rel_l2 = np.linalg.norm(acc - data.p) / np.linalg.norm(data.p)
        assert rel_l2 <= 0.002


class TestDerivatives:
    @pytest.fixture(scope="class")
    def basis(self):
        return build_basis(8, SPEC.height)

    def test_pz_matches_analytic(self, setup, basis):
        cart, cyl, z0, data = setup
        derived = smooth_and_differentiate(data, basis)
        z = cyl.z_nodes[None, :, None]
        want = (z - z0[None, None, :]) / np.sqrt(SPEC.radius**2 + (z - z0[None, None, :]) ** 2)
        err = np.abs(derived.p_z - want)
        assert err.max() <= 3.0 * cart.spacing

    def test_pphi_vanishes_for_symmetric_data(self, setup, basis):
        cart, cyl, z0, data = setup
        symmetric = BoundaryData(
            grid=cyl, z0=z0, p=np.ascontiguousarray(analytic_p(cyl, z0)), p0=data.p0, pB=data.pB
        )
        derived = smooth_and_differentiate(symmetric, basis)
        assert np.abs(derived.p_phi).max() < 1e-10

    def test_cubic_reproduced_exactly_in_interior(self, setup, basis):
        # natural-spline derivative of a cubic is exact away from the ends
        _, cyl, z0, data = setup
        z = cyl.z_nodes
        f = 2.0 + 0.5 * z - 0.3 * z**2 + 0.1 * z**3
        p = np.broadcast_to(f[None, :, None], data.p.shape).copy()
        cubic = BoundaryData(grid=cyl, z0=z0, p=p, p0=data.p0, pB=data.pB)
        derived = smooth_and_differentiate(cubic, basis)
        want = 0.5 - 0.6 * z + 0.3 * z**2
        # natural-end bias decays by ~(2 - sqrt(3)) per node; gone by 12 nodes in
        interior = slice(12, -12)
        err = np.abs(derived.p_z[:, interior, :] - want[None, interior, None])
        assert err.max() < 1e-9

    def test_linearity(self, setup, basis):
        _, cyl, z0, data = setup
        rng = np.random.default_rng(0)
        other = BoundaryData(
            grid=cyl,
            z0=z0,
            p=data.p * (1 + 0.1 * rng.random(data.p.shape)),
            p0=data.p0 * (1 + 0.1 * rng.random(data.p0.shape)),
            pB=data.pB * (1 + 0.1 * rng.random(data.pB.shape)),
        )
        a, b = 2.0, -0.7
        combo = BoundaryData(
            grid=cyl,
            z0=z0,
            p=a * data.p + b * other.p,
            p0=a * data.p0 + b * other.p0,
            pB=a * data.pB + b * other.pB,
        )
        d1 = smooth_and_differentiate(data, basis)
        d2 = smooth_and_differentiate(other, basis)
        dc = smooth_and_differentiate(combo, basis)
        assert np.allclose(dc.p_z, a * d1.p_z + b * d2.p_z, atol=1e-10)
        assert np.allclose(dc.p_phi, a * d1.p_phi + b * d2.p_phi, atol=1e-10)
        # g is linear in p as well
        assert np.allclose(dc.g, a * d1.g + b * d2.g, atol=1e-10)

    def test_g0_reconstruction_error(self, setup, basis):
        # N = 8 coefficients reproduce the squared radial derivative within 2%
        _, cyl, z0, data = setup
        derived = smooth_and_differentiate(data, basis)
        target = derived.dp0_dr**2
        recon = reconstruct(derived.g0, z0, basis)
        rel = np.linalg.norm(recon - target) / np.linalg.norm(target)
        assert rel <= 0.02

    def test_non_finite_rejected(self, setup, basis):
        _, cyl, z0, data = setup
        bad_p = data.p.copy()
        bad_p[0, 0, 0] = np.nan
        bad = BoundaryData(grid=cyl, z0=z0, p=bad_p, p0=data.p0, pB=data.pB)
        with pytest.raises((DataError, ValueError)):
            smooth_and_differentiate(bad, basis)

    def test_restriction_to_inverse_grid(self, setup, basis):
        _, cyl, z0, data = setup
        derived = smooth_and_differentiate(data, basis)
        coarse = CylGrid(SPEC, n_r=20, n_phi=20, n_z=20)
        restricted = derived.restrict(coarse)
        assert restricted.p_phi.shape == (20, 21, len(z0))
        assert restricted.g0.shape == (21, 20, basis.size)
        ir, ip, iz = coarse.restriction_indices(cyl)
        assert np.array_equal(restricted.p_z, derived.p_z[np.ix_(ip, iz)])
