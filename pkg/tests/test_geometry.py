import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyltomo.geometry import (
    CartGrid,
    CylGrid,
    CylinderSpec,
    GridTooCoarseError,
    OutOfDomainError,
    cart_to_cyl,
    cyl_to_cart,
    grids_from_config,
    grids_to_config,
    sample_cart_to_cyl,
    semidiscrete_norms,
    trapezoid_weights,
    trilinear_sample,
)

SPEC = CylinderSpec(radius=1.0, inner_radius=0.01, height=1.0)


def small_grid(n_r=5, n_phi=8, n_z=6):
    return CylGrid(SPEC, n_r=n_r, n_phi=n_phi, n_z=n_z)


class TestCylinderSpec:
    def test_monotonicity_constant_positive(self):
        c = SPEC.monotonicity_constant
        assert c == pytest.approx(0.01 / math.sqrt(0.01**2 + 1.0), rel=1e-14)
        assert c > 0

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            CylinderSpec(radius=1.0, inner_radius=0.0, height=1.0)
        with pytest.raises(ValueError):
            CylinderSpec(radius=0.5, inner_radius=0.6, height=1.0)
        with pytest.raises(ValueError):
            CylinderSpec(radius=1.0, inner_radius=0.01, height=0.0)


class TestTransforms:
    def test_axis_alignment(self):
        assert cyl_to_cart(1.0, 0.0, 0.5) == pytest.approx((1.0, 0.0, 0.5))

    def test_quarter_turn(self):
        x, y, z = cyl_to_cart(1.0, math.pi / 2, 0.0)
        assert (x, y, z) == pytest.approx((0.0, 1.0, 0.0), abs=1e-15)

    def test_half_turn(self):
        x, y, z = cyl_to_cart(0.5, math.pi, 0.3)
        assert (x, y, z) == pytest.approx((-0.5, 0.0, 0.3), abs=1e-15)

    @given(
        r=st.floats(min_value=0.01, max_value=1.0),
        phi=st.floats(min_value=0.0, max_value=2 * math.pi, exclude_max=True),
        z=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_round_trip(self, r, phi, z):
        x, y, zz = cyl_to_cart(r, phi, z)
        r2, phi2, z2 = cart_to_cyl(x, y, zz)
        assert r2 == pytest.approx(r, rel=1e-12)
        dphi = (phi2 - phi + math.pi) % (2 * math.pi) - math.pi
        assert abs(dphi) < 1e-12 / max(r, 1e-2)
        assert z2 == pytest.approx(z, abs=1e-14)


class TestCartGrid:
    def test_cover_cylinder_nodes(self):
        g = CartGrid.cover_cylinder(SPEC, spacing=1.0 / 40.0)
        assert g.covers_cylinder(SPEC)
        assert g.spacing == pytest.approx(1.0 / 40.0, rel=1e-14)
        # axis and z-levels of the cylinder are exact nodes
        assert 0.0 in g.x_nodes
        assert np.min(np.abs(g.z_nodes - 0.0)) < 1e-12
        assert np.min(np.abs(g.z_nodes - 1.0)) < 1e-12

    def test_spacing_must_divide_height(self):
        with pytest.raises(ValueError):
            CartGrid.cover_cylinder(SPEC, spacing=0.3)

    def test_config_round_trip(self):
        cyl = small_grid()
        cart = CartGrid.cover_cylinder(SPEC, spacing=0.05)
        text = grids_to_config(cyl, cart)
        cyl2, cart2 = grids_from_config(text)
        assert cyl2 == cyl
        assert cart2 == cart


class TestTrilinear:
    def setup_method(self):
        self.cart = CartGrid.cover_cylinder(SPEC, spacing=0.1)
        self.cyl = small_grid()

    def field(self, fn):
        x = self.cart.x_nodes[:, None, None]
        y = self.cart.y_nodes[None, :, None]
        z = self.cart.z_nodes[None, None, :]
        return np.broadcast_to(fn(x, y, z), self.cart.shape).astype(float)

    def test_reproduces_constants(self):
        vals = sample_cart_to_cyl(self.field(lambda x, y, z: 1.0 + 0 * x * y * z), self.cart, self.cyl)
        assert np.allclose(vals, 1.0, atol=1e-14)

    def test_affine_exactness_z(self):
        vals = sample_cart_to_cyl(self.field(lambda x, y, z: z + 0 * x * y), self.cart, self.cyl)
        want = np.broadcast_to(self.cyl.z_nodes[None, None, :], vals.shape)
        assert np.allclose(vals, want, atol=1e-12)

    def test_affine_exactness_x(self):
        vals = sample_cart_to_cyl(self.field(lambda x, y, z: x + 0 * y * z), self.cart, self.cyl)
        r = self.cyl.r_nodes[:, None, None]
        phi = self.cyl.phi_nodes[None, :, None]
        want = np.broadcast_to(r * np.cos(phi), vals.shape)
        assert np.allclose(vals, want, atol=1e-12)
        # spec example: f = x at (0.5, phi=0, z) -> 0.5
        i = np.argmin(np.abs(self.cyl.r_nodes - 0.5))
        assert vals[i, 0, 2] == pytest.approx(self.cyl.r_nodes[i], abs=1e-12)

    def test_second_order_convergence(self):
        # smooth field: halving the spacing divides the error by about 4
        fn = lambda x, y, z: np.sin(2 * x) * np.cos(1.5 * y) + z**2
        errs = []
        for spacing in (0.1, 0.05):
            cart = CartGrid.cover_cylinder(SPEC, spacing=spacing)
            x = cart.x_nodes[:, None, None]
            y = cart.y_nodes[None, :, None]
            z = cart.z_nodes[None, None, :]
            vals = np.broadcast_to(fn(x, y, z), cart.shape).astype(float)
            got = sample_cart_to_cyl(vals, cart, self.cyl)
            xx, yy, zz = np.broadcast_arrays(
                self.cyl.r_nodes[:, None, None] * np.cos(self.cyl.phi_nodes[None, :, None]),
                self.cyl.r_nodes[:, None, None] * np.sin(self.cyl.phi_nodes[None, :, None]),
                self.cyl.z_nodes[None, None, :],
            )
            errs.append(np.max(np.abs(got - fn(xx, yy, zz))))
        ratio = errs[0] / errs[1]
        assert 2.5 < ratio < 6.0

    def test_out_of_domain_named(self):
        vals = self.field(lambda x, y, z: 0 * x * y * z)
        with pytest.raises(OutOfDomainError, match="leaves the Cartesian grid"):
            trilinear_sample(self.cart, vals, 99.0, 0.0, 0.5)


class TestSemidiscreteNorms:
    def test_zero_field(self):
        g = small_grid()
        v = np.zeros(g.shape + (3,))
        l2, h1 = semidiscrete_norms(v, g)
        assert l2 == 0.0 and h1 == 0.0

    def test_constant_field_closed_form(self):
        # frozen closed form: l2^2 = N (n+1)(k+1) (R - eps); h1 == l2
        g = small_grid(n_r=5, n_phi=8, n_z=6)
        n_comp = 3
        v = np.ones(g.shape + (n_comp,))
        l2, h1 = semidiscrete_norms(v, g)
        want = n_comp * (g.n_phi + 1) * (g.n_z + 1) * (SPEC.radius - SPEC.inner_radius)
        assert l2**2 == pytest.approx(want, rel=1e-13)
        assert h1 == pytest.approx(l2, rel=1e-13)

    def test_constant_field_direct_summation_oracle(self):
        g = small_grid(n_r=4, n_phi=5, n_z=4)
        v = np.ones(g.shape + (2,))
        l2, _ = semidiscrete_norms(v, g)
        w = trapezoid_weights(g.r_nodes)
        acc = 0.0
        for i in range(g.n_phi + 1):  # seam column counted at i = 0 and i = n
            for j in range(g.n_z + 1):
                for s in range(2):
                    col = v[:, i % g.n_phi, j, s]
                    acc += float(np.sum(w * col * col))
        assert l2**2 == pytest.approx(acc, rel=1e-13)

    def test_single_component_radial_field(self):
        # u0(r, ., .) = r; l2^2 = sum_{i,j} trapezoid(r^2) and the trapezoid
        # value approaches the exact integral as the grid refines
        g = small_grid(n_r=20, n_phi=4, n_z=3)
        v = np.zeros(g.shape + (2,))
        v[..., 0] = g.r_nodes[:, None, None]
        l2, _ = semidiscrete_norms(v, g)
        w = trapezoid_weights(g.r_nodes)
        per_column = float(np.sum(w * g.r_nodes**2))
        want = (g.n_phi + 1) * (g.n_z + 1) * per_column
        assert l2**2 == pytest.approx(want, rel=1e-13)
        exact = (SPEC.radius**3 - SPEC.inner_radius**3) / 3.0
        assert per_column == pytest.approx(exact, rel=2e-3)

    def test_too_few_z_planes(self):
        g = CylGrid(SPEC, n_r=4, n_phi=4, n_z=2)
        v = np.ones(g.shape)
        semidiscrete_norms(v, g)  # 3 planes: fine
        with pytest.raises((GridTooCoarseError, ValueError)):
            CylGrid(SPEC, n_r=4, n_phi=4, n_z=1)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_l2_below_h1(self, seed):
        g = small_grid()
        rng = np.random.default_rng(seed)
        v = rng.normal(size=g.shape + (2,))
        l2, h1 = semidiscrete_norms(v, g)
        assert l2 <= h1 + 1e-12
        assert l2 >= 0.0


class TestRestriction:
    def test_nested_grids(self):
        fine = CylGrid(SPEC, n_r=40, n_phi=40, n_z=40)
        coarse = CylGrid(SPEC, n_r=20, n_phi=20, n_z=20)
        ir, ip, iz = coarse.restriction_indices(fine)
        assert np.allclose(fine.r_nodes[ir], coarse.r_nodes)
        assert np.allclose(fine.phi_nodes[ip], coarse.phi_nodes)
        assert np.allclose(fine.z_nodes[iz], coarse.z_nodes)

    def test_non_nested_rejected(self):
        fine = CylGrid(SPEC, n_r=30, n_phi=30, n_z=30)
        coarse = CylGrid(SPEC, n_r=20, n_phi=20, n_z=20)
        with pytest.raises(ValueError):
            coarse.restriction_indices(fine)
