"""Measured data handling: boundary traces of the travel time, multiplicative
noise, spline smoothing/differentiation and basis projections.

The measured functions are the lateral trace p(phi, z, z0) = tau(R, phi, z, z0)
and the bottom/top traces p0, pB over (r, phi, z0).  Downstream the inversion
consumes their derivatives (p_phi, p_z, dr p0, dr pB) and the expansion
coefficients along z0: G for p and G0/GB for the squared radial derivatives of
the bottom/top traces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .basis import BasisSet, project
from .eikonal import TravelTimeTable
from .geometry import CylGrid, cyl_to_cart, trilinear_sample


class IncompleteDataError(ValueError):
    """The set of travel-time tables does not cover the source grid."""


class DataError(ValueError):
    """Boundary data contain non-finite values."""


@dataclass(frozen=True)
class BoundaryData:
    """Travel-time traces on the cylinder surface for the full source set.

    Shapes: ``p`` is (n_phi, n_z+1, L); ``p0`` and ``pB`` are
    (n_r+1, n_phi, L) with L the number of sources.
    """

    grid: CylGrid
    z0: np.ndarray
    p: np.ndarray
    p0: np.ndarray
    pB: np.ndarray

    def __post_init__(self):
        n_r, n_phi, n_zp1 = self.grid.shape
        L = len(self.z0)
        if self.p.shape != (n_phi, n_zp1, L):
            raise ValueError(f"p has shape {self.p.shape}, expected {(n_phi, n_zp1, L)}")
        if self.p0.shape != (n_r, n_phi, L) or self.pB.shape != (n_r, n_phi, L):
            raise ValueError("p0/pB shapes inconsistent with the grid and source list")


@dataclass(frozen=True)
class DerivedData:
    """Spline derivatives of the boundary data plus basis coefficients.

    ``g`` holds the coefficients of p per (phi, z); ``g0``/``gB`` hold the
    coefficients of the squared radial derivatives of p0/pB per (r, phi).
    """

    grid: CylGrid
    z0: np.ndarray
    p_phi: np.ndarray
    p_z: np.ndarray
    dp0_dr: np.ndarray
    dpB_dr: np.ndarray
    g: np.ndarray
    g0: np.ndarray
    gB: np.ndarray

    def restrict(self, coarse: CylGrid) -> "DerivedData":
        """Subsample every field onto a nested coarser grid (same sources)."""
        ir, ip, iz = coarse.restriction_indices(self.grid)
        return DerivedData(
            grid=coarse,
            z0=self.z0,
            p_phi=self.p_phi[np.ix_(ip, iz)],
            p_z=self.p_z[np.ix_(ip, iz)],
            dp0_dr=self.dp0_dr[np.ix_(ir, ip)],
            dpB_dr=self.dpB_dr[np.ix_(ir, ip)],
            g=self.g[np.ix_(ip, iz)],
            g0=self.g0[np.ix_(ir, ip)],
            gB=self.gB[np.ix_(ir, ip)],
        )


def extract_boundary_data(tables: list[TravelTimeTable], grid: CylGrid) -> BoundaryData:
    """Sample travel-time tables on the lateral, bottom and top surfaces.

    One table per source is required; sources are sorted by height.
    """
    if not tables:
        raise IncompleteDataError("no travel-time tables supplied")
    tables = sorted(tables, key=lambda t: t.source_z0)
    z0 = np.array([t.source_z0 for t in tables])
    if len(np.unique(np.round(z0, 12))) != len(z0):
        raise IncompleteDataError("duplicate source heights in the table set")

    spec = grid.spec
    phi = grid.phi_nodes
    z = grid.z_nodes
    r = grid.r_nodes

    # lateral surface r = R
    xw, yw, _ = cyl_to_cart(spec.radius, phi[:, None], 0.0 * phi[:, None])
    xl = np.broadcast_to(xw, (grid.n_phi, grid.n_z + 1))
    yl = np.broadcast_to(yw, (grid.n_phi, grid.n_z + 1))
    zl = np.broadcast_to(z[None, :], (grid.n_phi, grid.n_z + 1))

    # bottom and top discs over (r, phi)
    xd = r[:, None] * np.cos(phi)[None, :]
    yd = r[:, None] * np.sin(phi)[None, :]

    p = np.empty((grid.n_phi, grid.n_z + 1, len(z0)))
    p0 = np.empty((grid.n_r + 1, grid.n_phi, len(z0)))
    pB = np.empty_like(p0)
    for l, table in enumerate(tables):
        p[:, :, l] = trilinear_sample(table.grid, table.tau, xl, yl, zl)
        p0[:, :, l] = trilinear_sample(table.grid, table.tau, xd, yd, np.zeros_like(xd))
        pB[:, :, l] = trilinear_sample(table.grid, table.tau, xd, yd, np.full_like(xd, spec.height))
    return BoundaryData(grid=grid, z0=z0, p=p, p0=p0, pB=pB)


def add_noise(data: BoundaryData, delta: float, seed: int) -> BoundaryData:
    """Multiplicative noise: Gaussian per node on the lateral trace, uniform
    on [-1, 1] per node on the bottom/top traces; deterministic in the seed."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("noise level must lie in [0, 1)")
    if delta == 0.0:
        return data
    rng = np.random.default_rng(seed)
    xi_p = rng.standard_normal(data.p.shape)
    xi_0 = rng.uniform(-1.0, 1.0, data.p0.shape)
    xi_b = rng.uniform(-1.0, 1.0, data.pB.shape)
    return replace(
        data,
        p=data.p * (1.0 + delta * xi_p),
        p0=data.p0 * (1.0 + delta * xi_0),
        pB=data.pB * (1.0 + delta * xi_b),
    )


def _spline_derivative(values: np.ndarray, nodes: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Derivative at the nodes of a cubic-spline fit along one axis.

    Natural end conditions, except periodic closure for the angular axis
    (the data are 2pi-periodic; natural ends there would bias the seam).
    """
    if values.shape[axis] < 4:
        raise DataError("spline differentiation needs at least 4 nodes along the axis")
    if not np.all(np.isfinite(values)):
        raise DataError("boundary data contain non-finite values")
    if periodic:
        x = np.concatenate([nodes, [nodes[0] + 2.0 * np.pi]])
        y = np.concatenate([values, np.take(values, [0], axis=axis)], axis=axis)
        spline = CubicSpline(x, y, axis=axis, bc_type="periodic")
        return spline(nodes, 1)
    spline = CubicSpline(nodes, values, axis=axis, bc_type="natural")
    return spline(nodes, 1)


def smooth_and_differentiate(data: BoundaryData, basis: BasisSet) -> DerivedData:
    """Cubic-spline derivatives of the boundary traces and their basis
    coefficients along z0.

    Squaring happens before projection for the bottom/top traces: the
    inversion pins its z-boundary planes to the coefficients of
    (dr p0)^2 and (dr pB)^2.
    """
    grid = data.grid
    p_phi = _spline_derivative(data.p, grid.phi_nodes, axis=0, periodic=True)
    p_z = _spline_derivative(data.p, grid.z_nodes, axis=1, periodic=False)
    dp0_dr = _spline_derivative(data.p0, grid.r_nodes, axis=0, periodic=False)
    dpB_dr = _spline_derivative(data.pB, grid.r_nodes, axis=0, periodic=False)

    g = project(data.p, data.z0, basis)
    g0 = project(dp0_dr**2, data.z0, basis)
    gB = project(dpB_dr**2, data.z0, basis)
    return DerivedData(
        grid=grid,
        z0=data.z0,
        p_phi=p_phi,
        p_z=p_z,
        dp0_dr=dp0_dr,
        dpB_dr=dpB_dr,
        g=g,
        g0=g0,
        gB=gB,
    )
