"""Forward solver: first-arrival travel times by fast marching, plus a
geodesic tracer used as a regularity and consistency diagnostic.

Travel times solve |grad tau| = n with unit wave-speed normalization; sources
sit on the cylinder axis and must coincide with Cartesian grid nodes so the
source neighborhood can be initialized with exact local distances.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._fmm import run_fast_marching
from .geometry import CartGrid, CylGrid, sample_cart_to_cyl
from .phantom import RefractiveField


class SourcePlacementError(ValueError):
    """Source must be an interior axis node of the Cartesian grid."""


class AxisSingularityError(RuntimeError):
    """A traced geodesic collapsed onto the cylinder axis."""


class StiffnessError(RuntimeError):
    """Step-size underflow while integrating a geodesic."""


@dataclass
class TravelTimeTable:
    """First-arrival times for one axis source over a Cartesian grid.

    ``accept_order`` holds the fast-marching acceptance rank per node, kept
    for causality diagnostics.
    """

    source_z0: float
    grid: CartGrid
    tau: np.ndarray
    accept_order: np.ndarray | None = None

    def sample_cyl(self, cyl: CylGrid) -> np.ndarray:
        return sample_cart_to_cyl(self.tau, self.grid, cyl)


def solve_eikonal(
    field: RefractiveField, source_z0: float, init_radius: float = 0.1
) -> TravelTimeTable:
    """Fast-marching solution of the eikonal equation for a source at
    ``(0, 0, source_z0)`` on the cylinder axis.

    The source must coincide with a grid node strictly inside the grid.  The
    solution is seeded with exact local distances on the largest ball of
    radius at most ``init_radius`` on which the index is constant (never less
    than the 26-neighborhood); seeding a ball of fixed physical size keeps
    the scheme cleanly first order.
    """
    grid = field.grid
    h = grid.spacing
    ks = (source_z0 - grid.z_lo) / h
    if abs(ks - round(ks)) > 1e-9:
        raise SourcePlacementError(
            f"source z0={source_z0} does not coincide with a grid z-level (spacing {h})"
        )
    ks = int(round(ks))
    if not 0 <= ks < grid.m_z:
        raise SourcePlacementError(f"source z0={source_z0} lies outside the grid")
    ic = (grid.m - 1) // 2
    if abs(grid.x_nodes[ic]) > 1e-12:
        raise SourcePlacementError("grid has no axis node at x=y=0")

    init_cells = _constant_ball_cells(field.values, (ic, ic, ks), max(1, int(init_radius / h)))
    tau, order = run_fast_marching(field.values, (ic, ic, ks), h, init_cells=init_cells)
    return TravelTimeTable(source_z0=float(source_z0), grid=grid, tau=tau, accept_order=order)


def _constant_ball_cells(values: np.ndarray, src: tuple[int, int, int], k_max: int) -> int:
    """Largest cell radius k <= k_max whose ball around ``src`` carries a
    constant index (relative spread below 1e-9)."""
    sx, sy, sz = src
    n_src = values[sx, sy, sz]
    best = 1
    for k in range(1, k_max + 1):
        sl = values[
            max(0, sx - k) : sx + k + 1,
            max(0, sy - k) : sy + k + 1,
            max(0, sz - k) : sz + k + 1,
        ]
        if np.max(np.abs(sl - n_src)) > 1e-9 * abs(n_src):
            break
        best = k
    return best


def solve_many(field: RefractiveField, z0s, workers: int | None = None) -> list[TravelTimeTable]:
    """One fast-marching solve per source; solves are independent and run on
    a thread pool (the kernel releases the GIL)."""
    z0s = list(z0s)
    if workers is None or workers <= 1:
        return [solve_eikonal(field, z0) for z0 in z0s]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda z0: solve_eikonal(field, z0), z0s))


@dataclass(frozen=True)
class MonotonicityReport:
    """Minimum radial slope of tau over all sources and nodes, compared to
    the geometric bound eps / sqrt(eps^2 + B^2)."""

    min_slope: float
    bound: float
    tolerance: float

    @property
    def satisfied(self) -> bool:
        return self.min_slope >= self.bound - self.tolerance


def monotonicity_check(tables: list[TravelTimeTable], cyl: CylGrid) -> MonotonicityReport:
    """Scan radial difference quotients of tau over every source and node."""
    if not tables:
        raise ValueError("need at least one travel-time table")
    dr = np.diff(cyl.r_nodes)[:, None, None]
    min_slope = np.inf
    for table in tables:
        sampled = table.sample_cyl(cyl)
        quot = np.diff(sampled, axis=0) / dr
        min_slope = min(min_slope, float(quot.min()))
    tol = 2.0 * tables[0].grid.spacing
    return MonotonicityReport(
        min_slope=min_slope, bound=cyl.spec.monotonicity_constant, tolerance=tol
    )


# --------------------------------------------------------------------------
# geodesic tracing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GeodesicState:
    """Point on a traced geodesic: position, conjugate momenta
    (q1, q2, q3) = (tau_r, tau_phi, tau_z), accumulated Riemannian arc length
    (equal to the travel time), and take-off angles."""

    r: float
    phi: float
    z: float
    q1: float
    q2: float
    q3: float
    arc: float
    takeoff: tuple[float, float]

    def hamiltonian_defect(self, n: float) -> float:
        """|q1^2 + q2^2/r^2 + q3^2 - n^2| at this state."""
        return abs(self.q1**2 + (self.q2 / self.r) ** 2 + self.q3**2 - n * n)


# Catmull-Rom cubic convolution weights and their u-derivatives
def _cr_weights(u: float) -> np.ndarray:
    u2 = u * u
    u3 = u2 * u
    return np.array(
        [
            -0.5 * u3 + u2 - 0.5 * u,
            1.5 * u3 - 2.5 * u2 + 1.0,
            -1.5 * u3 + 2.0 * u2 + 0.5 * u,
            0.5 * u3 - 0.5 * u2,
        ]
    )


def _cr_dweights(u: float) -> np.ndarray:
    u2 = u * u
    return np.array(
        [
            -1.5 * u2 + 2.0 * u - 0.5,
            4.5 * u2 - 5.0 * u,
            -4.5 * u2 + 4.0 * u + 0.5,
            1.5 * u2 - u,
        ]
    )


class CylIndexInterpolant:
    """Tricubic (Catmull-Rom) interpolation of the index on a cylindrical
    grid, with the gradient taken from the same interpolant so the traced
    system is Hamiltonian for the interpolated medium.

    The radial axis is treated as uniform with nodes ``k * h_r``; the first
    input node (at eps instead of 0) is mapped to the axis, which is benign
    because valid fields are constant near the axis.  phi wraps periodically;
    r and z are edge-replicated.
    """

    def __init__(self, values: np.ndarray, grid: CylGrid):
        if values.shape != grid.shape:
            raise ValueError("field shape does not match the cylindrical grid")
        self.grid = grid
        self.h = (grid.h_r, grid.h_phi, grid.h_z)
        n_phi = grid.n_phi
        padded = np.empty((values.shape[0] + 2, n_phi + 3, values.shape[2] + 2))
        padded[1:-1, 1 : n_phi + 1, 1:-1] = values
        padded[0] = padded[1]
        padded[-1] = padded[-2]
        padded[:, 0] = padded[:, n_phi]
        padded[:, n_phi + 1] = padded[:, 1]
        padded[:, n_phi + 2] = padded[:, 2]
        padded[:, :, 0] = padded[:, :, 1]
        padded[:, :, -1] = padded[:, :, -2]
        self.padded = padded

    def value_and_gradient(self, r: float, phi: float, z: float):
        """Returns (n, dn/dr, dn/dphi, dn/dz) at a point with r >= 0."""
        g = self.grid
        hr, hphi, hz = self.h
        ur = np.clip(r / hr, 0.0, g.n_r)
        uphi = (phi / hphi) % g.n_phi
        if uphi >= g.n_phi:  # rounding of the modulo for tiny negative phi
            uphi -= g.n_phi
        uz = np.clip(z / hz, 0.0, g.n_z)
        idx = []
        frac = []
        for u, n_cells in ((ur, g.n_r), (uphi, g.n_phi), (uz, g.n_z)):
            base = min(int(np.floor(u)), n_cells - 1)
            idx.append(base)
            frac.append(u - base)
        wr, wphi, wz = (_cr_weights(f) for f in frac)
        dwr, dwphi, dwz = (_cr_dweights(f) for f in frac)
        grad = [0.0, 0.0, 0.0]
        block = self.padded[
            idx[0] : idx[0] + 4,
            idx[1] : idx[1] + 4,
            idx[2] : idx[2] + 4,
        ]
        out_val = np.einsum("i,j,k,ijk->", wr, wphi, wz, block)
        grad[0] = np.einsum("i,j,k,ijk->", dwr, wphi, wz, block) / hr
        grad[1] = np.einsum("i,j,k,ijk->", wr, dwphi, wz, block) / hphi
        grad[2] = np.einsum("i,j,k,ijk->", wr, wphi, dwz, block) / hz
        return float(out_val), float(grad[0]), float(grad[1]), float(grad[2])


def _geodesic_rhs(y: np.ndarray, interp: CylIndexInterpolant) -> np.ndarray:
    r, phi, z, q1, q2, q3 = y
    n, nr, nphi, nz = interp.value_and_gradient(r, phi, z)
    n2 = n * n
    return np.array(
        [
            q1 / n2,
            q2 / (r * r * n2),
            q3 / n2,
            nr / n + q2 * q2 / (r**3 * n2),
            nphi / n,
            nz / n,
        ]
    )


def trace_geodesic(
    values: np.ndarray,
    grid: CylGrid,
    z0: float,
    theta0: float,
    phi0: float,
    max_arc: float,
    step: float | None = None,
) -> list[GeodesicState]:
    """Trace the characteristic launched from the axis source (0, 0, z0) with
    take-off angles (theta0, phi0) by classical RK4; the segment inside the
    inner tube (where n = 1) is the exact straight line.

    The arc parameter coincides with the travel time.  Integration stops on
    leaving the closed cylinder or at ``max_arc``.
    """
    spec = grid.spec
    eps = spec.inner_radius
    if not 0.0 < z0 < spec.height:
        raise ValueError("source must lie strictly inside the axis segment")
    sin0, cos0 = np.sin(theta0), np.cos(theta0)
    if sin0 <= 1e-12:
        raise AxisSingularityError("take-off along the axis never leaves the inner tube")

    interp = CylIndexInterpolant(values, grid)
    takeoff = (float(theta0), float(phi0))
    states: list[GeodesicState] = []

    def record(y, s):
        states.append(
            GeodesicState(
                r=float(y[0]),
                phi=float(y[1]),
                z=float(y[2]),
                q1=float(y[3]),
                q2=float(y[4]),
                q3=float(y[5]),
                arc=float(s),
                takeoff=takeoff,
            )
        )

    def outside(y):
        return y[0] > spec.radius + 1e-12 or y[2] < -1e-12 or y[2] > spec.height + 1e-12

    # exact straight launch through the inner tube (n = 1 there)
    s_eps = eps / sin0
    n_launch = 8
    launch_end = min(s_eps, max_arc)
    for k in range(1, n_launch + 1):
        s = launch_end * k / n_launch
        y = np.array([s * sin0, phi0, z0 + s * cos0, sin0, 0.0, cos0])
        if outside(y):
            # the straight segment exits through top/bottom before reaching eps
            record(y, s)
            return states
        record(y, s)
    if launch_end >= max_arc:
        return states
    y = np.array([eps, phi0, z0 + s_eps * cos0, sin0, 0.0, cos0])
    s = s_eps

    if step is None:
        step = 0.25 * min(grid.h_r, grid.h_z)
    min_step = 1e-12

    while s < max_arc:
        hs = min(step, max_arc - s)
        while True:
            k1 = _geodesic_rhs(y, interp)
            k2 = _geodesic_rhs(y + 0.5 * hs * k1, interp)
            k3 = _geodesic_rhs(y + 0.5 * hs * k2, interp)
            k4 = _geodesic_rhs(y + hs * k3, interp)
            y_new = y + (hs / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if y_new[0] > 0.25 * eps:
                break
            hs *= 0.5  # approaching the axis: shrink to resolve or fail
            if hs < min_step:
                raise AxisSingularityError("geodesic collapsed onto the axis")
        if not np.all(np.isfinite(y_new)):
            raise StiffnessError("geodesic integration produced non-finite state")
        if outside(y_new):
            # bisect the last step to land on the boundary
            lo, hi = 0.0, hs
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                k1 = _geodesic_rhs(y, interp)
                k2 = _geodesic_rhs(y + 0.5 * mid * k1, interp)
                k3 = _geodesic_rhs(y + 0.5 * mid * k2, interp)
                k4 = _geodesic_rhs(y + mid * k3, interp)
                y_mid = y + (mid / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                if outside(y_mid):
                    hi = mid
                else:
                    lo = mid
            record(y_mid, s + mid)
            return states
        y = y_new
        s += hs
        record(y, s)
    return states
