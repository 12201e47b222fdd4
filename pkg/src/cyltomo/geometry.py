"""Computational domains, grids, coordinate transforms and semi-discrete norms.

The physical domain is a vertical circular cylinder of radius ``R`` and
height ``B`` with a thin coaxial exclusion tube of radius ``eps`` around the
source axis.  The inversion works in cylindrical coordinates on a grid that
is discrete in ``phi`` and ``z`` and quadrature-sampled in ``r``; the forward
solver works on a Cartesian box covering the cylinder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class OutOfDomainError(ValueError):
    """A requested sample point lies outside the Cartesian grid coverage."""


class GridTooCoarseError(ValueError):
    """The grid does not have enough nodes for the requested operation."""


# --------------------------------------------------------------------------
# domain specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderSpec:
    """Vertical cylinder of radius ``radius`` and height ``height`` with an
    inner exclusion tube of radius ``inner_radius`` around the axis."""

    radius: float = 1.0
    inner_radius: float = 0.01
    height: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.inner_radius < self.radius):
            raise ValueError(
                f"need 0 < inner_radius < radius, got {self.inner_radius} vs {self.radius}"
            )
        if self.height <= 0.0:
            raise ValueError(f"height must be positive, got {self.height}")

    @property
    def monotonicity_constant(self) -> float:
        """Lower bound ``eps / sqrt(eps^2 + B^2)`` for the radial slope of the
        travel time; strictly positive for any valid spec."""
        return self.inner_radius / math.hypot(self.inner_radius, self.height)


@dataclass(frozen=True)
class CylGrid:
    """Cylindrical grid: ``n_r`` radial nodes on ``(eps, R]`` plus the node at
    ``eps`` itself, ``n_phi`` angular intervals on ``[0, 2pi)`` and ``n_z``
    axial intervals on ``[0, B]``.

    Radial nodes are ``eps, h_r, 2 h_r, ..., R`` with ``h_r = R / n_r``; the
    first interval has width ``h_r - eps``.  The angular direction is periodic
    and stored without duplication: column ``n_phi`` is column 0.
    """

    spec: CylinderSpec
    n_r: int
    n_phi: int
    n_z: int

    def __post_init__(self):
        if self.n_r < 2 or self.n_phi < 3 or self.n_z < 2:
            raise ValueError("grid too coarse: need n_r >= 2, n_phi >= 3, n_z >= 2")
        if self.spec.inner_radius >= self.h_r:
            raise ValueError(
                f"inner radius {self.spec.inner_radius} must be smaller than h_r={self.h_r}"
            )

    @property
    def h_r(self) -> float:
        return self.spec.radius / self.n_r

    @property
    def h_phi(self) -> float:
        return 2.0 * math.pi / self.n_phi

    @property
    def h_z(self) -> float:
        return self.spec.height / self.n_z

    @property
    def h_floor(self) -> float:
        """Fixed positive floor under the phi/z step sizes."""
        return min(self.h_phi, self.h_z)

    @property
    def r_nodes(self) -> np.ndarray:
        r = np.arange(self.n_r + 1, dtype=float) * self.h_r
        r[0] = self.spec.inner_radius
        return r

    @property
    def phi_nodes(self) -> np.ndarray:
        """Unique angular nodes; the physical column at ``2 pi`` aliases index 0."""
        return np.arange(self.n_phi, dtype=float) * self.h_phi

    @property
    def z_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.spec.height, self.n_z + 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        """(r, phi, z) node counts of a scalar field stored on this grid."""
        return (self.n_r + 1, self.n_phi, self.n_z + 1)

    def r_weights(self) -> np.ndarray:
        """Composite trapezoid weights on the radial node set."""
        return trapezoid_weights(self.r_nodes)

    def restriction_indices(self, fine: "CylGrid") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Index arrays that subsample a field on ``fine`` onto this grid.

        Requires every node of this grid to coincide with a node of ``fine``.
        """
        if fine.spec != self.spec:
            raise ValueError("grids live on different cylinders")
        out = []
        for mine, theirs, h in (
            (self.r_nodes, fine.r_nodes, fine.h_r),
            (self.phi_nodes, fine.phi_nodes, fine.h_phi),
            (self.z_nodes, fine.z_nodes, fine.h_z),
        ):
            idx = np.searchsorted(theirs, mine - 1e-12 * h)
            idx = np.clip(idx, 0, len(theirs) - 1)
            if not np.allclose(theirs[idx], mine, atol=1e-9 * h, rtol=0.0):
                raise ValueError("grid is not nested in the finer grid")
            out.append(idx)
        return out[0], out[1], out[2]


@dataclass(frozen=True)
class CartGrid:
    """Uniform Cartesian grid.  Axes x and y span ``[-extent, extent]`` with
    ``m`` nodes each; the z axis spans ``[z_lo, z_lo + (m_z - 1) * spacing]``.
    """

    extent: float
    m: int
    z_lo: float
    m_z: int

    def __post_init__(self):
        if self.m < 3 or self.m_z < 3:
            raise ValueError("CartGrid needs at least 3 nodes per axis")
        if self.extent <= 0.0:
            raise ValueError("extent must be positive")

    @classmethod
    def cover_cylinder(cls, spec: CylinderSpec, spacing: float, margin_cells: int = 2) -> "CartGrid":
        """Grid with the given spacing whose nodes include x=y=0 and every
        z-level ``k * spacing`` in ``[0, B]``, covering the closed cylinder
        with ``margin_cells`` extra cells on each side."""
        if spacing <= 0.0:
            raise ValueError("spacing must be positive")
        n_b = spec.height / spacing
        if abs(n_b - round(n_b)) > 1e-9:
            raise ValueError("spacing must divide the cylinder height")
        half = int(math.ceil(spec.radius / spacing - 1e-12)) + margin_cells
        m_z = int(round(n_b)) + 2 * margin_cells + 1
        return cls(
            extent=half * spacing,
            m=2 * half + 1,
            z_lo=-margin_cells * spacing,
            m_z=m_z,
        )

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.m - 1)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.m)

    @property
    def y_nodes(self) -> np.ndarray:
        return self.x_nodes

    @property
    def z_nodes(self) -> np.ndarray:
        return self.z_lo + np.arange(self.m_z, dtype=float) * self.spacing

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m, self.m, self.m_z)

    def covers_cylinder(self, spec: CylinderSpec) -> bool:
        return (
            self.extent >= spec.radius - 1e-12
            and self.z_lo <= 1e-12
            and self.z_nodes[-1] >= spec.height - 1e-12
        )


# --------------------------------------------------------------------------
# coordinate transforms
# --------------------------------------------------------------------------


def cyl_to_cart(r, phi, z):
    """(r, phi, z) -> (x, y, z) with x = r cos(phi), y = r sin(phi)."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return r * np.cos(phi), r * np.sin(phi), np.asarray(z, dtype=float) + 0.0


def cart_to_cyl(x, y, z):
    """(x, y, z) -> (r, phi, z) with phi in [0, 2pi)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    phi = np.mod(np.arctan2(y, x), 2.0 * math.pi)
    return r, phi, np.asarray(z, dtype=float) + 0.0


# --------------------------------------------------------------------------
# interpolation
# --------------------------------------------------------------------------


def trilinear_sample(grid: CartGrid, values: np.ndarray, x, y, z) -> np.ndarray:
    """Trilinear interpolation of a nodal field at arbitrary points.

    Exact on fields affine in (x, y, z).  Points outside the grid (beyond a
    1e-9-cell snap tolerance) raise :class:`OutOfDomainError` naming the
    offending point.
    """
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} != grid shape {grid.shape}")
    h = grid.spacing
    x, y, z = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    )

    u = (x + grid.extent) / h
    v = (y + grid.extent) / h
    w = (z - grid.z_lo) / h
    tol = 1e-9
    for coord, n, name in ((u, grid.m, "x"), (v, grid.m, "y"), (w, grid.m_z, "z")):
        bad = (coord < -tol) | (coord > n - 1 + tol)
        if np.any(bad):
            k = tuple(np.argwhere(np.atleast_1d(bad))[0])
            pt = (np.atleast_1d(x)[k], np.atleast_1d(y)[k], np.atleast_1d(z)[k])
            raise OutOfDomainError(
                f"point ({pt[0]:.6g}, {pt[1]:.6g}, {pt[2]:.6g}) leaves the Cartesian grid along {name}"
            )

    iu = np.clip(np.floor(u).astype(int), 0, grid.m - 2)
    iv = np.clip(np.floor(v).astype(int), 0, grid.m - 2)
    iw = np.clip(np.floor(w).astype(int), 0, grid.m_z - 2)
    fu = u - iu
    fv = v - iv
    fw = w - iw

    out = np.zeros(u.shape, dtype=float)
    for du, wu in ((0, 1.0 - fu), (1, fu)):
        for dv, wv in ((0, 1.0 - fv), (1, fv)):
            for dw, ww in ((0, 1.0 - fw), (1, fw)):
                out += wu * wv * ww * values[iu + du, iv + dv, iw + dw]
    return out


def cyl_node_points(grid: CylGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cartesian coordinates of every cylindrical node, shaped like the grid."""
    r = grid.r_nodes[:, None, None]
    phi = grid.phi_nodes[None, :, None]
    z = grid.z_nodes[None, None, :]
    x = r * np.cos(phi) + 0.0 * z
    y = r * np.sin(phi) + 0.0 * z
    zz = z + 0.0 * x
    return x, y, zz


def sample_cart_to_cyl(values: np.ndarray, cart: CartGrid, cyl: CylGrid) -> np.ndarray:
    """Trilinear resample of a Cartesian nodal field onto a cylindrical grid.

    Returns an array of shape ``cyl.shape``.
    """
    x, y, z = cyl_node_points(cyl)
    return trilinear_sample(cart, values, x, y, z)


# --------------------------------------------------------------------------
# quadrature and semi-discrete norms
# --------------------------------------------------------------------------


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for possibly non-uniform 1D nodes."""
    nodes = np.asarray(nodes, dtype=float)
    w = np.zeros_like(nodes)
    d = np.diff(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def phi_derivative(field: np.ndarray, grid: CylGrid, axis: int = 1) -> np.ndarray:
    """Central difference quotient in phi with periodic index aliasing."""
    h = grid.h_phi
    return (np.roll(field, -1, axis=axis) - np.roll(field, 1, axis=axis)) / (2.0 * h)


def z_derivative(field: np.ndarray, grid: CylGrid, axis: int = 2) -> np.ndarray:
    """Central difference quotient in z on interior planes (drops both ends)."""
    if field.shape[axis] < 3:
        raise GridTooCoarseError("z derivative needs at least 3 z-planes")
    h = grid.h_z
    lo = [slice(None)] * field.ndim
    hi = [slice(None)] * field.ndim
    lo[axis] = slice(0, -2)
    hi[axis] = slice(2, None)
    return (field[tuple(hi)] - field[tuple(lo)]) / (2.0 * h)


def _columns_l2_sq(field: np.ndarray, w_r: np.ndarray) -> float:
    """Sum over (phi, z, components) of the r-trapezoid integral of field^2,
    counting the aliased seam column (phi index 0) twice."""
    sq = np.einsum("m,mpj...->pj...", w_r, field * field)
    return float(sq.sum() + sq[0].sum())


def semidiscrete_norms(field: np.ndarray, grid: CylGrid) -> tuple[float, float]:
    """L2 and H1 norms of a semi-discrete (vector) field on ``grid``.

    ``field`` has shape ``(n_r + 1, n_phi, n_z + 1)`` or with a trailing
    component axis.  The node sum runs over all phi indices ``0..n_phi`` (the
    seam column enters twice via aliasing) and all z planes; difference
    quotients are central, periodic in phi, interior-only in z.
    """
    if field.shape[:3] != grid.shape:
        raise ValueError(f"field shape {field.shape} incompatible with grid {grid.shape}")
    if grid.n_z + 1 < 3:
        raise GridTooCoarseError("semi-discrete H1 norm needs at least 3 z-planes")
    w_r = grid.r_weights()
    l2_sq = _columns_l2_sq(field, w_r)
    dphi = phi_derivative(field, grid)
    dz = z_derivative(field, grid)
    h1_sq = l2_sq + _columns_l2_sq(dphi, w_r) + _columns_l2_sq(dz, w_r)
    return math.sqrt(l2_sq), math.sqrt(h1_sq)


# --------------------------------------------------------------------------
# plain-text grid config
# --------------------------------------------------------------------------

_CONFIG_KEYS = ("R", "eps", "B", "n_r", "n_phi", "n_z", "cart_m", "cart_extent")


def grids_to_config(cyl: CylGrid, cart: CartGrid) -> str:
    """Serialize grid specs to a plain-text key-value config."""
    vals = {
        "R": cyl.spec.radius,
        "eps": cyl.spec.inner_radius,
        "B": cyl.spec.height,
        "n_r": cyl.n_r,
        "n_phi": cyl.n_phi,
        "n_z": cyl.n_z,
        "cart_m": cart.m,
        "cart_extent": cart.extent,
    }
    return "\n".join(f"{k} = {vals[k]!r}" for k in _CONFIG_KEYS) + "\n"


def grids_from_config(text: str) -> tuple[CylGrid, CartGrid]:
    """Parse the key-value config written by :func:`grids_to_config`."""
    vals: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        vals[key.strip()] = float(raw.strip())
    missing = [k for k in _CONFIG_KEYS if k not in vals]
    if missing:
        raise ValueError(f"grid config is missing keys: {missing}")
    spec = CylinderSpec(radius=vals["R"], inner_radius=vals["eps"], height=vals["B"])
    cyl = CylGrid(spec, n_r=int(vals["n_r"]), n_phi=int(vals["n_phi"]), n_z=int(vals["n_z"]))
    m = int(vals["cart_m"])
    extent = vals["cart_extent"]
    spacing = 2.0 * extent / (m - 1)
    margin = int(round((extent - spec.radius) / spacing))
    m_z = int(round(spec.height / spacing)) + 2 * margin + 1
    cart = CartGrid(extent=extent, m=m, z_lo=-margin * spacing, m_z=m_z)
    return cyl, cart
