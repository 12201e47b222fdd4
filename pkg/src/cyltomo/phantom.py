"""Ground-truth refractive-index fields: unit background plus smoothed
letter-shaped inclusions of constant contrast.

Letters are boolean combinations of boxes and annuli in a canonical frame
(a blocky 'B' with two voids, an 'O' with one), described by 1-Lipschitz
signed-distance bounds.  The index blends from the contrast value on the
letter core down to 1 across a band of the given smoothing width via a cubic
smoothstep, so the discrete gradient stays below
``1.5 * (contrast - 1) / smoothing_width``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CartGrid, CylGrid, CylinderSpec, sample_cart_to_cyl


class PlacementError(ValueError):
    """The inclusion leaves the annular domain between the inner tube and the
    cylinder wall."""


SHAPES = ("letter-b", "letter-o", "ball")
ORIENTATIONS = ("horizontal", "vertical", "y-elongated")


@dataclass(frozen=True)
class InclusionSpec:
    """Placement and strength of one smoothed inclusion.

    ``scale`` is the canonical half-height of the letter; ``thickness`` is its
    half-extent normal to the letter plane.  ``elongation`` stretches the
    second in-plane axis (used by the y-elongated orientation).
    """

    shape: str = "letter-b"
    orientation: str = "vertical"
    contrast: float = 1.5
    smoothing_width: float = 0.05
    center: tuple[float, float, float] = (0.4, 0.0, 0.5)
    scale: float = 0.25
    thickness: float = 0.12
    elongation: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.contrast <= 1.0:
            raise ValueError("contrast must exceed 1")
        if self.smoothing_width <= 0.0:
            raise ValueError("smoothing_width must be positive")
        if self.scale <= 0.0 or self.thickness <= 0.0 or self.elongation <= 0.0:
            raise ValueError("scale, thickness and elongation must be positive")


@dataclass
class RefractiveField:
    """Refractive index sampled on a Cartesian grid (dimensionless, >= 1)."""

    grid: CartGrid
    values: np.ndarray
    inclusion: InclusionSpec | None = field(default=None)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("values do not match the grid shape")

    def validate(self, spec: CylinderSpec, atol: float = 1e-12):
        """Check the index conditions: >= 1 everywhere and == 1 on the inner tube."""
        if np.min(self.values) < 1.0 - atol:
            raise ValueError("refractive index drops below 1")
        x, y, _ = _node_coords(self.grid)
        inner = np.broadcast_to(x * x + y * y <= spec.inner_radius**2, self.values.shape)
        if np.any(np.abs(self.values[inner] - 1.0) > atol):
            raise ValueError("refractive index differs from 1 inside the inner tube")


def _node_coords(grid: CartGrid):
    x = grid.x_nodes[:, None, None]
    y = grid.y_nodes[None, :, None]
    z = grid.z_nodes[None, None, :]
    return x, y, z


# --------------------------------------------------------------------------
# signed-distance primitives (all 1-Lipschitz)
# --------------------------------------------------------------------------


def _sd_box2(u, v, hu, hv):
    qu = np.abs(u) - hu
    qv = np.abs(v) - hv
    outside = np.hypot(np.maximum(qu, 0.0), np.maximum(qv, 0.0))
    inside = np.minimum(np.maximum(qu, qv), 0.0)
    return outside + inside


def _sd_letter_b(u, v):
    """Blocky capital B: an outer box minus two rectangular voids."""
    outer = _sd_box2(u + 0.05, v, 0.55, 1.0)
    void_top = _sd_box2(u - 0.08, v - 0.46, 0.22, 0.24)
    void_bot = _sd_box2(u - 0.08, v + 0.46, 0.22, 0.24)
    return np.maximum(outer, np.maximum(-void_top, -void_bot))


def _sd_letter_o(u, v):
    """Annular O: ring between radii 0.55 and 1."""
    rho = np.hypot(u, v)
    return np.abs(rho - 0.775) - 0.225


def _sd_ball(u, v):
    return np.hypot(u, v) - 1.0


_PLANE_SD = {"letter-b": _sd_letter_b, "letter-o": _sd_letter_o, "ball": _sd_ball}


def signed_distance(spec: InclusionSpec, x, y, z) -> np.ndarray:
    """Signed-distance bound of the inclusion solid at world coordinates.

    Negative inside.  The anisotropic (elongated) case rescales the in-plane
    distance by the smallest stretch so the bound stays 1-Lipschitz.
    """
    cx, cy, cz = spec.center
    dx, dy, dz = x - cx, y - cy, z - cz
    if spec.orientation == "vertical":
        # letter drawn in the (x, z) plane, extruded along y
        u, v, t = dx, dz, dy
        stretch_u = stretch_v = 1.0
    elif spec.orientation == "horizontal":
        u, v, t = dx, dy, dz
        stretch_u = stretch_v = 1.0
    else:  # y-elongated: horizontal plane, stretched along y
        u, v, t = dx, dy, dz
        stretch_u, stretch_v = 1.0, spec.elongation

    s = spec.scale
    lip = min(s * stretch_u, s * stretch_v)
    sd_plane = _PLANE_SD[spec.shape](u / (s * stretch_u), v / (s * stretch_v)) * lip
    sd_thick = np.abs(t) - spec.thickness
    if spec.shape == "ball":
        # genuine ball rather than an extruded disc
        return np.sqrt(u * u + v * v + t * t) - s
    return np.maximum(sd_plane, sd_thick)


def bump(spec: InclusionSpec, sd: np.ndarray) -> np.ndarray:
    """Cubic smoothstep of the signed distance: 1 on the core (sd <= -width),
    0 outside the solid (sd >= 0), monotone C^1 in between."""
    t = np.clip(-sd / spec.smoothing_width, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def build_phantom(spec: InclusionSpec, grid: CartGrid, cylinder: CylinderSpec) -> RefractiveField:
    """Refractive field equal to ``contrast`` on the inclusion core and 1
    outside, blended across ``smoothing_width``.

    Raises :class:`PlacementError` if any point of the inclusion support
    touches the inner tube or leaves the cylinder.
    """
    x, y, z = _node_coords(grid)
    sd = signed_distance(spec, x, y, z)
    chi = bump(spec, sd)
    support = chi > 0.0
    if np.any(support):
        r2 = np.broadcast_to(x * x + y * y, support.shape)[support]
        zs = np.broadcast_to(z, support.shape)[support]
        if (
            np.min(r2) <= cylinder.inner_radius**2
            or np.max(r2) >= cylinder.radius**2
            or np.min(zs) <= 0.0
            or np.max(zs) >= cylinder.height
        ):
            raise PlacementError(
                "inclusion support must stay strictly between the inner tube and the cylinder wall"
            )
    values = 1.0 + (spec.contrast - 1.0) * chi
    return RefractiveField(grid=grid, values=values, inclusion=spec)


def radial_monotonicity_report(
    field: RefractiveField, grid: CylGrid, tol: float | None = None
) -> float:
    """Fraction of cylindrical nodes where the radial difference quotient of
    the index is >= -tol.

    The radial monotonicity condition is sufficient, not necessary, for the
    inversion; this reports how much of the field satisfies it instead of
    enforcing it.
    """
    sampled = sample_cart_to_cyl(field.values, field.grid, grid)
    if tol is None:
        tol = 1e-8 * float(np.max(field.values))
    quot = np.diff(sampled, axis=0) / np.diff(grid.r_nodes)[:, None, None]
    return float(np.mean(quot >= -tol))
