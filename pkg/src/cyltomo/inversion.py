"""Convexification core: semi-discrete unknown, Carleman-weighted least
squares, projected gradient descent and index recovery.

The unknown is the vector V of basis coefficients of u = (d tau / d r)^2 per
cylindrical node, discrete in (phi, z) and quadrature-sampled in r.  The
governing system couples A V (from the source-height derivative) with a
nonlinear term S built from Volterra integrals of u_phi and u_z taken from the
current node outward to the wall, where the boundary data enter.  The cost is
the squared residual weighted by exp(2 lambda r): the weight grows toward the
wall where the data live, which is what makes the functional strongly convex
for moderate lambda and lets plain gradient descent converge from V = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, projection_weights
from .geometry import CylGrid, semidiscrete_norms, trapezoid_weights
from .observations import DerivedData


class StepSizeError(RuntimeError):
    """The objective kept increasing despite backtracking."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during assembly."""


class DegeneracyWarning(UserWarning):
    """More than half of the u samples sit at the clamp floor."""


@dataclass
class SemiDiscreteField:
    """Coefficient field: ``values[m, i, j, s]`` is the s-th basis coefficient
    of u at radial node m, angular column i and z-plane j.  Angular columns
    are stored once; column ``n_phi`` aliases column 0."""

    grid: CylGrid
    basis_size: int
    values: np.ndarray

    def __post_init__(self):
        want = self.grid.shape + (self.basis_size,)
        if self.values.shape != want:
            raise ValueError(f"values shape {self.values.shape}, expected {want}")

    @classmethod
    def zeros(cls, grid: CylGrid, basis_size: int) -> "SemiDiscreteField":
        return cls(grid, basis_size, np.zeros(grid.shape + (basis_size,)))

    def copy(self) -> "SemiDiscreteField":
        return SemiDiscreteField(self.grid, self.basis_size, self.values.copy())

    def norms(self) -> tuple[float, float]:
        return semidiscrete_norms(self.values, self.grid)


@dataclass(frozen=True)
class FeasibleSetParams:
    """Constraint set and descent controls.

    ``floor`` is the pointwise lower bound enforced on u at the source-height
    samples and used to clamp square-root arguments during assembly.  The
    travel-time slope is bounded below by c = eps/sqrt(eps^2 + B^2), so
    u = slope^2 admits the bound c^2; use :meth:`for_grid` to fill it in.
    """

    floor: float
    lam: float = 3.0
    gamma: float = 0.1
    grad_tol: float = 1e-2
    max_iters: int = 50_000
    m_bound: float = 1e3
    precondition: bool = True

    def __post_init__(self):
        if self.floor <= 0 or self.m_bound <= 0:
            raise ValueError("floor and m_bound must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @classmethod
    def for_grid(cls, grid: CylGrid, **kw) -> "FeasibleSetParams":
        c = grid.spec.monotonicity_constant
        return cls(floor=c * c, **kw)


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


class Assembly:
    """Precomputed operators shared by objective, gradient and recovery.

    Collocation nodes are all radial nodes, the unique angular columns and
    the interior z-planes (the boundary planes are pinned to data).
    """

    def __init__(self, grid: CylGrid, basis: BasisSet, derived: DerivedData, params: FeasibleSetParams):
        if derived.grid != grid:
            raise ValueError("derived data grid does not match the field grid")
        if abs(basis.length - grid.spec.height) > 1e-12:
            raise ValueError("basis interval must equal the cylinder height")
        self.grid = grid
        self.basis = basis
        self.params = params
        self.n = basis.size

        self.r = grid.r_nodes
        self.w_r = grid.r_weights()
        self.cwf = np.exp(2.0 * params.lam * self.r)
        self.w_cwf = (self.w_r * self.cwf)[:, None, None, None]
        self.inv_r2 = (1.0 / self.r**2)[:, None, None, None]

        self.z0 = derived.z0
        w_z0 = projection_weights(self.z0, basis.length)
        self.psi = basis.evaluation_matrix(self.z0)  # (L, N)
        dpsi = basis.derivative_matrix(self.z0)
        # action of one residual component on the bracket-squared samples:
        # boundary terms at the last/first source minus the z0 integral
        self.t_mat = -w_z0[:, None] * dpsi
        self.t_mat[-1, :] += self.psi[-1, :]
        self.t_mat[0, :] -= self.psi[0, :]

        self.a_mat = basis.a_matrix
        self.p_phi = np.ascontiguousarray(derived.p_phi[:, 1:-1, :])  # (P, KI, L)
        self.p_z = np.ascontiguousarray(derived.p_z[:, 1:-1, :])
        self.g0 = derived.g0
        self.gB = derived.gB
        self.psi_pinv = np.linalg.pinv(self.psi)  # (N, L)

        dr = np.diff(self.r)
        self._dr_half = 0.5 * dr[:, None, None, None]

    # -- coefficient-space helpers ------------------------------------------------

    def _expand(self, coeff: np.ndarray) -> np.ndarray:
        """(..., N) coefficients -> (..., L) samples at the source heights."""
        return coeff @ self.psi.T

    def _reduce(self, samples: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`_expand`."""
        return samples @ self.psi

    def _rev_cumtrapz(self, g: np.ndarray) -> np.ndarray:
        """I[m] = integral of g from r_m to R by trapezoid on the radial nodes."""
        seg = self._dr_half * (g[:-1] + g[1:])
        out = np.zeros_like(g)
        out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
        return out

    def _rev_cumtrapz_adjoint(self, d_out: np.ndarray) -> np.ndarray:
        csum = np.cumsum(d_out[:-1], axis=0)
        w = self._dr_half * csum
        dg = np.zeros_like(d_out)
        dg[:-1] += w
        dg[1:] += w
        return dg

    def _derivative_coefficients(self, v_full: np.ndarray):
        h_phi = self.grid.h_phi
        h_z = self.grid.h_z
        v_phi = (np.roll(v_full, -1, axis=1) - np.roll(v_full, 1, axis=1))[:, :, 1:-1, :] / (
            2.0 * h_phi
        )
        v_z = (v_full[:, :, 2:, :] - v_full[:, :, :-2, :]) / (2.0 * h_z)
        return v_phi, v_z

    # -- forward pass --------------------------------------------------------------

    def forward(self, v_full: np.ndarray) -> dict:
        """Residual A V + S at every collocation node plus intermediates."""
        floor = self.params.floor
        v_int = v_full[:, :, 1:-1, :]
        v_phi, v_z = self._derivative_coefficients(v_full)

        u = self._expand(v_int)
        u_phi = self._expand(v_phi)
        u_z = self._expand(v_z)

        clamped = u < floor
        uc = np.where(clamped, floor, u)
        inv_sqrt = 1.0 / np.sqrt(uc)
        g_phi = u_phi * inv_sqrt
        g_z = u_z * inv_sqrt

        i_phi = self._rev_cumtrapz(g_phi)
        i_z = self._rev_cumtrapz(g_z)
        b_phi = -0.5 * i_phi + self.p_phi[None, :, :, :]
        b_z = -0.5 * i_z + self.p_z[None, :, :, :]

        s_term = (b_phi**2 * self.inv_r2 + b_z**2) @ self.t_mat
        residual = v_int @ self.a_mat.T + s_term
        if not np.all(np.isfinite(residual)):
            raise NumericalError("assembly produced non-finite residual")
        return {
            "residual": residual,
            "s_term": s_term,
            "u": u,
            "uc": uc,
            "clamped": clamped,
            "inv_sqrt": inv_sqrt,
            "g_phi": g_phi,
            "g_z": g_z,
            "b_phi": b_phi,
            "b_z": b_z,
            "clamped_fraction": float(np.mean(clamped)),
        }

    def objective(self, state: dict) -> float:
        res = state["residual"]
        return float(np.sum(self.w_cwf * res * res))

    def gradient(self, state: dict) -> np.ndarray:
        """Exact gradient of the discrete objective by reverse accumulation.

        Components on the pinned z-boundary planes are identically zero.
        """
        grid = self.grid
        d_res = 2.0 * self.w_cwf * state["residual"]
        d_v_int = d_res @ self.a_mat

        d_bsq = d_res @ self.t_mat.T
        d_b_phi = 2.0 * state["b_phi"] * (d_bsq * self.inv_r2)
        d_b_z = 2.0 * state["b_z"] * d_bsq
        d_i_phi = -0.5 * d_b_phi
        d_i_z = -0.5 * d_b_z
        d_g_phi = self._rev_cumtrapz_adjoint(d_i_phi)
        d_g_z = self._rev_cumtrapz_adjoint(d_i_z)

        inv_sqrt = state["inv_sqrt"]
        d_u_phi = d_g_phi * inv_sqrt
        d_u_z = d_g_z * inv_sqrt
        d_uc = -0.5 * (d_g_phi * state["g_phi"] + d_g_z * state["g_z"]) / state["uc"]
        d_u = np.where(state["clamped"], 0.0, d_uc)

        d_v_int = d_v_int + self._reduce(d_u)
        d_v_phi = self._reduce(d_u_phi)
        d_v_z = self._reduce(d_u_z)

        grad = np.zeros(grid.shape + (self.n,))
        grad[:, :, 1:-1, :] += d_v_int
        grad[:, :, 1:-1, :] += (
            np.roll(d_v_phi, 1, axis=1) - np.roll(d_v_phi, -1, axis=1)
        ) / (2.0 * grid.h_phi)
        grad[:, :, 2:, :] += d_v_z / (2.0 * grid.h_z)
        grad[:, :, :-2, :] -= d_v_z / (2.0 * grid.h_z)
        grad[:, :, 0, :] = 0.0
        grad[:, :, -1, :] = 0.0
        if not np.all(np.isfinite(grad)):
            bad = np.argwhere(~np.isfinite(grad))[0]
            raise NumericalError(f"non-finite gradient at node {tuple(bad)}")
        return grad

    def warn_if_degenerate(self, state: dict):
        if state["clamped_fraction"] > 0.5:
            warnings.warn(
                f"{state['clamped_fraction']:.0%} of u samples sit at the clamp floor",
                DegeneracyWarning,
                stacklevel=3,
            )


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def u_of(field: SemiDiscreteField, basis: BasisSet, node: tuple[int, int, int], z0) -> np.ndarray:
    """Expansion value u(node, z0) = sum_s V_s(node) psi_s(z0); no clamping."""
    m, i, j = node
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    psi = basis.evaluation_matrix(z0)
    out = psi @ field.values[m, i % field.grid.n_phi, j]
    return out if out.size > 1 else float(out[0])


def assemble_S(
    field: SemiDiscreteField, derived: DerivedData, basis: BasisSet, params: FeasibleSetParams
) -> np.ndarray:
    """Nonlinear term S at every collocation node; shape
    ``(n_r + 1, n_phi, n_z - 1, N)`` over interior z-planes.

    Attaches a :class:`DegeneracyWarning` when the clamp dominates.
    """
    asm = Assembly(field.grid, basis, derived, params)
    state = asm.forward(field.values)
    asm.warn_if_degenerate(state)
    return state["s_term"]


def residual_field(
    field: SemiDiscreteField, derived: DerivedData, basis: BasisSet, params: FeasibleSetParams
) -> np.ndarray:
    """A V + S at every collocation node."""
    asm = Assembly(field.grid, basis, derived, params)
    return asm.forward(field.values)["residual"]


def eval_J(
    field: SemiDiscreteField, derived: DerivedData, basis: BasisSet, params: FeasibleSetParams
) -> float:
    """Carleman-weighted squared residual; plain least squares at lambda = 0."""
    asm = Assembly(field.grid, basis, derived, params)
    state = asm.forward(field.values)
    asm.warn_if_degenerate(state)
    return asm.objective(state)


def grad_J(
    field: SemiDiscreteField, derived: DerivedData, basis: BasisSet, params: FeasibleSetParams
) -> SemiDiscreteField:
    """Exact gradient of :func:`eval_J` with respect to the coefficient field;
    zero on the pinned z-boundary planes."""
    asm = Assembly(field.grid, basis, derived, params)
    state = asm.forward(field.values)
    return SemiDiscreteField(field.grid, field.basis_size, asm.gradient(state))


def project_feasible(
    field: SemiDiscreteField,
    derived: DerivedData,
    basis: BasisSet,
    params: FeasibleSetParams,
    lift_passes: int = 2,
) -> SemiDiscreteField:
    """Pin the z-boundary planes to the data coefficients and lift u above the
    floor at the source-height samples.

    The lift adds the smallest least-squares coefficient correction mapping to
    the sample deficits; between samples the assembly clamp guards the
    square roots, so an approximate lift suffices.
    """
    asm = Assembly(field.grid, basis, derived, params)
    v = field.values.copy()
    v[:, :, 0, :] = derived.g0
    v[:, :, -1, :] = derived.gB
    for _ in range(lift_passes):
        u = asm._expand(v[:, :, 1:-1, :])
        deficit = np.maximum(params.floor - u, 0.0)
        if deficit.max() <= 0.0:
            break
        v[:, :, 1:-1, :] += deficit @ asm.psi_pinv.T
    return SemiDiscreteField(field.grid, field.basis_size, v)


@dataclass
class MinimizeHistory:
    j_values: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    gammas: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.j_values)


def minimize(
    v0: SemiDiscreteField,
    derived: DerivedData,
    basis: BasisSet,
    params: FeasibleSetParams,
    callback=None,
) -> tuple[SemiDiscreteField, MinimizeHistory]:
    """Projected gradient descent V <- P(V - gamma * direction).

    The direction is the gradient, optionally rescaled by the inverse of the
    radial quadrature-times-Carleman weight (``params.precondition``), which
    is the gradient read in the weighted inner product the objective itself
    uses; the minimizer is unchanged and the radial stiffness of the weight
    drops out of the iteration.  The step is backtracked (halved) whenever the
    projected step fails to decrease J, and relaxes back toward the initial
    gamma after clean steps.  Termination: the plain L2 norm of the raw
    gradient falls below ``grad_tol``, or ``max_iters``.
    """
    asm = Assembly(v0.grid, basis, derived, params)
    current = project_feasible(v0, derived, basis, params)
    state = asm.forward(current.values)
    asm.warn_if_degenerate(state)
    j_cur = asm.objective(state)

    scale = 1.0 / (asm.w_r * asm.cwf)[:, None, None, None] if params.precondition else 1.0
    gamma = params.gamma
    history = MinimizeHistory()
    consecutive_failures = 0

    for iteration in range(params.max_iters):
        grad = asm.gradient(state)
        gnorm, _ = semidiscrete_norms(grad, v0.grid)
        history.j_values.append(j_cur)
        history.grad_norms.append(gnorm)
        history.gammas.append(gamma)
        if callback is not None:
            callback(iteration, j_cur, gnorm)
        if gnorm < params.grad_tol:
            break

        direction = grad * scale
        accepted = False
        for _ in range(40):
            trial_vals = current.values - gamma * direction
            trial = project_feasible(
                SemiDiscreteField(v0.grid, v0.basis_size, trial_vals), derived, basis, params
            )
            trial_state = asm.forward(trial.values)
            j_trial = asm.objective(trial_state)
            if j_trial <= j_cur:
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            consecutive_failures += 1
            if consecutive_failures >= 10:
                raise StepSizeError(
                    f"objective increased for {consecutive_failures} consecutive iterations; "
                    f"try a smaller gamma than {params.gamma}"
                )
            continue
        consecutive_failures = 0
        current, state, j_cur = trial, trial_state, j_trial
        gamma = min(gamma * 1.25, params.gamma)

    l2, h1 = current.norms()
    if h1 >= params.m_bound:
        warnings.warn(
            f"iterate H1 norm {h1:.3g} exceeds the monitored bound {params.m_bound:.3g}",
            UserWarning,
            stacklevel=2,
        )
    return current, history


# --------------------------------------------------------------------------
# index recovery
# --------------------------------------------------------------------------


@dataclass
class ReconstructionReport:
    """Recovered index with quality metrics.

    ``n_comp`` lives on the cylindrical grid (z-boundary planes copied from
    the adjacent interior planes).  Contrast and error metrics are filled
    when ground truth is available.
    """

    n_comp: np.ndarray
    grid: CylGrid
    correct_contrast: float | None = None
    computed_contrast: float | None = None
    rel_l2_error: float | None = None
    truncation_ratio: float | None = None
    iterations: int = 0
    final_grad_norm: float = math.nan
    j_history: list[float] = field(default_factory=list)
    clipped_negative: bool = False


def reconstruct_n(
    v_min: SemiDiscreteField,
    derived: DerivedData,
    basis: BasisSet,
    params: FeasibleSetParams,
    history: MinimizeHistory | None = None,
    true_n_cyl: np.ndarray | None = None,
    correct_contrast: float | None = None,
) -> ReconstructionReport:
    """Recover the index by substituting the solution into the governing
    relation n^2 = u + (bracket_phi)^2 / r^2 + (bracket_z)^2 and averaging the
    square over the source heights.

    Negative averages (possible under heavy noise) clip to 1 and set a flag.
    """
    asm = Assembly(v_min.grid, basis, derived, params)
    state = asm.forward(v_min.values)
    n2 = state["u"] + state["b_phi"] ** 2 * asm.inv_r2 + state["b_z"] ** 2
    n2 = n2.mean(axis=-1)  # average over source heights
    clipped = bool(np.any(n2 <= 0.0))
    n_interior = np.sqrt(np.where(n2 <= 0.0, 1.0, n2))

    shape = v_min.grid.shape
    n_comp = np.empty(shape)
    n_comp[:, :, 1:-1] = n_interior
    n_comp[:, :, 0] = n_interior[:, :, 0]
    n_comp[:, :, -1] = n_interior[:, :, -1]

    report = ReconstructionReport(
        n_comp=n_comp,
        grid=v_min.grid,
        correct_contrast=correct_contrast,
        clipped_negative=clipped,
    )
    if history is not None:
        report.iterations = history.iterations
        report.final_grad_norm = history.grad_norms[-1] if history.grad_norms else math.nan
        report.j_history = list(history.j_values)
    if true_n_cyl is not None:
        if correct_contrast is not None and correct_contrast > 1.0:
            mask = true_n_cyl >= 0.5 * (1.0 + correct_contrast)
            if np.any(mask):
                report.computed_contrast = float(n_comp[mask].max())
        w = _volume_weights(v_min.grid)
        diff = n_comp - true_n_cyl
        report.rel_l2_error = float(
            np.sqrt(np.sum(w * diff * diff) / np.sum(w * true_n_cyl * true_n_cyl))
        )
    return report


def _volume_weights(grid: CylGrid) -> np.ndarray:
    w_r = grid.r_weights() * grid.r_nodes
    w_z = trapezoid_weights(grid.z_nodes)
    return w_r[:, None, None] * grid.h_phi * w_z[None, None, :]


def truncation_ratio(u_samples: np.ndarray, z0: np.ndarray, basis: BasisSet, grid: CylGrid) -> float:
    """Energy fraction kept by the truncated expansion of u over the domain
    times the source interval: ||u_N|| / ||u|| in the volume-weighted norm.

    ``u_samples`` has shape (n_r+1, n_phi, n_z+1, L).
    """
    from .basis import project, reconstruct

    coeff = project(u_samples, z0, basis)
    u_n = reconstruct(coeff, z0, basis)
    w = _volume_weights(grid)[..., None] * projection_weights(z0, basis.length)
    num = np.sqrt(np.sum(w * u_n * u_n))
    den = np.sqrt(np.sum(w * u_samples * u_samples))
    return float(num / den)


# --------------------------------------------------------------------------
# property probes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CarlemanCheck:
    lhs: float
    rhs: float
    holds: bool

    @property
    def gain(self) -> float:
        """Prefactor-free ratio of the two sides; grows like 2 lambda^2."""
        return math.inf if self.lhs == 0.0 else self.rhs / self.lhs


def carleman_check(
    f: np.ndarray, r_nodes: np.ndarray, lam: float, max_refinements: int = 12
) -> CarlemanCheck:
    """Weighted Volterra estimate: compares
    lhs = int (int_r^R f)^2 e^{2 lam r} dr with
    rhs = (1/lam^2) int f^2 e^{2 lam r} dr.

    ``f`` is piecewise linear through its samples; both integrals use
    trapezoid quadrature on a grid refined until they stabilize to 6 digits.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    f = np.asarray(f, dtype=float)
    r_nodes = np.asarray(r_nodes, dtype=float)
    prev = None
    refine = 4
    for _ in range(max_refinements):
        rr = np.interp(
            np.linspace(0.0, 1.0, refine * (len(r_nodes) - 1) + 1),
            np.linspace(0.0, 1.0, len(r_nodes)),
            r_nodes,
        )
        ff = np.interp(rr, r_nodes, f)
        w = trapezoid_weights(rr)
        cwf = np.exp(2.0 * lam * rr)
        seg = 0.5 * np.diff(rr) * (ff[:-1] + ff[1:])
        inner = np.zeros_like(rr)
        inner[:-1] = np.cumsum(seg[::-1])[::-1]
        lhs = float(np.sum(w * inner * inner * cwf))
        rhs = float(np.sum(w * ff * ff * cwf) / lam**2)
        if prev is not None:
            stable = abs(lhs - prev[0]) <= 1e-6 * max(prev[0], 1e-30) and abs(
                rhs - prev[1]
            ) <= 1e-6 * max(prev[1], 1e-30)
            if stable:
                break
        prev = (lhs, rhs)
        refine *= 2
    slack = 1e-9 + 1e-6 * rhs
    return CarlemanCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack)


def convexity_probe(
    v1: SemiDiscreteField,
    v2: SemiDiscreteField,
    derived: DerivedData,
    basis: BasisSet,
    params: FeasibleSetParams,
) -> float:
    """Bregman gap J(V2) - J(V1) - <grad J(V1), V2 - V1>; nonnegative gaps over
    feasible pairs are the computable surrogate for strong convexity."""
    j1 = eval_J(v1, derived, basis, params)
    j2 = eval_J(v2, derived, basis, params)
    g1 = grad_J(v1, derived, basis, params)
    inner = float(np.sum(g1.values * (v2.values - v1.values)))
    return j2 - j1 - inner
