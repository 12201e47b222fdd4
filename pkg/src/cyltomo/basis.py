"""Orthonormal basis of L2(0, B) built from {z^n e^z} by Gram-Schmidt.

Each basis function has the form ``psi_n(z) = P_n(z) * e^z`` with ``P_n`` a
degree-n polynomial.  Inner products during orthonormalization come from the
closed-form recurrence for ``int z^k e^{2z} dz``, evaluated in 50-digit
arithmetic: the monomial family is so nearly collinear that float64
Gram-Schmidt loses orthogonality at the 1e-1 level already for N = 8.  The
polynomials are stored as Chebyshev coefficients on [0, B], whose O(1)
magnitudes keep float64 evaluation stable.

The matrix ``A`` of inner products ``<psi_m, psi_n'>`` has unit diagonal and
vanishes strictly below the diagonal, hence is invertible with determinant
one; that structure is what the downstream inversion relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np
from numpy.polynomial import chebyshev as _cheb


class IllConditionedBasisError(ValueError):
    """The monomial family is numerically degenerate at the requested size."""

    def __init__(self, n_requested: int, n_stable: int, cond: float):
        self.n_requested = n_requested
        self.n_stable = n_stable
        super().__init__(
            f"Gram matrix condition {cond:.3e} exceeds 1e14 at N={n_requested}; "
            f"largest stable N is {n_stable}"
        )


def exp_monomial_moments(k_max: int, b: float) -> np.ndarray:
    """``I_k = int_0^b z^k e^{2z} dz`` for ``k = 0..k_max`` by the
    integration-by-parts recurrence ``I_k = (b^k e^{2b} - k I_{k-1}) / 2``.

    The recurrence amplifies rounding error by k!/2^k, so it runs in extended
    precision and only the final values are rounded to float64.
    """
    with mp.workdps(50 + k_max):
        return np.array([float(v) for v in _moments_mp(k_max, b)])


def _moments_mp(k_max: int, b: float) -> list:
    e2b = mp.e ** (2 * mp.mpf(b))
    out = [(e2b - 1) / 2]
    bk = mp.mpf(1)
    for k in range(1, k_max + 1):
        bk *= b
        out.append((bk * e2b - k * out[k - 1]) / 2)
    return out


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal functions ``psi_n(z) = P_n(z) e^z`` on ``(0, length)``.

    ``coeffs[n]`` holds the Chebyshev coefficients of ``P_n`` on
    ``[0, length]`` (entries beyond degree n are zero);
    ``a_matrix[m, n] = <psi_m, psi_n'>``.
    """

    length: float
    size: int
    coeffs: np.ndarray
    a_matrix: np.ndarray

    def _xi(self, z: np.ndarray) -> np.ndarray:
        return 2.0 * z / self.length - 1.0

    def evaluate(self, n: int, z) -> np.ndarray:
        """``psi_n`` at ``z``."""
        self._check_index(n)
        z = np.asarray(z, dtype=float)
        return _cheb.chebval(self._xi(z), self.coeffs[n]) * np.exp(z)

    def evaluate_derivative(self, n: int, z) -> np.ndarray:
        """``psi_n'`` at ``z``, i.e. ``(P_n' + P_n) e^z``."""
        self._check_index(n)
        z = np.asarray(z, dtype=float)
        xi = self._xi(z)
        c = self.coeffs[n]
        p = _cheb.chebval(xi, c)
        dp = _cheb.chebval(xi, _cheb.chebder(c)) * (2.0 / self.length)
        return (dp + p) * np.exp(z)

    def evaluation_matrix(self, z: np.ndarray) -> np.ndarray:
        """Matrix ``psi_n(z_l)`` of shape ``(len(z), size)``."""
        z = np.asarray(z, dtype=float)
        vander = _cheb.chebvander(self._xi(z), self.size - 1)
        return (vander @ self.coeffs.T) * np.exp(z)[:, None]

    def derivative_matrix(self, z: np.ndarray) -> np.ndarray:
        """Matrix ``psi_n'(z_l)`` of shape ``(len(z), size)``."""
        z = np.asarray(z, dtype=float)
        vander = _cheb.chebvander(self._xi(z), self.size - 1)
        dcoeffs = np.zeros_like(self.coeffs)
        for n in range(self.size):
            d = _cheb.chebder(self.coeffs[n]) * (2.0 / self.length)
            dcoeffs[n, : len(d)] = d
        return (vander @ (self.coeffs + dcoeffs).T) * np.exp(z)[:, None]

    def _check_index(self, n: int):
        if not 0 <= n < self.size:
            raise IndexError(f"basis index {n} out of range [0, {self.size})")


@lru_cache(maxsize=32)
def build_basis(size: int, length: float) -> BasisSet:
    """Modified Gram-Schmidt on ``{z^n e^z}``, carried out in 50-digit
    arithmetic on monomial coefficients and stored in Chebyshev form."""
    if size < 1:
        raise ValueError("basis size must be >= 1")
    if length <= 0.0:
        raise ValueError("interval length must be positive")

    with mp.workdps(50 + 2 * size):
        moments = _moments_mp(2 * size, length)
        gram = mp.matrix(size, size)
        for a in range(size):
            for b in range(size):
                gram[a, b] = moments[a + b]

        gram64 = np.array([[float(gram[a, b]) for b in range(size)] for a in range(size)])
        cond = float(np.linalg.cond(gram64))
        if cond > 1e14:
            n_stable = size
            while n_stable > 1:
                n_stable -= 1
                if np.linalg.cond(gram64[:n_stable, :n_stable]) <= 1e14:
                    break
            raise IllConditionedBasisError(size, n_stable, cond)

        def inner(u, v):
            return sum(u[a] * gram[a, b] * v[b] for a in range(size) for b in range(size))

        mono = []
        for n in range(size):
            v = [mp.mpf(0)] * size
            v[n] = mp.mpf(1)
            for j in range(n):
                proj = inner(v, mono[j])
                v = [v[a] - proj * mono[j][a] for a in range(size)]
            nrm = mp.sqrt(inner(v, v))
            mono.append([v[a] / nrm for a in range(size)])

        # a[m, n] = <psi_m, psi_n'>; the polynomial part of psi_n' is P_n' + P_n
        a_mat = np.empty((size, size))
        for n in range(size):
            dpn = [mp.mpf(0)] * size
            for k in range(1, size):
                dpn[k - 1] = k * mono[n][k]
            w = [dpn[a] + mono[n][a] for a in range(size)]
            for m in range(size):
                a_mat[m, n] = float(inner(mono[m], w))

        # monomial -> Chebyshev on [0, length] by interpolation at Chebyshev
        # points, solved in high precision
        xi_nodes = [mp.cos(mp.pi * (2 * i + 1) / (2 * size)) for i in range(size)]
        z_nodes = [(xi + 1) * length / 2 for xi in xi_nodes]
        tmat = mp.matrix(size, size)
        for i, xi in enumerate(xi_nodes):
            t_prev, t_cur = mp.mpf(1), xi
            for k in range(size):
                if k == 0:
                    tmat[i, k] = mp.mpf(1)
                elif k == 1:
                    tmat[i, k] = xi
                else:
                    t_prev, t_cur = t_cur, 2 * xi * t_cur - t_prev
                    tmat[i, k] = t_cur
        coeffs = np.zeros((size, size))
        for n in range(size):
            rhs = mp.matrix([_polyval_mp(mono[n], z) for z in z_nodes])
            sol = mp.lu_solve(tmat, rhs)
            coeffs[n] = [float(sol[k]) for k in range(size)]

    return BasisSet(length=float(length), size=size, coeffs=coeffs, a_matrix=a_mat)


def _polyval_mp(c, z):
    acc = mp.mpf(0)
    for ck in reversed(c):
        acc = acc * z + ck
    return acc


def projection_weights(z: np.ndarray, length: float) -> np.ndarray:
    """Trapezoid weights for the z0 quadrature grid on ``[0, length]``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or len(z) < 8:
        raise ValueError("projection quadrature grid must be 1D with at least 8 nodes")
    if abs(z[0]) > 1e-12 or abs(z[-1] - length) > 1e-12 * max(1.0, length):
        raise ValueError("quadrature grid must span [0, length] inclusively")
    d = np.diff(z)
    if np.any(d <= 0):
        raise ValueError("quadrature nodes must be strictly increasing")
    w = np.zeros_like(z)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def project(f: np.ndarray, z: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Expansion coefficients of samples ``f(..., z_l)`` on the basis.

    Trapezoid moments on the sample grid are corrected by the discrete Gram
    matrix, so the reconstruction ``sum_s f_s psi_s`` is the weighted
    least-squares fit of the samples over the span; elements of the span are
    reproduced exactly up to roundoff.
    """
    f = np.asarray(f, dtype=float)
    z = np.asarray(z, dtype=float)
    if f.shape[-1] != len(z):
        raise ValueError("last axis of f must match the quadrature grid")
    if not np.all(np.isfinite(f)):
        raise ValueError("cannot project non-finite samples")
    w = projection_weights(z, basis.length)
    psi = basis.evaluation_matrix(z)  # (L, N)
    moments = np.einsum("...l,l,ln->...n", f, w, psi)
    gram_q = psi.T @ (w[:, None] * psi)
    return np.linalg.solve(gram_q, moments[..., None])[..., 0]


def reconstruct(coefficients: np.ndarray, z: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Evaluate ``sum_s c_s psi_s`` at the given z samples."""
    psi = basis.evaluation_matrix(np.asarray(z, dtype=float))
    return np.einsum("...n,ln->...l", np.asarray(coefficients, dtype=float), psi)


def basis_to_json_dict(basis: BasisSet) -> dict:
    """JSON-ready export of the polynomial coefficients and the A matrix."""
    return {
        "length": basis.length,
        "size": basis.size,
        "cheb_coeffs": basis.coeffs.tolist(),
        "a_matrix": basis.a_matrix.tolist(),
    }


def basis_from_json_dict(doc: dict) -> BasisSet:
    return BasisSet(
        length=float(doc["length"]),
        size=int(doc["size"]),
        coeffs=np.asarray(doc["cheb_coeffs"], dtype=float),
        a_matrix=np.asarray(doc["a_matrix"], dtype=float),
    )
