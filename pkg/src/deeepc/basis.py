"""Numerical verification of the orthonormal-lifting theory.

Tensor-product orthonormal families, quadrature Gram checks, truncation
error curves via the Parseval identity, and partial-state reconstruction
from outputs. Verification code, not part of the online controller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from deeepc.errors import DimensionMismatch, QuadratureTooCoarse

GRAM_TOL = 1e-6


@dataclass(frozen=True)
class OrthonormalFamily:
    """Finite prefix of an orthonormal basis with a matching quadrature rule.

    eval_fn maps (n_points, n_dims) -> (n_points, n_funcs); nodes/weights
    integrate products of any two members essentially exactly.
    """

    kind: str
    domain: tuple
    n_funcs: int
    nodes: np.ndarray
    weights: np.ndarray
    eval_fn: Callable[[np.ndarray], np.ndarray]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.eval_fn(points)

    def gram(self) -> np.ndarray:
        phi = self.evaluate(self.nodes)
        return phi.T @ (self.weights[:, None] * phi)

    def gram_deviation(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.n_funcs))))

    def inner(self, f: Callable) -> np.ndarray:
        """Quadrature coefficients <f, phi_i> for all members."""
        fx = _eval_scalar(f, self.nodes)
        phi = self.evaluate(self.nodes)
        return phi.T @ (self.weights * fx)

    def norm_sq(self, f: Callable) -> float:
        fx = _eval_scalar(f, self.nodes)
        return float(self.weights @ (fx * fx))


def _eval_scalar(f: Callable, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    if points.shape[1] == 1:
        out = np.asarray(f(points[:, 0]), dtype=float)
    else:
        out = np.asarray(f(points), dtype=float)
    return out.ravel()


def legendre_family(a: float, b: float, max_order: int, n_nodes: int | None = None) -> OrthonormalFamily:
    """Normalized Legendre polynomials on [a, b], Gauss-Legendre quadrature."""
    if b <= a:
        raise DimensionMismatch("domain must satisfy a < b")
    if n_nodes is None:
        n_nodes = 2 * max_order + 8
    x_ref, w_ref = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    nodes = (a + half * (x_ref + 1.0))[:, None]
    weights = w_ref * half

    def eval_fn(points: np.ndarray) -> np.ndarray:
        t = 2.0 * (points[:, 0] - a) / (b - a) - 1.0
        out = np.empty((points.shape[0], max_order))
        for n in range(max_order):
            coeffs = np.zeros(n + 1)
            coeffs[n] = 1.0
            scale = np.sqrt((2 * n + 1) / (b - a))
            out[:, n] = scale * np.polynomial.legendre.legval(t, coeffs)
        return out

    fam = OrthonormalFamily("legendre", (a, b), max_order, nodes, weights, eval_fn)
    if fam.gram_deviation() > GRAM_TOL:
        raise QuadratureTooCoarse(f"Gram deviation {fam.gram_deviation():.2e}")
    return fam


def fourier_family(a: float, b: float, max_order: int, n_nodes: int | None = None) -> OrthonormalFamily:
    """Constant + cos/sin pairs on [a, b], orthonormal under Lebesgue measure."""
    if b <= a:
        raise DimensionMismatch("domain must satisfy a < b")
    if n_nodes is None:
        n_nodes = 8 * max_order + 16
    x_ref, w_ref = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    nodes = (a + half * (x_ref + 1.0))[:, None]
    weights = w_ref * half
    length = b - a

    def eval_fn(points: np.ndarray) -> np.ndarray:
        t = points[:, 0] - a
        out = np.empty((points.shape[0], max_order))
        out[:, 0] = 1.0 / np.sqrt(length)
        for i in range(1, max_order):
            k = (i + 1) // 2
            arg = 2.0 * np.pi * k * t / length
            out[:, i] = np.sqrt(2.0 / length) * (np.cos(arg) if i % 2 == 1 else np.sin(arg))
        return out

    fam = OrthonormalFamily("fourier", (a, b), max_order, nodes, weights, eval_fn)
    if fam.gram_deviation() > GRAM_TOL:
        raise QuadratureTooCoarse(f"Gram deviation {fam.gram_deviation():.2e}")
    return fam


def tensor_product_family(f1: OrthonormalFamily, f2: OrthonormalFamily) -> OrthonormalFamily:
    """2-D family phi_ij(x1, x2) = phi_i(x1) * phi_j(x2) on the product domain."""
    if f1.nodes.shape[1] != 1 or f2.nodes.shape[1] != 1:
        raise DimensionMismatch("tensor products are built from 1-D families")
    n1 = f1.nodes[:, 0]
    n2 = f2.nodes[:, 0]
    g1, g2 = np.meshgrid(n1, n2, indexing="ij")
    nodes = np.column_stack([g1.ravel(), g2.ravel()])
    weights = np.outer(f1.weights, f2.weights).ravel()

    def eval_fn(points: np.ndarray) -> np.ndarray:
        if points.shape[1] != 2:
            raise DimensionMismatch("tensor family expects 2-D points")
        p1 = f1.eval_fn(points[:, :1])
        p2 = f2.eval_fn(points[:, 1:])
        # column order: (i, j) with j fastest, matching weight layout
        return (p1[:, :, None] * p2[:, None, :]).reshape(points.shape[0], -1)

    fam = OrthonormalFamily(
        kind=f"tensor({f1.kind},{f2.kind})",
        domain=(f1.domain, f2.domain),
        n_funcs=f1.n_funcs * f2.n_funcs,
        nodes=nodes,
        weights=weights,
        eval_fn=eval_fn,
    )
    if fam.gram_deviation() > GRAM_TOL:
        raise QuadratureTooCoarse(f"tensor Gram deviation {fam.gram_deviation():.2e}")
    return fam


@dataclass(frozen=True)
class TruncationReport:
    orders: tuple[int, ...]
    error_norms: tuple[float, ...]
    error_norms_direct: tuple[float, ...]
    f_norm: float
    monotone: bool

    def as_rows(self) -> list[dict]:
        return [
            {"order": n, "error_norm": e, "error_norm_direct": d}
            for n, e, d in zip(self.orders, self.error_norms, self.error_norms_direct)
        ]


def truncation_error_curve(
    f: Callable, fam: OrthonormalFamily, orders: list[int]
) -> TruncationReport:
    """||E_n||^2 = ||f||^2 - sum_{i<=n} c_i^2, cross-checked by direct quadrature."""
    if max(orders) > fam.n_funcs:
        raise DimensionMismatch("requested order exceeds the family size")
    coeffs = fam.inner(f)
    f_norm_sq = fam.norm_sq(f)
    fx = _eval_scalar(f, fam.nodes)
    phi = fam.evaluate(fam.nodes)

    # Bessel: partial sums never exceed the norm beyond quadrature noise
    beyond = f_norm_sq - float(np.sum(coeffs**2))
    if beyond < -1e-8 * max(1.0, f_norm_sq):
        raise QuadratureTooCoarse(f"negative truncation energy {beyond:.3e}")
    # below the rounding noise of ||f||^2 the residual energy is not
    # measurable in double precision; treat it as exactly zero
    if beyond < 16.0 * np.finfo(float).eps * max(1.0, f_norm_sq):
        beyond = 0.0

    formula, direct = [], []
    for n in sorted(orders):
        # tail form of ||f||^2 - sum_{i<=n} c_i^2: immune to cancellation,
        # so the curve is exactly non-increasing in n
        e_sq = beyond + float(np.sum(coeffs[n:] ** 2))
        formula.append(np.sqrt(e_sq))
        resid = fx - phi[:, :n] @ coeffs[:n]
        direct.append(float(np.sqrt(fam.weights @ (resid * resid))))

    mono = all(formula[i + 1] <= formula[i] + 1e-12 for i in range(len(formula) - 1))
    return TruncationReport(
        orders=tuple(sorted(orders)),
        error_norms=tuple(formula),
        error_norms_direct=tuple(direct),
        f_norm=float(np.sqrt(f_norm_sq)),
        monotone=mono,
    )


def reconstruct_partial_state(C: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Recover the observable state entries x^r = (C''C')^{-1} C'' y.

    C' collects the nonzero columns of C; requires them linearly independent.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    nonzero = ~np.all(C == 0.0, axis=0)
    Cp = C[:, nonzero]
    if Cp.shape[1] == 0:
        raise DimensionMismatch("C has no nonzero columns")
    if np.linalg.matrix_rank(Cp) < Cp.shape[1]:
        raise DimensionMismatch("nonzero columns of C are not linearly independent")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xr = np.linalg.solve(Cp.T @ Cp, Cp.T @ y.T).T
    return xr
