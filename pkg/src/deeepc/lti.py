"""Exact discrete LTI simulation and fundamental-lemma verification oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deeepc.errors import DimensionMismatch, NotControllable
from deeepc.hankel import build_hankel, is_persistently_exciting


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, C, D = (np.asarray(m, dtype=float) for m in (self.A, self.B, self.C, self.D))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if B.shape[0] != n or C.shape[1] != n:
            raise DimensionMismatch("B/C dimensions inconsistent with A")
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionMismatch("D dimensions inconsistent with B and C")
        for name, m in (("A", A), ("B", B), ("C", C), ("D", D)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def controllability_matrix(self) -> np.ndarray:
        blocks, M = [], self.B.copy()
        for _ in range(self.n_x):
            blocks.append(M)
            M = self.A @ M
        return np.hstack(blocks)

    def is_controllable(self, rtol: float = 1e-10) -> bool:
        s = np.linalg.svd(self.controllability_matrix(), compute_uv=False)
        return s.size > 0 and s[0] > 0 and int(np.sum(s > rtol * s[0])) == self.n_x


def simulate(sys: LtiSystem, x0: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the recursion x+ = Ax + Bu, y = Cx + Du over a (T, n_u) input."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != sys.n_u:
        raise DimensionMismatch(f"input has {u.shape[1]} columns, expected {sys.n_u}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (sys.n_x,):
        raise DimensionMismatch("x0 dimension mismatch")
    T = u.shape[0]
    x = np.empty((T + 1, sys.n_x))
    y = np.empty((T, sys.n_y))
    x[0] = x0
    for k in range(T):
        y[k] = sys.C @ x[k] + sys.D @ u[k]
        x[k + 1] = sys.A @ x[k] + sys.B @ u[k]
    return x, y


def random_stable_system(
    n_x: int, n_u: int, n_y: int, rng: np.random.Generator, spectral_radius: float = 0.9
) -> LtiSystem:
    """Random normal-entry system with A rescaled to the given spectral radius."""
    for _ in range(100):
        A = rng.standard_normal((n_x, n_x))
        rho = max(abs(np.linalg.eigvals(A)))
        if rho > 0:
            A = A * (spectral_radius / rho)
        B = rng.standard_normal((n_x, n_u))
        C = rng.standard_normal((n_y, n_x))
        D = rng.standard_normal((n_y, n_u))
        sys = LtiSystem(A, B, C, D)
        if sys.is_controllable():
            return sys
    raise NotControllable("failed to draw a controllable system in 100 attempts")


def pe_input(
    T: int, n_u: int, order: int, rng: np.random.Generator, max_tries: int = 50
) -> np.ndarray:
    """Draw a uniform random input, regenerating until PE of the given order."""
    for _ in range(max_tries):
        u = rng.uniform(-1.0, 1.0, size=(T, n_u))
        ok, _ = is_persistently_exciting(u, order)
        if ok:
            return u
    raise RuntimeError(f"could not generate a PE input of order {order} in {max_tries} tries")


def trajectory_residual(Hu: np.ndarray, Hy: np.ndarray, u_L: np.ndarray, y_L: np.ndarray) -> float:
    """Relative least-squares residual of a fresh window against the stacked Hankel."""
    H = np.vstack([Hu, Hy])
    target = np.concatenate([np.ravel(u_L), np.ravel(y_L)])
    g, *_ = np.linalg.lstsq(H, target, rcond=None)
    resid = H @ g - target
    denom = np.linalg.norm(target)
    return float(np.linalg.norm(resid) / denom) if denom > 0 else float(np.linalg.norm(resid))


def verify_fundamental_lemma(
    sys: LtiSystem, T: int, L: int, trials: int, rng: np.random.Generator
) -> dict:
    """Check that fresh L-windows lie in the stacked-Hankel column space.

    Requires a PE input of order L + n_x; returns the max relative residual
    over trials plus the achieved PE rank.
    """
    if not sys.is_controllable():
        raise NotControllable("fundamental lemma requires a controllable system")
    order = L + sys.n_x
    u_d = pe_input(T, sys.n_u, order, rng)
    _, rank = is_persistently_exciting(u_d, order)
    x0 = rng.standard_normal(sys.n_x)
    _, y_d = simulate(sys, x0, u_d)
    Hu = build_hankel(u_d, L).data
    Hy = build_hankel(y_d, L).data

    max_residual = 0.0
    for _ in range(trials):
        x0_t = rng.standard_normal(sys.n_x)
        u_t = rng.uniform(-1.0, 1.0, size=(L, sys.n_u))
        _, y_t = simulate(sys, x0_t, u_t)
        max_residual = max(max_residual, trajectory_residual(Hu, Hy, u_t, y_t))
    return {"max_residual": max_residual, "min_pe_rank": rank, "trials": trials}
