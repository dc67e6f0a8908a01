"""Quadratic economic-cost surrogate and output-reconstruction matrix.

The quadratic weights are parameterized as Q = diag(exp(q)) so positive
definiteness holds for any finite q; they are never densified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from deeepc.errors import DimensionMismatch


@dataclass
class EconCostModel:
    """cost(z, v) = z'Qz z + Pz z + bz + v'Qv v + Pv v + bv, with y^c = G z."""

    q_z: np.ndarray
    P_z: np.ndarray
    b_z: float
    q_v: np.ndarray
    P_v: np.ndarray
    b_v: float
    G: np.ndarray

    def __post_init__(self):
        self.q_z = np.asarray(self.q_z, dtype=float).ravel()
        self.q_v = np.asarray(self.q_v, dtype=float).ravel()
        self.P_z = np.asarray(self.P_z, dtype=float).ravel()
        self.P_v = np.asarray(self.P_v, dtype=float).ravel()
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if self.P_z.shape != self.q_z.shape or self.P_v.shape != self.q_v.shape:
            raise DimensionMismatch("P vectors must match q vectors in length")
        if self.G.shape[1] != self.q_z.size:
            raise DimensionMismatch("G column count must equal n_z")
        parts = [self.q_z, self.P_z, self.q_v, self.P_v, self.G]
        if not all(np.all(np.isfinite(p)) for p in parts) or not np.isfinite(
            self.b_z + self.b_v
        ):
            raise ValueError("cost model parameters must be finite")

    @property
    def n_z(self) -> int:
        return self.q_z.size

    @property
    def n_v(self) -> int:
        return self.q_v.size

    @property
    def n_c(self) -> int:
        return self.G.shape[0]

    def Qz_diag(self) -> np.ndarray:
        return np.exp(self.q_z)

    def Qv_diag(self) -> np.ndarray:
        return np.exp(self.q_v)

    def params(self) -> list[np.ndarray]:
        return [self.q_z, self.P_z, np.array([self.b_z]), self.q_v, self.P_v,
                np.array([self.b_v]), self.G]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.q_z, self.P_z = params[0], params[1]
        self.b_z = float(params[2][0])
        self.q_v, self.P_v = params[3], params[4]
        self.b_v = float(params[5][0])
        self.G = params[6]

    def copy(self) -> "EconCostModel":
        return EconCostModel(
            self.q_z.copy(), self.P_z.copy(), self.b_z,
            self.q_v.copy(), self.P_v.copy(), self.b_v, self.G.copy(),
        )


@dataclass(frozen=True)
class CostEval:
    value: float
    grad_z: np.ndarray
    grad_v: np.ndarray


def eval_cost(m: EconCostModel, z: np.ndarray, v: np.ndarray) -> CostEval:
    z = np.asarray(z, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if z.shape != (m.n_z,) or v.shape != (m.n_v,):
        raise DimensionMismatch(f"expected dims ({m.n_z}, {m.n_v}), got ({z.size}, {v.size})")
    qz, qv = m.Qz_diag(), m.Qv_diag()
    value = (
        float(qz @ (z * z)) + float(m.P_z @ z) + m.b_z
        + float(qv @ (v * v)) + float(m.P_v @ v) + m.b_v
    )
    return CostEval(value, 2.0 * qz * z + m.P_z, 2.0 * qv * v + m.P_v)


def eval_cost_batch(m: EconCostModel, Z: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Vectorized cost over rows of Z (batch, n_z) and V (batch, n_v)."""
    Z = np.atleast_2d(Z)
    V = np.atleast_2d(V)
    if Z.shape[1] != m.n_z or V.shape[1] != m.n_v:
        raise DimensionMismatch("batch column dims do not match the model")
    return (
        (Z * Z) @ m.Qz_diag() + Z @ m.P_z + m.b_z
        + (V * V) @ m.Qv_diag() + V @ m.P_v + m.b_v
    )


def reconstruct_output(m: EconCostModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != m.n_z:
        raise DimensionMismatch(f"z last dim {z.shape[-1]} != n_z {m.n_z}")
    return z @ m.G.T


def quad_form_matrices(m: EconCostModel, n_p: int, lam: float = 1.0) -> dict:
    """Block-diagonal data for the horizon-stacked surrogate cost.

    Variables are the stacked [z_1..z_Np, v_1..v_Np]; returns diagonal
    Hessian weights (of x'Hx form, i.e. lam*Q repeated), the stacked linear
    term, and the constant Np*lam*(bz+bv).
    """
    if n_p < 1:
        raise ValueError("N_p must be >= 1")
    hz = np.tile(lam * m.Qz_diag(), n_p)
    hv = np.tile(lam * m.Qv_diag(), n_p)
    fz = np.tile(lam * m.P_z, n_p)
    fv = np.tile(lam * m.P_v, n_p)
    return {
        "quad_z": hz,
        "quad_v": hv,
        "lin_z": fz,
        "lin_v": fv,
        "constant": n_p * lam * (m.b_z + m.b_v),
    }


def initial_cost_model(
    Z: np.ndarray, V: np.ndarray, costs: np.ndarray, Yc: np.ndarray
) -> EconCostModel:
    """Warm start: Q = I, P = 0, b = mean cost, G = least-squares fit on Z."""
    Z = np.atleast_2d(Z)
    V = np.atleast_2d(V)
    Yc = np.atleast_2d(Yc)
    n_z, n_v = Z.shape[1], V.shape[1]
    # split the mean cost between the two bias terms so ĉ starts at mean(c)
    # with zero quadratic contribution bias beyond the z'z + v'v terms
    resid = np.asarray(costs, dtype=float).ravel() - (Z * Z).sum(axis=1) - (V * V).sum(axis=1)
    b = float(resid.mean())
    G, *_ = np.linalg.lstsq(Z, Yc, rcond=None)
    return EconCostModel(
        q_z=np.zeros(n_z), P_z=np.zeros(n_z), b_z=0.5 * b,
        q_v=np.zeros(n_v), P_v=np.zeros(n_v), b_v=0.5 * b, G=G.T,
    )


def save_cost_model(path: str, m: EconCostModel) -> None:
    header = {"magic": "deeepc-cost-v1", "n_z": m.n_z, "n_v": m.n_v, "n_c": m.n_c}
    flat = np.concatenate(
        [m.q_z, m.P_z, [m.b_z], m.q_v, m.P_v, [m.b_v], m.G.ravel()]
    )
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(flat.astype("<f8").tobytes())


def load_cost_model(path: str) -> EconCostModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != "deeepc-cost-v1":
            raise ValueError(f"not a cost-model file: {path}")
        flat = np.frombuffer(fh.read(), dtype="<f8")
    nz, nv, nc = header["n_z"], header["n_v"], header["n_c"]
    off = 0

    def take(n):
        nonlocal off
        out = flat[off : off + n].copy()
        off += n
        return out

    q_z, P_z, b_z = take(nz), take(nz), float(take(1)[0])
    q_v, P_v, b_v = take(nv), take(nv), float(take(1)[0])
    G = take(nc * nz).reshape(nc, nz)
    return EconCostModel(q_z, P_z, b_z, q_v, P_v, b_v, G)
