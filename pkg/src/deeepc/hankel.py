"""Hankel-matrix construction, persistent excitation, partitioning, SVD reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deeepc.errors import DepthExceedsLength, LengthMismatch
from deeepc.trajectory import Trajectory

PE_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class HankelMatrix:
    """Block-Hankel matrix: column j holds samples j..j+L-1 stacked."""

    data: np.ndarray
    depth: int
    signal_dim: int

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def block(self, i: int, j: int) -> np.ndarray:
        m = self.signal_dim
        return self.data[i * m : (i + 1) * m, j]


def build_hankel(values: np.ndarray | Trajectory, depth: int) -> HankelMatrix:
    """Stack overlapping depth-L windows of a (T, m) signal as columns."""
    if isinstance(values, Trajectory):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    T, m = values.shape
    if depth < 1:
        raise DepthExceedsLength("depth must be >= 1")
    if depth > T:
        raise DepthExceedsLength(f"depth {depth} exceeds trajectory length {T}")
    cols = T - depth + 1
    H = np.empty((m * depth, cols))
    for i in range(depth):
        H[i * m : (i + 1) * m, :] = values[i : i + cols, :].T
    return HankelMatrix(H, depth, m)


def is_persistently_exciting(values: np.ndarray | Trajectory, order: int) -> tuple[bool, int]:
    """Full-row-rank test of the depth-`order` Hankel, rank via SVD threshold."""
    H = build_hankel(values, order)
    s = np.linalg.svd(H.data, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False, 0
    rank = int(np.sum(s > PE_RANK_RTOL * s[0]))
    return rank == H.data.shape[0], rank


@dataclass(frozen=True)
class HankelBlocks:
    """Past/future partitions of the u/v/z Hankels, optionally SVD-reduced.

    Block row counts: Up has n_u*T_ini rows, Uf has n_u*N_p rows, and
    analogously for v and z. `basis` is present only on reduced blocks and
    satisfies stacked_full ~= stacked_reduced @ basis.T.
    """

    Up: np.ndarray
    Vp: np.ndarray
    Zp: np.ndarray
    Uf: np.ndarray
    Vf: np.ndarray
    Zf: np.ndarray
    t_ini: int
    n_p: int
    dims: tuple[int, int, int]  # (n_u, n_v, n_z)
    basis: np.ndarray | None = None

    def __post_init__(self):
        for m in (self.Up, self.Vp, self.Zp, self.Uf, self.Vf, self.Zf):
            m.setflags(write=False)

    @property
    def n_g(self) -> int:
        return self.Up.shape[1]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.Up, self.Vp, self.Zp, self.Uf, self.Vf, self.Zf])


def partition(
    u: np.ndarray | Trajectory,
    v: np.ndarray | Trajectory,
    z: np.ndarray | Trajectory,
    t_ini: int,
    n_p: int,
) -> HankelBlocks:
    """Split depth-(T_ini+N_p) Hankels of u, v, z into past and future rows."""
    sigs = []
    for s in (u, v, z):
        a = s.values if isinstance(s, Trajectory) else np.asarray(s, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        sigs.append(a)
    lengths = {s.shape[0] for s in sigs}
    if len(lengths) != 1:
        raise LengthMismatch(f"u/v/z lengths differ: {[s.shape[0] for s in sigs]}")
    if t_ini < 1 or n_p < 1:
        raise DepthExceedsLength("T_ini and N_p must be >= 1")
    L = t_ini + n_p
    Hu, Hv, Hz = (build_hankel(s, L) for s in sigs)
    nu, nv, nz = (s.shape[1] for s in sigs)
    return HankelBlocks(
        Up=Hu.data[: nu * t_ini].copy(),
        Vp=Hv.data[: nv * t_ini].copy(),
        Zp=Hz.data[: nz * t_ini].copy(),
        Uf=Hu.data[nu * t_ini :].copy(),
        Vf=Hv.data[nv * t_ini :].copy(),
        Zf=Hz.data[nz * t_ini :].copy(),
        t_ini=t_ini,
        n_p=n_p,
        dims=(nu, nv, nz),
    )


def reduce_svd(b: HankelBlocks, tol: float = 1e-8) -> HankelBlocks:
    """Replace the stacked blocks with their rank-r factor W_r @ diag(s_r).

    r counts singular values above tol * s_max; tol=0 keeps the numerical
    rank. Column spaces are preserved: stacked_full = reduced @ basis.T up
    to truncation error.
    """
    M = b.stacked()
    W, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        r = 1
    elif tol <= 0.0:
        eps = np.finfo(float).eps * max(M.shape) * s[0]
        r = max(1, int(np.sum(s > eps)))
    else:
        r = max(1, int(np.sum(s > tol * s[0])))
    reduced = W[:, :r] * s[:r]
    nu, nv, nz = b.dims
    splits = np.cumsum(
        [nu * b.t_ini, nv * b.t_ini, nz * b.t_ini, nu * b.n_p, nv * b.n_p]
    )
    Up, Vp, Zp, Uf, Vf, Zf = np.vsplit(reduced, splits)
    return HankelBlocks(
        Up=Up, Vp=Vp, Zp=Zp, Uf=Uf, Vf=Vf, Zf=Zf,
        t_ini=b.t_ini, n_p=b.n_p, dims=b.dims, basis=Vt[:r].T.copy(),
    )
