"""Dense convex QP solver (primal-dual interior point) and DeeEPC assembly.

The solver handles min 1/2 x'Hx + f'x subject to equality, two-sided
affine inequality, and variable-bound constraints, with KKT residual
certification. A projected-gradient reference solver for box-constrained
problems is provided as an independent test oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor as scipy_lu_factor
from scipy.linalg import lu_solve as scipy_lu_solve

from deeepc.cost_model import EconCostModel, quad_form_matrices
from deeepc.errors import DimensionMismatch, Infeasible, MissingIni, NotPSD
from deeepc.hankel import HankelBlocks


@dataclass
class QpProblem:
    """min 1/2 x'Hx + f'x + constant over the given constraint set."""

    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Ain: np.ndarray | None = None
    lb_in: np.ndarray | None = None
    ub_in: np.ndarray | None = None
    var_lb: np.ndarray | None = None
    var_ub: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.size
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H shape {self.H.shape} vs n={n}")
        asym = np.max(np.abs(self.H - self.H.T)) if n else 0.0
        if asym > 1e-12 * (1.0 + np.max(np.abs(self.H), initial=0.0)):
            raise DimensionMismatch("H is not symmetric")
        if (self.Aeq is None) != (self.beq is None):
            raise DimensionMismatch("Aeq and beq must be given together")
        if self.Aeq is not None:
            self.Aeq = np.atleast_2d(np.asarray(self.Aeq, dtype=float))
            self.beq = np.asarray(self.beq, dtype=float).ravel()
            if self.Aeq.shape != (self.beq.size, n):
                raise DimensionMismatch("equality system dimensions inconsistent")
        if self.Ain is not None:
            self.Ain = np.atleast_2d(np.asarray(self.Ain, dtype=float))
            m = self.Ain.shape[0]
            self.lb_in = _as_bound(self.lb_in, m, -np.inf)
            self.ub_in = _as_bound(self.ub_in, m, np.inf)
            if self.Ain.shape[1] != n:
                raise DimensionMismatch("Ain column count mismatch")
            _check_ordering(self.lb_in, self.ub_in)
        self.var_lb = _as_bound(self.var_lb, n, -np.inf) if self.var_lb is not None else None
        self.var_ub = _as_bound(self.var_ub, n, np.inf) if self.var_ub is not None else None
        if self.var_lb is not None and self.var_ub is not None:
            _check_ordering(self.var_lb, self.var_ub)

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x + self.constant)


def _as_bound(v, m: int, default: float) -> np.ndarray:
    if v is None:
        return np.full(m, default)
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 1:
        return np.full(m, float(v[0]))
    if v.size != m:
        raise DimensionMismatch(f"bound length {v.size} != {m}")
    return v


def _check_ordering(lb: np.ndarray, ub: np.ndarray) -> None:
    both = np.isfinite(lb) & np.isfinite(ub)
    if np.any(lb[both] > ub[both]):
        raise Infeasible("lower bound exceeds upper bound")


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # Optimal | MaxIter | Infeasible
    kkt: dict
    iterations: int
    wall_time: float
    objective: float
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_in: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _one_sided(p: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Collect all inequalities as Gx <= h rows."""
    rows, rhs = [], []
    if p.Ain is not None:
        up = np.isfinite(p.ub_in)
        lo = np.isfinite(p.lb_in)
        if up.any():
            rows.append(p.Ain[up])
            rhs.append(p.ub_in[up])
        if lo.any():
            rows.append(-p.Ain[lo])
            rhs.append(-p.lb_in[lo])
    n = p.n
    I = np.eye(n)
    if p.var_ub is not None:
        up = np.isfinite(p.var_ub)
        if up.any():
            rows.append(I[up])
            rhs.append(p.var_ub[up])
    if p.var_lb is not None:
        lo = np.isfinite(p.var_lb)
        if lo.any():
            rows.append(-I[lo])
            rhs.append(-p.var_lb[lo])
    if not rows:
        return np.zeros((0, n)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _validate_psd(H: np.ndarray) -> None:
    try:
        np.linalg.cholesky(H + 1e-10 * np.eye(H.shape[0]))
    except np.linalg.LinAlgError:
        raise NotPSD("Hessian failed the shifted Cholesky test")


def _solve_equality_qp(H, f, A, b):
    n, m = f.size, b.size
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H + 1e-12 * np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    K[n:, n:] = -1e-12 * np.eye(m)
    rhs = np.concatenate([-f, b])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def solve(p: QpProblem, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """Mehrotra-style predictor-corrector interior point method."""
    t0 = time.perf_counter()
    _validate_psd(p.H)
    n = p.n
    H, f = p.H, p.f
    A = p.Aeq if p.Aeq is not None else np.zeros((0, n))
    b = p.beq if p.beq is not None else np.zeros(0)
    G, h = _one_sided(p)
    m_eq, m_in = A.shape[0], G.shape[0]
    scale_h = max(1.0, np.linalg.norm(H, "fro"))

    if m_eq > 0:
        # certify equality consistency up front
        x_ls, res, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.linalg.norm(A @ x_ls - b) > 1e-6 * (1.0 + np.linalg.norm(b)):
            return QpSolution(
                x_ls, "Infeasible", _kkt_residuals(p, x_ls, np.zeros(m_eq), G, h,
                                                   np.zeros(m_in), scale_h),
                0, time.perf_counter() - t0, p.objective(x_ls),
            )

    if m_in == 0:
        if m_eq == 0:
            x = np.linalg.solve(H + 1e-12 * np.eye(n), -f)
            y = np.zeros(0)
        else:
            x, y = _solve_equality_qp(H, f, A, b)
        kkt = _kkt_residuals(p, x, y, G, h, np.zeros(0), scale_h)
        status = "Optimal" if max(kkt.values()) <= max(tol, 1e-9) * 10 else "MaxIter"
        return QpSolution(x, status, kkt, 1, time.perf_counter() - t0, p.objective(x), y)

    # starting point
    if m_eq > 0:
        x = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        x = np.zeros(n)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m_in)
    y = np.zeros(m_eq)

    best = None
    status = "MaxIter"
    it = 0
    for it in range(1, max_iter + 1):
        rd = H @ x + f + A.T @ y + G.T @ z
        rp = A @ x - b
        rs = G @ x + s - h
        mu = float(s @ z) / m_in

        kkt = _kkt_residuals(p, x, y, G, h, z, scale_h)
        worst = max(kkt.values())
        if best is None or worst < best[0]:
            best = (worst, x.copy(), y.copy(), z.copy(), kkt, it)
        if worst <= tol:
            status = "Optimal"
            break
        if not np.all(np.isfinite(x)) or np.max(np.abs(z), initial=0.0) > 1e14:
            status = "Infeasible"
            break

        d = z / s
        K = np.zeros((n + m_eq, n + m_eq))
        K[:n, :n] = H + G.T @ (d[:, None] * G) + 1e-12 * np.eye(n)
        if m_eq:
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = -1e-13 * np.eye(m_eq)
        try:
            lu = scipy_lu_factor(K)

            def ksolve(rhs):
                sol = scipy_lu_solve(lu, rhs)
                # one step of iterative refinement recovers the accuracy
                # lost to the diagonal regularization and ill scaling
                sol += scipy_lu_solve(lu, rhs - K @ sol)
                return sol
        except Exception:  # singular factorization

            def ksolve(rhs):
                return np.linalg.lstsq(K, rhs, rcond=None)[0]

        def newton(rc):
            rhs = np.concatenate([
                -rd + G.T @ (rc / s) - G.T @ (d * rs),
                -rp,
            ])
            sol = ksolve(rhs)
            dx = sol[:n]
            dy = sol[n:]
            ds = -rs - G @ dx
            dz = -(rc + z * ds) / s
            return dx, dy, ds, dz

        # affine (predictor) direction
        dx_a, dy_a, ds_a, dz_a = newton(s * z)
        alpha_a = _step_len(s, ds_a, z, dz_a)
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m_in
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        rc = s * z + ds_a * dz_a - sigma * mu
        dx, dy, ds, dz = newton(rc)
        alpha = 0.99 * _step_len(s, ds, z, dz)
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    if status != "Optimal" and best is not None:
        _, x, y, z, kkt, _ = best
        kkt = _kkt_residuals(p, x, y, G, h, z, scale_h)
        if status == "MaxIter" and max(kkt["primal"], 0.0) > 1e-4 and kkt["complementarity"] < 1e-8:
            status = "Infeasible"
    else:
        kkt = _kkt_residuals(p, x, y, G, h, z, scale_h)

    return QpSolution(
        x, status, kkt, it, time.perf_counter() - t0, p.objective(x), y, z
    )


def _step_len(s, ds, z, dz) -> float:
    alpha = 1.0
    neg = ds < 0
    if neg.any():
        alpha = min(alpha, float(np.min(-s[neg] / ds[neg])))
    neg = dz < 0
    if neg.any():
        alpha = min(alpha, float(np.min(-z[neg] / dz[neg])))
    return alpha


def _kkt_residuals(p, x, y, G, h, z, scale_h) -> dict:
    rd = p.H @ x + p.f
    if p.Aeq is not None:
        rd = rd + p.Aeq.T @ y
    if G.shape[0]:
        rd = rd + G.T @ z
    primal = 0.0
    if p.Aeq is not None:
        scale_eq = 1.0 + float(np.max(np.abs(p.beq), initial=0.0))
        primal = float(np.max(np.abs(p.Aeq @ x - p.beq), initial=0.0)) / scale_eq
    if G.shape[0]:
        scale_in = 1.0 + float(np.max(np.abs(h), initial=0.0))
        primal = max(primal, float(np.max(G @ x - h, initial=0.0)) / scale_in)
    # worst per-row slack*multiplier product, relative to the objective
    # magnitude: an averaged measure can hide one unconverged coordinate
    comp = float(np.max(np.abs((h - G @ x) * z), initial=0.0)) if G.shape[0] else 0.0
    scale_obj = 1.0 + abs(p.objective(x))
    return {
        "stationarity": float(np.max(np.abs(rd), initial=0.0)) / scale_h,
        "primal": primal,
        "complementarity": comp / scale_obj,
    }


def solve_box_projected_gradient(
    H: np.ndarray,
    f: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    max_iter: int = 500000,
    tol: float = 1e-13,
) -> np.ndarray:
    """Reference oracle: projected gradient with Nesterov acceleration.

    Deliberately independent of the interior-point path; box constraints only.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float).ravel()
    lb = np.asarray(lb, dtype=float).ravel()
    ub = np.asarray(ub, dtype=float).ravel()
    L = float(np.linalg.eigvalsh(H)[-1])
    step = 1.0 / max(L, 1e-12)
    x = np.clip(np.zeros_like(f), lb, ub)
    v = x.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = H @ v + f
        x_new = np.clip(v - step * grad, lb, ub)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = x_new + ((t - 1.0) / t_new) * (x_new - x)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x, t = x_new, t_new
    return x


def _difference_operator(n_p: int, n_u: int) -> np.ndarray:
    """Maps a stacked future input to its step-to-step differences."""
    D = np.eye(n_p * n_u)
    for j in range(1, n_p):
        D[j * n_u : (j + 1) * n_u, (j - 1) * n_u : j * n_u] = -np.eye(n_u)
    return D


def assemble_deeepc(
    blocks: HankelBlocks,
    model: EconCostModel,
    ini: dict,
    weights: dict,
    bounds: dict,
    no_slack: bool = False,
) -> QpProblem:
    """Build the regularized economic QP over decision vector [g; sigma_z].

    ini: u_ini (T_ini, n_u), v_ini (T_ini, n_v), z_ini (T_ini, n_z).
    weights: lam, R (scalar input-rate weight), beta_z, beta_g.
    bounds: u_lb/u_ub (n_u), optional yc_lb/yc_ub (n_c) enforced on G z.
    Slack enters only the z-past equality rows; no_slack drops it entirely.
    """
    n_u, n_v, n_z = blocks.dims
    t_ini, n_p = blocks.t_ini, blocks.n_p
    n_g = blocks.n_g

    for key, cols in (("u_ini", n_u), ("v_ini", n_v), ("z_ini", n_z)):
        if key not in ini:
            raise MissingIni(key)
        arr = np.atleast_2d(np.asarray(ini[key], dtype=float))
        if arr.shape != (t_ini, cols):
            raise DimensionMismatch(f"{key} must be ({t_ini}, {cols}), got {arr.shape}")
    u_ini = np.atleast_2d(np.asarray(ini["u_ini"], dtype=float))
    v_ini = np.atleast_2d(np.asarray(ini["v_ini"], dtype=float))
    z_ini = np.atleast_2d(np.asarray(ini["z_ini"], dtype=float))
    if model.n_z != n_z or model.n_v != n_v:
        raise DimensionMismatch("cost model dims do not match Hankel blocks")

    lam = float(weights.get("lam", 1.0))
    r_w = float(weights.get("R", 0.0))
    beta_z = float(weights.get("beta_z", 0.0))
    beta_g = float(weights.get("beta_g", 0.0))

    n_sig = 0 if no_slack else t_ini * n_z
    n = n_g + n_sig

    qf = quad_form_matrices(model, n_p, lam)
    H = np.zeros((n, n))
    f = np.zeros(n)
    const = qf["constant"]

    Zf, Vf, Uf = blocks.Zf, blocks.Vf, blocks.Uf
    H[:n_g, :n_g] += 2.0 * Zf.T @ (qf["quad_z"][:, None] * Zf)
    H[:n_g, :n_g] += 2.0 * Vf.T @ (qf["quad_v"][:, None] * Vf)
    f[:n_g] += Zf.T @ qf["lin_z"] + Vf.T @ qf["lin_v"]

    if r_w > 0.0:
        D = _difference_operator(n_p, n_u)
        E = D @ Uf
        d0 = np.zeros(n_p * n_u)
        d0[:n_u] = u_ini[-1]
        H[:n_g, :n_g] += 2.0 * r_w * E.T @ E
        f[:n_g] += -2.0 * r_w * E.T @ d0
        const += r_w * float(d0 @ d0)

    H[:n_g, :n_g] += 2.0 * beta_g * np.eye(n_g)
    if n_sig:
        H[n_g:, n_g:] += 2.0 * beta_z * np.eye(n_sig)

    # equality system: Up g = u_ini, Vp g = v_ini, Zp g = z_ini + sigma
    m_eq = (n_u + n_v + n_z) * t_ini
    Aeq = np.zeros((m_eq, n))
    r0, r1 = 0, n_u * t_ini
    Aeq[r0:r1, :n_g] = blocks.Up
    r0, r1 = r1, r1 + n_v * t_ini
    Aeq[r0:r1, :n_g] = blocks.Vp
    r0, r1 = r1, r1 + n_z * t_ini
    Aeq[r0:r1, :n_g] = blocks.Zp
    if n_sig:
        Aeq[r0:r1, n_g:] = -np.eye(n_sig)
    beq = np.concatenate([u_ini.ravel(), v_ini.ravel(), z_ini.ravel()])

    # inequalities: input box per step, output polytope on G z per step
    ain_rows, lb_rows, ub_rows = [], [], []
    u_lb = bounds.get("u_lb")
    u_ub = bounds.get("u_ub")
    if u_lb is not None or u_ub is not None:
        block = np.zeros((n_p * n_u, n))
        block[:, :n_g] = Uf
        ain_rows.append(block)
        lb_rows.append(np.tile(_as_bound(u_lb, n_u, -np.inf), n_p))
        ub_rows.append(np.tile(_as_bound(u_ub, n_u, np.inf), n_p))
    yc_lb = bounds.get("yc_lb")
    yc_ub = bounds.get("yc_ub")
    if yc_lb is not None or yc_ub is not None:
        n_c = model.n_c
        block = np.zeros((n_p * n_c, n))
        for j in range(n_p):
            block[j * n_c : (j + 1) * n_c, :n_g] = model.G @ Zf[j * n_z : (j + 1) * n_z]
        ain_rows.append(block)
        lb_rows.append(np.tile(_as_bound(yc_lb, n_c, -np.inf), n_p))
        ub_rows.append(np.tile(_as_bound(yc_ub, n_c, np.inf), n_p))

    Ain = np.vstack(ain_rows) if ain_rows else None
    lb_in = np.concatenate(lb_rows) if ain_rows else None
    ub_in = np.concatenate(ub_rows) if ain_rows else None

    return QpProblem(H=H, f=f, Aeq=Aeq, beq=beq, Ain=Ain, lb_in=lb_in,
                     ub_in=ub_in, constant=const)


def extract_input(blocks: HankelBlocks, g_star: np.ndarray) -> np.ndarray:
    """Recover the N_p-step input plan from the optimal combination vector."""
    g = np.asarray(g_star, dtype=float).ravel()[: blocks.n_g]
    if g.size != blocks.n_g:
        raise DimensionMismatch(f"g has {g.size} entries, expected {blocks.n_g}")
    n_u = blocks.dims[0]
    return (blocks.Uf @ g).reshape(blocks.n_p, n_u)
