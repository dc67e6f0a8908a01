"""Receding-horizon controllers: economic (lifted), tracking, and convex baselines.

All three variants share one loop: warm up the initialization buffers with a
plant-interaction policy, then at every step assemble a convex QP from the
Hankel blocks, apply the first planned input, and roll the buffers. Solver
failures fall back to holding the previous input; runs never abort on QP
issues.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from deeepc import qp
from deeepc.cost_model import EconCostModel, eval_cost
from deeepc.errors import DimensionMismatch, Infeasible, NotPSD, PlantFault
from deeepc.hankel import HankelBlocks, partition
from deeepc.mlp import IdentityLifting, apply_lifting
from deeepc.plants import PlantHandle
from deeepc.trajectory import Dataset, Normalizer

VIOLATION_TOL = 1e-9


@dataclass
class Lifter:
    """Applies the output/input lifting maps, with optional input normalization."""

    f_net: object  # LiftingNetwork or IdentityLifting
    n_net: object
    norm_y: Normalizer | None = None
    norm_u: Normalizer | None = None

    def lift_y(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.norm_y is not None:
            Y = self.norm_y.normalize(Y)
        return apply_lifting(self.f_net, Y)

    def lift_u(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.norm_u is not None:
            U = self.norm_u.normalize(U)
        return apply_lifting(self.n_net, U)

    @property
    def n_z(self) -> int:
        return self.f_net.out_dim

    @property
    def n_v(self) -> int:
        return self.n_net.out_dim


def identity_lifter(n_y: int, n_u: int) -> Lifter:
    return Lifter(IdentityLifting(n_y), IdentityLifting(n_u))


@dataclass
class ControllerState:
    """Rolling T_ini-length initialization buffers plus bookkeeping."""

    u_buf: np.ndarray  # (T_ini, n_u)
    y_buf: np.ndarray  # (T_ini, n_y)
    z_buf: np.ndarray  # (T_ini, n_z)
    v_buf: np.ndarray  # (T_ini, n_v)
    k: int = 0
    last_input: np.ndarray = field(default_factory=lambda: np.zeros(0))
    events: list[str] = field(default_factory=list)

    @property
    def t_ini(self) -> int:
        return self.u_buf.shape[0]

    def roll(self, u: np.ndarray, y: np.ndarray, z: np.ndarray, v: np.ndarray) -> None:
        for buf, new in ((self.u_buf, u), (self.y_buf, y), (self.z_buf, z), (self.v_buf, v)):
            buf[:-1] = buf[1:]
            buf[-1] = new
        self.k += 1
        self.last_input = np.asarray(u, dtype=float).copy()


@dataclass
class ClosedLoopRecord:
    k: int
    u: np.ndarray
    y: np.ndarray
    c_true: float
    c_hat: float
    qp_status: str
    solve_time: float
    violation_true: float
    violation_surrogate: float
    fallback: bool


def warmup(
    handle: PlantHandle,
    policy: dict,
    t_ini: int,
    lifter: Lifter,
) -> ControllerState:
    """Fill the initialization buffers with real plant interaction.

    policy kinds: "pid" (gains from the plant spec unless overridden),
    "fixed" (constant input, key "u0"), "random" (uniform in the input box,
    key "seed"). Runs max(t_ini, policy["steps"]) steps and keeps the last
    t_ini samples.
    """
    if t_ini < 1:
        raise ValueError("T_ini must be >= 1")
    spec = handle.spec
    kind = policy.get("kind", "pid")
    n_steps = max(t_ini, int(policy.get("steps", t_ini)))

    us, ys = [], []
    if kind == "pid":
        pid = {**spec.pid, **policy.get("gains", {})}
        if not pid:
            raise ValueError("plant has no PID configuration")
        idx = int(pid["output_index"])
        sp = float(pid["setpoint"])
        kp, ki = float(pid["kp"]), float(pid["ki"])
        u_base = float(pid["u_base"])
        integral = 0.0
        y_prev = handle.output()
        for _ in range(n_steps):
            e = sp - y_prev[idx]
            integral += e * spec.dt
            u = np.full(spec.n_u, u_base + kp * e + ki * integral)
            u = np.clip(u, spec.u_lb, spec.u_ub)
            y, _ = _safe_step(handle, u)
            us.append(u)
            ys.append(y)
            y_prev = y
    elif kind == "fixed":
        u0 = np.asarray(policy.get("u0", 0.5 * (spec.u_lb + spec.u_ub)), dtype=float).ravel()
        for _ in range(n_steps):
            u = np.clip(u0, spec.u_lb, spec.u_ub)
            y, _ = _safe_step(handle, u)
            us.append(u)
            ys.append(y)
    elif kind == "random":
        rng = np.random.default_rng(int(policy.get("seed", 0)))
        for _ in range(n_steps):
            u = rng.uniform(spec.u_lb, spec.u_ub)
            y, _ = _safe_step(handle, u)
            us.append(u)
            ys.append(y)
    else:
        raise ValueError(f"unknown warmup policy {kind!r}")

    u_buf = np.asarray(us[-t_ini:], dtype=float)
    y_buf = np.asarray(ys[-t_ini:], dtype=float)
    z_buf = lifter.lift_y(y_buf)
    v_buf = lifter.lift_u(u_buf)
    return ControllerState(u_buf, y_buf, z_buf, v_buf, k=0, last_input=u_buf[-1].copy())


def _safe_step(handle: PlantHandle, u: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return handle.step(u)
    except Exception as exc:  # noqa: BLE001 - re-tag simulator faults
        raise PlantFault(str(exc)) from exc


def _violation(y: np.ndarray, yc_index, lb, ub) -> float:
    if not len(yc_index):
        return 0.0
    yc = np.asarray(y, dtype=float)[list(yc_index)]
    v = 0.0
    if lb is not None:
        v = max(v, float(np.max(np.asarray(lb) - yc, initial=0.0)))
    if ub is not None:
        v = max(v, float(np.max(yc - np.asarray(ub), initial=0.0)))
    return v


def _solve_or_fallback(problem: qp.QpProblem, state: ControllerState):
    t0 = time.perf_counter()
    try:
        sol = qp.solve(problem, tol=1e-7)
        status = sol.status
    except (NotPSD, Infeasible, np.linalg.LinAlgError) as exc:
        state.events.append(f"step {state.k}: solver error {exc}")
        return None, f"Error({type(exc).__name__})", time.perf_counter() - t0
    if status != "Optimal":
        state.events.append(f"step {state.k}: QP status {status}, holding last input")
        return sol, status, sol.wall_time
    return sol, status, sol.wall_time


def step_deeepc(
    state: ControllerState,
    handle: PlantHandle,
    blocks: HankelBlocks,
    model: EconCostModel,
    lifter: Lifter,
    weights: dict,
    bounds: dict,
    no_slack: bool = False,
) -> ClosedLoopRecord:
    """One receding-horizon step of the lifted economic controller."""
    ini = {"u_ini": state.u_buf, "v_ini": state.v_buf, "z_ini": state.z_buf}
    problem = qp.assemble_deeepc(blocks, model, ini, weights, bounds, no_slack=no_slack)
    sol, status, wall = _solve_or_fallback(problem, state)

    fallback = status != "Optimal"
    if fallback:
        u = state.last_input.copy()
    else:
        u = qp.extract_input(blocks, sol.x)[0]
    u = np.clip(u, handle.spec.u_lb, handle.spec.u_ub)

    y, c_true = _safe_step(handle, u)
    z = lifter.lift_y(y)[0]
    v = lifter.lift_u(u)[0]
    c_hat = eval_cost(model, z, v).value

    viol_true = _violation(y, handle.spec.yc_index, bounds.get("yc_lb"), bounds.get("yc_ub"))
    yc_hat = model.G @ z
    viol_surr = 0.0
    if bounds.get("yc_lb") is not None:
        viol_surr = max(viol_surr, float(np.max(np.asarray(bounds["yc_lb"]) - yc_hat, initial=0.0)))
    if bounds.get("yc_ub") is not None:
        viol_surr = max(viol_surr, float(np.max(yc_hat - np.asarray(bounds["yc_ub"]), initial=0.0)))

    rec = ClosedLoopRecord(
        k=state.k, u=u.copy(), y=y.copy(), c_true=c_true, c_hat=c_hat,
        qp_status=status, solve_time=wall,
        violation_true=viol_true, violation_surrogate=viol_surr, fallback=fallback,
    )
    state.roll(u, y, z, v)
    return rec


def tracking_blocks(d: Dataset, t_ini: int, n_p: int) -> HankelBlocks:
    """Raw-signal Hankel partition for the tracking baseline (v := y, z := y)."""
    hank = d.hankel_split()
    return partition(hank.u, hank.y, hank.y, t_ini, n_p)


def assemble_tracking(
    blocks: HankelBlocks,
    ini: dict,
    refs: dict,
    weights: dict,
    bounds: dict,
    yc_index=(),
    no_slack: bool = False,
) -> qp.QpProblem:
    """Reference-tracking QP over [g; sigma_y] on raw input/output Hankels.

    refs: y_ref (n_y,), u_ref (n_u,). weights: T (output weight, scalar or
    per-output), R (input weight), beta_y, beta_g. Slack relaxes the y-past
    equality rows only.
    """
    n_u, n_y, _ = blocks.dims
    t_ini, n_p, n_g = blocks.t_ini, blocks.n_p, blocks.n_g

    u_ini = np.atleast_2d(np.asarray(ini["u_ini"], dtype=float))
    y_ini = np.atleast_2d(np.asarray(ini["y_ini"], dtype=float))
    if u_ini.shape != (t_ini, n_u) or y_ini.shape != (t_ini, n_y):
        raise DimensionMismatch("ini buffers do not match the Hankel partition")

    y_ref = np.asarray(refs["y_ref"], dtype=float).ravel()
    u_ref = np.asarray(refs.get("u_ref", np.zeros(n_u)), dtype=float).ravel()
    Tw = np.broadcast_to(np.asarray(weights.get("T", 1.0), dtype=float), (n_y,))
    Rw = np.broadcast_to(np.asarray(weights.get("R", 0.0), dtype=float), (n_u,))
    beta_y = float(weights.get("beta_y", 0.0))
    beta_g = float(weights.get("beta_g", 0.0))

    n_sig = 0 if no_slack else t_ini * n_y
    n = n_g + n_sig
    Uf, Yf = blocks.Uf, blocks.Vf

    Tw_stack = np.tile(Tw, n_p)
    Rw_stack = np.tile(Rw, n_p)
    yr_stack = np.tile(y_ref, n_p)
    ur_stack = np.tile(u_ref, n_p)

    H = np.zeros((n, n))
    f = np.zeros(n)
    H[:n_g, :n_g] += 2.0 * Yf.T @ (Tw_stack[:, None] * Yf)
    f[:n_g] += -2.0 * Yf.T @ (Tw_stack * yr_stack)
    H[:n_g, :n_g] += 2.0 * Uf.T @ (Rw_stack[:, None] * Uf)
    f[:n_g] += -2.0 * Uf.T @ (Rw_stack * ur_stack)
    H[:n_g, :n_g] += 2.0 * beta_g * np.eye(n_g)
    if n_sig:
        H[n_g:, n_g:] += 2.0 * beta_y * np.eye(n_sig)
    const = float(Tw_stack @ (yr_stack * yr_stack)) + float(Rw_stack @ (ur_stack * ur_stack))

    m_eq = (n_u + n_y) * t_ini
    Aeq = np.zeros((m_eq, n))
    Aeq[: n_u * t_ini, :n_g] = blocks.Up
    Aeq[n_u * t_ini :, :n_g] = blocks.Vp
    if n_sig:
        Aeq[n_u * t_ini :, n_g:] = -np.eye(n_sig)
    beq = np.concatenate([u_ini.ravel(), y_ini.ravel()])

    ain_rows, lb_rows, ub_rows = [], [], []
    if bounds.get("u_lb") is not None or bounds.get("u_ub") is not None:
        block = np.zeros((n_p * n_u, n))
        block[:, :n_g] = Uf
        ain_rows.append(block)
        lb_rows.append(np.tile(qp._as_bound(bounds.get("u_lb"), n_u, -np.inf), n_p))
        ub_rows.append(np.tile(qp._as_bound(bounds.get("u_ub"), n_u, np.inf), n_p))
    if len(yc_index) and (bounds.get("yc_lb") is not None or bounds.get("yc_ub") is not None):
        n_c = len(yc_index)
        sel = np.asarray(yc_index, dtype=int)
        block = np.zeros((n_p * n_c, n))
        for j in range(n_p):
            block[j * n_c : (j + 1) * n_c, :n_g] = Yf[j * n_y + sel]
        ain_rows.append(block)
        lb_rows.append(np.tile(qp._as_bound(bounds.get("yc_lb"), n_c, -np.inf), n_p))
        ub_rows.append(np.tile(qp._as_bound(bounds.get("yc_ub"), n_c, np.inf), n_p))

    return qp.QpProblem(
        H=H, f=f, Aeq=Aeq, beq=beq,
        Ain=np.vstack(ain_rows) if ain_rows else None,
        lb_in=np.concatenate(lb_rows) if ain_rows else None,
        ub_in=np.concatenate(ub_rows) if ain_rows else None,
        constant=const,
    )


def step_tracking_deepc(
    state: ControllerState,
    handle: PlantHandle,
    blocks: HankelBlocks,
    refs: dict,
    weights: dict,
    bounds: dict,
    no_slack: bool = False,
) -> ClosedLoopRecord:
    """One step of the reference-tracking baseline on raw signal Hankels."""
    ini = {"u_ini": state.u_buf, "y_ini": state.y_buf}
    problem = assemble_tracking(
        blocks, ini, refs, weights, bounds, yc_index=handle.spec.yc_index, no_slack=no_slack
    )
    sol, status, wall = _solve_or_fallback(problem, state)
    fallback = status != "Optimal"
    if fallback:
        u = state.last_input.copy()
    else:
        u = qp.extract_input(blocks, sol.x)[0]
    u = np.clip(u, handle.spec.u_lb, handle.spec.u_ub)

    y, c_true = _safe_step(handle, u)
    viol_true = _violation(y, handle.spec.yc_index, bounds.get("yc_lb"), bounds.get("yc_ub"))
    rec = ClosedLoopRecord(
        k=state.k, u=u.copy(), y=y.copy(), c_true=c_true, c_hat=float("nan"),
        qp_status=status, solve_time=wall,
        violation_true=viol_true, violation_surrogate=0.0, fallback=fallback,
    )
    state.roll(u, y, y.copy(), u.copy())
    return rec


def step_convex_deepc(
    state: ControllerState,
    handle: PlantHandle,
    blocks: HankelBlocks,
    model: EconCostModel,
    weights: dict,
    bounds: dict,
    no_slack: bool = False,
) -> ClosedLoopRecord:
    """Economic step with identity liftings: z := y and v := u on raw Hankels."""
    lifter = identity_lifter(handle.spec.n_y, handle.spec.n_u)
    return step_deeepc(state, handle, blocks, model, lifter, weights, bounds, no_slack)


def fit_raw_surrogate(d: Dataset, yc_index, q_floor: float = 1e-6) -> tuple[EconCostModel, float]:
    """Least-squares quadratic cost surrogate on raw (y, u) for the convex baseline.

    Quadratic coefficients are floored at q_floor to keep the model convex.
    Returns the model and the R^2 of the (unfloored) fit on the last 10% of
    rows held out.
    """
    Y, U = d.y.values, d.u.values
    c = d.c.values[:, 0]
    n = Y.shape[0]
    n_hold = max(1, n // 10)
    fit = slice(0, n - n_hold)
    hold = slice(n - n_hold, n)

    def features(Yb, Ub):
        return np.hstack([Yb * Yb, Yb, Ub * Ub, Ub, np.ones((Yb.shape[0], 1))])

    X = features(Y[fit], U[fit])
    theta, *_ = np.linalg.lstsq(X, c[fit], rcond=None)
    n_y, n_u = Y.shape[1], U.shape[1]
    qy = theta[:n_y]
    Py = theta[n_y : 2 * n_y]
    qu = theta[2 * n_y : 2 * n_y + n_u]
    Pu = theta[2 * n_y + n_u : 2 * n_y + 2 * n_u]
    b = float(theta[-1])

    c_hold = c[hold]
    pred = features(Y[hold], U[hold]) @ theta
    ss_res = float(np.sum((c_hold - pred) ** 2))
    ss_tot = float(np.sum((c_hold - c_hold.mean()) ** 2))
    r2 = 1.0 - ss_res / max(ss_tot, 1e-12)

    G = np.zeros((len(yc_index), n_y))
    for i, j in enumerate(yc_index):
        G[i, j] = 1.0
    model = EconCostModel(
        q_z=np.log(np.maximum(qy, q_floor)),
        P_z=Py, b_z=0.5 * b,
        q_v=np.log(np.maximum(qu, q_floor)),
        P_v=Pu, b_v=0.5 * b, G=G,
    )
    return model, r2


def build_lifted_blocks(
    d: Dataset,
    lifter: Lifter,
    t_ini: int,
    n_p: int,
    reduce: bool = True,
    reduce_tol: float = 1e-8,
) -> HankelBlocks:
    """Lift the Hankel-split signals and partition, optionally SVD-reduced."""
    from deeepc.hankel import reduce_svd

    hank = d.hankel_split()
    z = lifter.lift_y(hank.y.values)
    v = lifter.lift_u(hank.u.values)
    blocks = partition(hank.u.values, v, z, t_ini, n_p)
    return reduce_svd(blocks, tol=reduce_tol) if reduce else blocks


@dataclass
class ControllerSpec:
    """Everything needed to run one closed-loop experiment."""

    kind: str  # deeepc | tracking | convex
    blocks: HankelBlocks
    weights: dict
    bounds: dict
    t_ini: int
    model: EconCostModel | None = None
    lifter: Lifter | None = None
    refs: dict | None = None
    no_slack: bool = False
    warmup_policy: dict = field(default_factory=lambda: {"kind": "pid"})

    def __post_init__(self):
        if self.kind not in ("deeepc", "tracking", "convex"):
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind in ("deeepc", "convex") and self.model is None:
            raise ValueError(f"{self.kind} controller requires a cost model")
        if self.kind == "deeepc" and self.lifter is None:
            raise ValueError("deeepc controller requires a lifter")
        if self.kind == "tracking" and self.refs is None:
            raise ValueError("tracking controller requires references")


def run_closed_loop(
    handle: PlantHandle,
    spec: ControllerSpec,
    steps: int,
    seed: int | None = None,
) -> tuple[list[ClosedLoopRecord], dict]:
    """Run one receding-horizon experiment; deterministic under a fixed seed."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    handle.reset(seed=seed)
    if steps == 0:
        return [], _summary([])

    if spec.kind == "tracking":
        lifter = identity_lifter(handle.spec.n_y, handle.spec.n_u)
    elif spec.kind == "convex":
        lifter = identity_lifter(handle.spec.n_y, handle.spec.n_u)
    else:
        lifter = spec.lifter
    state = warmup(handle, spec.warmup_policy, spec.t_ini, lifter)

    records = []
    for _ in range(steps):
        if spec.kind == "deeepc":
            rec = step_deeepc(
                state, handle, spec.blocks, spec.model, lifter,
                spec.weights, spec.bounds, spec.no_slack,
            )
        elif spec.kind == "convex":
            rec = step_convex_deepc(
                state, handle, spec.blocks, spec.model,
                spec.weights, spec.bounds, spec.no_slack,
            )
        else:
            rec = step_tracking_deepc(
                state, handle, spec.blocks, spec.refs,
                spec.weights, spec.bounds, spec.no_slack,
            )
        records.append(rec)
    return records, _summary(records, state.events)


def _summary(records: list[ClosedLoopRecord], events: list[str] | None = None) -> dict:
    if not records:
        return {
            "steps": 0, "avg_cost": 0.0, "avg_cost_surrogate": 0.0,
            "violation_rate": 0.0, "satisfaction_rate": 0.0,
            "mean_solve_ms": 0.0, "max_solve_ms": 0.0, "p99_solve_ms": 0.0,
            "fallback_count": 0, "events": [],
        }
    costs = np.array([r.c_true for r in records])
    chats = np.array([r.c_hat for r in records])
    viols = np.array([r.violation_true for r in records])
    times = np.array([r.solve_time for r in records]) * 1e3
    sat = float(np.mean(viols <= VIOLATION_TOL))
    return {
        "steps": len(records),
        "avg_cost": float(costs.mean()),
        "avg_cost_surrogate": float(np.nanmean(chats)) if np.any(np.isfinite(chats)) else float("nan"),
        "violation_rate": 1.0 - sat,
        "satisfaction_rate": sat,
        "mean_solve_ms": float(times.mean()),
        "max_solve_ms": float(times.max()),
        "p99_solve_ms": float(np.percentile(times, 99)),
        "fallback_count": int(sum(r.fallback for r in records)),
        "events": list(events or []),
    }
