"""Desk-scale nonlinear benchmark plants with economic costs.

Each plant exposes additive economics c = cost_y(y) + cost_u(u), an output
map y = Cx whose nonzero columns are linearly independent, bounded Gaussian
state disturbances, and open-loop data generation with piecewise-constant
random excitation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from deeepc.errors import DimensionMismatch, StateDiverged
from deeepc.hankel import is_persistently_exciting
from deeepc.trajectory import Dataset, Trajectory

RK4_SUBSTEPS = 10
DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True)
class PlantSpec:
    name: str
    n_x: int
    n_u: int
    u_lb: np.ndarray
    u_ub: np.ndarray
    C: np.ndarray
    cost_y: Callable[[np.ndarray], float]
    cost_u: Callable[[np.ndarray], float]
    dt: float
    x0: np.ndarray
    ode: Callable | None = None         # continuous f(x, u) -> dx/dt
    discrete_map: Callable | None = None  # exact discrete f(x, u) -> x+
    dist_std: np.ndarray | None = None  # per-state Gaussian std
    dist_bound_frac: float = 0.1        # clip at +-frac*|x0|
    yc_index: tuple[int, ...] = ()
    yc_lb: np.ndarray | None = None
    yc_ub: np.ndarray | None = None
    pid: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.ode is None) == (self.discrete_map is None):
            raise DimensionMismatch("exactly one of ode/discrete_map must be set")
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape[1] != self.n_x:
            raise DimensionMismatch("C column count must equal n_x")
        validate_output_map(C)
        object.__setattr__(self, "C", C)
        for name in ("u_lb", "u_ub", "x0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if self.u_lb.size != self.n_u or self.u_ub.size != self.n_u:
            raise DimensionMismatch("input bounds must have n_u entries")
        if self.dist_std is not None:
            object.__setattr__(self, "dist_std", np.asarray(self.dist_std, dtype=float).ravel())

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def economic_cost(self, y: np.ndarray, u: np.ndarray) -> float:
        return float(self.cost_y(np.asarray(y, dtype=float))) + float(
            self.cost_u(np.asarray(u, dtype=float))
        )


def validate_output_map(C: np.ndarray) -> None:
    """Nonzero columns of C must be linearly independent and <= n_y of them."""
    nonzero = ~np.all(C == 0.0, axis=0)
    n_r = int(nonzero.sum())
    if n_r > C.shape[0]:
        raise DimensionMismatch(f"{n_r} nonzero columns exceed {C.shape[0]} outputs")
    if n_r and np.linalg.matrix_rank(C[:, nonzero]) < n_r:
        raise DimensionMismatch("nonzero columns of C are linearly dependent")


class PlantHandle:
    """Single-owner mutable simulator state."""

    def __init__(self, spec: PlantSpec, seed: int = 0):
        self.spec = spec
        self.x = spec.x0.copy()
        self.rng = np.random.default_rng(seed)
        self.k = 0

    def reset(self, seed: int | None = None) -> None:
        self.x = self.spec.x0.copy()
        self.k = 0
        if seed is not None:
            self.rng = np.random.default_rng(seed)

    def output(self) -> np.ndarray:
        return self.spec.C @ self.x

    def step(self, u: np.ndarray) -> tuple[np.ndarray, float]:
        """Advance one sampling interval; returns (y, true economic cost).

        Inputs outside the declared box are clipped (actuator saturation).
        """
        spec = self.spec
        u = np.asarray(u, dtype=float).ravel()
        if u.size != spec.n_u:
            raise DimensionMismatch(f"input has {u.size} entries, expected {spec.n_u}")
        u = np.clip(u, spec.u_lb, spec.u_ub)

        if spec.discrete_map is not None:
            x_next = np.asarray(spec.discrete_map(self.x, u), dtype=float)
        else:
            x_next = _rk4(spec.ode, self.x, u, spec.dt, RK4_SUBSTEPS)

        if spec.dist_std is not None and np.any(spec.dist_std > 0):
            w = self.rng.normal(0.0, spec.dist_std)
            cap = spec.dist_bound_frac * np.abs(spec.x0)
            w = np.clip(w, -cap, cap)
            x_next = x_next + w

        if np.any(np.abs(x_next) > DIVERGENCE_LIMIT) or not np.all(np.isfinite(x_next)):
            raise StateDiverged(f"{spec.name} state diverged at step {self.k}")
        self.x = x_next
        self.k += 1
        y = self.output()
        return y, spec.economic_cost(y, u)


def _rk4(f, x, u, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = np.asarray(f(x, u), dtype=float)
        k2 = np.asarray(f(x + 0.5 * h * k1, u), dtype=float)
        k3 = np.asarray(f(x + 0.5 * h * k2, u), dtype=float)
        k4 = np.asarray(f(x + h * k3, u), dtype=float)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@dataclass(frozen=True)
class ExcitationSchedule:
    hold_steps: int
    input_noise_std: np.ndarray | float = 0.0
    amplitude_lb: np.ndarray | None = None  # defaults to the plant input box
    amplitude_ub: np.ndarray | None = None


def generate_openloop(
    handle: PlantHandle,
    schedule: ExcitationSchedule,
    total_steps: int,
    seed: int,
    hankel_rows: int | None = None,
) -> tuple[Dataset, dict]:
    """Piecewise-constant random inputs with hold periods and input noise.

    Returns the recorded (u, y, c) Dataset and a PE report at order
    T_ini + N_p + n_x (using the conventional 2 + 2 horizon split).
    """
    spec = handle.spec
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    rng = np.random.default_rng(seed)
    lb = spec.u_lb if schedule.amplitude_lb is None else np.asarray(schedule.amplitude_lb, dtype=float)
    ub = spec.u_ub if schedule.amplitude_ub is None else np.asarray(schedule.amplitude_ub, dtype=float)
    noise = np.broadcast_to(np.asarray(schedule.input_noise_std, dtype=float), (spec.n_u,))

    us = np.empty((total_steps, spec.n_u))
    ys = np.empty((total_steps, spec.n_y))
    cs = np.empty((total_steps, 1))
    level = rng.uniform(lb, ub)
    for k in range(total_steps):
        if k % max(schedule.hold_steps, 1) == 0 and k > 0:
            level = rng.uniform(lb, ub)
        u = level + rng.normal(0.0, noise) if np.any(noise > 0) else level.copy()
        u = np.clip(u, spec.u_lb, spec.u_ub)
        y, c = handle.step(u)
        us[k] = u
        ys[k] = y
        cs[k, 0] = c

    d = Dataset(
        u=Trajectory(us, spec.dt, tuple(f"u{i+1}" for i in range(spec.n_u))),
        y=Trajectory(ys, spec.dt, tuple(f"y{i+1}" for i in range(spec.n_y))),
        c=Trajectory(cs, spec.dt, ("c",)),
        hankel_rows=hankel_rows if hankel_rows is not None else total_steps,
    )
    pe_order = 2 + 2 + spec.n_x
    exciting, rank = is_persistently_exciting(us, min(pe_order, total_steps))
    report = {"pe_order": pe_order, "exciting": bool(exciting), "rank": int(rank)}
    return d, report


# --- builtin benchmarks -----------------------------------------------------

def _econ_cstr_spec() -> PlantSpec:
    # nonisothermal CSTR, standard textbook constants
    q, V = 100.0, 100.0           # L/min, L
    Cf, Tf = 1.0, 350.0           # mol/L, K
    k0, EoverR = 9.7e10, 7800.0   # 1/min, K
    dH, rhoCp = -1.0e4, 239.0     # J/mol, J/(L K)
    UA = 2.0e5                    # J/(min K)
    # these constants give a unique, locally stable steady state for every
    # coolant temperature in the input box (no ignition multiplicity), with
    # steady cost strictly decreasing in Tc across the box

    def ode(x, u):
        C, T = x
        Tc = u[0]
        rate = k0 * np.exp(-EoverR / max(T, 1.0)) * max(C, 0.0)
        dC = q / V * (Cf - C) - rate
        dT = q / V * (Tf - T) + (-dH) / rhoCp * rate + UA / (V * rhoCp) * (Tc - T)
        return np.array([dC, dT])

    def cost_y(y):
        # unconverted reactant leaving the reactor is lost product value
        return 20.0 * y[0]

    def cost_u(u):
        # cooling duty priced quadratically around the cheap operating point
        return 2e-3 * (u[0] - 300.0) ** 2

    return PlantSpec(
        name="econ-cstr",
        n_x=2,
        n_u=1,
        u_lb=np.array([280.0]),
        u_ub=np.array([310.0]),
        C=np.eye(2),
        cost_y=cost_y,
        cost_u=cost_u,
        dt=0.1,
        x0=np.array([0.9, 325.0]),
        ode=ode,
        dist_std=np.array([1e-3, 5e-2]),
        dist_bound_frac=0.1,
        yc_index=(1,),
        yc_lb=np.array([285.0]),
        yc_ub=np.array([350.0]),
        pid={"output_index": 1, "setpoint": 305.0, "kp": 2.0, "ki": 1.0, "u_base": 300.0},
    )


def _two_tank_spec() -> PlantSpec:
    A1, A2 = 2.0, 3.0
    a1, a2 = 0.5, 0.4

    def outflow(h, a):
        # piecewise-smooth: sqrt law above a small level, linear below
        h = max(h, 0.0)
        return a * np.sqrt(h) if h > 0.01 else a * h / np.sqrt(0.01)

    def ode(x, u):
        h1, h2 = x
        f1 = outflow(h1, a1)
        f2 = outflow(h2, a2)
        return np.array([(u[0] - f1) / A1, (f1 - f2) / A2])

    def cost_y(y):
        return 1.0 * (y[1] - 1.2) ** 2

    def cost_u(u):
        return 0.05 * u[0] ** 2

    return PlantSpec(
        name="two-tank",
        n_x=2,
        n_u=1,
        u_lb=np.array([0.0]),
        u_ub=np.array([2.0]),
        C=np.eye(2),
        cost_y=cost_y,
        cost_u=cost_u,
        dt=1.0,
        x0=np.array([1.0, 1.0]),
        ode=ode,
        dist_std=np.array([2e-3, 2e-3]),
        dist_bound_frac=0.1,
        yc_index=(1,),
        yc_lb=np.array([0.2]),
        yc_ub=np.array([3.0]),
        pid={"output_index": 1, "setpoint": 1.0, "kp": 1.0, "ki": 0.3, "u_base": 0.5},
    )


def _lti3_spec() -> PlantSpec:
    A = np.array([[0.8, 0.2, 0.0], [0.0, 0.7, 0.1], [0.1, 0.0, 0.6]])
    B = np.array([[0.5], [0.0], [0.3]])
    C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    def discrete_map(x, u):
        return A @ x + B @ u

    def cost_y(y):
        return float(y @ y)

    def cost_u(u):
        return 0.1 * float(u @ u)

    return PlantSpec(
        name="lti-3",
        n_x=3,
        n_u=1,
        u_lb=np.array([-5.0]),
        u_ub=np.array([5.0]),
        C=C,
        cost_y=cost_y,
        cost_u=cost_u,
        dt=1.0,
        x0=np.zeros(3),
        discrete_map=discrete_map,
        dist_std=None,
        yc_index=(0,),
        yc_lb=np.array([-10.0]),
        yc_ub=np.array([10.0]),
        pid={"output_index": 0, "setpoint": 0.0, "kp": 0.5, "ki": 0.1, "u_base": 0.0},
    )


def builtin_benchmarks() -> dict[str, PlantSpec]:
    specs = [_econ_cstr_spec(), _two_tank_spec(), _lti3_spec()]
    return {s.name: s for s in specs}


def get_plant(name: str) -> PlantSpec:
    plants = builtin_benchmarks()
    if name not in plants:
        raise KeyError(f"unknown plant {name!r}; available: {sorted(plants)}")
    return plants[name]
