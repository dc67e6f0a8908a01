import numpy as np
import pytest

from deeepc import qp
from deeepc.cost_model import EconCostModel
from deeepc.errors import DimensionMismatch, Infeasible, MissingIni, NotPSD
from deeepc.hankel import partition


def random_box_qp(rng, n):
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    f = rng.standard_normal(n)
    lb = rng.uniform(-2, -0.5, n)
    ub = rng.uniform(0.5, 2, n)
    return H, f, lb, ub


class TestQpProblem:
    def test_rejects_asymmetric(self):
        with pytest.raises(DimensionMismatch):
            qp.QpProblem(H=np.array([[1.0, 2.0], [0.0, 1.0]]), f=np.zeros(2))

    def test_rejects_mismatched_eq(self):
        with pytest.raises(DimensionMismatch):
            qp.QpProblem(H=np.eye(2), f=np.zeros(2), Aeq=np.ones((1, 2)))

    def test_rejects_crossed_bounds(self):
        with pytest.raises(Infeasible):
            qp.QpProblem(
                H=np.eye(1), f=np.zeros(1),
                var_lb=np.array([1.0]), var_ub=np.array([-1.0]),
            )

    def test_objective(self):
        p = qp.QpProblem(H=2.0 * np.eye(2), f=np.array([1.0, -1.0]), constant=3.0)
        assert np.isclose(p.objective(np.array([1.0, 1.0])), 1 + 1 + 1 - 1 + 3)


class TestSolve:
    def test_unconstrained_matches_linear_solve(self):
        rng = np.random.default_rng(0)
        H, f, _, _ = random_box_qp(rng, 6)
        sol = qp.solve(qp.QpProblem(H=H, f=f))
        assert sol.status == "Optimal"
        assert np.allclose(sol.x, np.linalg.solve(H, -f), atol=1e-6)

    def test_equality_constrained_kkt(self):
        rng = np.random.default_rng(1)
        H, f, _, _ = random_box_qp(rng, 8)
        Aeq = rng.standard_normal((3, 8))
        beq = rng.standard_normal(3)
        sol = qp.solve(qp.QpProblem(H=H, f=f, Aeq=Aeq, beq=beq))
        assert sol.status == "Optimal"
        assert np.max(np.abs(Aeq @ sol.x - beq)) < 1e-6
        # stationarity with the returned multipliers
        assert np.max(np.abs(H @ sol.x + f + Aeq.T @ sol.y_eq)) < 1e-5

    def test_active_box(self):
        # minimizer of (x-5)^2 over x<=1 sits at the bound
        sol = qp.solve(
            qp.QpProblem(H=2.0 * np.eye(1), f=np.array([-10.0]),
                         var_ub=np.array([1.0]))
        )
        assert sol.status == "Optimal" and abs(sol.x[0] - 1.0) < 1e-7

    def test_two_sided_row_constraint(self):
        # min x1^2 + x2^2 s.t. 2 <= x1 + x2 <= 3 -> x = (1, 1)
        sol = qp.solve(
            qp.QpProblem(H=2.0 * np.eye(2), f=np.zeros(2),
                         Ain=np.array([[1.0, 1.0]]),
                         lb_in=np.array([2.0]), ub_in=np.array([3.0]))
        )
        assert np.allclose(sol.x, [1.0, 1.0], atol=1e-6)

    def test_not_psd_rejected(self):
        with pytest.raises(NotPSD):
            qp.solve(qp.QpProblem(H=np.diag([1.0, -1.0]), f=np.zeros(2)))

    def test_kkt_residuals_reported(self):
        rng = np.random.default_rng(2)
        H, f, lb, ub = random_box_qp(rng, 10)
        sol = qp.solve(qp.QpProblem(H=H, f=f, var_lb=lb, var_ub=ub))
        assert sol.status == "Optimal"
        assert max(sol.kkt.values()) <= 1e-8

    def test_agrees_with_projected_gradient_oracle(self):
        rng = np.random.default_rng(3)
        for n in (4, 12, 25):
            H, f, lb, ub = random_box_qp(rng, n)
            sol = qp.solve(qp.QpProblem(H=H, f=f, var_lb=lb, var_ub=ub))
            x_ref = qp.solve_box_projected_gradient(H, f, lb, ub)
            obj = sol.objective
            obj_ref = 0.5 * x_ref @ H @ x_ref + f @ x_ref
            assert abs(obj - obj_ref) <= 1e-6 * max(1.0, abs(obj_ref))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        H, f, lb, ub = random_box_qp(rng, 7)
        a = qp.solve(qp.QpProblem(H=H, f=f, var_lb=lb, var_ub=ub))
        b = qp.solve(qp.QpProblem(H=H, f=f, var_lb=lb, var_ub=ub))
        assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def toy_blocks_and_model(rng, n_u=1, n_v=1, n_z=2, t_ini=2, n_p=2, T=40):
    u = rng.uniform(-1, 1, (T, n_u))
    v = rng.uniform(-1, 1, (T, n_v))
    z = rng.uniform(-1, 1, (T, n_z))
    blocks = partition(u, v, z, t_ini, n_p)
    model = EconCostModel(
        q_z=np.zeros(n_z), P_z=np.zeros(n_z), b_z=0.0,
        q_v=np.zeros(n_v), P_v=np.zeros(n_v), b_v=0.0,
        G=np.eye(1, n_z),
    )
    ini = {
        "u_ini": u[10:10 + t_ini],
        "v_ini": v[10:10 + t_ini],
        "z_ini": z[10:10 + t_ini],
    }
    return blocks, model, ini


class TestAssemble:
    WEIGHTS = {"lam": 1.0, "R": 0.1, "beta_z": 1e6, "beta_g": 1e-2}
    BOUNDS = {"u_lb": np.array([-5.0]), "u_ub": np.array([5.0])}

    def test_decision_vector_layout(self):
        rng = np.random.default_rng(0)
        blocks, model, ini = toy_blocks_and_model(rng)
        p = qp.assemble_deeepc(blocks, model, ini, self.WEIGHTS, self.BOUNDS)
        assert p.n == blocks.n_g + blocks.t_ini * 2  # g plus z-past slack
        p2 = qp.assemble_deeepc(blocks, model, ini, self.WEIGHTS, self.BOUNDS,
                                no_slack=True)
        assert p2.n == blocks.n_g

    def test_equality_rows_encode_past(self):
        rng = np.random.default_rng(1)
        blocks, model, ini = toy_blocks_and_model(rng)
        p = qp.assemble_deeepc(blocks, model, ini, self.WEIGHTS, self.BOUNDS)
        n_g = blocks.n_g
        assert np.array_equal(p.Aeq[:2, :n_g], blocks.Up)
        assert np.array_equal(p.beq[:2], ini["u_ini"].ravel())
        # slack appears only on the z-past rows, with -I coefficient
        assert np.array_equal(p.Aeq[-4:, n_g:], -np.eye(4))
        assert np.all(p.Aeq[:-4, n_g:] == 0.0)

    def test_missing_ini_rejected(self):
        rng = np.random.default_rng(2)
        blocks, model, ini = toy_blocks_and_model(rng)
        del ini["z_ini"]
        with pytest.raises(MissingIni):
            qp.assemble_deeepc(blocks, model, ini, self.WEIGHTS, self.BOUNDS)

    def test_solution_respects_past_and_box(self):
        rng = np.random.default_rng(3)
        blocks, model, ini = toy_blocks_and_model(rng)
        p = qp.assemble_deeepc(blocks, model, ini, self.WEIGHTS, self.BOUNDS)
        sol = qp.solve(p, tol=1e-8)
        assert sol.status == "Optimal"
        g = sol.x[: blocks.n_g]
        assert np.allclose(blocks.Up @ g, ini["u_ini"].ravel(), atol=1e-6)
        plan = qp.extract_input(blocks, sol.x)
        assert plan.shape == (2, 1)
        assert np.all(plan >= -5.0 - 1e-7) and np.all(plan <= 5.0 + 1e-7)

    def test_input_rate_weight_smooths_plan(self):
        rng = np.random.default_rng(4)
        blocks, model, ini = toy_blocks_and_model(rng, n_p=4, T=60)
        w_rough = dict(self.WEIGHTS, R=0.0)
        w_smooth = dict(self.WEIGHTS, R=100.0)
        p_r = qp.solve(qp.assemble_deeepc(blocks, model, ini, w_rough, self.BOUNDS))
        p_s = qp.solve(qp.assemble_deeepc(blocks, model, ini, w_smooth, self.BOUNDS))
        def roughness(x):
            plan = qp.extract_input(blocks, x).ravel()
            steps = np.concatenate([[plan[0] - ini["u_ini"][-1, 0]], np.diff(plan)])
            return float(steps @ steps)
        assert roughness(p_s.x) <= roughness(p_r.x) + 1e-9

    def test_objective_matches_surrogate_cost(self):
        # with lam=1 and all regularizers off, the QP objective at any
        # feasible point equals the surrogate cost of the predicted plan
        rng = np.random.default_rng(5)
        blocks, model, ini = toy_blocks_and_model(rng)
        model = EconCostModel(
            q_z=rng.standard_normal(2), P_z=rng.standard_normal(2), b_z=0.3,
            q_v=rng.standard_normal(1), P_v=rng.standard_normal(1), b_v=-0.1,
            G=np.eye(1, 2),
        )
        p = qp.assemble_deeepc(
            blocks, model, ini,
            {"lam": 1.0, "R": 0.0, "beta_z": 0.0, "beta_g": 0.0}, {},
            no_slack=True,
        )
        from deeepc.cost_model import eval_cost

        g = rng.standard_normal(blocks.n_g)
        z_plan = (blocks.Zf @ g).reshape(blocks.n_p, 2)
        v_plan = (blocks.Vf @ g).reshape(blocks.n_p, 1)
        direct = sum(
            eval_cost(model, z_plan[i], v_plan[i]).value for i in range(blocks.n_p)
        )
        assert np.isclose(p.objective(g), direct)
