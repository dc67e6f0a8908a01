import numpy as np
import pytest

from deeepc import mlp, trainer
from deeepc.trajectory import Dataset, Trajectory


def make_dataset(n=400, seed=0, n_y=2, n_u=1, hankel_rows=200):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, (n, n_u))
    # mildly nonlinear recursion keeps the signals correlated but bounded
    y = np.zeros((n, n_y))
    state = np.zeros(n_y)
    for k in range(n):
        state = 0.7 * state + 0.3 * np.tanh(state) + 0.5 * np.resize(u[k], n_y)
        y[k] = state
    c = 1.0 + (y**2).sum(axis=1) + 0.1 * (u**2).sum(axis=1)
    return Dataset(
        u=Trajectory(u, 1.0),
        y=Trajectory(y, 1.0),
        c=Trajectory(c[:, None], 1.0),
        hankel_rows=hankel_rows,
    )


def small_config(**kw):
    base = dict(
        n_z=3, n_v=2, hidden=(8,), epochs=3, batch_size=64,
        lr_nets=1e-3, lr_cost=1e-3, seed=0, yc_index=(0,), max_windows=32,
    )
    base.update(kw)
    return trainer.TrainConfig(**base)


class TestConfig:
    def test_rejects_bad_alphas(self):
        with pytest.raises(ValueError):
            small_config(alphas=(1.0, -1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            small_config(alphas=(1.0, 1.0, 1.0))

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            small_config(lr_nets=0.0)


class TestCompositeGradients:
    def test_matches_finite_differences(self):
        # central FD over every parameter of both nets and the cost model
        d = make_dataset(n=120, hankel_rows=60)
        cfg = small_config(hidden=(8,), max_windows=8, batch_size=32)
        data = trainer._TrainData(d, cfg)
        rng = np.random.default_rng(1)
        f_net = mlp.init_network(2, cfg.hidden, cfg.n_z, seed=1)
        n_net = mlp.init_network(1, cfg.hidden, cfg.n_v, seed=2)
        Z0 = mlp.forward(f_net, data.Yn)
        V0 = mlp.forward(n_net, data.Un)
        from deeepc.cost_model import initial_cost_model

        model = initial_cost_model(Z0, V0, data.c, data.yc)
        alphas = (1.0, 0.5, 2.0, 0.25)

        def total():
            return trainer.composite_loss_and_grads(model, f_net, n_net, data, alphas)["loss"]

        out = trainer.composite_loss_and_grads(model, f_net, n_net, data, alphas)
        eps = 1e-6
        checked, bad = 0, 0
        for params, grads, holder in (
            (f_net.params(), out["grads_f"], f_net),
            (n_net.params(), out["grads_n"], n_net),
            (model.params(), out["grads_cost"], model),
        ):
            for p, g in zip(params, grads):
                flat = p.ravel()
                sel = rng.choice(flat.size, size=min(6, flat.size), replace=False)
                for j in sel:
                    orig = flat[j]
                    flat[j] = orig + eps
                    holder.set_params(params)
                    lp = total()
                    flat[j] = orig - eps
                    holder.set_params(params)
                    lm = total()
                    flat[j] = orig
                    holder.set_params(params)
                    fd = (lp - lm) / (2 * eps)
                    checked += 1
                    if abs(fd - g.ravel()[j]) > 1e-5 * max(1.0, abs(fd)):
                        bad += 1
        assert checked >= 30 and bad == 0


class TestAutoAlphas:
    def test_inverse_loss_weighting(self):
        a = trainer._auto_alphas((2.0, 0.5, 4.0, 1.0))
        assert np.allclose(a, (0.5, 2.0, 0.25, 1.0))

    def test_tiny_losses_capped(self):
        a = trainer._auto_alphas((0.0, 1.0, 1.0, 1.0))
        assert np.isfinite(a[0])


class TestTrain:
    def test_loss_decreases(self):
        d = make_dataset()
        tm = trainer.train(d, small_config(epochs=15))
        r = tm.report
        assert len(r.loss_total) == 15
        assert r.loss_total[-1] < r.loss_total[0]
        assert all(np.isfinite(v) for v in r.holdout_mse)

    def test_deterministic_under_seed(self):
        d = make_dataset()
        a = trainer.train(d, small_config())
        b = trainer.train(d, small_config())
        for pa, pb in zip(a.f_net.params(), b.f_net.params()):
            assert np.array_equal(pa, pb)
        assert a.report.loss_total == b.report.loss_total

    def test_zero_alphas_freeze_parameters(self):
        d = make_dataset(n=200, hankel_rows=100)
        cfg = small_config(alphas=(0.0, 0.0, 0.0, 0.0), epochs=2)
        tm = trainer.train(d, cfg)
        fresh = mlp.init_network(2, cfg.hidden, cfg.n_z, seed=cfg.seed)
        for pa, pb in zip(tm.f_net.params(), fresh.params()):
            assert np.array_equal(pa, pb)

    def test_pe_warning_on_constant_input(self):
        n = 200
        u = np.ones((n, 1))
        rng = np.random.default_rng(0)
        y = rng.standard_normal((n, 2))
        c = np.ones((n, 1))
        d = Dataset(
            u=Trajectory(u, 1.0), y=Trajectory(y, 1.0), c=Trajectory(c, 1.0),
            hankel_rows=100,
        )
        tm = trainer.train(d, small_config(epochs=1))
        assert any("persistently" in w for w in tm.report.warnings)


class TestBundle:
    def test_round_trip(self, tmp_path):
        d = make_dataset(n=200, hankel_rows=100)
        tm = trainer.train(d, small_config(epochs=2))
        trainer.save_bundle(str(tmp_path / "b"), tm)
        loaded = trainer.load_bundle(str(tmp_path / "b"))
        for pa, pb in zip(tm.f_net.params(), loaded["f_net"].params()):
            assert np.array_equal(pa, pb)
        for pa, pb in zip(tm.cost.params(), loaded["cost"].params()):
            assert np.array_equal(np.asarray(pa), np.asarray(pb))
        assert np.array_equal(tm.norm_y.shift, loaded["norm_y"].shift)
        assert loaded["meta"]["config"]["n_z"] == 3
