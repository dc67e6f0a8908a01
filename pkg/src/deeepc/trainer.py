"""Joint training of the lifting networks and the quadratic cost surrogate.

Minimizes alpha1*L_e + alpha2*L_re + alpha3*L_z + alpha4*L_v: economic-cost
fit, constrained-output reconstruction, and the two trajectory-consistency
terms built from the Hankel pseudo-inverse predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from deeepc import mlp
from deeepc.cost_model import EconCostModel, initial_cost_model
from deeepc.errors import CollapseDetected, NonFiniteLoss
from deeepc.hankel import build_hankel, is_persistently_exciting
from deeepc.trajectory import Dataset, Normalizer, fit_normalizer

PINV_RCOND = 1e-10
COLLAPSE_STD = 1e-6


@dataclass
class TrainConfig:
    n_z: int
    n_v: int
    t_ini: int = 2
    n_p: int = 2
    hidden: tuple[int, ...] = (128, 256)
    alphas: tuple[float, float, float, float] | None = None  # None -> auto-balance
    batch_size: int = 128
    epochs: int = 100
    lr_nets: float = 1e-4
    lr_cost: float = 1e-3
    seed: int = 42
    yc_index: tuple[int, ...] = (0,)
    max_windows: int = 256
    holdout_frac: float = 0.1

    def __post_init__(self):
        if self.alphas is not None and (len(self.alphas) != 4 or any(a < 0 for a in self.alphas)):
            raise ValueError("alphas must be four nonnegative weights")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr_nets <= 0 or self.lr_cost <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class TrainReport:
    loss_total: list[float] = field(default_factory=list)
    loss_e: list[float] = field(default_factory=list)
    loss_re: list[float] = field(default_factory=list)
    loss_z: list[float] = field(default_factory=list)
    loss_v: list[float] = field(default_factory=list)
    holdout_mse: list[float] = field(default_factory=list)
    alphas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    warnings: list[str] = field(default_factory=list)


@dataclass
class TrainedModel:
    f_net: mlp.LiftingNetwork
    n_net: mlp.LiftingNetwork
    cost: EconCostModel
    norm_y: Normalizer
    norm_u: Normalizer
    config: TrainConfig
    report: TrainReport


def _zeros_like_params(params):
    return [np.zeros_like(p) for p in params]


def _accumulate(dst, src, scale=1.0):
    for d, s in zip(dst, src):
        d += scale * s


def pointwise_losses(
    model: EconCostModel,
    f_net: mlp.LiftingNetwork,
    n_net: mlp.LiftingNetwork,
    Yn: np.ndarray,
    Un: np.ndarray,
    c: np.ndarray,
    yc: np.ndarray,
) -> dict:
    """L_e and L_re with gradients w.r.t. both nets and the cost parameters.

    Yn/Un are already normalized network inputs; c and yc are raw targets.
    """
    B = Yn.shape[0]
    Z, cacheF = mlp.forward_cached(f_net, Yn)
    V, cacheN = mlp.forward_cached(n_net, Un)
    qz, qv = model.Qz_diag(), model.Qv_diag()

    chat = (Z * Z) @ qz + Z @ model.P_z + model.b_z + (V * V) @ qv + V @ model.P_v + model.b_v
    r = chat - c
    loss_e = float(r @ r) / B
    dc = (2.0 / B) * r

    g_qz = qz * ((dc[:, None] * Z * Z).sum(axis=0))
    g_Pz = dc @ Z
    g_bz = float(dc.sum())
    g_qv = qv * ((dc[:, None] * V * V).sum(axis=0))
    g_Pv = dc @ V
    g_bv = float(dc.sum())
    dZ_e = dc[:, None] * (2.0 * qz * Z + model.P_z)
    dV_e = dc[:, None] * (2.0 * qv * V + model.P_v)

    yc_hat = Z @ model.G.T
    rre = yc_hat - yc
    loss_re = float((rre * rre).sum()) / B
    g_G = (2.0 / B) * rre.T @ Z
    dZ_re = (2.0 / B) * rre @ model.G

    return {
        "loss_e": loss_e,
        "loss_re": loss_re,
        "dZ_e": dZ_e,
        "dZ_re": dZ_re,
        "dV_e": dV_e,
        "cacheF": cacheF,
        "cacheN": cacheN,
        "cost_grads_e": [g_qz, g_Pz, np.array([g_bz]), g_qv, g_Pv, np.array([g_bv]),
                         np.zeros_like(model.G)],
        "G_grad_re": g_G,
        "chat": chat,
    }


def consistency_losses(
    f_net: mlp.LiftingNetwork,
    n_net: mlp.LiftingNetwork,
    Yd_n: np.ndarray,
    Ud_n: np.ndarray,
    Gmat: np.ndarray,
    Ywin_n: np.ndarray,
    Uwin_n: np.ndarray,
    L: int,
) -> dict:
    """Trajectory-consistency losses with gradients through both nets.

    Gmat holds the fixed pseudo-inverse coefficients pinv(H_L(u^d)) @ U_L
    for all windows (one column per window). Yd_n/Ud_n are the normalized
    Hankel-split signals; Ywin_n/Uwin_n stack the window rows.
    """
    n_w = Gmat.shape[1]
    T = Yd_n.shape[0]
    M = T - L + 1

    out = {}
    for tag, net, data_n, win_n in (
        ("z", f_net, Yd_n, Ywin_n),
        ("v", n_net, Ud_n, Uwin_n),
    ):
        Sd, cache_d = mlp.forward_cached(net, data_n)
        Swin, cache_w = mlp.forward_cached(net, win_n)
        n_s = Sd.shape[1]
        Hd = build_hankel(Sd, L).data                    # (n_s*L, M)
        target = Swin.reshape(n_w, L * n_s).T            # (n_s*L, n_w)
        pred = Hd @ Gmat
        R = target - pred
        loss = float((R * R).sum()) / n_w

        d_target = (2.0 / n_w) * R
        d_win = d_target.T.reshape(n_w * L, n_s)
        dHd = -(2.0 / n_w) * R @ Gmat.T                  # (n_s*L, M)
        dSd = np.zeros_like(Sd)
        for i in range(L):
            dSd[i : i + M] += dHd[i * n_s : (i + 1) * n_s].T

        grads_d, _ = mlp.backward(net, dSd, cache_d)
        grads_w, _ = mlp.backward(net, d_win, cache_w)
        _accumulate(grads_d, grads_w)
        out[f"loss_{tag}"] = loss
        out[f"grads_{tag}"] = grads_d
        out[f"Sd_{tag}"] = Sd
    return out


class _TrainData:
    """Precomputed arrays shared by all epochs."""

    def __init__(self, d: Dataset, cfg: TrainConfig):
        self.norm_y = fit_normalizer(d.y.values)
        self.norm_u = fit_normalizer(d.u.values)
        hank = d.hankel_split()
        train = d.train_split()

        n_train = train.n_steps
        n_hold = max(1, int(round(cfg.holdout_frac * n_train))) if cfg.holdout_frac > 0 else 0
        fit_rows = n_train - n_hold
        if fit_rows < cfg.batch_size:
            fit_rows = n_train
            n_hold = 0

        self.Yn = self.norm_y.normalize(train.y.values[:fit_rows])
        self.Un = self.norm_u.normalize(train.u.values[:fit_rows])
        self.c = train.c.values[:fit_rows, 0].copy()
        self.yc = train.y.values[:fit_rows][:, list(cfg.yc_index)].copy()
        if n_hold:
            self.Yn_hold = self.norm_y.normalize(train.y.values[fit_rows:])
            self.Un_hold = self.norm_u.normalize(train.u.values[fit_rows:])
            self.c_hold = train.c.values[fit_rows:, 0].copy()
        else:
            self.Yn_hold = self.Un_hold = self.c_hold = None

        L = cfg.t_ini + cfg.n_p
        self.L = L
        u_d = hank.u.values
        self.Yd_n = self.norm_y.normalize(hank.y.values)
        self.Ud_n = self.norm_u.normalize(hank.u.values)
        Hu = build_hankel(u_d, L).data
        pinv = np.linalg.pinv(Hu, rcond=PINV_RCOND)
        self.pe_ok, self.pe_rank = is_persistently_exciting(u_d, L)

        # sliding L-windows over the train split feed the consistency terms
        starts = np.arange(0, fit_rows - L + 1)
        if starts.size > cfg.max_windows:
            idx = np.linspace(0, starts.size - 1, cfg.max_windows).round().astype(int)
            starts = starts[idx]
        self.n_w = starts.size
        u_raw = train.u.values[:fit_rows]
        y_raw = train.y.values[:fit_rows]
        U_L = np.stack([u_raw[s : s + L].ravel() for s in starts], axis=1)  # (n_u*L, n_w)
        self.Gmat = pinv @ U_L
        self.Ywin_n = self.norm_y.normalize(
            np.concatenate([y_raw[s : s + L] for s in starts], axis=0)
        )
        self.Uwin_n = self.norm_u.normalize(
            np.concatenate([u_raw[s : s + L] for s in starts], axis=0)
        )


def composite_loss_and_grads(
    model: EconCostModel,
    f_net: mlp.LiftingNetwork,
    n_net: mlp.LiftingNetwork,
    data: _TrainData,
    alphas: tuple[float, float, float, float],
) -> dict:
    """Full four-term loss with gradients, evaluated on the whole dataset.

    Used for gradient checking and for the alpha auto-balancing probe.
    """
    a1, a2, a3, a4 = alphas
    pt = pointwise_losses(model, f_net, n_net, data.Yn, data.Un, data.c, data.yc)
    wl = consistency_losses(
        f_net, n_net, data.Yd_n, data.Ud_n, data.Gmat, data.Ywin_n, data.Uwin_n, data.L
    )
    upstream_Z = a1 * pt["dZ_e"] + a2 * pt["dZ_re"]
    upstream_V = a1 * pt["dV_e"]
    gF, _ = mlp.backward(f_net, upstream_Z, pt["cacheF"])
    gN, _ = mlp.backward(n_net, upstream_V, pt["cacheN"])
    _accumulate(gF, wl["grads_z"], a3)
    _accumulate(gN, wl["grads_v"], a4)

    cost_grads = [a1 * g for g in pt["cost_grads_e"]]
    cost_grads[6] = cost_grads[6] + a2 * pt["G_grad_re"]

    total = a1 * pt["loss_e"] + a2 * pt["loss_re"] + a3 * wl["loss_z"] + a4 * wl["loss_v"]
    return {
        "loss": total,
        "loss_e": pt["loss_e"],
        "loss_re": pt["loss_re"],
        "loss_z": wl["loss_z"],
        "loss_v": wl["loss_v"],
        "grads_f": gF,
        "grads_n": gN,
        "grads_cost": cost_grads,
    }


def _auto_alphas(losses: tuple[float, float, float, float]) -> tuple[float, ...]:
    # equalize the weighted magnitudes at the start of training
    return tuple(1.0 / max(l, 1e-12) for l in losses)


def train(d: Dataset, cfg: TrainConfig) -> TrainedModel:
    """Run the full joint training loop; deterministic under cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    data = _TrainData(d, cfg)
    report = TrainReport()
    if not data.pe_ok:
        report.warnings.append(
            f"input Hankel not persistently exciting (rank {data.pe_rank})"
        )

    n_y = data.Yn.shape[1]
    n_u = data.Un.shape[1]
    f_net = mlp.init_network(n_y, cfg.hidden, cfg.n_z, seed=cfg.seed)
    n_net = mlp.init_network(n_u, cfg.hidden, cfg.n_v, seed=cfg.seed + 1)

    Z0 = mlp.forward(f_net, data.Yn)
    V0 = mlp.forward(n_net, data.Un)
    model = initial_cost_model(Z0, V0, data.c, data.yc)

    if cfg.alphas is not None:
        alphas = tuple(float(a) for a in cfg.alphas)
    else:
        probe = composite_loss_and_grads(model, f_net, n_net, data, (1.0, 1.0, 1.0, 1.0))
        alphas = _auto_alphas(
            (probe["loss_e"], probe["loss_re"], probe["loss_z"], probe["loss_v"])
        )
    report.alphas = alphas
    a1, a2, a3, a4 = alphas

    adam_f = mlp.AdamState.for_params(f_net.params())
    adam_n = mlp.AdamState.for_params(n_net.params())
    adam_c = mlp.AdamState.for_params(model.params())

    n_rows = data.Yn.shape[0]
    any_update = any(a > 0 for a in alphas)

    initial_total = None
    for epoch in range(cfg.epochs):
        # trajectory-consistency terms: full trajectories, one step per epoch
        wl = consistency_losses(
            f_net, n_net, data.Yd_n, data.Ud_n, data.Gmat, data.Ywin_n, data.Uwin_n, data.L
        )
        if any_update and (a3 > 0 or a4 > 0):
            if a3 > 0:
                new_f = mlp.adam_step(
                    f_net.params(), [a3 * g for g in wl["grads_z"]], adam_f, cfg.lr_nets
                )
                f_net.set_params(new_f)
            if a4 > 0:
                new_n = mlp.adam_step(
                    n_net.params(), [a4 * g for g in wl["grads_v"]], adam_n, cfg.lr_nets
                )
                n_net.set_params(new_n)

        order = rng.permutation(n_rows)
        ep_e, ep_re, n_batches = 0.0, 0.0, 0
        for start in range(0, n_rows, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pt = pointwise_losses(
                model, f_net, n_net, data.Yn[idx], data.Un[idx], data.c[idx], data.yc[idx]
            )
            ep_e += pt["loss_e"]
            ep_re += pt["loss_re"]
            n_batches += 1
            if not any_update or (a1 == 0 and a2 == 0):
                continue
            upstream_Z = a1 * pt["dZ_e"] + a2 * pt["dZ_re"]
            upstream_V = a1 * pt["dV_e"]
            gF, _ = mlp.backward(f_net, upstream_Z, pt["cacheF"])
            gN, _ = mlp.backward(n_net, upstream_V, pt["cacheN"])
            f_net.set_params(mlp.adam_step(f_net.params(), gF, adam_f, cfg.lr_nets))
            n_net.set_params(mlp.adam_step(n_net.params(), gN, adam_n, cfg.lr_nets))
            cg = [a1 * g for g in pt["cost_grads_e"]]
            cg[6] = cg[6] + a2 * pt["G_grad_re"]
            model.set_params(mlp.adam_step(model.params(), cg, adam_c, cfg.lr_cost))

        loss_e = ep_e / n_batches
        loss_re = ep_re / n_batches
        total = a1 * loss_e + a2 * loss_re + a3 * wl["loss_z"] + a4 * wl["loss_v"]
        if not np.isfinite(total):
            raise NonFiniteLoss(epoch, f"L_e={loss_e:.3e} L_re={loss_re:.3e}")
        if initial_total is None:
            initial_total = total

        report.loss_e.append(loss_e)
        report.loss_re.append(loss_re)
        report.loss_z.append(wl["loss_z"])
        report.loss_v.append(wl["loss_v"])
        report.loss_total.append(total)
        report.holdout_mse.append(_holdout_mse(model, f_net, n_net, data))

        if any_update:
            z_std = mlp.forward(f_net, data.Yn).std(axis=0)
            if np.all(z_std < COLLAPSE_STD):
                raise CollapseDetected(
                    f"lifted outputs collapsed at epoch {epoch} (max std {z_std.max():.2e})"
                )

    return TrainedModel(f_net, n_net, model, data.norm_y, data.norm_u, cfg, report)


def save_bundle(directory: str, tm: TrainedModel) -> None:
    """Persist a trained model as a directory bundle (nets, cost, metadata)."""
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    mlp.save_network(os.path.join(directory, "f_net.bin"), tm.f_net)
    mlp.save_network(os.path.join(directory, "n_net.bin"), tm.n_net)
    from deeepc.cost_model import save_cost_model

    save_cost_model(os.path.join(directory, "cost.bin"), tm.cost)
    meta = {
        "norm_y": {"shift": tm.norm_y.shift.tolist(), "scale": tm.norm_y.scale.tolist()},
        "norm_u": {"shift": tm.norm_u.shift.tolist(), "scale": tm.norm_u.scale.tolist()},
        "config": {
            "n_z": tm.config.n_z, "n_v": tm.config.n_v,
            "t_ini": tm.config.t_ini, "n_p": tm.config.n_p,
            "hidden": list(tm.config.hidden), "epochs": tm.config.epochs,
            "batch_size": tm.config.batch_size, "seed": tm.config.seed,
            "yc_index": list(tm.config.yc_index),
        },
        "alphas": list(tm.report.alphas),
        "final_losses": {
            "total": tm.report.loss_total[-1] if tm.report.loss_total else None,
            "holdout_mse": tm.report.holdout_mse[-1] if tm.report.holdout_mse else None,
        },
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(directory: str) -> dict:
    """Load a bundle directory back into its components."""
    import json
    import os

    from deeepc.cost_model import load_cost_model

    f_net = mlp.load_network(os.path.join(directory, "f_net.bin"))
    n_net = mlp.load_network(os.path.join(directory, "n_net.bin"))
    cost = load_cost_model(os.path.join(directory, "cost.bin"))
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    norm_y = Normalizer(
        np.array(meta["norm_y"]["shift"]), np.array(meta["norm_y"]["scale"])
    )
    norm_u = Normalizer(
        np.array(meta["norm_u"]["shift"]), np.array(meta["norm_u"]["scale"])
    )
    return {
        "f_net": f_net, "n_net": n_net, "cost": cost,
        "norm_y": norm_y, "norm_u": norm_u, "meta": meta,
    }


def _holdout_mse(model, f_net, n_net, data) -> float:
    """Cost-prediction MSE on the holdout rows, normalized to unit cost variance."""
    if data.c_hold is None:
        return float("nan")
    Z = mlp.forward(f_net, data.Yn_hold)
    V = mlp.forward(n_net, data.Un_hold)
    chat = (
        (Z * Z) @ model.Qz_diag() + Z @ model.P_z + model.b_z
        + (V * V) @ model.Qv_diag() + V @ model.P_v + model.b_v
    )
    var = float(np.var(data.c))
    mse = float(np.mean((chat - data.c_hold) ** 2))
    return mse / max(var, 1e-12)
