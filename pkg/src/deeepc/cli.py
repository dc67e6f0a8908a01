"""Command-line pipeline: collect data, train, run controllers, verify theory.

Exit codes: 0 success, 1 failed verification verdict, 2 usage error,
3 runtime failure. All primary outputs (CSV traces, model bundles) are
byte-stable under fixed seeds; wall-clock timing lives only in summary
JSON files and is excluded from the determinism contract.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from deeepc import basis, controller, lti, trainer
from deeepc.errors import DeeepcError, InvalidConfig
from deeepc.plants import (
    ExcitationSchedule,
    PlantHandle,
    builtin_benchmarks,
    generate_openloop,
    get_plant,
)
from deeepc.trajectory import ColumnSchema, Dataset, load_csv, save_csv

DEFAULTS = {
    "plant": "econ-cstr",
    "steps": 4500,
    "hankel_rows": 1000,
    "hold_steps": 10,
    "input_noise_std": 0.5,
    "seed": 42,
    "t_ini": 2,
    "n_p": 2,
    "n_z": 8,
    "n_v": 2,
    "hidden": [64, 64],
    "epochs": 100,
    "batch_size": 128,
    "lr_nets": 1e-4,
    "lr_cost": 1e-3,
    "lam": 1.0,
    "R": 0.05,
    "beta_z": 5e10,
    "beta_g": 1e-8,
    "run_steps": 500,
    "controller": "deeepc",
    "no_slack": False,
    "reduce_tol": 1e-8,
    "warmup_steps": 10,
    "compare_seeds": [0, 1, 2],
}


def _load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise InvalidConfig(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"config is not valid JSON: {exc}")
        unknown = set(user) - set(DEFAULTS) - {"dataset", "bundle", "out"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for key in ("plant", "steps", "seed", "no_slack"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "controller", None):
        cfg["controller"] = args.controller
    if cfg["steps"] < 1:
        raise InvalidConfig("steps must be >= 1")
    L = cfg["t_ini"] + cfg["n_p"]
    if cfg["hankel_rows"] < L:
        raise InvalidConfig("hankel_rows must be >= T_ini + N_p")
    return cfg


def _out_dir(args, default: str) -> str:
    out = getattr(args, "out", None) or default
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _dataset_schema(path: str, dt: float, hankel_rows: int) -> ColumnSchema:
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    u_cols = tuple(h for h in header if h.startswith("u"))
    y_cols = tuple(h for h in header if h.startswith("y"))
    if not u_cols or not y_cols or "c" not in header:
        raise InvalidConfig(f"dataset header must contain u*/y*/c columns, got {header}")
    return ColumnSchema(u_cols, y_cols, "c", dt=dt, hankel_rows=hankel_rows)


def _load_dataset(cfg: dict, path: str) -> Dataset:
    spec = get_plant(cfg["plant"])
    schema = _dataset_schema(path, spec.dt, cfg["hankel_rows"])
    return load_csv(path, schema)


# --- subcommands -------------------------------------------------------------

def cmd_collect(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "out-collect")
    spec = get_plant(cfg["plant"])
    handle = PlantHandle(spec, seed=cfg["seed"])
    schedule = ExcitationSchedule(
        hold_steps=cfg["hold_steps"], input_noise_std=cfg["input_noise_std"]
    )
    dataset, pe_report = generate_openloop(
        handle, schedule, cfg["steps"], seed=cfg["seed"], hankel_rows=cfg["hankel_rows"]
    )
    csv_path = os.path.join(out, "dataset.csv")
    save_csv(csv_path, dataset)
    _write_json(
        os.path.join(out, "provenance.json"),
        {
            "plant": cfg["plant"],
            "seed": cfg["seed"],
            "steps": cfg["steps"],
            "hankel_rows": cfg["hankel_rows"],
            "schedule": {
                "hold_steps": cfg["hold_steps"],
                "input_noise_std": cfg["input_noise_std"],
            },
            "persistent_excitation": pe_report,
        },
    )
    print(f"wrote {csv_path} ({cfg['steps']} rows); PE: {pe_report}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "out-train")
    dataset_path = getattr(args, "dataset", None) or cfg.get("dataset")
    if not dataset_path or not os.path.exists(dataset_path):
        raise InvalidConfig(f"dataset path missing or not found: {dataset_path}")
    d = _load_dataset(cfg, dataset_path)
    spec = get_plant(cfg["plant"])
    tc = trainer.TrainConfig(
        n_z=cfg["n_z"], n_v=cfg["n_v"], t_ini=cfg["t_ini"], n_p=cfg["n_p"],
        hidden=tuple(cfg["hidden"]), epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr_nets=cfg["lr_nets"],
        lr_cost=cfg["lr_cost"], seed=cfg["seed"], yc_index=tuple(spec.yc_index),
    )
    tm = trainer.train(d, tc)
    bundle_dir = os.path.join(out, "bundle")
    trainer.save_bundle(bundle_dir, tm)
    rep_path = os.path.join(out, "training_report.csv")
    with open(rep_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_total", "loss_e", "loss_re", "loss_z", "loss_v", "holdout_mse"])
        for i in range(len(tm.report.loss_total)):
            w.writerow([
                i, repr(tm.report.loss_total[i]), repr(tm.report.loss_e[i]),
                repr(tm.report.loss_re[i]), repr(tm.report.loss_z[i]),
                repr(tm.report.loss_v[i]), repr(tm.report.holdout_mse[i]),
            ])
    print(f"wrote bundle {bundle_dir}; final loss {tm.report.loss_total[-1]:.6g}, "
          f"holdout MSE {tm.report.holdout_mse[-1]:.6g}")
    return 0


def _build_controller_spec(cfg: dict, d: Dataset, kind: str, bundle: dict | None):
    spec = get_plant(cfg["plant"])
    weights = {"lam": cfg["lam"], "R": cfg["R"], "beta_z": cfg["beta_z"],
               "beta_g": cfg["beta_g"]}
    bounds = {"u_lb": spec.u_lb, "u_ub": spec.u_ub,
              "yc_lb": spec.yc_lb, "yc_ub": spec.yc_ub}
    warm = {"kind": "pid" if spec.pid else "fixed", "steps": cfg["warmup_steps"]}

    if kind == "deeepc":
        if bundle is None:
            raise InvalidConfig("deeepc controller requires a trained model bundle")
        lifter = controller.Lifter(
            bundle["f_net"], bundle["n_net"], bundle["norm_y"], bundle["norm_u"]
        )
        blocks = controller.build_lifted_blocks(
            d, lifter, cfg["t_ini"], cfg["n_p"], reduce=True, reduce_tol=cfg["reduce_tol"]
        )
        return controller.ControllerSpec(
            kind="deeepc", blocks=blocks, weights=weights, bounds=bounds,
            t_ini=cfg["t_ini"], model=bundle["cost"], lifter=lifter,
            no_slack=cfg["no_slack"], warmup_policy=warm,
        ), None
    if kind == "convex":
        lifter = controller.identity_lifter(spec.n_y, spec.n_u)
        blocks = controller.build_lifted_blocks(
            d, lifter, cfg["t_ini"], cfg["n_p"], reduce=True, reduce_tol=cfg["reduce_tol"]
        )
        model, r2 = controller.fit_raw_surrogate(d.train_split(), spec.yc_index)
        return controller.ControllerSpec(
            kind="convex", blocks=blocks, weights=weights, bounds=bounds,
            t_ini=cfg["t_ini"], model=model, lifter=lifter,
            no_slack=cfg["no_slack"], warmup_policy=warm,
        ), {"surrogate_r2": r2}
    if kind == "tracking":
        blocks = controller.tracking_blocks(d, cfg["t_ini"], cfg["n_p"])
        if not spec.pid:
            raise InvalidConfig("tracking controller needs a plant reference point")
        y_ref = np.zeros(spec.n_y)
        y_ref[spec.pid["output_index"]] = spec.pid["setpoint"]
        Tw = np.zeros(spec.n_y)
        Tw[spec.pid["output_index"]] = 1.0
        refs = {"y_ref": y_ref, "u_ref": np.full(spec.n_u, spec.pid["u_base"])}
        tweights = {"T": Tw, "R": cfg["R"], "beta_y": cfg["beta_z"], "beta_g": cfg["beta_g"]}
        return controller.ControllerSpec(
            kind="tracking", blocks=blocks, weights=tweights, bounds=bounds,
            t_ini=cfg["t_ini"], refs=refs, no_slack=cfg["no_slack"], warmup_policy=warm,
        ), None
    raise InvalidConfig(f"unknown controller {kind!r}; valid: deeepc, tracking, convex")


def _write_trace(path: str, records, spec) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = (
            ["k"]
            + [f"u{i+1}" for i in range(spec.n_u)]
            + [f"y{i+1}" for i in range(spec.n_y)]
            + ["c_true", "c_hat", "qp_status", "violation_true",
               "violation_surrogate", "fallback"]
        )
        w.writerow(header)
        for r in records:
            w.writerow(
                [r.k]
                + [repr(float(x)) for x in r.u]
                + [repr(float(x)) for x in r.y]
                + [repr(float(r.c_true)), repr(float(r.c_hat)), r.qp_status,
                   repr(float(r.violation_true)), repr(float(r.violation_surrogate)),
                   int(r.fallback)]
            )


def _run_one(cfg: dict, d: Dataset, kind: str, bundle, steps: int, seed: int):
    spec_obj, extra = _build_controller_spec(cfg, d, kind, bundle)
    plant = get_plant(cfg["plant"])
    handle = PlantHandle(plant, seed=seed)
    records, summary = controller.run_closed_loop(handle, spec_obj, steps, seed=seed)
    if extra:
        summary.update(extra)
    return records, summary, plant


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "out-run")
    dataset_path = getattr(args, "dataset", None) or cfg.get("dataset")
    if not dataset_path or not os.path.exists(dataset_path):
        raise InvalidConfig(f"dataset path missing or not found: {dataset_path}")
    d = _load_dataset(cfg, dataset_path)
    kind = cfg["controller"]
    bundle = None
    bundle_path = getattr(args, "bundle", None) or cfg.get("bundle")
    if kind == "deeepc":
        if not bundle_path or not os.path.isdir(bundle_path):
            raise InvalidConfig(f"bundle directory missing or not found: {bundle_path}")
        bundle = trainer.load_bundle(bundle_path)
    steps = getattr(args, "run_steps", None) or cfg["run_steps"]
    records, summary, plant = _run_one(cfg, d, kind, bundle, steps, cfg["seed"])

    trace_path = os.path.join(out, f"trace_{kind}.csv")
    _write_trace(trace_path, records, plant)
    if getattr(args, "dump_hankel", False):
        spec_obj, _ = _build_controller_spec(cfg, d, kind, bundle)
        np.save(os.path.join(out, "hankel_stack.npy"), spec_obj.blocks.stacked())
    _write_json(os.path.join(out, f"summary_{kind}.json"),
                {"controller": kind, "seed": cfg["seed"], **summary})
    print(f"{kind}: avg cost {summary['avg_cost']:.6g}, "
          f"satisfaction {summary['satisfaction_rate']:.3f}, "
          f"fallbacks {summary['fallback_count']}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "out-compare")
    dataset_path = getattr(args, "dataset", None) or cfg.get("dataset")
    if not dataset_path or not os.path.exists(dataset_path):
        raise InvalidConfig(f"dataset path missing or not found: {dataset_path}")
    d = _load_dataset(cfg, dataset_path)
    bundle_path = getattr(args, "bundle", None) or cfg.get("bundle")
    if not bundle_path or not os.path.isdir(bundle_path):
        raise InvalidConfig(f"bundle directory missing or not found: {bundle_path}")
    bundle = trainer.load_bundle(bundle_path)
    steps = getattr(args, "run_steps", None) or cfg["run_steps"]
    seeds = cfg["compare_seeds"]

    table = []
    for kind in ("deeepc", "tracking", "convex"):
        per_seed = []
        for seed in seeds:
            _, summary, _ = _run_one(cfg, d, kind, bundle, steps, seed)
            per_seed.append(summary)
        table.append({
            "controller": kind,
            "avg_cost": float(np.mean([s["avg_cost"] for s in per_seed])),
            "satisfaction_rate": float(np.mean([s["satisfaction_rate"] for s in per_seed])),
            "fallback_count": int(sum(s["fallback_count"] for s in per_seed)),
            "mean_solve_ms": float(np.mean([s["mean_solve_ms"] for s in per_seed])),
            "per_seed_avg_cost": [s["avg_cost"] for s in per_seed],
        })
    _write_json(os.path.join(out, "comparison.json"),
                {"plant": cfg["plant"], "steps": steps, "seeds": seeds, "table": table})
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "avg_cost", "satisfaction_rate", "fallback_count"])
        for row in table:
            w.writerow([row["controller"], repr(row["avg_cost"]),
                        repr(row["satisfaction_rate"]), row["fallback_count"]])
    for row in table:
        print(f"{row['controller']:>9}: avg cost {row['avg_cost']:.6g}, "
              f"satisfaction {row['satisfaction_rate']:.3f}")
    return 0


def cmd_verify_lemma(args) -> int:
    out = _out_dir(args, "out-verify")
    rng = np.random.default_rng(getattr(args, "seed", None) or 42)
    worst = 0.0
    min_rank = None
    n_systems = 20
    for _ in range(n_systems):
        sys_i = lti.random_stable_system(3, 1, 1, rng)
        rep = lti.verify_fundamental_lemma(sys_i, T=80, L=6, trials=5, rng=rng)
        worst = max(worst, rep["max_residual"])
        min_rank = rep["min_pe_rank"] if min_rank is None else min(min_rank, rep["min_pe_rank"])
    report = {"systems": n_systems, "max_residual": worst, "min_pe_rank": min_rank}
    passed = report["max_residual"] <= 1e-8
    _write_json(os.path.join(out, "lemma_verdict.json"),
                {"pass": bool(passed), **report})
    print(f"trajectory-representation check: max residual {report['max_residual']:.3e} "
          f"-> {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_verify_theory(args) -> int:
    out = _out_dir(args, "out-verify")
    n_nodes = getattr(args, "nodes", None)
    verdicts = {}

    leg = basis.legendre_family(-1.0, 1.0, 6, n_nodes=n_nodes)
    tens = basis.tensor_product_family(leg, leg)
    verdicts["tensor_gram_deviation"] = tens.gram_deviation()
    verdicts["tensor_gram_pass"] = bool(tens.gram_deviation() <= 1e-8)

    # family larger than the tested orders so tails at n=12 stay resolvable
    fam = basis.legendre_family(-1.0, 1.0, 18, n_nodes=n_nodes)
    rep = basis.truncation_error_curve(np.exp, fam, list(range(1, 13)))
    rel = [
        abs(e * e - dd * dd) / max(rep.f_norm**2, 1e-300)
        for e, dd in zip(rep.error_norms, rep.error_norms_direct)
    ]
    strictly_decreasing = all(
        rep.error_norms[i + 1] < rep.error_norms[i] for i in range(len(rep.error_norms) - 1)
    )
    verdicts["truncation_monotone"] = bool(strictly_decreasing)
    verdicts["truncation_bounded"] = bool(all(e <= rep.f_norm + 1e-8 for e in rep.error_norms))
    verdicts["formula_vs_direct_max_rel"] = float(max(rel))
    verdicts["formula_vs_direct_pass"] = bool(max(rel) <= 1e-6)

    with open(os.path.join(out, "truncation_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "error_norm", "error_norm_direct"])
        for row in rep.as_rows():
            w.writerow([row["order"], repr(row["error_norm"]), repr(row["error_norm_direct"])])

    passed = (verdicts["tensor_gram_pass"] and verdicts["truncation_monotone"]
              and verdicts["truncation_bounded"] and verdicts["formula_vs_direct_pass"])
    _write_json(os.path.join(out, "theory_verdict.json"), {"pass": bool(passed), **verdicts})
    print(f"orthonormal-basis checks -> {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_verify(args) -> int:
    rc1 = cmd_verify_lemma(args)
    rc2 = cmd_verify_theory(args)
    return 0 if rc1 == 0 and rc2 == 0 else 1


def _content_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=_json_default).encode()
    ).hexdigest()[:16]


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "out-pipeline")
    manifest_path = os.path.join(out, "manifest.json")
    manifest = {}
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)

    class _A:
        pass

    a = _A()
    a.config = getattr(args, "config", None)
    a.plant = a.steps = a.seed = a.controller = None
    a.no_slack = None
    a.dump_hankel = False
    a.run_steps = None

    collect_hash = _content_hash({k: cfg[k] for k in
                                  ("plant", "steps", "seed", "hold_steps",
                                   "input_noise_std", "hankel_rows")})
    a.out = os.path.join(out, "collect")
    dataset_path = os.path.join(a.out, "dataset.csv")
    if manifest.get("collect") != collect_hash or not os.path.exists(dataset_path):
        rc = cmd_collect(a)
        if rc != 0:
            return rc
        manifest["collect"] = collect_hash
    else:
        print("collect: up to date, skipping")

    train_keys = ("n_z", "n_v", "t_ini", "n_p", "hidden", "epochs",
                  "batch_size", "lr_nets", "lr_cost", "seed")
    train_hash = _content_hash({**{k: cfg[k] for k in train_keys},
                                "upstream": collect_hash})
    a.out = os.path.join(out, "train")
    a.dataset = dataset_path
    bundle_path = os.path.join(a.out, "bundle")
    if manifest.get("train") != train_hash or not os.path.isdir(bundle_path):
        rc = cmd_train(a)
        if rc != 0:
            return rc
        manifest["train"] = train_hash
    else:
        print("train: up to date, skipping")

    a.out = os.path.join(out, "compare")
    a.bundle = bundle_path
    rc = cmd_compare(a)
    _write_json(manifest_path, manifest)
    return rc


# --- argument parsing --------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deeepc",
        description="Data-driven economic predictive control pipeline",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False, bundle=False, run_flags=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--plant", choices=sorted(builtin_benchmarks()),
                        default=None)
        if dataset:
            sp.add_argument("--dataset", help="dataset CSV path")
        if bundle:
            sp.add_argument("--bundle", help="model bundle directory")
        if run_flags:
            sp.add_argument("--steps", dest="run_steps", type=int, default=None,
                            help="closed-loop steps")
            sp.add_argument("--no-slack", dest="no_slack", action="store_true",
                            default=None)
            sp.add_argument("--dump-hankel", dest="dump_hankel", action="store_true")

    sp = sub.add_parser("collect", help="generate open-loop plant data")
    common(sp)
    sp.add_argument("--steps", type=int, default=None, help="data points to collect")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train", help="train liftings and cost surrogate")
    common(sp, dataset=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("run", help="closed-loop run of one controller")
    common(sp, dataset=True, bundle=True, run_flags=True)
    sp.add_argument("--controller", choices=["deeepc", "tracking", "convex"],
                    default=None)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run all three controllers and tabulate")
    common(sp, dataset=True, bundle=True, run_flags=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("verify-lemma", help="trajectory-representation oracle")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_verify_lemma)

    sp = sub.add_parser("verify-theory", help="orthonormal-basis numeric checks")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--nodes", type=int, default=None,
                    help="override quadrature node count")
    sp.set_defaults(func=cmd_verify_theory)

    sp = sub.add_parser("verify", help="run both verification suites")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--nodes", type=int, default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("pipeline", help="collect, train, and compare end to end")
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_pipeline)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DeeepcError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
