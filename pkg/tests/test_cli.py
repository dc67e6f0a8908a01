import json
import os

import pytest

from deeepc.cli import main


def run_cli(*argv):
    return main(list(argv))


def write_cfg(tmp_path, **overrides):
    cfg = {
        "plant": "lti-3",
        "steps": 300,
        "hankel_rows": 200,
        "hold_steps": 3,
        "input_noise_std": 0.1,
        "seed": 7,
        "n_z": 3,
        "n_v": 2,
        "hidden": [8],
        "epochs": 2,
        "batch_size": 32,
        "beta_z": 1e8,
        "beta_g": 1e-4,
        "run_steps": 10,
    }
    cfg.update(overrides)
    path = str(tmp_path / "cfg.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


class TestArgHandling:
    def test_no_command_is_usage_error(self):
        assert run_cli() == 2

    def test_unknown_command(self):
        assert run_cli("frobnicate") == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        path = str(tmp_path / "bad.json")
        with open(path, "w") as fh:
            json.dump({"nonsense": 1}, fh)
        assert run_cli("collect", "--config", path, "--out", str(tmp_path / "o")) == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_malformed_json_config(self, tmp_path):
        path = str(tmp_path / "bad.json")
        with open(path, "w") as fh:
            fh.write("{not json")
        assert run_cli("collect", "--config", path) == 2

    def test_missing_dataset(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert run_cli("train", "--config", cfg, "--dataset",
                       str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")) == 2


class TestCollect:
    def test_writes_dataset_and_provenance(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = str(tmp_path / "c")
        assert run_cli("collect", "--config", cfg, "--out", out) == 0
        assert os.path.exists(out + "/dataset.csv")
        with open(out + "/provenance.json") as fh:
            prov = json.load(fh)
        assert prov["plant"] == "lti-3" and prov["persistent_excitation"]["exciting"]

    def test_byte_identical_across_runs(self, tmp_path):
        cfg = write_cfg(tmp_path)
        o1, o2 = str(tmp_path / "c1"), str(tmp_path / "c2")
        assert run_cli("collect", "--config", cfg, "--out", o1) == 0
        assert run_cli("collect", "--config", cfg, "--out", o2) == 0
        b1 = open(o1 + "/dataset.csv", "rb").read()
        b2 = open(o2 + "/dataset.csv", "rb").read()
        assert b1 == b2


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """Collect + train once; reused by the run/compare tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root)
    out_c = str(root / "collect")
    out_t = str(root / "train")
    assert run_cli("collect", "--config", cfg, "--out", out_c) == 0
    assert run_cli("train", "--config", cfg, "--dataset", out_c + "/dataset.csv",
                   "--out", out_t) == 0
    return {"cfg": cfg, "dataset": out_c + "/dataset.csv",
            "bundle": out_t + "/bundle", "root": root}


class TestTrain:
    def test_bundle_written(self, pipeline_dirs):
        b = pipeline_dirs["bundle"]
        for name in ("f_net.bin", "n_net.bin", "cost.bin", "meta.json"):
            assert os.path.exists(os.path.join(b, name))
        assert os.path.exists(os.path.dirname(b) + "/training_report.csv")

    def test_report_has_epoch_rows(self, pipeline_dirs):
        rep = os.path.dirname(pipeline_dirs["bundle"]) + "/training_report.csv"
        lines = open(rep).read().strip().splitlines()
        assert lines[0].startswith("epoch,") and len(lines) == 3  # header + 2 epochs


class TestRun:
    @pytest.mark.parametrize("kind", ["deeepc", "tracking", "convex"])
    def test_each_controller_runs(self, pipeline_dirs, tmp_path, kind):
        out = str(tmp_path / f"run-{kind}")
        rc = run_cli(
            "run", "--config", pipeline_dirs["cfg"],
            "--dataset", pipeline_dirs["dataset"],
            "--bundle", pipeline_dirs["bundle"],
            "--controller", kind, "--out", out,
        )
        assert rc == 0
        assert os.path.exists(f"{out}/trace_{kind}.csv")
        with open(f"{out}/summary_{kind}.json") as fh:
            summary = json.load(fh)
        assert summary["steps"] == 10 and summary["controller"] == kind

    def test_trace_byte_identical(self, pipeline_dirs, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = str(tmp_path / tag)
            assert run_cli(
                "run", "--config", pipeline_dirs["cfg"],
                "--dataset", pipeline_dirs["dataset"],
                "--bundle", pipeline_dirs["bundle"],
                "--controller", "convex", "--out", out,
            ) == 0
            outs.append(out)
        t1 = open(outs[0] + "/trace_convex.csv", "rb").read()
        t2 = open(outs[1] + "/trace_convex.csv", "rb").read()
        assert t1 == t2

    def test_deeepc_without_bundle_is_usage_error(self, pipeline_dirs, tmp_path):
        rc = run_cli(
            "run", "--config", pipeline_dirs["cfg"],
            "--dataset", pipeline_dirs["dataset"],
            "--controller", "deeepc", "--out", str(tmp_path / "o"),
        )
        assert rc == 2


class TestCompare:
    def test_table_covers_all_controllers(self, pipeline_dirs, tmp_path):
        out = str(tmp_path / "cmp")
        rc = run_cli(
            "compare", "--config", pipeline_dirs["cfg"],
            "--dataset", pipeline_dirs["dataset"],
            "--bundle", pipeline_dirs["bundle"],
            "--steps", "5", "--out", out,
        )
        assert rc == 0
        with open(out + "/comparison.json") as fh:
            cmp_data = json.load(fh)
        kinds = [row["controller"] for row in cmp_data["table"]]
        assert kinds == ["deeepc", "tracking", "convex"]
        assert os.path.exists(out + "/comparison.csv")


class TestVerify:
    def test_lemma_verdict(self, tmp_path):
        out = str(tmp_path / "v")
        assert run_cli("verify-lemma", "--out", out) == 0
        with open(out + "/lemma_verdict.json") as fh:
            verdict = json.load(fh)
        assert verdict["pass"] and verdict["max_residual"] <= 1e-8

    def test_theory_verdict(self, tmp_path):
        out = str(tmp_path / "v")
        assert run_cli("verify-theory", "--out", out) == 0
        with open(out + "/theory_verdict.json") as fh:
            verdict = json.load(fh)
        assert verdict["pass"] and verdict["tensor_gram_deviation"] <= 1e-8
        assert os.path.exists(out + "/truncation_curve.csv")

    def test_coarse_quadrature_fails_cleanly(self, tmp_path):
        # starving the quadrature must produce a clean failure, not a crash
        out = str(tmp_path / "v")
        rc = run_cli("verify-theory", "--out", out, "--nodes", "4")
        assert rc in (1, 3)


class TestPipeline:
    def test_end_to_end_and_stage_skipping(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, steps=250, hankel_rows=150, run_steps=5,
                        compare_seeds=[0])
        out = str(tmp_path / "pipe")
        assert run_cli("pipeline", "--config", cfg, "--out", out) == 0
        capsys.readouterr()
        assert run_cli("pipeline", "--config", cfg, "--out", out) == 0
        text = capsys.readouterr().out
        assert "collect: up to date" in text and "train: up to date" in text
        assert os.path.exists(out + "/compare/comparison.json")
