import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from acoustikey import artifact
from acoustikey.harness.cli import main, read_key_bits
from acoustikey.harness.config import (ConfigError, build_params, env_overrides, flatten, load_config, merge)
from acoustikey.harness.plan import ExperimentPlan, load_plan, plan_from_dict
from acoustikey.harness.runner import rows_to_csv, run_experiment, run_plan

PLANS = Path(__file__).resolve().parents[1] / "plans"


def write_plan(tmp_path, body, name="p.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


class TestConfig:
    def test_defaults_build(self):
        p = build_params(load_config())
        assert p.recon.m_rows == 23 and p.quantizer.guard_ratio == 0.9 and p.key_bits == 128

    def test_merge_overrides_single_key(self):
        cfg = merge(load_config(), {"reconcile": {"m_rows": 30}})
        assert cfg["reconcile"]["m_rows"] == 30 and cfg["reconcile"]["epsilon"] == 1e-3

    @pytest.mark.parametrize("bad", [{"nope": {}}, {"reconcile": {"rows": 3}}, {"reconcile": 3}])
    def test_unknown_rejected(self, bad):
        with pytest.raises(ConfigError):
            merge(load_config(), bad)

    def test_env_overrides_parse_literals(self):
        env = {"ACOUSTIKEY_RECONCILE__M_ROWS": "30", "ACOUSTIKEY_CHANNEL__SCENARIO": "OutdoorStatic",
               "OTHER": "x"}
        assert env_overrides(env) == {"reconcile": {"m_rows": 30}, "channel": {"scenario": "OutdoorStatic"}}
        cfg = load_config({"reconcile": {"m_rows": 40}}, env)
        assert cfg["reconcile"]["m_rows"] == 30

    def test_env_malformed_name(self):
        with pytest.raises(ConfigError):
            env_overrides({"ACOUSTIKEY_M_ROWS": "3"})

    def test_invalid_value_reported_as_config_error(self):
        with pytest.raises(ConfigError):
            build_params(load_config({"quantizer": {"guard_ratio": 2.0}}))

    def test_flatten(self):
        flat = flatten(load_config())
        assert flat["reconcile.m_rows"] == 23


class TestPlan:
    def test_seed_layout(self):
        plan = ExperimentPlan("p", "session", trials=5, base_seed=100, sweep={"reconcile.m_rows": [20, 23]})
        assert [plan.seed(c, t) for c in (0, 1) for t in (0, 4)] == [100, 104, 105, 109]

    def test_cells_cartesian(self):
        plan = ExperimentPlan("p", "session", sweep={"a.x": [1, 2], "b.y": [3, 4, 5]})
        assert len(plan.cells()) == 6

    @pytest.mark.parametrize("kw", [{"kind": "bogus"}, {"trials": 0}, {"sweep": {"m_rows": [1]}},
                                    {"sweep": {"a.b": []}}])
    def test_invalid_plans(self, kw):
        with pytest.raises(ConfigError):
            ExperimentPlan(**{"name": "p", "kind": "session", **kw})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError):
            plan_from_dict({"name": "p", "trails": 3})

    @pytest.mark.parametrize("path", sorted(PLANS.glob("*.toml")), ids=lambda p: p.stem)
    def test_shipped_plans_validate(self, path):
        plan = load_plan(path)
        plan.validate()
        assert plan.output_csv == f"results/{path.stem}.csv"


class TestRunner:
    def test_rows_in_order_and_deterministic(self):
        plan = ExperimentPlan("p", "session", trials=2, base_seed=3, sweep={"reconcile.m_rows": [23, 30]})
        rows = run_experiment(plan)
        assert [(r["cell"], r["trial"], r["seed"]) for r in rows] == [(0, 0, 3), (0, 1, 4), (1, 0, 5), (1, 1, 6)]
        assert rows_to_csv(rows) == rows_to_csv(run_experiment(plan, threads=2))

    def test_manifest(self, tmp_path):
        plan = ExperimentPlan("p", "matrix", trials=2, options={})
        rows, manifest = run_plan(plan, tmp_path / "out.csv")
        side = json.loads((tmp_path / "out.json").read_text())
        assert side == manifest and manifest["rows"] == len(rows) == 2
        assert manifest["plan"]["kind"] == "matrix"

    @pytest.mark.parametrize("kind", ["stream", "entropy", "matrix", "baseline"])
    def test_kinds_produce_rows(self, kind):
        rows = run_experiment(ExperimentPlan("p", kind, trials=1, base_seed=1))
        assert len(rows) == 1 and rows[0]["seed"] == 1

    def test_attack_rows(self):
        rows = run_experiment(ExperimentPlan("p", "attack", trials=1, options={"attacks": ["Eavesdrop"]}))
        assert "eavesdrop.agreement" in rows[0]


class TestCli:
    def test_run_writes_csv_and_summary(self, tmp_path, capsys):
        plan = write_plan(tmp_path, 'name = "t"\nkind = "session"\ntrials = 2\n')
        out = tmp_path / "r.csv"
        assert main(["run", str(plan), "--out", str(out), "--seed", "5"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["rows"] == 2 and out.exists() and out.with_suffix(".json").exists()

    def test_run_stdout_csv(self, tmp_path, capsys):
        plan = write_plan(tmp_path, 'kind = "matrix"\n')
        assert main(["run", str(plan)]) == 0
        assert capsys.readouterr().out.startswith("plan,cell,trial,seed")

    def test_bad_plan_exit_3(self, tmp_path, capsys):
        plan = write_plan(tmp_path, 'kind = "session"\n[config.reconcile]\nrows = 3\n')
        assert main(["run", str(plan)]) == 3
        assert capsys.readouterr().err.startswith("error[config]")

    def test_missing_plan_exit_3(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.toml")]) == 3

    def test_unwritable_output_exit_4(self, tmp_path):
        plan = write_plan(tmp_path, 'kind = "matrix"\n')
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["run", str(plan), "--out", str(blocker / "x.csv")]) == 4

    def test_usage_errors_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert main(["run", "x.toml", "--threads", "0"]) == 2

    def test_optimize_matrix(self, tmp_path, capsys):
        out = tmp_path / "m.akpa"
        assert main(["optimize-matrix", "23", "128", "7", str(out)]) == 0
        info = json.loads(capsys.readouterr().out)
        a = artifact.read(out)["matrices"][0]
        assert a.matrix_id == info["matrix_id"] and a.m_rows == 23 and a.n_cols == 128

    def test_train_klt(self, tmp_path, capsys):
        plan = write_plan(tmp_path, 'kind = "session"\n')
        out = tmp_path / "k.akpa"
        assert main(["train-klt", str(plan), str(out)]) == 0
        basis = artifact.read(out)["bases"][0]
        assert basis.block_len == 128 and basis.n_eigenvectors == 80

    def test_randomness_pass_and_fail(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        good = tmp_path / "good.txt"
        good.write_text("\n".join(rng.bytes(16).hex() for _ in range(100)))
        assert main(["randomness", str(good)]) == 0
        bad = tmp_path / "bad.txt"
        bad.write_text("\n".join("00" * 16 for _ in range(100)))
        assert main(["randomness", str(bad)]) == 1

    def test_read_key_bits_formats(self, tmp_path):
        csv_file = tmp_path / "k.csv"
        csv_file.write_text("seed,key_hex\n1,ff00\n2,\n3,0f\n")
        np.testing.assert_array_equal(read_key_bits(csv_file), [1] * 8 + [0] * 8 + [0] * 4 + [1] * 4)
        binary = tmp_path / "b.txt"
        binary.write_text("01" * 20 + "\n")
        assert read_key_bits(binary).size == 40

    def test_console_script_module(self):
        res = subprocess.run([sys.executable, "-m", "acoustikey.harness.cli", "--help"],
                             capture_output=True, text=True)
        assert res.returncode == 0 and "optimize-matrix" in res.stdout
