"""CLI contract: subcommands, exit codes, file formats, determinism."""

import json

import numpy as np
import pytest

from duality_bench.cli import main
from duality_bench.serialize import dumps_json


def write_config(path, **overrides):
    cfg = {
        "config_version": 1,
        "model": {
            "family": "gaussian",
            "mean": [0.0, 0.0],
            "covariance": [[1.0, 0.5], [0.5, 1.0]],
            "block_dims": [1, 1],
        },
        "gibbs": {"n_cycles": 2000, "burn_in": 200, "seed": 3},
        "cavi": {"max_cycles": 100, "tolerance": 1e-10},
        "diagnostics": {"suite_seed": 1, "duality_trials": 25},
    }
    for key, value in overrides.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path.write_text(dumps_json(cfg) + "\n", encoding="utf-8")
    return path


DIAGNOSE_GIBBS = {"n_cycles": 30_000, "burn_in": 1000, "seed": 0}


class TestRunGibbs:
    def test_trace_row_count_and_header(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "out"
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "cycle,block1_dim1,block2_dim1"
        assert len(lines) == 1 + 2000 - 200
        assert lines[1].startswith("201,")
        estimates = json.loads((out / "estimates.json").read_text())
        names = [e["name"] for e in estimates["estimands"]]
        assert "mean_dim1" in names and "cross_moment_dim1_dim2" in names

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
        assert (out1 / "estimates.json").read_bytes() == (out2 / "estimates.json").read_bytes()

    def test_missing_covariance_field_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           model={"family": "gaussian", "mean": [0.0, 0.0],
                                  "block_dims": [1, 1]})
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "covariance" in capsys.readouterr().err

    def test_seed_override_changes_trace(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["run-gibbs", "--config", str(cfg), "--out", str(out1)])
        main(["run-gibbs", "--config", str(cfg), "--out", str(out2), "--seed", "4"])
        assert (out1 / "trace.csv").read_bytes() != (out2 / "trace.csv").read_bytes()

    def test_parallel_chains_write_per_chain_traces(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "out"
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(out),
                     "--parallel-chains", "2"]) == 0
        assert (out / "trace_chain1.csv").exists()
        assert (out / "trace_chain2.csv").exists()
        estimates = json.loads((out / "estimates.json").read_text())
        assert estimates["n_chains"] == 2
        assert estimates["seeds"] == [3, 4]
        assert estimates["n_samples"] == 2 * 1800
        # chain 1 equals a plain run with the base seed
        solo = tmp_path / "solo"
        main(["run-gibbs", "--config", str(cfg), "--out", str(solo)])
        assert ((out / "trace_chain1.csv").read_bytes()
                == (solo / "trace.csv").read_bytes())

    def test_env_var_default_out_dir(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "cfg.json")
        monkeypatch.setenv("DUALITY_BENCH_OUT", str(tmp_path / "envout"))
        monkeypatch.chdir(tmp_path)
        assert main(["run-gibbs", "--config", str(cfg)]) == 0
        assert (tmp_path / "envout" / "trace.csv").exists()

    def test_zero_mass_runtime_error_exits_3(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "discrete", "support_sizes": [2, 2],
                   "joint_pmf": [0.5, 0.0, 0.5, 0.0]},
            gibbs={"n_cycles": 10, "burn_in": 0, "seed": 0, "init": [0.0, 1.0]},
        )
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "zero probability mass" in capsys.readouterr().err


class TestRunCavi:
    def test_converged_state_file(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "out"
        assert main(["run-cavi", "--config", str(cfg), "--out", str(out)]) == 0
        state = json.loads((out / "state.json").read_text())
        assert state["converged"] is True
        assert state["factors"][0]["covariance"][0][0] == pytest.approx(0.75, abs=1e-9)
        assert all(np.diff(state["objective_history"]) <= 1e-10)

    def test_non_convergence_is_a_result_not_a_failure(self, tmp_path):
        # one cycle from the marginal init cannot settle at rho=0.9
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "gaussian", "mean": [0.0, 0.0],
                   "covariance": [[1.0, 0.9], [0.9, 1.0]], "block_dims": [1, 1]},
            cavi={"max_cycles": 1, "tolerance": 1e-14},
        )
        out = tmp_path / "out"
        assert main(["run-cavi", "--config", str(cfg), "--out", str(out)]) == 0
        state = json.loads((out / "state.json").read_text())
        assert state["converged"] is False

    def test_nonpositive_tolerance_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           cavi={"max_cycles": 10, "tolerance": 0.0})
        assert main(["run-cavi", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "tolerance" in capsys.readouterr().err


class TestDiagnose:
    def test_gaussian_pipeline_exits_0(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", gibbs=DIAGNOSE_GIBBS)
        out = tmp_path / "out"
        assert main(["diagnose", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["passed"] is True
        assert report["failures"] == []
        csv_lines = (out / "report.csv").read_text().splitlines()
        assert len(csv_lines) == 3  # header + one row per block
        assert csv_lines[0].startswith("block,duality_gap,")

    def test_discrete_pipeline_exits_0(self, tmp_path):
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "discrete", "support_sizes": [2, 2],
                   "joint_pmf": [0.4, 0.1, 0.2, 0.3]},
            gibbs=DIAGNOSE_GIBBS,
        )
        out = tmp_path / "out"
        assert main(["diagnose", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        for block in report["blocks"]:
            assert block["information_residual"] <= 1e-12

    def test_corrupted_state_file_exits_1_with_squash_failure(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json", gibbs=DIAGNOSE_GIBBS)
        out = tmp_path / "cavi"
        assert main(["run-cavi", "--config", str(cfg), "--out", str(out)]) == 0
        state = json.loads((out / "state.json").read_text())
        state["factors"][0]["covariance"] = [[2.0]]
        corrupted = tmp_path / "corrupted_state.json"
        corrupted.write_text(json.dumps(state))
        cfg2 = write_config(
            tmp_path / "cfg2.json", gibbs=DIAGNOSE_GIBBS,
            diagnostics={"suite_seed": 1, "state_file": str(corrupted)},
        )
        out2 = tmp_path / "out2"
        assert main(["diagnose", "--config", str(cfg2), "--out", str(out2)]) == 1
        report = json.loads((out2 / "report.json").read_text())
        assert report["passed"] is False
        assert any("squash_pointwise" in f for f in report["failures"])
        assert "squash" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", gibbs=DIAGNOSE_GIBBS)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["diagnose", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["diagnose", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()


class TestVerifyDuality:
    def test_default_suite_exits_0(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "out"
        assert main(["verify-duality", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "duality_gaps.csv").read_text().splitlines()
        assert lines[0] == "trial,gap,at_optimum_flag"
        assert len(lines) == 1 + 2 * 25

    def test_zero_trials_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json",
                           diagnostics={"duality_trials": 0})
        assert main(["verify-duality", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2
        assert "duality_trials" in capsys.readouterr().err

    def test_fixed_seed_identical_csv(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["verify-duality", "--config", str(cfg), "--out", str(out1)])
        main(["verify-duality", "--config", str(cfg), "--out", str(out2)])
        assert ((out1 / "duality_gaps.csv").read_bytes()
                == (out2 / "duality_gaps.csv").read_bytes())

    def test_discrete_family(self, tmp_path):
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "discrete", "support_sizes": [2, 2],
                   "joint_pmf": [0.4, 0.1, 0.2, 0.3]},
        )
        assert main(["verify-duality", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 0


class TestConfigValidation:
    def test_bad_json_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["run-gibbs", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_wrong_version_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json", config_version=2)
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "config_version" in capsys.readouterr().err

    def test_pmf_shape_mismatch_names_field(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "discrete", "support_sizes": [2, 2],
                   "joint_pmf": [0.5, 0.5]},
        )
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "joint_pmf" in capsys.readouterr().err

    def test_non_spd_covariance_exits_2(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "cfg.json",
            model={"family": "gaussian", "mean": [0.0, 0.0],
                   "covariance": [[1.0, 2.0], [2.0, 1.0]], "block_dims": [1, 1]},
        )
        assert main(["run-gibbs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "model" in capsys.readouterr().err
