import json

import numpy as np

from bdkf.cli import main

CHAIN8 = {"generator": "identical_chain", "beta": 0.1, "n": 8}


def run(args):
    return main([str(a) for a in args])


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestSimulate:
    def test_writes_rows_and_reproduces(self, tmp_path):
        cfg = write_config(
            tmp_path, {"system": {"generator": "identical_chain", "beta": 0.2, "n": 2},
                       "horizon": 10, "seed": 7},
        )
        out = tmp_path / "run1"
        assert run(["simulate", "--config", cfg, "--out", out]) == 0
        lines = (out / "trajectory.csv").read_text().splitlines()
        assert len(lines) == 11  # header + 10 data rows
        assert lines[0].startswith("step,x_0")
        out2 = tmp_path / "run2"
        assert run(["simulate", "--config", cfg, "--out", out2]) == 0
        assert (out / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()

    def test_missing_field_names_it(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, {"system": {"generator": "identical_chain", "beta": 0.2}}
        )
        assert run(["simulate", "--config", cfg, "--out", tmp_path]) == 2
        assert "'n'" in capsys.readouterr().err

    def test_missing_system(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"horizon": 5})
        assert run(["simulate", "--config", cfg, "--out", tmp_path]) == 2
        assert "system" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"horizon": 5, "bogus": 1})
        assert run(["simulate", "--config", cfg, "--out", tmp_path]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_sidecar_reproduces_run(self, tmp_path):
        cfg = write_config(
            tmp_path, {"system": {"generator": "identical_chain", "beta": 0.2, "n": 2}},
        )
        out1 = tmp_path / "a"
        assert run(["simulate", "--config", cfg, "--out", out1, "--horizon", 8,
                    "--seed", 3]) == 0
        out2 = tmp_path / "b"
        assert run(["simulate", "--config", out1 / "trajectory.json", "--out", out2]) == 0
        assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()


class TestDecouple:
    def test_single_cell(self, tmp_path):
        out = tmp_path / "dec"
        assert run(["decouple", "--beta", 0.1, "--n", 2, "--out", out]) == 0
        lines = (out / "decoupling.csv").read_text().splitlines()
        assert lines[0] == "beta,n,dist_P0,dist_P,dist_P0_full,converged"
        assert len(lines) == 2
        fields = lines[1].split(",")
        assert fields[-1] == "true"
        assert all(np.isfinite(float(v)) for v in fields[:-1])

    def test_row_count_default_grid(self, tmp_path):
        cfg = write_config(
            tmp_path, {"betas": [0.1, 1.0], "ns": [2, 4], "full_kf_n_cap": 4,
                       "tol": 1e-9},
        )
        out = tmp_path / "dec"
        assert run(["decouple", "--config", cfg, "--out", out]) == 0
        lines = (out / "decoupling.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2

    def test_non_converged_cell_still_exits_zero(self, tmp_path):
        cfg = write_config(
            tmp_path, {"betas": [0.5], "ns": [2], "full_kf_n_cap": 2, "max_iter": 2},
        )
        out = tmp_path / "dec"
        assert run(["decouple", "--config", cfg, "--out", out]) == 0
        lines = (out / "decoupling.csv").read_text().splitlines()
        assert lines[1].endswith("false")

    def test_rerun_byte_identical(self, tmp_path):
        out = tmp_path / "dec"
        for _ in range(2):
            assert run(["decouple", "--beta", 0.5, "--n", 4, "--out", out]) == 0
            assert not list(out.glob("*.tmp"))
        data1 = (out / "decoupling.csv").read_bytes()
        assert run(["decouple", "--beta", 0.5, "--n", 4, "--out", out]) == 0
        assert (out / "decoupling.csv").read_bytes() == data1


class TestSpeckleCmd:
    def test_row_count(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"n_pixels": 8, "r_modes": 2, "horizon": 5, "seeds": 2,
             "photon_scale": 100.0},
        )
        out = tmp_path / "spk"
        assert run(["speckle", "--config", cfg, "--out", out]) == 0
        lines = (out / "speckle.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 5 * 3

    def test_flag_overrides(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {"n_pixels": 8, "r_modes": 2, "horizon": 50, "seeds": 5,
             "photon_scale": 100.0},
        )
        out = tmp_path / "spk"
        assert run(["speckle", "--config", cfg, "--out", out, "--seeds", 1,
                    "--horizon", 2]) == 0
        lines = (out / "speckle.csv").read_text().splitlines()
        assert len(lines) == 1 + 1 * 2 * 3
        sidecar = json.loads((out / "speckle.json").read_text())
        assert sidecar["config"]["seeds"] == 1
        assert sidecar["config"]["horizon"] == 2


class TestBenchCmd:
    def test_fast_only_when_full_ns_empty(self, tmp_path):
        cfg = write_config(
            tmp_path, {"ns_fast": [64, 128], "ns_full": [], "reps": 5},
        )
        out = tmp_path / "bench"
        assert run(["bench", "--config", cfg, "--out", out]) == 0
        lines = (out / "bench.csv").read_text().splitlines()
        assert len(lines) == 3
        assert all(line.startswith("bd_fast") for line in lines[1:])
        sidecar = json.loads((out / "bench.json").read_text())
        assert "slopes" in sidecar


class TestSteadyCmd:
    def test_emits_expected_keys_and_ordering(self, tmp_path):
        cfg = write_config(tmp_path, {"system": CHAIN8})
        out = tmp_path / "steady"
        assert run(["steady", "--config", cfg, "--out", out]) == 0
        doc = json.loads((out / "steady.json").read_text())
        for key in ("P_minus", "P_tilde_minus", "prop2", "P_minus_uncoupled",
                    "coupling", "alphas", "diagnostics"):
            assert key in doc
        p_tilde = np.array(doc["P_tilde_minus"])
        p_unc = np.array(doc["P_minus_uncoupled"])
        w = np.linalg.eigvalsh(p_tilde - p_unc)
        assert w.min() >= -1e-8 * np.linalg.norm(p_unc)
        assert doc["diagnostics"]["bd_residual"] <= 1e-8

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"system": CHAIN8, "max_iter": 2})
        assert run(["steady", "--config", cfg, "--out", tmp_path]) == 3
        err = capsys.readouterr().err
        assert "did not converge" in err

    def test_bad_config_json(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        assert run(["steady", "--config", bad, "--out", tmp_path]) == 2
