"""CLI and file-format tests: subcommands, determinism, schemas, parse errors."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from levyecf.cli import main
from levyecf.config import config_from_dict, load_config
from levyecf.recursive import ConfigurationError
from levyecf.runio import DataFormatError, read_increments_csv, write_increments_csv

IID_DOC = {
    "mode": "simulate",
    "algorithm": "iid_ecf",
    "seed": 42,
    "n": 2000,
    "noise": {"family": "gaussian", "eta": [0.3, 1.0], "h": 1.0},
    "grid": {"m": 10, "u_max": 2.0},
    "weight": "optimal",
    "init": {"eta0": [0.0, 1.2]},
    "domain": {"eta_low": [-2.0, 0.1], "eta_high": [2.0, 4.0]},
}

SYSTEM_DOC = {
    "mode": "simulate",
    "algorithm": "three_stage",
    "seed": 9,
    "n": 4000,
    "noise": {"family": "gaussian", "eta": [0.0, 1.0]},
    "system": {"ar": [-0.5], "ma": [0.3]},
    "grid": {"m": 8, "u_max": 2.0},
    "init": {"eta0": [0.05, 1.1], "theta0": [-0.4, 0.2],
             "g0": "warmup", "warmup_len": 200},
    "domain": {"eta_low": [-1.0, 0.2], "eta_high": [1.0, 3.0]},
}


def write_config(tmp_path: Path, doc: dict, name: str = "config.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def stripped(path: Path) -> dict:
    payload = json.loads(path.read_text())
    payload.pop("meta", None)
    return payload


class TestConfig:
    def test_load_round_trip(self, tmp_path):
        cfg = load_config(write_config(tmp_path, IID_DOC))
        assert cfg.mode == "simulate"
        assert cfg.n == 2000
        np.testing.assert_array_equal(cfg.eta_true, [0.3, 1.0])

    def test_run_entry_point(self):
        from levyecf.config import run
        from levyecf.noise import NoiseModel

        cfg = config_from_dict(IID_DOC)
        data = NoiseModel("gaussian", [0.3, 1.0]).sample(500, 1).values
        traj = run("iid_ecf", data, cfg)
        assert len(traj) == 500
        traj2 = run("iid_ecf", data, cfg)
        np.testing.assert_array_equal(traj.columns["eta"], traj2.columns["eta"])

    def test_rejects_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({**IID_DOC, "mode": "train"})

    def test_rejects_dimension_mismatch(self):
        bad = {**IID_DOC, "init": {"eta0": [0.0]}}
        with pytest.raises(ConfigurationError):
            config_from_dict(bad)

    def test_rejects_system_algorithm_without_system(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({**IID_DOC, "algorithm": "three_stage"})

    def test_montecarlo_needs_replications(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({**IID_DOC, "mode": "montecarlo", "replications": 1})


class TestDataFiles:
    def test_round_trip(self, tmp_path):
        values = np.array([1.5, -2.25, 1e-17])
        path = tmp_path / "x.csv"
        write_increments_csv(path, values)
        np.testing.assert_array_equal(read_increments_csv(path), values)

    def test_header_only(self, tmp_path):
        path = tmp_path / "x.csv"
        write_increments_csv(path, np.empty(0))
        assert read_increments_csv(path).size == 0

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y\n1.0\nnot-a-number\n")
        with pytest.raises(DataFormatError, match="line 3"):
            read_increments_csv(path)

    def test_extra_column_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y\n1.0\n2.0,3.0\n")
        with pytest.raises(DataFormatError, match="line 3"):
            read_increments_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("")
        with pytest.raises(DataFormatError, match="line 1"):
            read_increments_csv(path)


class TestSimulate:
    def test_zero_n_writes_header_only(self, tmp_path):
        cfg = write_config(tmp_path, {**IID_DOC, "n": 0})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "data.csv").read_bytes() == b"y\r\n"

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path, IID_DOC)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()
        assert stripped(tmp_path / "a/data_meta.json") == stripped(tmp_path / "b/data_meta.json")

    def test_column_statistics_in_clt_band(self, tmp_path):
        doc = {**IID_DOC, "n": 100_000}
        cfg = write_config(tmp_path, doc)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        data = read_increments_csv(tmp_path / "data.csv")
        assert abs(data.mean() - 0.3) < 4 * 1.0 / np.sqrt(data.size)
        assert abs(data.var() - 1.0) < 5 * np.sqrt(2.0 / data.size)

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path, IID_DOC)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"),
              "--seed-override", "7"])
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a/data.csv").read_bytes() != (tmp_path / "b/data.csv").read_bytes()


class TestEstimate:
    def test_iid_summary_schema(self, tmp_path):
        cfg = write_config(tmp_path, IID_DOC)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        cfg2 = write_config(tmp_path, {**IID_DOC, "mode": "estimate"}, "est.yaml")
        main(["estimate", "--config", str(cfg2), "--data", str(tmp_path / "data.csv"),
              "--out", str(tmp_path / "est")])
        payload = stripped(tmp_path / "est/summary.json")
        assert payload["algorithm"] == "iid_ecf"
        assert payload["seed"] == 42
        assert "eta" in payload["final"]
        assert payload["reset_count"] >= 0
        assert payload["n_steps"] == 2000
        header = (tmp_path / "est/trajectory.csv").read_text().splitlines()[0]
        assert header.startswith("n,eta_0,eta_1")
        assert header.endswith("reset")
        n_rows = len((tmp_path / "est/trajectory.csv").read_text().splitlines()) - 1
        assert n_rows == 2000

    def test_three_stage_end_to_end(self, tmp_path):
        cfg = write_config(tmp_path, SYSTEM_DOC)
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        cfg2 = write_config(tmp_path, {**SYSTEM_DOC, "mode": "estimate"}, "est.yaml")
        main(["estimate", "--config", str(cfg2), "--data", str(tmp_path / "data.csv"),
              "--out", str(tmp_path / "est")])
        payload = stripped(tmp_path / "est/summary.json")
        assert {"eta", "theta_p", "theta_s"} <= set(payload["final"])

    def test_offline_summary_comparable(self, tmp_path):
        cfg = write_config(tmp_path, {**IID_DOC, "n": 5000})
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
        doc = {**IID_DOC, "mode": "estimate", "algorithm": "offline_ecf"}
        cfg2 = write_config(tmp_path, doc, "off.yaml")
        main(["estimate", "--config", str(cfg2), "--data", str(tmp_path / "data.csv"),
              "--out", str(tmp_path / "off")])
        payload = stripped(tmp_path / "off/summary.json")
        assert payload["converged"] is True
        assert "estimate" in payload["final"]
        assert payload["reset_count"] == 0

    def test_corrupt_data_rejected_with_line_number(self, tmp_path):
        cfg = write_config(tmp_path, {**IID_DOC, "mode": "estimate"})
        bad = tmp_path / "bad.csv"
        bad.write_text("y\n0.5\noops\n")
        with pytest.raises(DataFormatError, match="line 3"):
            main(["estimate", "--config", str(cfg), "--data", str(bad),
                  "--out", str(tmp_path)])


class TestMonteCarlo:
    def test_report_schema_and_determinism(self, tmp_path):
        doc = {**IID_DOC, "mode": "montecarlo", "n": 1500, "replications": 8}
        cfg = write_config(tmp_path, doc)
        main(["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "b")])
        a = stripped(tmp_path / "a/montecarlo.json")
        assert a == stripped(tmp_path / "b/montecarlo.json")
        assert a["components"] == ["eta_mu", "eta_sigma"]
        assert len(a["reset_counts"]) == 8
        assert (tmp_path / "a/finals.csv").read_bytes() == (tmp_path / "b/finals.csv").read_bytes()

    def test_identical_seeds_give_zero_covariance(self, tmp_path):
        doc = {**IID_DOC, "mode": "montecarlo", "n": 1000, "replications": 5,
               "replication_seeds": [3, 3, 3, 3, 3]}
        cfg = write_config(tmp_path, doc)
        main(["montecarlo", "--config", str(cfg), "--out", str(tmp_path)])
        payload = stripped(tmp_path / "montecarlo.json")
        assert np.max(np.abs(payload["n_cov"])) < 1e-20

    def test_theory_matrix_matches_direct_recomputation(self, tmp_path):
        from levyecf import FreqGrid, NoiseModel, sigma_eta
        doc = {**IID_DOC, "mode": "montecarlo", "n": 1000, "replications": 4}
        cfg = write_config(tmp_path, doc)
        main(["montecarlo", "--config", str(cfg), "--out", str(tmp_path)])
        payload = stripped(tmp_path / "montecarlo.json")
        direct = sigma_eta(NoiseModel("gaussian", [0.3, 1.0]), FreqGrid.equispaced(10, 2.0))
        np.testing.assert_array_equal(np.asarray(payload["sigma_theory"]), direct)


class TestOdeCheck:
    def test_iid_spectrum(self, tmp_path):
        doc = {**IID_DOC, "mode": "ode-check",
               "ode": {"n_path": 10_000, "dt": 0.1, "t_max": 2.0, "p_star_n": 20_000}}
        cfg = write_config(tmp_path, doc)
        main(["ode-check", "--config", str(cfg), "--out", str(tmp_path)])
        payload = stripped(tmp_path / "ode_check.json")
        eigs = np.asarray(payload["eigenvalues_re"]) + 1j * np.asarray(payload["eigenvalues_im"])
        assert np.max(np.abs(eigs + 1.0)) < 1e-4
        assert payload["rhs_norm_at_truth"] < 1e-10
        assert payload["path_escaped"] is False
        assert (tmp_path / "ode_path.csv").exists()
        assert (tmp_path / "ode_spectrum.csv").exists()

    def test_three_stage_diagnostics(self, tmp_path):
        doc = {**SYSTEM_DOC, "mode": "ode-check",
               "ode": {"n_path": 15_000, "dt": 0.05, "t_max": 2.0, "p_star_n": 20_000}}
        cfg = write_config(tmp_path, doc)
        main(["ode-check", "--config", str(cfg), "--out", str(tmp_path)])
        payload = stripped(tmp_path / "ode_check.json")
        assert payload["rhs_norm_at_truth"] < 1e-10
        eigs_re = np.asarray(payload["eigenvalues_re"])
        assert np.max(np.abs(eigs_re + 1.0)) < 0.1
        assert set(payload["blocks"]) == {"theta_p", "r_p", "eta", "r_e",
                                          "theta_s", "g_re", "g_im"}
        assert max(payload["rhs_standard_errors"].values()) < 1e-10
        assert "lyapunov_sigma_diag" in payload

    def test_equilibrium_path_constant(self, tmp_path):
        doc = {**IID_DOC, "mode": "ode-check",
               "ode": {"n_path": 5_000, "dt": 0.1, "t_max": 2.0, "p_star_n": 10_000}}
        cfg = write_config(tmp_path, doc)
        main(["ode-check", "--config", str(cfg), "--out", str(tmp_path)])
        rows = (tmp_path / "ode_path.csv").read_text().splitlines()
        first = np.array([float(v) for v in rows[1].split(",")[1:]])
        last = np.array([float(v) for v in rows[-1].split(",")[1:]])
        assert np.max(np.abs(first - last)) < 1e-8
