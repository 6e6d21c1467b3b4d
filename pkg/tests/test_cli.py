import csv
import json

import numpy as np
import pytest

from offsetcal import cli
from offsetcal.manifest import RunManifest
from offsetcal.model import SingularSystemError
from offsetcal.simulator import CSV_COLUMNS


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_csv(path, rows, header=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        w.writerows(rows)
    return path


class TestBounds:
    def test_average_reference(self, capsys):
        code, out, _ = run(capsys, "bounds", "--n", 10, "--k", 100, "--sigma2", "1e-3", "--ref", "average",
                           "--format", "json")
        assert code == 0
        assert json.loads(out)["ccrb_trace"] == pytest.approx(9e-5, rel=1e-12)

    def test_single_reference_pair(self, capsys):
        code, out, _ = run(capsys, "bounds", "--n", 2, "--k", 1, "--sigma2", "1", "--ref", "single:0",
                           "--format", "json")
        assert code == 0
        assert json.loads(out)["ccrb_trace"] == pytest.approx(2.0, rel=1e-12)

    def test_text_output(self, capsys):
        code, out, _ = run(capsys, "bounds", "--n", 10, "--k", 100, "--sigma2", "1e-3")
        assert code == 0
        assert "ccrb trace: 9e-05" in out

    def test_diagonal_noise_reports_both_gaps(self, capsys):
        code, out, _ = run(capsys, "bounds", "--n", 2, "--k", 1, "--sigma2", "1,2", "--format", "json")
        d = json.loads(out)["diagonal_noise"]
        assert code == 0
        assert d["gap"] == pytest.approx(1.5, rel=1e-12)
        assert d["closed_form_gap"] == pytest.approx(4 / 3, rel=1e-12)

    def test_cov_file_and_matrix(self, capsys, tmp_path):
        cov = write_csv(tmp_path / "cov.csv", [[2e-3, 5e-4], [5e-4, 1e-3]])
        code, out, _ = run(capsys, "bounds", "--n", 2, "--k", 4, "--cov-file", cov, "--format", "json", "--matrix")
        res = json.loads(out)
        assert code == 0
        assert np.trace(res["ccrb_matrix"]) == pytest.approx(res["ccrb_trace"])
        assert res["closed_form_trace"] is None

    def test_missing_n_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["bounds", "--k", "10", "--sigma2", "1e-3"])
        assert exc.value.code == 2

    @pytest.mark.parametrize("argv", [
        ["--n", "3", "--k", "2", "--sigma2", "1,2"],
        ["--n", "3", "--k", "2", "--sigma2", "-1"],
        ["--n", "3", "--k", "2", "--sigma2", "1e-3", "--ref", "single:3"],
        ["--n", "3", "--k", "2", "--sigma2", "1e-3", "--ref", "median"],
        ["--n", "3", "--k", "2"],
        ["--n", "1", "--k", "2", "--sigma2", "1"],
    ])
    def test_invalid_specs(self, capsys, argv):
        code, _, err = run(capsys, "bounds", *argv)
        assert code == 2
        assert err.count("\n") == 1

    def test_out_directory(self, capsys, tmp_path):
        code, _, _ = run(capsys, "bounds", "--n", 4, "--k", 3, "--sigma2", "1e-3", "--out", tmp_path)
        assert code == 0
        assert all(RunManifest.read(tmp_path / "manifest.json").verify(tmp_path).values())


class TestEstimate:
    def test_noiseless_recovery(self, capsys, tmp_path):
        theta = np.array([0.0, 0.7, -1.25, 3.0])
        t = np.arange(6) * 0.5
        path = write_csv(tmp_path / "y.csv", t[None, :] + theta[:, None], header=[f"t{i}" for i in range(6)])
        code, out, _ = run(capsys, "estimate", path, "--n", 4, "--k", 6, "--sigma2", "1e-3", "--ref", "single:0")
        assert code == 0
        np.testing.assert_allclose(json.loads(out)["estimate"]["theta_hat"], theta, atol=1e-10)

    def test_two_sensor_average(self, capsys, tmp_path):
        path = write_csv(tmp_path / "y.csv", [[0.0], [1.0]])
        code, out, _ = run(capsys, "estimate", path, "--sigma2", "1")
        assert code == 0
        np.testing.assert_allclose(json.loads(out)["estimate"]["theta_hat"], [-0.5, 0.5], atol=1e-14)

    def test_writes_csv_and_manifest(self, capsys, tmp_path):
        path = write_csv(tmp_path / "y.csv", [[0.0, 0.1], [1.0, 1.1], [2.0, 2.3]])
        out_dir = tmp_path / "res"
        code, _, _ = run(capsys, "estimate", path, "--sigma2", "1e-3,2e-3,3e-3", "--format", "csv",
                         "--out", out_dir)
        assert code == 0
        rows = list(csv.reader(open(out_dir / "estimate.csv")))
        assert rows[0] == ["sensor", "theta_hat"] and len(rows) == 4
        assert RunManifest.read(out_dir / "manifest.json").verify(out_dir) == {"estimate.csv": True}

    def test_dimension_mismatch(self, capsys, tmp_path):
        path = write_csv(tmp_path / "y.csv", [[0.0, 1.0], [1.0, 2.0]])
        code, _, err = run(capsys, "estimate", path, "--n", 3, "--sigma2", "1")
        assert code == 2
        assert "--n" in err

    def test_malformed_cell(self, capsys, tmp_path):
        path = write_csv(tmp_path / "y.csv", [[0.0, 1.0], [1.0, "abc"]])
        code, _, err = run(capsys, "estimate", path, "--sigma2", "1")
        assert code == 2
        assert "row 2" in err and "column 2" in err

    def test_ragged_rows(self, capsys, tmp_path):
        path = tmp_path / "y.csv"
        path.write_text("0,1\n1\n")
        code, _, err = run(capsys, "estimate", path, "--sigma2", "1")
        assert code == 2
        assert "row 2" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "estimate", tmp_path / "nope.csv", "--sigma2", "1")
        assert code == 2

    def test_numerical_failure_exit_code(self, capsys, tmp_path, monkeypatch):
        def boom(*_a, **_k):
            raise SingularSystemError("unidentifiable: constraint does not complete the model")

        monkeypatch.setattr(cli, "estimate_offsets", boom)
        path = write_csv(tmp_path / "y.csv", [[0.0], [1.0]])
        code, _, err = run(capsys, "estimate", path, "--sigma2", "1")
        assert code == 3
        assert "unidentifiable" in err


class TestReproduce:
    small = ("--n", "5,10", "--k", "10,20", "--runs", "40")

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert run(capsys, "reproduce", "fig1a", *self.small, "--seed", 7, "--out", tmp_path / d)[0] == 0
        assert (tmp_path / "a" / "fig1a.csv").read_bytes() == (tmp_path / "b" / "fig1a.csv").read_bytes()
        run(capsys, "reproduce", "fig1a", *self.small, "--seed", 8, "--out", tmp_path / "c")
        assert (tmp_path / "a" / "fig1a.csv").read_bytes() != (tmp_path / "c" / "fig1a.csv").read_bytes()

    def test_worker_count_does_not_change_output(self, capsys, tmp_path):
        run(capsys, "reproduce", "fig1a", *self.small, "--workers", 1, "--out", tmp_path / "a")
        run(capsys, "reproduce", "fig1a", *self.small, "--workers", 3, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "fig1a.csv").read_bytes() == (tmp_path / "b" / "fig1a.csv").read_bytes()

    def test_csv_schema_and_manifest(self, capsys, tmp_path):
        code, _, _ = run(capsys, "reproduce", "fig1a", *self.small, "--svg", "--out", tmp_path)
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "fig1a.csv")))
        assert tuple(rows[0].keys()) == CSV_COLUMNS
        assert len(rows) == 4
        assert all(float(r["delta_ccrb"]) == 0.5 for r in rows)
        manifest = RunManifest.read(tmp_path / "manifest.json")
        assert manifest.verify(tmp_path) == {"fig1a.csv": True, "fig1a.svg": True}
        assert manifest.master_seed == 12345
        assert (tmp_path / "fig1a.svg").read_text().startswith("<svg")

    def test_tampered_output_detected(self, capsys, tmp_path):
        run(capsys, "reproduce", "fig1a", *self.small, "--out", tmp_path)
        with open(tmp_path / "fig1a.csv", "a") as fh:
            fh.write("\n")
        assert RunManifest.read(tmp_path / "manifest.json").verify(tmp_path) == {"fig1a.csv": False}

    @pytest.mark.parametrize("figure", ["fig1b", "fig1c"])
    def test_variance_sweeps(self, capsys, tmp_path, figure):
        code, _, _ = run(capsys, "reproduce", figure, "--runs", 30, "--step", 45, "--format", "json", "--svg",
                         "--out", tmp_path)
        assert code == 0
        res = json.loads((tmp_path / f"{figure}.json").read_text())
        assert len(res["records"]) == 3
        assert len(res["variances"]) == (5 if figure == "fig1b" else 100)

    def test_config_file_with_flag_override(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_values": [4], "k_values": [3, 6], "runs_per_cell": 10, "master_seed": 99}))
        code, _, _ = run(capsys, "reproduce", "fig1a", "--config", cfg, "--seed", 5, "--out", tmp_path / "o")
        assert code == 0
        manifest = RunManifest.read(tmp_path / "o" / "manifest.json")
        assert manifest.master_seed == 5
        assert manifest.config["experiment"]["runs_per_cell"] == 10
        assert manifest.config["experiment"]["k_values"] == [3, 6]

    def test_bad_config(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(capsys, "reproduce", "fig1a", "--config", cfg, "--out", tmp_path)[0] == 2
        cfg.write_text("{not json")
        assert run(capsys, "reproduce", "fig1a", "--config", cfg, "--out", tmp_path)[0] == 2
        assert run(capsys, "reproduce", "fig1a", "--runs", 0, "--out", tmp_path)[0] == 2
