import json

import pytest

from rpfa.cli import EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, main
from rpfa.dataset import ingest_csv


@pytest.fixture(scope="module")
def log_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "log.csv"
    assert main(["simulate", "--n-students", "150", "--n-kcs", "6", "--seed", "3", "--out", str(path)]) == EXIT_OK
    return path


class TestSimulate:
    def test_writes_dataset_and_latent(self, tmp_path):
        out, latent = tmp_path / "d.csv", tmp_path / "z.csv"
        code = main(["simulate", "--generator", "bkt3", "--n-students", "40", "--n-kcs", "4",
                     "--seed", "1", "--out", str(out), "--emit-latent", str(latent)])
        assert code == EXIT_OK
        ds = ingest_csv(str(out))
        lines = latent.read_text().splitlines()
        assert lines[0] == "student,kc,t,Z"
        assert len(lines) - 1 == ds.n_attempts

    def test_seed_fixes_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            main(["simulate", "--n-students", "30", "--n-kcs", "3", "--seed", "8", "--out", str(path)])
        assert a.read_bytes() == b.read_bytes()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"generator": "bkt_fs", "n_students": 25, "n_kcs": 3, "seed": 2,
                                   "p_correct_during_fs": 0.02}))
        out = tmp_path / "d.csv"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        assert ingest_csv(str(out)).n_students <= 25


class TestModelCommands:
    def test_featurize(self, log_csv, tmp_path):
        out = tmp_path / "f.csv"
        assert main(["featurize", "--data", str(log_csv), "--model", "R-PFA:r=0.7,f=0.1", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("#") and lines[1] == "student,kc,t,outcome,T,S,F,R"
        assert len(lines) - 2 == ingest_csv(str(log_csv)).n_attempts

    def test_fit(self, log_csv, tmp_path):
        out = tmp_path / "m.json"
        assert main(["fit", "--data", str(log_csv), "--model", "PFA", "--out", str(out), "--strict"]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["converged"] and payload["aic"] == pytest.approx(
            2 * payload["n_params"] - 2 * payload["log_likelihood"])

    def test_cv(self, log_csv, tmp_path):
        out = tmp_path / "cv.json"
        code = main(["cv", "--data", str(log_csv), "--model", "AFM", "--model", "R-PFA:r=0.6,f=0.1",
                     "--k-folds", "3", "--seed", "1", "--out", str(out)])
        assert code == EXIT_OK
        results = json.loads(out.read_text())["results"]
        assert len(results) == 4

    def test_compare_csv(self, log_csv, tmp_path):
        out = tmp_path / "cmp.csv"
        assert main(["compare", "--data", str(log_csv), "--format", "csv", "--out", str(out)]) == EXIT_OK
        assert len(out.read_text().splitlines()) == 9

    def test_missing_data(self):
        assert main(["fit", "--model", "AFM"]) == EXIT_INVALID

    def test_bad_model(self, log_csv):
        assert main(["fit", "--data", str(log_csv), "--model", "XYZ"]) == EXIT_INVALID


class TestHarnessCommands:
    def test_sweep_simulated(self, tmp_path):
        out = tmp_path / "sweep.json"
        code = main(["sweep", "--n-students", "150", "--n-kcs", "6", "--family", "R-PFA",
                     "--success-grid", "0.4,0.8", "--seed", "5", "--out", str(out)])
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert len(report["cells"]) == 2 and report["provenance"]["seed"] == 5

    def test_sweep_too_few_students_for_folds(self, tmp_path):
        # a single student cannot be split into three folds
        out = tmp_path / "bad.json"
        args = ["sweep", "--n-students", "1", "--n-kcs", "2", "--family", "R-only",
                "--success-grid", "0.5", "--metric", "cv_pe", "--k-folds", "3", "--out", str(out)]
        assert main(args) == EXIT_INVALID

    def test_study_and_allow_partial(self, tmp_path):
        cfg = tmp_path / "study.json"
        cfg.write_text(json.dumps({"replications": 2, "population": {"n_kcs": 3, "n_students": 3}}))
        out = tmp_path / "study.json.out"
        assert main(["study", "--config", str(cfg), "--out", str(out)]) == EXIT_PARTIAL
        assert main(["study", "--config", str(cfg), "--out", str(out), "--allow-partial"]) == EXIT_OK
        assert len(json.loads(out.read_text())["replications"]) == 2

    def test_study_small(self, tmp_path):
        out = tmp_path / "study.csv"
        code = main(["study", "--replications", "1", "--n-students", "100", "--n-kcs", "5",
                     "--seed", "2", "--format", "csv", "--out", str(out)])
        assert code == EXIT_OK
        rows = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert rows[0] == "measure,model,rank,proportion"
        assert len(rows) == 1 + 3 * 7 * 7
