import csv
import json

import pytest

from kbundle.cli import main, run_trial
from kbundle.problems import load_problem


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("KBUNDLE_OUTPUT_DIR", str(tmp_path / "out"))
    return tmp_path / "out"


class TestGenerate:
    def test_default_location_from_env(self, outdir, capsys):
        assert main(["generate", "--family", "max-quart", "--n", "5", "--k", "3",
                     "--seed", "4"]) == 0
        path = outdir / "max-quart-n5-k3-s4.json"
        assert capsys.readouterr().out.strip() == str(path)
        p = load_problem(path)
        assert (p.n, p.k, p.seed) == (5, 3, 4)

    def test_max_eig_with_reference(self, tmp_path):
        target = tmp_path / "eig.json"
        assert main(["generate", "--family", "max-eig", "--m", "3", "--n", "4",
                     "--reference-starts", "2", "-o", str(target)]) == 0
        assert load_problem(target).reference_value is not None

    def test_bundle_size_above_bound_rejected(self, capsys):
        code = main(["generate", "--family", "euc-sum", "--n", "3", "--k", "5"])
        assert code == 2
        err = capsys.readouterr().err
        assert "n + 1" in err and "subdifferential" in err

    @pytest.mark.parametrize("argv", [
        ["generate", "--family", "max-quart", "--n", "5"],
        ["generate", "--family", "max-eig", "--n", "5"],
        ["generate", "--family", "other", "--n", "5", "--k", "2"],
        ["generate", "--reference-starts", "-1", "--family", "max-eig", "--n", "3", "--m", "2"],
        ["nonsense"],
    ])
    def test_config_errors(self, argv):
        assert main(argv) == 2


class TestConfigFile:
    def test_flags_override_file(self, tmp_path, outdir):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"problem": {"family": "max-quart", "n": 4, "k": 2,
                                               "seed": 1}}))
        assert main(["generate", "--config", str(cfg), "--seed", "9"]) == 0
        assert (outdir / "max-quart-n4-k2-s9.json").exists()

    @pytest.mark.parametrize("doc", [
        {"problem": {"family": "max-quart", "n": 4, "k": 2}, "extra": 1},
        {"problem": {"family": "max-quart", "n": 4, "k": 2, "colour": "red"}},
        {"problem": {"family": "max-quart", "n": 4, "k": 2}, "pipeline": {"rho": -1}},
        [1, 2],
    ])
    def test_invalid_documents(self, tmp_path, doc):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(doc))
        assert main(["run", "--config", str(cfg)]) == 2

    def test_malformed_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["run", "--config", str(cfg)]) == 2

    def test_missing_files_are_io_errors(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.json")]) == 3
        assert main(["run", "--problem", str(tmp_path / "none.json")]) == 3


class TestRun:
    def test_trace_written(self, outdir):
        assert main(["run", "--family", "max-quart", "--n", "6", "--k", "3"]) == 0
        rows = read_csv(outdir / "max-quart-n6-k3-s0-trace.csv")
        assert rows[0]["phase"] == "phase1" and rows[-1]["phase"] == "newton"
        assert rows[-1]["termination"]

    def test_saved_problem(self, tmp_path):
        prob = tmp_path / "p.json"
        main(["generate", "--family", "euc-sum", "--n", "5", "--k", "3", "-o", str(prob)])
        out = tmp_path / "t.csv"
        assert main(["run", "--problem", str(prob), "-o", str(out)]) == 0
        assert read_csv(out)

    def test_mathematical_failure_still_exits_zero(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["run", "--family", "max-quart", "--n", "4", "--k", "3",
                     "--bundle-size", "1", "--newton-max-iterations", "3",
                     "-o", str(out)]) == 0
        assert read_csv(out)[-1]["termination"] == "IterationCap"


class TestBench:
    def test_rows_and_composition(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["bench", "--family", "max-quart", "--n", "5", "--seeds", "0-2",
                     "--k-values", "2,3", "-o", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 6
        assert [(r["k_true"], r["seed"]) for r in rows] == \
            [(str(k), str(s)) for k in (2, 3) for s in range(3)]
        pipe = {"newton_max_iterations": 100}
        for r in rows:
            single = run_trial({"family": "max-quart", "n": 5, "k": int(r["k_true"]),
                                "seed": int(r["seed"])}, pipe)
            assert float(r["theta"]) == single["theta"]
            assert int(r["oracle_calls"]) == single["oracle_calls"]

    def test_parallel_matches_serial(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        argv = ["bench", "--family", "euc-sum", "--n", "4", "--k", "2", "--seeds", "0,1"]
        assert main(argv + ["-o", str(a)]) == 0
        assert main(argv + ["--workers", "2", "-o", str(b)]) == 0
        assert a.read_text() == b.read_text()

    def test_k_values_checked_against_bound(self):
        assert main(["bench", "--family", "max-quart", "--n", "3", "--k-values", "2,9"]) == 2

    def test_trial_errors_recorded(self):
        row = run_trial({"family": "max-quart", "n": 4, "k": 2},
                        {"bundle_size": 5, "newton_max_iterations": 5})
        assert row["error"] and row["family"] == "max-quart"
