import csv
import io

import numpy as np
import pytest

from kbundle.errors import InvalidInputError
from kbundle.oracle import Oracle
from kbundle.pipeline import (SUMMARY_COLUMNS, TRACE_COLUMNS, PipelineConfig,
                              multistart_reference, run_pipeline, summarize, trace_rows,
                              write_trace)
from kbundle.problems import generate_euc_sum, generate_max_eig, generate_max_quart


class Tally(Oracle):
    """Counts calls independently of the pipeline's own counter."""

    def __init__(self, problem):
        self.problem = problem
        self.n = problem.n
        self.count = 0

    def evaluate(self, x):
        self.count += 1
        return self.problem.evaluate(x)


@pytest.fixture(scope="module")
def quart_run():
    p = generate_max_quart(10, 4, seed=0)
    return p, run_pipeline(p)


def csv_text(result):
    buf = io.StringIO()
    write_trace(trace_rows(result), buf)
    return buf.getvalue()


class TestTrace:
    def test_phases_in_order(self, quart_run):
        _, res = quart_run
        rows = trace_rows(res)
        phases = [r["phase"] for r in rows]
        first_newton = phases.index("newton")
        assert set(phases[:first_newton]) == {"phase1"}
        assert set(phases[first_newton:]) == {"newton"}
        assert len(rows) == len(res.phase_one.records) + 1 + res.newton.iterations
        assert rows[-1]["termination"] == res.newton.termination.tag.value

    def test_oracle_calls_match_an_outside_count(self):
        f = Tally(generate_max_quart(8, 3, seed=1))
        res = run_pipeline(f)
        rows = trace_rows(res)
        assert rows[-1]["oracle_calls"] == f.count == res.oracle_calls
        calls = [r["oracle_calls"] for r in rows]
        assert calls == sorted(calls)

    def test_best_f_never_increases(self, quart_run):
        _, res = quart_run
        best = [r["best_f"] for r in trace_rows(res)]
        assert all(b <= a for a, b in zip(best, best[1:]))

    def test_csv_round_trip(self, quart_run):
        _, res = quart_run
        rows = trace_rows(res)
        parsed = list(csv.DictReader(io.StringIO(csv_text(res))))
        assert tuple(parsed[0]) == TRACE_COLUMNS
        assert all(r["schema_version"] == "1" for r in parsed)
        for a, b in zip(rows, parsed):
            for col in ("best_f", "theta", "diam"):
                assert float(b[col]) == a[col] or (np.isnan(a[col]) and b[col] == "nan")

    def test_rerun_is_bitwise_identical(self):
        p = generate_euc_sum(6, 3, seed=2)
        assert csv_text(run_pipeline(p)) == csv_text(run_pipeline(p))


class TestRun:
    def test_convex_default(self, quart_run):
        p, res = quart_run
        assert res.phase1_method == "bundle" and res.k == 4
        assert res.newton.final_theta < 1e-10
        assert res.best_f - p.min_value() < 1e-12

    def test_nonconvex_default_uses_bfgs_and_dynamic_eta(self):
        res = run_pipeline(generate_euc_sum(6, 3, seed=0))
        assert res.phase1_method == "bfgs"
        assert all(isinstance(r.eta, float) and r.eta >= 0 for r in res.newton.records)

    def test_bundle_size_override(self):
        res = run_pipeline(generate_max_quart(6, 3, seed=0), PipelineConfig(k=2))
        assert res.k == 2 and len(res.newton.records[0].lam) == 2

    def test_start_length_checked(self):
        with pytest.raises(InvalidInputError):
            run_pipeline(generate_max_quart(4, 2, seed=0), PipelineConfig(start=[1.0]))

    def test_unformable_bundle_is_reported(self):
        res = run_pipeline(generate_max_quart(4, 2, seed=0), PipelineConfig(k=5))
        assert res.newton is None and res.error
        rows = trace_rows(res)
        assert rows[-1]["termination"] == res.error

    @pytest.mark.parametrize("kw", [{"phase1": "lbfgs"}, {"variant": "sum"},
                                    {"rank_tolerance": 0.0}, {"k": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidInputError):
            PipelineConfig(**kw)


class TestSummary:
    def test_columns_and_thresholds(self, quart_run):
        p, res = quart_run
        row = summarize(p, res)
        assert tuple(row) == SUMMARY_COLUMNS
        assert row["k_true"] == 4 and row["k_estimated"] == 4
        assert row["calls_to_theta_1e-6"] <= row["calls_to_theta_1e-10"] <= row["oracle_calls"]

    def test_failed_run(self):
        p = generate_max_eig(3, 4, seed=0)
        row = summarize(p, None, "boom")
        assert row["error"] == "boom" and row["family"] == "max-eig"
        assert row["newton_termination"] == ""


def test_multistart_reference_bounds_a_single_run():
    p = generate_max_eig(4, 5, seed=0)
    ref = multistart_reference(p, starts=3, seed=0, max_iterations=200)
    single = run_pipeline(p, PipelineConfig(phase1="bfgs", bfgs_max_iterations=200))
    assert ref <= single.phase_one.best_f + 1e-6
    with pytest.raises(InvalidInputError):
        multistart_reference(p, starts=0)
