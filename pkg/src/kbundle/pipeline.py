"""Two-phase runs: a global first-order phase, then the bundle Newton method.

The first phase supplies candidate points, their gradients give the bundle
size and the initial bundle, and the Newton variant takes over.  The result
can be flattened into CSV rows (one per iteration of either phase).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, KBundleError
from .newton import ConvergenceTrace, NewtonConfig, run_newton
from .oracle import CountingOracle, Oracle
from .phase1 import (BundleMethodConfig, PhaseOneResult, estimate_bundle_size,
                     run_bundle_method, run_nonsmooth_bfgs, select_initial_bundle)
from .problems import EucSumProblem, MaxQuartProblem

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig", "PipelineResult", "run_pipeline", "TRACE_COLUMNS",
    "TRACE_SCHEMA_VERSION", "trace_rows", "write_trace", "summarize",
    "SUMMARY_COLUMNS", "default_phase1", "default_variant", "multistart_reference",
]

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("schema_version", "phase", "iteration", "oracle_calls",
                 "best_f", "theta", "diam", "termination")
SUMMARY_COLUMNS = ("family", "n", "k_true", "seed", "k_estimated", "phase1",
                   "phase1_termination", "phase1_calls", "newton_termination",
                   "newton_iterations", "oracle_calls", "best_f", "theta", "diam",
                   "calls_to_theta_1e-6", "calls_to_theta_1e-10", "error")


def default_phase1(problem) -> str:
    """Bundle method for the convex families, BFGS otherwise."""
    return "bfgs" if isinstance(problem, EucSumProblem) else "bundle"


def default_variant(problem) -> str:
    return "weakly-convex" if isinstance(problem, EucSumProblem) else "convex"


@dataclass
class PipelineConfig:
    """Settings of a two-phase run.

    ``phase1`` and ``newton.variant`` left as ``None`` / ``"auto"`` are
    filled in from the problem family.  ``k`` overrides the estimated
    bundle size.
    """

    phase1: str = "auto"
    bundle: BundleMethodConfig = field(default_factory=BundleMethodConfig)
    bfgs_max_iterations: int = 1000
    rank_tolerance: float = 1e-3
    k: Optional[int] = None
    variant: str = "auto"
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    start: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.phase1 not in ("auto", "bundle", "bfgs"):
            raise InvalidInputError(f"unknown phase-one method {self.phase1!r}")
        if self.variant not in ("auto", "convex", "weakly-convex"):
            raise InvalidInputError(
                f"pipeline variant must be convex or weakly-convex, got {self.variant!r}")
        if not self.rank_tolerance > 0:
            raise InvalidInputError("rank_tolerance must be positive")
        if self.k is not None and self.k < 1:
            raise InvalidInputError("k must be positive")


@dataclass
class PipelineResult:
    phase1_method: str
    phase_one: PhaseOneResult
    k: int
    newton: Optional[ConvergenceTrace]
    oracle_calls: int
    error: str = ""

    @property
    def best_f(self) -> float:
        best = self.phase_one.best_f
        if self.newton is not None:
            best = min(best, self.newton.best_f)
        return best


def _resolve(problem, config: PipelineConfig):
    phase1 = default_phase1(problem) if config.phase1 == "auto" else config.phase1
    variant = default_variant(problem) if config.variant == "auto" else config.variant
    eta = config.newton.eta
    if variant == "weakly-convex" and eta == 0.0:
        # eta = 0 would treat a nonconvex F as convex
        eta = "dynamic"
    newton = NewtonConfig(**{**config.newton.__dict__, "variant": variant, "eta": eta})
    return phase1, newton


def run_pipeline(problem: Oracle, config: PipelineConfig | None = None) -> PipelineResult:
    """Phase one, bundle-size estimate, subset selection, Newton phase.

    Mathematical failures of the second phase are reported through its
    termination tag.  Failures to form an initial bundle are reported in
    ``error`` with ``newton = None``.
    """
    config = config or PipelineConfig()
    phase1, newton_config = _resolve(problem, config)
    oracle = CountingOracle(problem)
    n = problem.n
    start = np.ones(n) if config.start is None else np.asarray(config.start, dtype=float)
    if start.shape != (n,):
        raise InvalidInputError(f"start point must have length {n}")
    if phase1 == "bundle":
        first = run_bundle_method(oracle, start, config.bundle)
    else:
        first = run_nonsmooth_bfgs(oracle, start, config.bfgs_max_iterations)
    k = config.k or estimate_bundle_size(first.candidates, config.rank_tolerance)
    k = min(k, n + 1)
    logger.info("phase one (%s) ended %s after %d calls; k = %d",
                phase1, first.termination, first.oracle_calls, k)
    try:
        bundle = select_initial_bundle(first.candidates, k)
    except KBundleError as exc:
        return PipelineResult(phase1, first, k, None, oracle.calls,
                              error=f"{type(exc).__name__}: {exc}")
    trace = run_newton(oracle, bundle, newton_config, oracle_calls=oracle.calls)
    return PipelineResult(phase1, first, k, trace, oracle.calls)


def multistart_reference(problem, starts: int = 5, seed: int = 0,
                         max_iterations: int = 1000) -> float:
    """Best value found by BFGS runs from ``starts`` random points.

    Used as the reference optimum of instances whose minimum is unknown.
    """
    if starts < 1:
        raise InvalidInputError("need at least one start")
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(starts):
        res = run_nonsmooth_bfgs(problem, rng.standard_normal(problem.n), max_iterations)
        best = min(best, res.best_f, res.candidates.samples[-1].value)
    return float(best)


def trace_rows(result: PipelineResult) -> List[dict]:
    """One row per phase-one iteration, the Newton start and each Newton step."""
    rows = []
    p1 = result.phase_one
    for i, rec in enumerate(p1.records):
        last = i == len(p1.records) - 1
        rows.append({"phase": "phase1", "iteration": rec.iteration,
                     "oracle_calls": rec.oracle_calls, "best_f": rec.best_f,
                     "theta": rec.theta, "diam": rec.diam,
                     "termination": p1.termination if last else ""})
    if result.newton is None:
        rows.append({"phase": "newton", "iteration": 0,
                     "oracle_calls": result.oracle_calls, "best_f": p1.best_f,
                     "theta": math.nan, "diam": math.nan,
                     "termination": result.error})
        return rows
    tr = result.newton
    floor = p1.best_f if p1.records else tr.initial_best_f
    handoff = p1.records[-1].oracle_calls if p1.records else result.oracle_calls
    rows.append({"phase": "newton", "iteration": 0, "oracle_calls": handoff,
                 "best_f": min(floor, tr.initial_best_f), "theta": tr.initial_theta,
                 "diam": tr.initial_diam, "termination": ""})
    for rec in tr.records:
        rows.append({"phase": "newton", "iteration": rec.iteration,
                     "oracle_calls": rec.oracle_calls, "best_f": min(floor, rec.best_f),
                     "theta": rec.theta, "diam": rec.diam, "termination": ""})
    rows[-1]["termination"] = tr.termination.tag.value
    return rows


def _fmt(value):
    if isinstance(value, float):
        return "%.17e" % value
    return value


def write_trace(rows: Sequence[dict], stream) -> None:
    """CSV with a header row; floats in ``%.17e`` so they round-trip exactly."""
    writer = csv.DictWriter(stream, fieldnames=TRACE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({"schema_version": TRACE_SCHEMA_VERSION,
                         **{k: _fmt(v) for k, v in row.items()}})


def trace_csv(result: PipelineResult) -> str:
    buf = io.StringIO()
    write_trace(trace_rows(result), buf)
    return buf.getvalue()


def _calls_to(rows, threshold):
    for row in rows:
        if row["phase"] == "newton" and row["theta"] < threshold:
            return row["oracle_calls"]
    return ""


def summarize(problem, result: PipelineResult | None, error: str = "") -> dict:
    """Scalar summary of one run (``result`` may be ``None`` after a failure)."""
    k_true = getattr(problem, "k", "") if isinstance(
        problem, (MaxQuartProblem, EucSumProblem)) else getattr(problem, "multiplicity", "")
    base = {"family": getattr(problem, "family", ""), "n": problem.n,
            "k_true": "" if k_true is None else k_true,
            "seed": "" if getattr(problem, "seed", None) is None else problem.seed}
    if result is None:
        return {**{c: "" for c in SUMMARY_COLUMNS}, **base, "error": error}
    rows = trace_rows(result)
    last = rows[-1]
    tr = result.newton
    return {**base, "k_estimated": result.k, "phase1": result.phase1_method,
            "phase1_termination": result.phase_one.termination,
            "phase1_calls": result.phase_one.oracle_calls,
            "newton_termination": tr.termination.tag.value if tr else "",
            "newton_iterations": tr.iterations if tr else 0,
            "oracle_calls": result.oracle_calls if tr is None else tr.oracle_calls,
            "best_f": result.best_f, "theta": last["theta"], "diam": last["diam"],
            "calls_to_theta_1e-6": _calls_to(rows, 1e-6),
            "calls_to_theta_1e-10": _calls_to(rows, 1e-10),
            "error": error or result.error}
