"""Command-line harness: generate problems, run two-phase pipelines, benchmark.

Subcommands
-----------
generate  write a seeded problem instance as JSON
run       phase one, bundle-size estimate, bundle Newton; write a CSV trace
bench     many seeded runs, one summary row each, in one CSV

Settings come from flags, from a JSON config file (``--config``), or both;
flags win.  Unknown config keys are rejected.  Outputs go to
``$KBUNDLE_OUTPUT_DIR`` (default: the working directory) unless a path is
given.  Exit codes: 0 success (whatever the mathematical termination),
2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import KBundleError
from .newton import NewtonConfig
from .phase1 import BundleMethodConfig
from .pipeline import (SUMMARY_COLUMNS, PipelineConfig, multistart_reference,
                       run_pipeline, summarize, trace_rows, write_trace)
from .problems import (FAMILIES, MaxEigProblem, generate_euc_sum, generate_max_eig, generate_max_quart,
                       load_problem, save_problem)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
OUTPUT_ENV = "KBUNDLE_OUTPUT_DIR"


class ConfigError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemSpec(_Strict):
    """A seeded instance, or a path to a saved one."""

    family: Optional[Literal["max-quart", "euc-sum", "max-eig"]] = None
    n: Optional[int] = Field(None, ge=1)
    k: Optional[int] = Field(None, ge=1)
    m: Optional[int] = Field(None, ge=1)
    seed: int = 0
    path: Optional[str] = None

    @model_validator(mode="after")
    def _complete(self):
        if self.path is not None:
            return self
        if self.family is None or self.n is None:
            raise ValueError("give either a problem path or family and n")
        if self.family == "max-eig":
            if self.m is None:
                raise ValueError("max-eig needs the matrix size m")
        else:
            if self.k is None:
                raise ValueError(f"{self.family} needs the number of pieces k")
            if self.k > self.n + 1:
                raise ValueError(
                    f"k = {self.k} exceeds n + 1 = {self.n + 1}; the bundle size is "
                    "bounded by 1 + dim of the subdifferential at the minimizer, "
                    "and that dimension is at most n")
        return self


class PipelineSpec(_Strict):
    phase1: Literal["auto", "bundle", "bfgs"] = "auto"
    rho: float = Field(1.0, gt=0)
    beta: float = Field(1e-5, gt=0, lt=1)
    epsilon_bar: float = Field(1e-6, ge=0)
    bundle_max_iterations: int = Field(1000, ge=1)
    bfgs_max_iterations: int = Field(1000, ge=1)
    rank_tolerance: float = Field(1e-3, gt=0)
    bundle_size: Optional[int] = Field(None, ge=1)
    variant: Literal["auto", "convex", "weakly-convex"] = "auto"
    eta: Union[float, Literal["dynamic"]] = 0.0
    sigma: float = Field(1e-10, ge=0)
    newton_epsilon_bar: float = Field(0.0, ge=0)
    newton_delta_bar: float = Field(0.0, ge=0)
    newton_max_iterations: int = Field(100, ge=1)
    start: Optional[List[float]] = None

    def to_pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            phase1=self.phase1,
            bundle=BundleMethodConfig(rho=self.rho, beta=self.beta,
                                      epsilon_bar=self.epsilon_bar,
                                      max_iterations=self.bundle_max_iterations),
            bfgs_max_iterations=self.bfgs_max_iterations,
            rank_tolerance=self.rank_tolerance, k=self.bundle_size,
            variant=self.variant,
            newton=NewtonConfig(epsilon_bar=self.newton_epsilon_bar,
                                delta_bar=self.newton_delta_bar, sigma=self.sigma,
                                eta=self.eta, max_iterations=self.newton_max_iterations),
            start=self.start)


class OutputSpec(_Strict):
    path: Optional[str] = None
    format: Literal["csv"] = "csv"


class BenchSpec(_Strict):
    seeds: List[int] = Field(default_factory=lambda: list(range(20)))
    k_values: Optional[List[int]] = None
    workers: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    problem: ProblemSpec
    pipeline: PipelineSpec = Field(default_factory=PipelineSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    bench: BenchSpec = Field(default_factory=BenchSpec)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    """``"0-19"``, ``"2,4,6"`` or a mix of both."""
    out: List[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, _, hi = part.partition("-")
        out.extend(range(int(lo), int(hi or lo) + 1))
    return out


def _eta(text: str):
    return text if text == "dynamic" else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbundle", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def problem_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--family", choices=FAMILIES)
        p.add_argument("--n", type=int)
        p.add_argument("--k", type=int, help="number of pieces (max-quart, euc-sum)")
        p.add_argument("--m", type=int, help="matrix size (max-eig)")
        p.add_argument("--seed", type=int)

    gen = sub.add_parser("generate", help="write a problem instance")
    problem_flags(gen)
    gen.add_argument("--reference-starts", type=int, default=0,
                     help="max-eig: record the best value of this many BFGS runs")
    gen.add_argument("--output", "-o", help="output file")

    def pipeline_flags(p):
        p.add_argument("--phase1", choices=("auto", "bundle", "bfgs"))
        p.add_argument("--epsilon-bar", type=float, help="phase-one stopping tolerance")
        p.add_argument("--rho", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--bundle-max-iterations", type=int)
        p.add_argument("--bfgs-max-iterations", type=int)
        p.add_argument("--rank-tolerance", type=float)
        p.add_argument("--bundle-size", type=int, help="override the estimated k")
        p.add_argument("--variant", choices=("auto", "convex", "weakly-convex"))
        p.add_argument("--eta", type=_eta, help="number or 'dynamic'")
        p.add_argument("--sigma", type=float)
        p.add_argument("--newton-epsilon-bar", type=float)
        p.add_argument("--newton-delta-bar", type=float)
        p.add_argument("--newton-max-iterations", type=int)

    run = sub.add_parser("run", help="run one two-phase pipeline")
    problem_flags(run)
    run.add_argument("--problem", help="saved problem JSON (instead of family/n/k)")
    pipeline_flags(run)
    run.add_argument("--output", "-o", help="trace CSV path")

    bench = sub.add_parser("bench", help="seeded trials, aggregate CSV")
    problem_flags(bench)
    pipeline_flags(bench)
    bench.add_argument("--seeds", type=_int_list, help="e.g. 0-19 or 1,5,9")
    bench.add_argument("--k-values", type=_int_list, help="e.g. 2,4,6")
    bench.add_argument("--workers", type=int)
    bench.add_argument("--output", "-o", help="aggregate CSV path")
    return parser


_PROBLEM_FLAGS = ("family", "n", "k", "m", "seed")
_PIPELINE_FLAGS = ("phase1", "epsilon_bar", "rho", "beta", "bundle_max_iterations",
                   "bfgs_max_iterations", "rank_tolerance", "bundle_size", "variant",
                   "eta", "sigma", "newton_epsilon_bar", "newton_delta_bar",
                   "newton_max_iterations")
_BENCH_FLAGS = ("seeds", "k_values", "workers")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the config file (if any) with the flags, then validate."""
    data: dict = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    sections = {name: dict(data.get(name) or {}) for name in
                ("problem", "pipeline", "output", "bench")}
    for key, section in ((f, "problem") for f in _PROBLEM_FLAGS):
        if getattr(args, key, None) is not None:
            sections[section][key] = getattr(args, key)
    if getattr(args, "problem", None):
        sections["problem"]["path"] = args.problem
    for key in _PIPELINE_FLAGS:
        if getattr(args, key, None) is not None:
            sections["pipeline"][key] = getattr(args, key)
    for key in _BENCH_FLAGS:
        if getattr(args, key, None) is not None:
            sections["bench"][key] = getattr(args, key)
    if getattr(args, "output", None):
        sections["output"]["path"] = args.output
    extra = set(data) - set(sections)
    merged = {**{k: data[k] for k in extra}, **sections}
    k_values = sections["bench"].get("k_values")
    if args.command == "bench" and k_values:
        # k varies per trial; check the problem spec against the largest one
        sections["problem"].setdefault("k", max(k_values))
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{where}: {msg}" if where else msg)
    return "invalid configuration:\n  " + "\n  ".join(lines)


def output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or ".")


def _resolve_path(path: Optional[str], default_name: str) -> Path:
    target = Path(path) if path else output_dir() / default_name
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def make_problem(spec: ProblemSpec):
    if spec.path is not None:
        return load_problem(spec.path)
    if spec.family == "max-eig":
        return generate_max_eig(spec.m, spec.n, spec.seed)
    gen = generate_max_quart if spec.family == "max-quart" else generate_euc_sum
    return gen(spec.n, spec.k, spec.seed)


def _stem(spec: ProblemSpec) -> str:
    if spec.path is not None:
        return Path(spec.path).stem
    size = f"m{spec.m}" if spec.family == "max-eig" else f"k{spec.k}"
    return f"{spec.family}-n{spec.n}-{size}-s{spec.seed}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(config: ExperimentConfig, reference_starts: int = 0) -> Path:
    problem = make_problem(config.problem)
    if reference_starts and isinstance(problem, MaxEigProblem):
        problem.reference_value = multistart_reference(problem, reference_starts,
                                                       seed=config.problem.seed)
    target = _resolve_path(config.output.path, _stem(config.problem) + ".json")
    save_problem(problem, target)
    return target


def cmd_run(config: ExperimentConfig) -> Path:
    problem = make_problem(config.problem)
    result = run_pipeline(problem, config.pipeline.to_pipeline())
    target = _resolve_path(config.output.path, _stem(config.problem) + "-trace.csv")
    with open(target, "w", newline="") as fh:
        write_trace(trace_rows(result), fh)
    tr = result.newton
    logger.info("termination %s, theta %.3e, diam %.3e, oracle calls %d",
                tr.termination.tag.value if tr else result.error,
                tr.final_theta if tr else float("nan"),
                tr.final_diam if tr else float("nan"), result.oracle_calls)
    return target


def run_trial(problem_spec: dict, pipeline_spec: dict) -> dict:
    """One bench trial; failures become a summary row with ``error`` set."""
    spec = ProblemSpec.model_validate(problem_spec)
    problem = None
    try:
        problem = make_problem(spec)
        result = run_pipeline(problem, PipelineSpec.model_validate(pipeline_spec).to_pipeline())
        return summarize(problem, result)
    except (KBundleError, ValueError, ArithmeticError, OSError) as exc:
        row = {c: "" for c in SUMMARY_COLUMNS}
        row.update(family=spec.family or "", n=spec.n or "", seed=spec.seed,
                   k_true=spec.k if spec.family != "max-eig" else "",
                   error=f"{type(exc).__name__}: {exc}")
        if problem is not None:
            row.update(summarize(problem, None, row["error"]))
        return row


def bench_trials(config: ExperimentConfig) -> List[tuple]:
    base = config.problem.model_dump()
    if config.problem.path is not None:
        return [(base, config.pipeline.model_dump())]
    if config.problem.family == "max-eig":
        ks = [None]
    else:
        ks = config.bench.k_values or [config.problem.k]
    trials = []
    for k in ks:
        for seed in config.bench.seeds:
            spec = {**base, "seed": seed}
            if k is not None:
                spec["k"] = k
            ProblemSpec.model_validate(spec)
            trials.append((spec, config.pipeline.model_dump()))
    return trials


def cmd_bench(config: ExperimentConfig) -> Path:
    try:
        trials = bench_trials(config)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc
    if config.bench.workers > 1:
        with ProcessPoolExecutor(max_workers=config.bench.workers) as pool:
            rows = list(pool.map(run_trial, *zip(*trials)))
    else:
        rows = [run_trial(*t) for t in trials]
    target = _resolve_path(config.output.path, f"bench-{config.problem.family or 'file'}.csv")
    with open(target, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("%.17e" % v if isinstance(v, float) else v)
                             for k, v in row.items()})
    return target


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "bench": cmd_bench}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        if args.command == "generate":
            if args.reference_starts < 0:
                raise ConfigError("--reference-starts must be nonnegative")
            target = cmd_generate(config, args.reference_starts)
        else:
            target = COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"kbundle: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KBundleError as exc:
        # invalid dimensions and similar problems with the requested instance
        print(f"kbundle: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"kbundle: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(target)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
