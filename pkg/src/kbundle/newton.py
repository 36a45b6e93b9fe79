"""The k-bundle Newton method and its two extensions.

``run_convex``         strongly convex ``f``
``run_sum``            ``F = f + r`` with ``f`` strongly convex and ``r`` smooth
``run_weakly_convex``  ``F`` with ``F + eta/2 |.|^2`` convex

Each iteration computes the multiplier estimate of the bundle, solves the
equality-constrained quadratic subproblem for a new point ``xhat`` and swaps
it in for the reference point whose removal leaves the smallest optimality
measure.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .bundle import (Bundle, bundle_theta, diameter, points_distinct,
                     replace_reference, sigma_check)
from .errors import (DegenerateBundleError, DegenerateConstraintsError,
                     InvalidInputError, SingularSystemError, SolverFailureError,
                     UnboundedSubproblemError)
from .oracle import Oracle, SumOracle, identity_hessian_wrapper
from .qp import NewtonSubproblem, solve_newton_subproblem

logger = logging.getLogger(__name__)

__all__ = [
    "NewtonConfig", "Termination", "TerminationReason", "IterationRecord",
    "ConvergenceTrace", "run_convex", "run_sum", "run_weakly_convex",
    "run_newton", "identity_hessian_wrapper", "dynamic_eta",
]

VARIANTS = ("convex", "sum", "weakly-convex")


class Termination(str, enum.Enum):
    NEARLY_OPTIMAL = "NearlyOptimal"
    NONSMOOTH_POINT = "NonsmoothPoint"
    AFFINE_DEPENDENT = "AffineDependentGradients"
    UNBOUNDED = "UnboundedSubproblem"
    ITERATION_CAP = "IterationCap"
    STALLED = "Stalled"


@dataclass(frozen=True)
class TerminationReason:
    tag: Termination
    detail: str = ""


@dataclass
class NewtonConfig:
    """Tolerances and plumbing for the Newton loops.

    ``eta`` is the weak convexity parameter (a number, or ``"dynamic"`` to
    recompute it from the stored Hessians each iteration); it is ignored by
    the convex and sum variants.  ``sigma = 0`` disables the affine
    independence check.  ``stall_window`` defaults to ``5 * k``.  With
    ``stop_on_unbounded = False`` an indefinite (but nonsingular) subproblem
    does not stop the run: its stationary point is taken as the next
    iterate, that is, the KKT equations are solved as a Newton system.
    """

    epsilon_bar: float = 0.0
    delta_bar: float = 0.0
    sigma: float = 1e-10
    eta: Union[float, str] = 0.0
    max_iterations: int = 100
    stall_window: Optional[int] = None
    variant: str = "convex"
    stall_factor: float = 1e-3
    reduced_threshold: Optional[float] = 1e8
    project_anchors: bool = True
    stop_on_unbounded: bool = True

    def __post_init__(self):
        if self.epsilon_bar < 0 or self.delta_bar < 0 or self.sigma < 0:
            raise InvalidInputError("tolerances must be nonnegative")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if isinstance(self.eta, str):
            if self.eta != "dynamic":
                raise InvalidInputError("eta must be a number or 'dynamic'")
        elif self.eta < 0:
            raise InvalidInputError("eta must be nonnegative")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if self.stall_window is not None and self.stall_window < 1:
            raise InvalidInputError("stall_window must be positive")


@dataclass
class IterationRecord:
    iteration: int
    diam: float
    theta: float
    best_f: float
    lam: np.ndarray
    replaced: int
    oracle_calls: int
    xhat: np.ndarray
    eta: float = 0.0
    method: str = ""
    xhat_region: object = None
    replaced_region: object = None


@dataclass
class ConvergenceTrace:
    records: list = field(default_factory=list)
    termination: Optional[TerminationReason] = None
    bundle: Optional[Bundle] = None
    initial_diam: float = float("nan")
    initial_theta: float = float("nan")
    initial_best_f: float = float("nan")
    oracle_calls: int = 0
    last_xhat: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def diameters(self) -> np.ndarray:
        return np.array([self.initial_diam] + [r.diam for r in self.records])

    def thetas(self) -> np.ndarray:
        return np.array([self.initial_theta] + [r.theta for r in self.records])

    @property
    def final_theta(self) -> float:
        return self.records[-1].theta if self.records else self.initial_theta

    @property
    def final_diam(self) -> float:
        return self.records[-1].diam if self.records else self.initial_diam

    @property
    def best_f(self) -> float:
        return self.records[-1].best_f if self.records else self.initial_best_f


def dynamic_eta(hessians) -> float:
    """``max_s lambda_max(-H_s)`` plus a small strict-inequality margin, floored at 0."""
    top = max(float(np.linalg.eigvalsh(-H)[-1]) for H in hessians)
    return max(0.0, top + 1e-6 * (1.0 + abs(top)))


class _Evaluator:
    """Evaluates the objective (and the constraint component for sums)."""

    def __init__(self, measure: Oracle, component: Oracle | None = None, calls: int = 0):
        self.measure = measure
        self.component = component
        self.calls = calls

    def __call__(self, x):
        self.calls += 1
        if self.component is None:
            return self.measure.evaluate(x), None
        a = self.component.evaluate(x)
        return self.measure.evaluate(x), a


def _initial_samples(evaluate: _Evaluator, initial, reuse: bool):
    if isinstance(initial, Bundle):
        if reuse and all(s.hessian is not None for s in initial):
            return list(initial.samples), None
        points = initial.points
    else:
        points = np.atleast_2d(np.asarray(initial, dtype=float))
    pairs = [evaluate(p) for p in points]
    return [p[0] for p in pairs], (None if pairs[0][1] is None else [p[1] for p in pairs])


def _newton_loop(evaluate: _Evaluator, initial, config: NewtonConfig,
                 linearize: Callable, reuse_initial: bool) -> ConvergenceTrace:
    samples, aux = _initial_samples(evaluate, initial, reuse_initial)
    bundle = Bundle(tuple(samples))
    k, n = bundle.k, bundle.n
    if k > n + 1:
        raise InvalidInputError(f"bundle size k = {k} exceeds n + 1 = {n + 1}")
    window = config.stall_window or 5 * k
    trace = ConvergenceTrace(bundle=bundle)
    best_f = float(min(s.value for s in samples))
    est = bundle_theta(bundle)
    trace.initial_diam = diameter(bundle.points)
    trace.initial_theta = est.theta
    trace.initial_best_f = best_f
    ref_progress = np.inf if k == 1 else trace.initial_diam
    since_progress = 0

    def stop(tag, detail=""):
        trace.termination = TerminationReason(tag, detail)
        trace.bundle = bundle
        trace.oracle_calls = evaluate.calls
        logger.debug("newton stopped: %s %s", tag.value, detail)
        return trace

    for it in range(1, config.max_iterations + 1):
        G = bundle.gradients
        if config.sigma > 0 and k > 1:
            sig = sigma_check(G)
            if sig < config.sigma:
                return stop(Termination.AFFINE_DEPENDENT, f"sigma_S = {sig:.3e}")
        try:
            est = bundle_theta(bundle)
        except SolverFailureError as exc:
            return stop(Termination.STALLED, str(exc))
        diam = diameter(bundle.points)
        if diam < config.epsilon_bar and est.theta < config.delta_bar:
            return stop(Termination.NEARLY_OPTIMAL,
                        f"diam {diam:.3e}, theta {est.theta:.3e}")
        eta = 0.0
        if config.variant == "weakly-convex":
            eta = (dynamic_eta([s.hessian for s in bundle]) if config.eta == "dynamic"
                   else float(config.eta))
        lin_values, lin_grads = linearize(bundle, aux, eta)
        sub = NewtonSubproblem(
            lambdas=est.lam, anchors=bundle.points, lin_values=lin_values,
            lin_grads=lin_grads, quad_grads=G,
            quad_hessians=np.array([s.hessian for s in bundle]),
            quad_values=bundle.values)
        try:
            sol = solve_newton_subproblem(sub, config.reduced_threshold,
                                          config.project_anchors,
                                          allow_indefinite=not config.stop_on_unbounded)
        except DegenerateConstraintsError as exc:
            return stop(Termination.AFFINE_DEPENDENT, str(exc))
        except UnboundedSubproblemError as exc:
            return stop(Termination.UNBOUNDED, str(exc))
        except SingularSystemError as exc:
            # rounding error, not a property of the model
            return stop(Termination.STALLED, f"singular subproblem: {exc}")
        if not sol.bounded and config.stop_on_unbounded:
            return stop(Termination.UNBOUNDED,
                        f"reduced Hessian eigenvalue {sol.reduced_hessian_min_eig:.3e}")
        xhat = sol.xhat
        trace.last_xhat = xhat
        if not np.all(np.isfinite(xhat)):
            return stop(Termination.UNBOUNDED, "non-finite subproblem solution")
        if any(not points_distinct(s.point, xhat) for s in bundle):
            return stop(Termination.STALLED, "new point coincides with a reference point")
        new, new_aux = evaluate(xhat)
        best_f = min(best_f, new.value)
        if not new.in_domain:
            return stop(Termination.NONSMOOTH_POINT, "new point is not a smooth point")
        old = bundle
        try:
            bundle, index, thetas = replace_reference(bundle, new)
        except (DegenerateBundleError, SolverFailureError) as exc:
            return stop(Termination.STALLED, str(exc))
        replaced_region = old[index].region
        if aux is not None:
            aux = list(aux)
            aux[index] = new_aux
        new_diam = diameter(bundle.points)
        trace.records.append(IterationRecord(
            iteration=it, diam=new_diam, theta=float(thetas[index]), best_f=best_f,
            lam=est.lam, replaced=index, oracle_calls=evaluate.calls, xhat=xhat,
            eta=eta, method=sol.method, xhat_region=new.region,
            replaced_region=replaced_region))
        progress = np.linalg.norm(xhat - sub.anchors[0]) if k == 1 else new_diam
        if progress < (1.0 - config.stall_factor) * ref_progress:
            ref_progress = progress
            since_progress = 0
        else:
            since_progress += 1
            if since_progress >= window:
                return stop(Termination.STALLED,
                            f"no diameter decrease in {window} iterations")
    return stop(Termination.ITERATION_CAP, f"{config.max_iterations} iterations")


def _plain_linearization(bundle, aux, eta):
    return bundle.values, bundle.gradients


def _component_linearization(bundle, aux, eta):
    return (np.array([a.value for a in aux]), np.array([a.gradient for a in aux]))


def _shifted_linearization(bundle, aux, eta):
    P = bundle.points
    return (bundle.values + 0.5 * eta * np.einsum("ij,ij->i", P, P),
            bundle.gradients + eta * P)


def run_convex(oracle: Oracle, initial, config: NewtonConfig | None = None,
               oracle_calls: int = 0) -> ConvergenceTrace:
    """k-bundle Newton method for a strongly convex objective.

    Parameters
    ----------
    oracle : Oracle
    initial : Bundle or array_like, shape (k, n)
        Initial reference points.  Samples of a ``Bundle`` that carry
        Hessians are reused without new oracle calls.
    config : NewtonConfig, optional
    oracle_calls : int
        Offset added to the trace's oracle-call counter.
    """
    config = config or NewtonConfig()
    return _newton_loop(_Evaluator(oracle, calls=oracle_calls), initial, config,
                        _plain_linearization, reuse_initial=True)


def run_sum(oracle_f: Oracle, oracle_r: Oracle, initial,
            config: NewtonConfig | None = None, oracle_calls: int = 0) -> ConvergenceTrace:
    """k-bundle Newton method for ``F = f + r``.

    The constraints use linearizations of ``f`` only; the quadratic models,
    the optimality measure and the affine independence check use ``F``.
    """
    config = config or NewtonConfig(variant="sum")
    evaluate = _Evaluator(SumOracle(oracle_f, oracle_r), oracle_f, calls=oracle_calls)
    return _newton_loop(evaluate, initial, config, _component_linearization,
                        reuse_initial=False)


def run_weakly_convex(oracle: Oracle, initial, config: NewtonConfig | None = None,
                      oracle_calls: int = 0) -> ConvergenceTrace:
    """k-bundle Newton minimization of a weakly convex ``F``.

    The constraints use linearizations of ``F + eta/2 |.|^2``.
    """
    config = config or NewtonConfig(variant="weakly-convex")
    if config.variant != "weakly-convex":
        config = NewtonConfig(**{**config.__dict__, "variant": "weakly-convex"})
    return _newton_loop(_Evaluator(oracle, calls=oracle_calls), initial, config,
                        _shifted_linearization, reuse_initial=True)


def run_newton(oracle: Oracle, initial, config: NewtonConfig,
               smooth_part: Oracle | None = None, oracle_calls: int = 0) -> ConvergenceTrace:
    """Dispatch on ``config.variant``."""
    if config.variant == "convex":
        return run_convex(oracle, initial, config, oracle_calls)
    if config.variant == "sum":
        if smooth_part is None:
            raise InvalidInputError("the sum variant needs the smooth part r")
        return run_sum(oracle, smooth_part, initial, config, oracle_calls)
    return run_weakly_convex(oracle, initial, config, oracle_calls)
