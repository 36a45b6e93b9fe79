"""Global first phase: bring iterates near a minimizer and seed a bundle.

Two first-order methods are provided, a proximal bundle method with multiple
cuts (convex objectives) and a nonsmooth BFGS method (nonconvex ones).  Both
return a set of sample points near the minimizer whose gradients are used to
estimate the subdifferential dimension, and therefore the bundle size, and
to pick an initial bundle with robustly affinely independent gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bundle import Bundle, diameter, sigma_check, theta
from .errors import (DegenerateCandidatesError, InsufficientCandidatesError,
                     InvalidInputError)
from .oracle import Oracle, OracleSample
from .qp import _prox_dual

logger = logging.getLogger(__name__)

__all__ = [
    "BundleMethodConfig", "CandidateSet", "PhaseRecord", "PhaseOneResult",
    "run_bundle_method", "run_nonsmooth_bfgs", "estimate_bundle_size",
    "select_initial_bundle",
]

STRONGLY_ACTIVE = 1e-8


@dataclass
class BundleMethodConfig:
    rho: float = 1.0
    beta: float = 1e-5
    epsilon_bar: float = 1e-6
    max_iterations: int = 1000
    cut_cap: Optional[int] = None

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInputError("rho must be positive")
        if not 0 < self.beta < 1:
            raise InvalidInputError("beta must lie in (0, 1)")
        if self.epsilon_bar < 0:
            raise InvalidInputError("epsilon_bar must be nonnegative")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if self.cut_cap is not None and self.cut_cap < 1:
            raise InvalidInputError("cut_cap must be positive")


@dataclass
class CandidateSet:
    """Sample points near a minimizer, with their oracle data."""

    samples: List[OracleSample]
    source: str

    def __post_init__(self):
        if not self.samples:
            raise InvalidInputError("candidate set is empty")
        if self.source not in ("strongly-active-cuts", "last-2n-iterates", "manual"):
            raise InvalidInputError(f"unknown candidate source {self.source!r}")

    def __len__(self):
        return len(self.samples)

    @property
    def gradients(self) -> np.ndarray:
        return np.array([s.gradient for s in self.samples])

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.samples])


@dataclass
class PhaseRecord:
    iteration: int
    oracle_calls: int
    best_f: float
    theta: float
    diam: float
    gap: float = float("nan")
    serious: bool = False


@dataclass
class PhaseOneResult:
    center: np.ndarray
    candidates: CandidateSet
    records: list = field(default_factory=list)
    termination: str = ""
    truncated: bool = False
    oracle_calls: int = 0

    @property
    def best_f(self) -> float:
        return self.records[-1].best_f if self.records else float("nan")


def run_bundle_method(oracle: Oracle, start, config: BundleMethodConfig | None = None
                      ) -> PhaseOneResult:
    """Proximal bundle method with multiple cuts for convex ``f``.

    Every oracle call adds a cut ``l_s``.  The trial point minimizes
    ``max_s l_s + rho/2 |. - z|^2``; it becomes the new center ``z`` when
    ``f(xhat) <= f(z) - beta (f(z) - max_s l_s(xhat))`` and the method stops
    once that predicted decrease is at most ``epsilon_bar``.

    The candidate set holds the points whose cuts carry dual weight above
    ``1e-8`` in the final trial-point problem.
    """
    config = config or BundleMethodConfig()
    z = np.asarray(start, dtype=float).reshape(-1)
    first = oracle.evaluate(z)
    calls = 1
    samples = [first]
    points = [first.point]
    values = [first.value]
    grads = [first.gradient]
    fz = first.value
    best = fz
    records = []
    alpha = np.ones(1)
    termination = "IterationCap"
    truncated = True
    for it in range(1, config.max_iterations + 1):
        P = np.asarray(points)
        Gs = np.asarray(grads)
        lz = np.asarray(values) + np.einsum("ij,ij->i", Gs, z[None, :] - P)
        xhat, alpha = _prox_dual(lz, Gs, z, config.rho)
        model = float(np.max(np.asarray(values)
                             + np.einsum("ij,ij->i", Gs, xhat[None, :] - P)))
        gap = fz - model
        active = alpha > STRONGLY_ACTIVE
        agg = float(np.linalg.norm(alpha @ Gs))
        if gap <= config.epsilon_bar:
            records.append(PhaseRecord(it, calls, best, agg, diameter(P[active]), gap))
            termination = "NearlyOptimal"
            truncated = False
            break
        new = oracle.evaluate(xhat)
        calls += 1
        serious = new.value <= fz - config.beta * gap
        if serious:
            z, fz = new.point, new.value
        best = min(best, new.value)
        samples.append(new)
        points.append(new.point)
        values.append(new.value)
        grads.append(new.gradient)
        if config.cut_cap is not None and len(samples) > config.cut_cap:
            # the new cut has no weight yet; drop the weakest old one
            drop = int(np.argmin(alpha))
            for lst in (samples, points, values, grads):
                del lst[drop]
            alpha = np.delete(alpha, drop)
        records.append(PhaseRecord(it, calls, best, agg, diameter(P[active]), gap, serious))
    active_idx = [i for i in range(len(alpha)) if alpha[i] > STRONGLY_ACTIVE]
    candidates = CandidateSet([samples[i] for i in active_idx], "strongly-active-cuts")
    return PhaseOneResult(center=z, candidates=candidates, records=records,
                          termination=termination, truncated=truncated,
                          oracle_calls=calls)


def _weak_wolfe(oracle, x, sample, d, c1=1e-4, c2=0.5, max_bisections=50,
                max_expansions=50):
    """Bracketing weak Wolfe line search.

    Returns ``(t, new_sample, calls)`` with ``new_sample = None`` on breakdown.
    """
    slope = float(sample.gradient @ d)
    lo, hi, t = 0.0, np.inf, 1.0
    calls = bisections = expansions = 0
    while True:
        trial = oracle.evaluate(x + t * d)
        calls += 1
        if trial.value > sample.value + c1 * t * slope:
            hi = t
        elif float(trial.gradient @ d) < c2 * slope:
            lo = t
        else:
            return t, trial, calls
        if np.isfinite(hi):
            bisections += 1
            if bisections > max_bisections:
                return t, None, calls
            t = 0.5 * (lo + hi)
        else:
            expansions += 1
            if expansions > max_expansions:
                return t, None, calls
            t = 2.0 * lo


def run_nonsmooth_bfgs(oracle: Oracle, start, max_iterations: int = 1000,
                       gradient_tol: float = 0.0) -> PhaseOneResult:
    """BFGS with a weak Wolfe line search, run until breakdown.

    Nonsmooth objectives eventually make the line search fail (or produce a
    non-descent direction); that breakdown is the normal way for this phase
    to end.  Updates violating the curvature condition are skipped.  The
    candidate set is the last ``min(2n, iterates)`` accepted iterates.
    """
    x = np.asarray(start, dtype=float).reshape(-1)
    n = x.size
    sample = oracle.evaluate(x)
    calls = 1
    if not sample.in_domain:
        raise InvalidInputError("BFGS start point is not a smooth point")
    iterates = [sample]
    Hinv = np.eye(n)
    best = sample.value
    records = []
    termination = "IterationCap"
    first_update = True
    for it in range(1, max_iterations + 1):
        g = sample.gradient
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gradient_tol:
            termination = "SmallGradient"
            break
        d = -Hinv @ g
        if not float(g @ d) < 0:
            termination = "Breakdown: not a descent direction"
            break
        t, new, used = _weak_wolfe(oracle, x, sample, d)
        calls += used
        if new is None:
            termination = "Breakdown: line search failed"
            break
        s = new.point - x
        y = new.gradient - g
        sy = float(s @ y)
        if sy > 0:
            if first_update:
                Hinv = (sy / float(y @ y)) * np.eye(n)
                first_update = False
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
            Hinv = 0.5 * (Hinv + Hinv.T)
        x, sample = new.point, new
        iterates.append(new)
        best = min(best, new.value)
        records.append(PhaseRecord(it, calls, best,
                                   float(np.linalg.norm(new.gradient)), float("nan")))
    tail = iterates[-min(2 * n, len(iterates)):]
    return PhaseOneResult(center=x, candidates=CandidateSet(tail, "last-2n-iterates"),
                          records=records, termination=termination,
                          truncated=termination == "IterationCap", oracle_calls=calls)


def _lifted(gradients) -> np.ndarray:
    G = np.asarray(gradients, dtype=float)
    return np.vstack([G.T, np.ones((1, G.shape[0]))])


def estimate_bundle_size(candidates, rank_tolerance: float = 1e-6) -> int:
    """Approximate rank of the matrix with columns ``(grad f(x); 1)``.

    Counts singular values above ``rank_tolerance`` times the largest one.
    """
    G = candidates.gradients if isinstance(candidates, CandidateSet) else candidates
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.size == 0:
        raise InvalidInputError("no candidate gradients")
    sv = np.linalg.svd(_lifted(G), compute_uv=False)
    return int(np.sum(sv > rank_tolerance * sv[0]))


def _greedy_columns(M: np.ndarray, k: int, preferred=()) -> list:
    """Greedy pivoted Gram-Schmidt: repeatedly take the column with the
    largest component orthogonal to those already taken.

    Columns listed in ``preferred`` are exhausted before the others.
    """
    R = np.array(M, dtype=float)
    tol = 1e-12 * max(float(np.linalg.norm(R, axis=0).max()), 1.0)
    chosen: list = []
    for pool in (list(preferred), list(range(M.shape[1]))):
        while len(chosen) < k:
            cand = [i for i in pool if i not in chosen]
            if not cand:
                break
            norms = np.linalg.norm(R[:, cand], axis=0)
            j = int(np.argmax(norms))
            if norms[j] <= tol:
                break
            q = R[:, cand[j]] / norms[j]
            chosen.append(cand[j])
            R -= np.outer(q, q @ R)
    return chosen


def select_initial_bundle(candidates: CandidateSet, k: int,
                          use_support: bool = True) -> Bundle:
    """Pick ``k`` candidates by greedy pivoted orthogonalization of the
    ``(grad; 1)`` columns.

    With ``use_support`` the candidates carrying positive weight in the
    minimum-norm convex combination of all candidate gradients are taken
    first.  Those points certify approximate stationarity together; pure
    pivoting prefers the most spread-out gradients, which for sums of
    absolute values tends to pick opposite sign patterns whose weighted
    Hessian vanishes.
    """
    if k < 1:
        raise InvalidInputError("k must be positive")
    if len(candidates) < k:
        raise InsufficientCandidatesError(
            f"need {k} candidates, only {len(candidates)} available")
    if k > candidates.samples[0].dim + 1:
        raise InvalidInputError("k exceeds n + 1")
    G = candidates.gradients
    preferred: list = []
    if use_support:
        lam = theta(G).lam
        preferred = [int(i) for i in np.argsort(-lam, kind="stable") if lam[i] > STRONGLY_ACTIVE]
    picked_idx = _greedy_columns(_lifted(G), k, preferred)
    if len(picked_idx) < k:
        raise DegenerateCandidatesError(
            f"candidate gradients span only {len(picked_idx)} affine directions, need {k}")
    chosen = sorted(picked_idx)
    picked = [candidates.samples[i] for i in chosen]
    sig = sigma_check([s.gradient for s in picked])
    if sig < 1e-12:
        raise DegenerateCandidatesError(
            f"selected gradients are affinely dependent (sigma {sig:.3e})")
    return Bundle(tuple(picked))
