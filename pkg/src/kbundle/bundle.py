"""Bundles of reference points and the quantities computed from them.

The optimality measure of a bundle is the distance from the origin to the
convex hull of its gradients; the simplex weights attaining it are the
Lagrange multiplier estimate that drives the Newton subproblem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateBundleError, InvalidInputError, SolverFailureError
from .oracle import Oracle, OracleSample
from .qp import solve_simplex_qp

__all__ = [
    "Bundle", "MultiplierEstimate", "Certificate",
    "theta", "bundle_theta", "sigma_check", "diameter",
    "replace_reference", "optimality_certificate", "points_distinct",
]


@dataclass(frozen=True, eq=False)
class Bundle:
    """Ordered reference points with their cached oracle samples."""

    samples: tuple

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise InvalidInputError("a bundle needs at least one sample")
        n = samples[0].dim
        if any(s.dim != n for s in samples):
            raise InvalidInputError("bundle samples have different dimensions")
        for i in range(len(samples)):
            for j in range(i):
                if not points_distinct(samples[i].point, samples[j].point):
                    raise DegenerateBundleError(
                        f"reference points {j} and {i} coincide")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_points(cls, oracle: Oracle, points) -> "Bundle":
        return cls(tuple(oracle.evaluate(p) for p in np.atleast_2d(points)))

    @property
    def k(self) -> int:
        return len(self.samples)

    @property
    def n(self) -> int:
        return self.samples[0].dim

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.samples])

    @property
    def gradients(self) -> np.ndarray:
        return np.array([s.gradient for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def replace(self, index: int, sample: OracleSample) -> "Bundle":
        samples = list(self.samples)
        samples[index] = sample
        return Bundle(tuple(samples))


@dataclass(frozen=True, eq=False)
class MultiplierEstimate:
    lam: np.ndarray
    theta: float
    aggregate_gradient: np.ndarray
    center: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Certificate:
    """Approximate optimality certificate of a bundle.

    ``upper_value`` is ``None`` when the center lies outside the oracle's
    smooth region; ``gap_bound`` is ``None`` unless a Lipschitz constant was
    supplied.
    """

    center: np.ndarray
    upper_value: Optional[float]
    theta: float
    diameter: float
    gap_bound: Optional[float] = None


def points_distinct(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # scale-relative: points near the origin from different smooth pieces
    # stay legitimately distinct at distances far below 1e-14
    return bool(np.linalg.norm(a - b) > 1e-14 * max(np.linalg.norm(a), np.linalg.norm(b)))


def _as_gradient_matrix(gradients) -> np.ndarray:
    G = np.asarray(gradients, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    if G.ndim != 2 or G.shape[0] == 0:
        raise InvalidInputError("expected a nonempty list of gradient vectors")
    if not np.all(np.isfinite(G)):
        raise InvalidInputError("gradients contain non-finite entries")
    return G


def theta(gradients) -> MultiplierEstimate:
    """Minimum-norm point of the convex hull of ``gradients``.

    Parameters
    ----------
    gradients : array_like, shape (k, n)

    Returns
    -------
    MultiplierEstimate
        ``lam`` in the unit simplex, ``theta = |sum lam_i g_i|`` and the
        aggregate gradient itself.
    """
    G = _as_gradient_matrix(gradients)
    k = G.shape[0]
    gmax = float(np.max(np.einsum("ij,ij->i", G, G)))
    try:
        res = solve_simplex_qp(G.T, tol=1e-12 * (1.0 + gmax), max_iter=100 * k)
    except SolverFailureError as exc:
        raise SolverFailureError(f"theta: {exc}", best=exc.best) from exc
    lam = res.weights
    agg = lam @ G
    return MultiplierEstimate(lam=lam, theta=float(np.linalg.norm(agg)),
                              aggregate_gradient=agg)


def bundle_theta(bundle: Bundle) -> MultiplierEstimate:
    est = theta(bundle.gradients)
    return MultiplierEstimate(est.lam, est.theta, est.aggregate_gradient,
                              center=est.lam @ bundle.points)


def sigma_check(gradients) -> float:
    """``k``-th largest singular value of the matrix with columns ``(g_i; 1)``.

    Zero (to rounding) exactly when the gradients are affinely dependent.
    """
    G = _as_gradient_matrix(gradients)
    k, n = G.shape
    if k > n + 1:
        raise InvalidInputError(
            f"{k} vectors in dimension {n} are always affinely dependent (k > n + 1)")
    M = np.vstack([G.T, np.ones((1, k))])
    return float(np.linalg.svd(M, compute_uv=False)[k - 1])


def diameter(points) -> float:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 2:
        return 0.0
    diffs = P[:, None, :] - P[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diffs, diffs))))


def replace_reference(bundle: Bundle, candidate: OracleSample, gradients=None):
    """Swap ``candidate`` into the bundle where it leaves the smallest measure.

    Every one of the ``k`` swaps is evaluated; swaps within ``1e-12`` of the
    best value are tied and the lowest index wins.

    Parameters
    ----------
    bundle : Bundle
    candidate : OracleSample
    gradients : array_like, shape (k + 1, n), optional
        Gradients defining the measure, bundle first and candidate last.
        Defaults to the samples' own gradients.

    Returns
    -------
    new_bundle : Bundle
    index : int
        Position of the replaced reference point.
    thetas : ndarray
        Measure of each of the ``k`` swapped bundles.
    """
    for i, s in enumerate(bundle):
        if not points_distinct(s.point, candidate.point):
            raise DegenerateBundleError(
                f"candidate coincides with reference point {i}")
    if gradients is None:
        G = np.vstack([bundle.gradients, candidate.gradient[None, :]])
    else:
        G = np.asarray(gradients, dtype=float)
    k = bundle.k
    thetas = np.empty(k)
    for i in range(k):
        rows = [j for j in range(k) if j != i] + [k]
        thetas[i] = theta(G[rows]).theta
    best = float(thetas.min())
    index = int(np.flatnonzero(thetas <= best + 1e-12)[0])
    return bundle.replace(index, candidate), index, thetas


def optimality_certificate(bundle: Bundle, multipliers: MultiplierEstimate,
                           oracle: Oracle | None = None,
                           lipschitz: float | None = None) -> Certificate:
    """Weighted center, its value and the diameter of the bundle.

    ``f(center)`` bounds ``min f`` from above; with a Lipschitz constant
    ``L`` the value exceeds ``min {f + theta |. - center|}`` by at most
    ``L * diam``.
    """
    lam = np.asarray(multipliers.lam, dtype=float)
    if lam.size != bundle.k:
        raise InvalidInputError("multipliers do not match the bundle size")
    P = bundle.points
    center = np.array([math.fsum(lam * P[:, j]) for j in range(bundle.n)])
    upper = None
    if oracle is not None:
        sample = oracle.evaluate(center)
        if sample.in_domain:
            upper = sample.value
    diam = diameter(P)
    gap = None if lipschitz is None else float(lipschitz) * diam
    return Certificate(center=center, upper_value=upper, theta=float(multipliers.theta),
                       diameter=diam, gap_bound=gap)

