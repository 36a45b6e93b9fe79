"""Seeded test-problem families with exact second-order oracles.

* ``MaxQuartProblem``: ``max_i g_i.x + 1/2 x.H_i.x + c_i/24 |x|^4``
* ``EucSumProblem``:   ``sum_i |g_i.x + 1/2 x.H_i.x + c_i/24 |x|^4|``
* ``MaxEigProblem``:   ``lambda_max(A_0 + sum_i x_i A_i)``

For the first two families the vectors ``g_i`` are affinely independent and
satisfy ``sum_i lambda_i g_i = 0`` for a strictly positive ``lambda`` in the
simplex, so that ``0`` is a nonsmooth minimizer with value ``0``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bundle import sigma_check
from .errors import GenerationFailureError, InvalidInputError
from .oracle import Oracle, OracleSample

SCHEMA_VERSION = 1
TIE_TOL = 1e-10

__all__ = [
    "MaxQuartProblem", "EucSumProblem", "MaxEigProblem",
    "generate_max_quart", "generate_euc_sum", "generate_max_eig",
    "full_bundle_points", "problem_to_dict", "problem_from_dict",
    "save_problem", "load_problem", "FAMILIES",
]


def _random_spd(rng, n, low=0.5, high=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    D = rng.uniform(low, high, size=n)
    H = (Q * D) @ Q.T
    return 0.5 * (H + H.T)


def _check_dims(n, k):
    if n < 1:
        raise InvalidInputError(f"dimension n must be positive, got {n}")
    if not 1 <= k <= n + 1:
        raise InvalidInputError(
            f"bundle size k = {k} violates 1 <= k <= n + 1 = {n + 1}: "
            "k - 1 cannot exceed the dimension of the subdifferential, "
            "which is at most n")


class _QuarticPieces:
    """Shared storage and calculus for the two quartic families."""

    family = ""

    def __init__(self, g, H, c, true_lambda, seed=None):
        self.g = np.asarray(g, dtype=float)
        self.H = np.asarray(H, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.true_lambda = np.asarray(true_lambda, dtype=float)
        self.seed = seed
        self.k, self.n = self.g.shape

    def minimizer(self):
        return np.zeros(self.n)

    def min_value(self):
        return 0.0

    def pieces(self, x):
        """Piece values, gradients, Hessians and rounding scales at ``x``."""
        x = np.asarray(x, dtype=float)
        r2 = float(x @ x)
        lin = self.g @ x
        Hx = self.H @ x
        quad = 0.5 * (Hx @ x)
        quart = self.c / 24.0 * r2 ** 2
        vals = lin + quad + quart
        grads = self.g + Hx + np.outer(self.c / 6.0 * r2, x)
        shape = r2 * np.eye(self.n) + 2.0 * np.outer(x, x)
        hess = self.H + (self.c / 6.0)[:, None, None] * shape[None, :, :]
        scale = np.abs(lin) + np.abs(quad) + np.abs(quart)
        return vals, grads, hess, scale

    def __eq__(self, other):
        return (type(self) is type(other) and np.array_equal(self.g, other.g)
                and np.array_equal(self.H, other.H) and np.array_equal(self.c, other.c)
                and np.array_equal(self.true_lambda, other.true_lambda))


class MaxQuartProblem(_QuarticPieces, Oracle):
    family = "max-quart"

    def evaluate(self, x) -> OracleSample:
        vals, grads, hess, scale = self.pieces(x)
        i = int(np.argmax(vals))
        in_domain = True
        if self.k > 1:
            top2 = np.partition(vals, -2)[-2:]
            in_domain = bool(top2[1] - top2[0] > TIE_TOL * scale.max())
        return OracleSample(point=x, value=vals[i], gradient=grads[i],
                            hessian=0.5 * (hess[i] + hess[i].T),
                            in_domain=in_domain, region=i)


class EucSumProblem(_QuarticPieces, Oracle):
    family = "euc-sum"

    def evaluate(self, x) -> OracleSample:
        vals, grads, hess, scale = self.pieces(x)
        signs = np.where(vals >= 0, 1.0, -1.0)
        in_domain = bool(np.all(np.abs(vals) > TIE_TOL * scale))
        H = np.einsum("i,ijk->jk", signs, hess)
        return OracleSample(point=x, value=float(np.abs(vals).sum()),
                            gradient=signs @ grads, hessian=0.5 * (H + H.T),
                            in_domain=in_domain,
                            region=tuple(int(s) for s in signs))


class MaxEigProblem(Oracle):
    """Largest eigenvalue of an affine symmetric matrix pencil."""

    family = "max-eig"

    def __init__(self, A, seed=None, reference_value=None, multiplicity=None):
        self.A = np.asarray(A, dtype=float)
        if self.A.ndim != 3 or self.A.shape[1] != self.A.shape[2]:
            raise InvalidInputError("A must have shape (n + 1, m, m)")
        if not np.allclose(self.A, np.transpose(self.A, (0, 2, 1)), atol=0, rtol=1e-14):
            raise InvalidInputError("pencil matrices must be symmetric")
        self.n = self.A.shape[0] - 1
        self.m = self.A.shape[1]
        self.seed = seed
        self.reference_value = reference_value
        self.multiplicity = multiplicity

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        M = self.A[0] + np.tensordot(x, self.A[1:], axes=1)
        return 0.5 * (M + M.T)

    def eigenvalues(self, x):
        """Eigenvalues of the pencil at ``x`` in decreasing order."""
        return np.linalg.eigvalsh(self.matrix(x))[::-1]

    def evaluate(self, x) -> OracleSample:
        x = np.asarray(x, dtype=float)
        w, V = np.linalg.eigh(self.matrix(x))
        lam1 = w[-1]
        v1 = V[:, -1]
        tol = TIE_TOL * (1.0 + abs(lam1))
        in_domain = bool(self.m == 1 or lam1 - w[-2] >= tol)
        Av1 = np.einsum("jab,b->ja", self.A[1:], v1)
        grad = Av1 @ v1
        # simple-eigenvalue perturbation: 2 sum_p (v1.A_j.v_p)(v1.A_l.v_p)/(l1 - l_p)
        others = V[:, :-1]
        cross = Av1 @ others
        gaps = np.maximum(lam1 - w[:-1], tol)
        hess = 2.0 * (cross / gaps) @ cross.T
        return OracleSample(point=x, value=lam1, gradient=grad,
                            hessian=0.5 * (hess + hess.T), in_domain=in_domain,
                            region=None)

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.A, other.A)


FAMILIES = ("max-quart", "euc-sum", "max-eig")


def _quartic_ingredients(n, k, seed):
    _check_dims(n, k)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        lam = rng.exponential(size=k)
        lam = 0.5 * lam / lam.sum() + 0.5 / k
        g = np.zeros((k, n))
        if k > 1:
            g[:-1] = rng.standard_normal((k - 1, n))
            g[-1] = -(lam[:-1] @ g[:-1]) / lam[-1]
        if k == 1 or sigma_check(g) > 1e-8:
            break
    else:
        raise GenerationFailureError(
            "could not sample affinely independent gradients in 100 attempts")
    H = np.array([_random_spd(rng, n) for _ in range(k)])
    c = rng.uniform(0.5, 2.0, size=k)
    return g, H, c, lam


def generate_max_quart(n: int, k: int, seed: int = 0) -> MaxQuartProblem:
    g, H, c, lam = _quartic_ingredients(n, k, seed)
    return MaxQuartProblem(g, H, c, lam, seed=seed)


def generate_euc_sum(n: int, k: int, seed: int = 0) -> EucSumProblem:
    g, H, c, lam = _quartic_ingredients(n, k, seed)
    return EucSumProblem(g, H, c, lam, seed=seed)


def generate_max_eig(m: int, n: int, seed: int = 0) -> MaxEigProblem:
    """Random symmetric pencil; ``A_1..A_n`` are traceless.

    The trace of ``A(x)`` is then constant, which bounds ``lambda_max`` below
    by ``trace(A_0) / m`` and keeps the problem bounded.
    """
    if m < 1 or n < 1:
        raise InvalidInputError("m and n must be positive")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n + 1, m, m))
    A = 0.5 * (X + np.transpose(X, (0, 2, 1)))
    A[1:] -= (np.trace(A[1:], axis1=1, axis2=2) / m)[:, None, None] * np.eye(m)
    return MaxEigProblem(A, seed=seed)


def full_bundle_points(problem: MaxQuartProblem, radius: float, rng=None):
    """One point per activity region of a max-quart problem, at most ``radius`` from 0.

    Region ``i`` is entered along a direction ``d`` with ``g_j.d = -1``
    for ``j != i`` and ``g_i.d = (1 - lambda_i) / lambda_i``; the point is
    pulled toward 0 until the oracle reports region ``i``.
    """
    rng = np.random.default_rng(rng)
    g, lam, k = problem.g, problem.true_lambda, problem.k
    if k == 1:
        d = rng.standard_normal(problem.n)
        return (radius * d / np.linalg.norm(d))[None, :]
    points = []
    for i in range(k):
        target = -np.ones(k)
        target[i] = (1.0 - lam[i]) / lam[i]
        d = np.linalg.lstsq(g, target, rcond=None)[0]
        # wiggle inside the null space of g so points are not collinear
        null = np.linalg.svd(g)[2][k - 1:]
        if null.shape[0]:
            d = d + 0.3 * np.linalg.norm(d) * (rng.standard_normal(null.shape[0]) @ null) \
                / np.sqrt(null.shape[0])
        d /= np.linalg.norm(d)
        r = radius
        for _ in range(60):
            s = problem.evaluate(r * d)
            if s.in_domain and s.region == i:
                break
            r *= 0.7
        else:
            raise GenerationFailureError(f"could not place a point in region {i}")
        points.append(r * d)
    return np.array(points)


def problem_to_dict(problem) -> dict:
    if isinstance(problem, MaxEigProblem):
        data = {"schema_version": SCHEMA_VERSION, "family": problem.family,
                "m": problem.m, "n": problem.n, "seed": problem.seed,
                "A": problem.A.tolist()}
        if problem.reference_value is not None:
            data["reference_value"] = problem.reference_value
        if problem.multiplicity is not None:
            data["multiplicity"] = problem.multiplicity
        return data
    return {"schema_version": SCHEMA_VERSION, "family": problem.family,
            "n": problem.n, "k": problem.k, "seed": problem.seed,
            "g": problem.g.tolist(), "H": problem.H.tolist(),
            "c": problem.c.tolist(), "true_lambda": problem.true_lambda.tolist()}


def problem_from_dict(data: dict):
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported problem schema version {version!r}")
    family = data.get("family")
    if family == "max-eig":
        return MaxEigProblem(np.array(data["A"], dtype=float), seed=data.get("seed"),
                             reference_value=data.get("reference_value"),
                             multiplicity=data.get("multiplicity"))
    if family in ("max-quart", "euc-sum"):
        cls = MaxQuartProblem if family == "max-quart" else EucSumProblem
        prob = cls(data["g"], data["H"], data["c"], data["true_lambda"],
                   seed=data.get("seed"))
        _check_dims(prob.n, prob.k)
        return prob
    raise InvalidInputError(f"unknown problem family {family!r}")


def save_problem(problem, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(problem_to_dict(problem), indent=1))
    return path


def load_problem(path):
    return problem_from_dict(json.loads(Path(path).read_text()))
