"""Dense quadratic programming kernels.

Two families of problems live here:

* quadratic programs over the unit simplex, ``min 1/2 |A a|^2 + q.a`` with
  ``a >= 0, sum(a) = 1``, solved by a Wolfe-type active-set method.  The
  minimum-norm point of a convex hull (``q = 0``) and the dual of the
  proximal cutting-plane step are both of this form.
* the equality-constrained Newton subproblem of the bundle Newton method,
  solved either through its full KKT system or through a null-space
  reduction of the constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (DegenerateConstraintsError, InvalidInputError,
                     SingularSystemError, SolverFailureError,
                     UnboundedSubproblemError)

__all__ = [
    "SimplexQPResult", "solve_simplex_qp",
    "NewtonSubproblem", "ReducedSystem", "SubproblemSolution",
    "build_constraints", "solve_kkt_full", "solve_kkt_reduced",
    "solve_newton_subproblem", "kkt_residual",
    "Cut", "solve_proximal_cut_qp",
]


# ---------------------------------------------------------------------------
# simplex-constrained QP
# ---------------------------------------------------------------------------

class SimplexQPResult(NamedTuple):
    weights: np.ndarray
    gap: float
    iterations: int


def _sum_zero_basis(s: int) -> np.ndarray:
    """Orthonormal basis (s, s-1) of the vectors whose entries sum to zero."""
    q, _ = np.linalg.qr(np.ones((s, 1)), mode="complete")
    return q[:, 1:]


def _affine_step(A_S, q_S, a_S, sv_tol, lin_tol):
    """Minimize the simplex QP restricted to the affine hull of a support set.

    Returns ``(beta, None)`` with the affine minimizer, or ``(None, d)`` with
    a direction of unbounded descent inside the affine hull.
    """
    s = a_S.size
    if s == 1:
        return np.ones(1), None
    N = _sum_zero_basis(s)
    B = A_S @ N
    r = A_S @ a_S
    U, sig, Vt = np.linalg.svd(B, full_matrices=True)
    sig_full = np.zeros(s - 1)
    sig_full[:sig.size] = sig
    c = np.zeros(s - 1)
    c[:sig.size] = U[:, :sig.size].T @ r
    h = Vt @ (N.T @ q_S)
    cutoff = sv_tol * max(1.0, sig_full.max(initial=0.0))
    z = np.zeros(s - 1)
    ray = np.zeros(s - 1)
    for i in range(s - 1):
        if sig_full[i] > cutoff:
            z[i] = -(sig_full[i] * c[i] + h[i]) / sig_full[i] ** 2
        elif abs(h[i]) > lin_tol:
            ray[i] = -h[i]
    if np.any(ray != 0):
        return None, N @ (Vt.T @ ray)
    return a_S + N @ (Vt.T @ z), None


def solve_simplex_qp(A, q=None, tol=None, max_iter=None) -> SimplexQPResult:
    """Minimize ``1/2 |A a|^2 + q.a`` over the unit simplex.

    Wolfe's minimum-norm-point scheme generalized to a linear term: major
    cycles add the vertex with the most negative partial derivative, minor
    cycles move toward the minimizer over the affine hull of the current
    support and drop vertices whose weight reaches zero.

    Parameters
    ----------
    A : array_like, shape (m, k)
        Columns are the points (or scaled cut gradients).
    q : array_like, shape (k,), optional
    tol : float, optional
        Frank-Wolfe duality gap tolerance.  Defaults to
        ``1e-12 * (1 + max_j |A_j|^2 + max |q|)``.
    max_iter : int, optional
        Cap on major cycles, default ``100 * k``.

    Returns
    -------
    SimplexQPResult
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] == 0:
        raise InvalidInputError("A must be a nonempty 2-d array")
    m, k = A.shape
    q = np.zeros(k) if q is None else np.asarray(q, dtype=float).reshape(-1)
    if q.size != k:
        raise InvalidInputError("q has the wrong length")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(q))):
        raise InvalidInputError("non-finite input to simplex QP")
    colsq = np.einsum("ij,ij->j", A, A)
    if tol is None:
        tol = 1e-12 * (1.0 + colsq.max() + np.abs(q).max())
    if max_iter is None:
        max_iter = 100 * k
    sv_tol = 1e-13
    lin_tol = 1e-13 * (1.0 + np.abs(q).max())

    alpha = np.zeros(k)
    j0 = int(np.argmin(0.5 * colsq + q))
    alpha[j0] = 1.0
    support = [j0]
    gap = np.inf
    for it in range(1, max_iter + 1):
        grad = A.T @ (A @ alpha) + q
        j = int(np.argmin(grad))
        gap = float(grad @ alpha - grad[j])
        if gap <= tol or j in support:
            return SimplexQPResult(_clean_simplex(alpha), max(gap, 0.0), it)
        support.append(j)
        for _ in range(len(support) + 1):
            S = np.array(support)
            a_S = alpha[S]
            beta, ray = _affine_step(A[:, S], q[S], a_S, sv_tol, lin_tol)
            if ray is None:
                if np.all(beta > 0):
                    alpha[S] = beta
                    break
                step = beta - a_S
                cap = 1.0
            else:
                step = ray
                cap = np.inf
            neg = step < 0
            if not np.any(neg):
                if ray is not None:
                    raise SolverFailureError("simplex QP is unbounded", best=alpha)
                alpha[S] = beta
                break
            ratios = a_S[neg] / -step[neg]
            theta = min(cap, ratios.min())
            a_new = a_S + theta * step
            if theta < cap:
                a_new[np.flatnonzero(neg)[np.argmin(ratios)]] = 0.0
            a_new[a_new < 0] = 0.0
            alpha[S] = a_new
            support = [i for i in support if alpha[i] > 0]
            if theta >= cap:
                break
    raise SolverFailureError(
        f"simplex QP did not converge in {max_iter} iterations (gap {gap:.3e})",
        best=_clean_simplex(alpha))


def _clean_simplex(alpha):
    alpha = np.where((alpha < 0) & (alpha >= -1e-12), 0.0, alpha)
    if np.any(alpha < 0):
        raise SolverFailureError("negative simplex weight", best=alpha)
    return alpha / alpha.sum()


# ---------------------------------------------------------------------------
# Newton subproblem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NewtonSubproblem:
    """``min sum_s lam_s q_s(x)`` subject to ``l_s(x)`` equal for all ``s``.

    ``l_s(x) = lin_values[s] + lin_grads[s].(x - anchors[s])`` and
    ``q_s(x) = quad_values[s] + quad_grads[s].(x - anchors[s])
    + 1/2 (x - anchors[s]).quad_hessians[s].(x - anchors[s])``.
    """

    lambdas: np.ndarray
    anchors: np.ndarray
    lin_values: np.ndarray
    lin_grads: np.ndarray
    quad_grads: np.ndarray
    quad_hessians: np.ndarray
    quad_values: np.ndarray | None = None

    def __post_init__(self):
        for name in ("lambdas", "anchors", "lin_values", "lin_grads",
                     "quad_grads", "quad_hessians"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        k, n = self.anchors.shape
        if (self.lambdas.shape != (k,) or self.lin_values.shape != (k,)
                or self.lin_grads.shape != (k, n) or self.quad_grads.shape != (k, n)
                or self.quad_hessians.shape != (k, n, n)):
            raise InvalidInputError("inconsistent subproblem shapes")
        if np.any(self.lambdas < -1e-12) or abs(self.lambdas.sum() - 1) > 1e-10:
            raise InvalidInputError("lambdas must lie in the unit simplex")
        if self.quad_values is not None:
            object.__setattr__(self, "quad_values",
                               np.asarray(self.quad_values, dtype=float))

    @classmethod
    def from_samples(cls, lambdas, samples, lin_values=None, lin_grads=None):
        """Convex-case subproblem: both models come from the same samples."""
        anchors = np.array([s.point for s in samples])
        grads = np.array([s.gradient for s in samples])
        values = np.array([s.value for s in samples])
        return cls(
            lambdas=lambdas,
            anchors=anchors,
            lin_values=values if lin_values is None else lin_values,
            lin_grads=grads if lin_grads is None else lin_grads,
            quad_grads=grads,
            quad_hessians=np.array([s.hessian for s in samples]),
            quad_values=values,
        )

    @property
    def k(self) -> int:
        return self.anchors.shape[0]

    @property
    def n(self) -> int:
        return self.anchors.shape[1]

    def linearizations(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float)[None, :] - self.anchors
        return self.lin_values + np.einsum("ij,ij->i", self.lin_grads, d)

    def objective(self, x) -> float:
        d = np.asarray(x, dtype=float)[None, :] - self.anchors
        base = 0.0 if self.quad_values is None else self.quad_values
        vals = (base + np.einsum("ij,ij->i", self.quad_grads, d)
                + 0.5 * np.einsum("ij,ijk,ik->i", d, self.quad_hessians, d))
        return float(self.lambdas @ vals)

    def weighted_hessian(self) -> np.ndarray:
        return np.einsum("i,ijk->jk", self.lambdas, self.quad_hessians)

    def magnitude(self) -> float:
        """Largest absolute input entry; scales the residual tolerances."""
        return float(max(np.abs(self.anchors).max(), np.abs(self.lin_grads).max(),
                         np.abs(self.quad_grads).max(),
                         np.abs(self.quad_hessians).max(),
                         np.abs(self.lin_values).max()))


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Null-space description ``{x : G x = b} = p + Range(U)``."""

    constraint_matrix: np.ndarray
    rhs: np.ndarray
    null_basis: np.ndarray
    range_basis: np.ndarray
    particular: np.ndarray


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    xhat: np.ndarray
    t_value: float
    mu: np.ndarray
    kkt_residual: float
    bounded: bool
    reduced_hessian_min_eig: float
    method: str = "full"


def build_constraints(sub: NewtonSubproblem, rank_tol: float = 1e-10) -> ReducedSystem:
    """Write the equal-linearization constraints as ``G x = b``.

    Row ``j`` of ``G`` is ``c_1 - c_{j+1}`` where ``c_s`` are the linearization
    gradients; the bases come from a pivoted QR factorization of ``G^T``.
    """
    k, n = sub.k, sub.n
    if k < 2:
        raise InvalidInputError("constraints only exist for k >= 2")
    if k - 1 > n:
        raise DegenerateConstraintsError(
            f"k = {k} linearizations cannot be affinely independent in dimension {n}")
    C = sub.lin_grads
    offsets = sub.lin_values - np.einsum("ij,ij->i", C, sub.anchors)
    G = C[0][None, :] - C[1:]
    b = offsets[1:] - offsets[0]
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[0] == 0 or sv[-1] < rank_tol * sv[0]:
        raise DegenerateConstraintsError(
            "linearization gradients are affinely dependent "
            f"(singular values {sv[-1]:.3e} / {sv[0]:.3e})")
    Q, R, _ = sla.qr(G.T, mode="full", pivoting=True)
    V = Q[:, :k - 1]
    U = Q[:, k - 1:]
    p = V @ np.linalg.solve(G @ V, b)
    return ReducedSystem(G, b, U, V, p)


def kkt_residual(sub: NewtonSubproblem, x, t, mu) -> float:
    """Residual norm of the optimality conditions of the Newton subproblem.

    Stationarity is written with ``mu`` the multipliers on the linearization
    gradients: ``sum lam (g_q + H (x - s)) + sum (mu - lam) c = 0``,
    ``sum mu = 1`` and ``l_s(x) = t``.
    """
    x = np.asarray(x, dtype=float)
    d = x[None, :] - sub.anchors
    model_grad = sub.lambdas @ (sub.quad_grads
                                + np.einsum("ijk,ik->ij", sub.quad_hessians, d))
    stat = model_grad + (np.asarray(mu) - sub.lambdas) @ sub.lin_grads
    feas = sub.linearizations(x) - t
    return float(np.sqrt(stat @ stat + feas @ feas + (np.sum(mu) - 1.0) ** 2))


def _unbounded_tol(sub: NewtonSubproblem) -> float:
    weighted = np.abs(sub.lambdas[:, None, None] * sub.quad_hessians).max()
    return 1e-10 * (1.0 + weighted)


def _reduced_min_eig(sub: NewtonSubproblem, U: np.ndarray) -> float:
    if U.shape[1] == 0:
        return np.inf
    Wr = U.T @ sub.weighted_hessian() @ U
    return float(np.linalg.eigvalsh(0.5 * (Wr + Wr.T))[0])


def solve_kkt_full(sub: NewtonSubproblem, max_condition: float = 1e14) -> SubproblemSolution:
    """Solve the subproblem's square KKT system in ``(x, t, nu)``.

    With ``mu = lam + nu`` the system reads
    ``sum lam (g_q + H (x - s)) + sum nu c = 0``, ``sum nu = 0``,
    ``l_s(x) - t = 0``.  When the quadratic gradients equal the linearization
    gradients this is exactly ``sum lam H (x - s) + sum mu c = 0`` with
    ``sum mu = 1``.
    """
    k, n = sub.k, sub.n
    lam = sub.lambdas
    W = sub.weighted_hessian()
    C = sub.lin_grads
    K = np.zeros((n + 1 + k, n + 1 + k))
    K[:n, :n] = W
    K[:n, n + 1:] = C.T
    K[n, n + 1:] = -1.0
    K[n + 1:, :n] = C
    K[n + 1:, n] = -1.0
    rhs = np.zeros(n + 1 + k)
    rhs[:n] = lam @ (np.einsum("ijk,ik->ij", sub.quad_hessians, sub.anchors)
                     - sub.quad_grads)
    rhs[n + 1:] = np.einsum("ij,ij->i", C, sub.anchors) - sub.lin_values
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularSystemError(f"KKT matrix is singular (condition {cond:.3e})",
                                  condition=cond)
    sol = np.linalg.solve(K, rhs)
    x, t, nu = sol[:n], sol[n], sol[n + 1:]
    mu = lam + nu
    if k == 1:
        min_eig = _reduced_min_eig(sub, np.eye(n))
    else:
        min_eig = _reduced_min_eig(sub, build_constraints(sub).null_basis)
    return SubproblemSolution(
        xhat=x, t_value=float(t), mu=mu,
        kkt_residual=kkt_residual(sub, x, t, mu),
        bounded=bool(min_eig >= -_unbounded_tol(sub)),
        reduced_hessian_min_eig=min_eig, method="full")


def solve_kkt_reduced(sub: NewtonSubproblem, reduced: ReducedSystem | None = None,
                      project_anchors: bool = True,
                      allow_indefinite: bool = False) -> SubproblemSolution:
    """Solve the subproblem on the null space of the constraints.

    With ``x = U x_u + p`` the stationarity condition projected by ``U^T``
    becomes a ``(n - k + 1)``-dimensional system in the projected Hessians
    ``U^T H_s U``.  When ``project_anchors`` is true each anchor is first
    projected onto the active subspace, which leaves only projected Hessians
    in the system.  With ``allow_indefinite`` a nonsingular indefinite
    reduced Hessian yields the stationary point instead of an error; the
    solution is then flagged as unbounded.

    Raises
    ------
    UnboundedSubproblemError
        The weighted Hessian has a negative eigenvalue on the null space.
    SingularSystemError
        The weighted Hessian is singular on the null space.
    """
    if sub.k == 1:
        return solve_kkt_full(sub)
    if reduced is None:
        reduced = build_constraints(sub)
    U, p = reduced.null_basis, reduced.particular
    lam = sub.lambdas
    if U.shape[1] == 0:
        x = p.copy()
        min_eig = np.inf
        bounded = True
        res_reduced = 0.0
    else:
        HU = np.einsum("ijk,kl->ijl", sub.quad_hessians, U)
        proj_H = np.einsum("jm,ijl->iml", U, HU)
        Wr = np.einsum("i,iml->ml", lam, proj_H)
        Wr = 0.5 * (Wr + Wr.T)
        eigs = np.linalg.eigvalsh(Wr)
        min_eig = float(eigs[0])
        bounded = min_eig >= -_unbounded_tol(sub)
        if not bounded and not allow_indefinite:
            raise UnboundedSubproblemError(
                f"reduced Hessian has eigenvalue {min_eig:.3e}", min_eigenvalue=min_eig)
        if np.abs(eigs).min() <= 1e-13 * max(1.0, np.abs(eigs).max()):
            raise SingularSystemError("reduced Hessian is singular",
                                      condition=np.inf)
        diff = sub.anchors - p[None, :]
        if project_anchors:
            coords = diff @ U
            terms = np.einsum("iml,il->im", proj_H, coords)
        else:
            terms = np.einsum("ijl,ij->il", HU, diff)
        rhs = lam @ (terms - sub.quad_grads @ U)
        x_u = np.linalg.solve(Wr, rhs)
        x = U @ x_u + p
        res_reduced = float(np.linalg.norm(Wr @ x_u - rhs))
    lin = sub.linearizations(x)
    t = float(lin.mean())
    # multipliers recovered from the range-space part of stationarity
    d = x[None, :] - sub.anchors
    model_grad = lam @ (sub.quad_grads + np.einsum("ijk,ik->ij", sub.quad_hessians, d))
    M = np.vstack([sub.lin_grads.T, np.ones((1, sub.k))])
    target = np.concatenate([lam @ sub.lin_grads - model_grad, [1.0]])
    mu = np.linalg.lstsq(M, target, rcond=None)[0]
    if project_anchors:
        residual = float(np.hypot(res_reduced, np.linalg.norm(
            reduced.constraint_matrix @ x - reduced.rhs)))
    else:
        residual = kkt_residual(sub, x, t, mu)
    return SubproblemSolution(
        xhat=x, t_value=t, mu=mu, kkt_residual=residual, bounded=bool(bounded),
        reduced_hessian_min_eig=min_eig,
        method="reduced-projected" if project_anchors else "reduced")


def solve_newton_subproblem(sub: NewtonSubproblem, reduced_threshold: float = 1e8,
                            project_anchors: bool = True,
                            allow_indefinite: bool = False) -> SubproblemSolution:
    """Dispatch between the full KKT solve and the reduced solve.

    The reduced path is used as soon as one Hessian has condition number
    above ``reduced_threshold``; otherwise the full KKT system is solved.
    Either way the ``bounded`` flag of the result reports the sign test.
    """
    if sub.k > 1 and reduced_threshold is not None:
        conds = [np.linalg.cond(H) for H in sub.quad_hessians]
        if max(conds) > reduced_threshold:
            return solve_kkt_reduced(sub, project_anchors=project_anchors,
                                     allow_indefinite=allow_indefinite)
    return solve_kkt_full(sub)


# ---------------------------------------------------------------------------
# proximal cutting-plane step
# ---------------------------------------------------------------------------

class Cut(NamedTuple):
    """Affine function ``value + gradient.(x - anchor)``."""

    value: float
    gradient: np.ndarray
    anchor: np.ndarray

    def __call__(self, x):
        return float(self.value + np.dot(self.gradient, np.asarray(x) - self.anchor))


def _prox_dual(values_at_center, grads, center, rho):
    A = grads.T / np.sqrt(rho)
    res = solve_simplex_qp(A, -values_at_center)
    alpha = res.weights
    xhat = center - (alpha @ grads) / rho
    return xhat, alpha


def solve_proximal_cut_qp(cuts: Sequence[Cut], center, rho: float):
    """Minimize ``max_s l_s(x) + rho/2 |x - center|^2``.

    Solved through its dual over the simplex of cut weights ``alpha``:
    ``xhat = center - sum alpha_s grad l_s / rho``.

    Returns
    -------
    xhat : ndarray
    alpha : ndarray
        Dual weights of the cuts.
    """
    if not cuts:
        raise InvalidInputError("at least one cut is required")
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    z = np.atleast_1d(np.asarray(center, dtype=float))
    grads = np.array([np.atleast_1d(c.gradient) for c in cuts], dtype=float)
    values = np.array([c(z) for c in cuts])
    return _prox_dual(values, grads, z, float(rho))
