"""Black-box second-order oracles.

An oracle maps a point to an :class:`OracleSample`: value, gradient and
Hessian of the objective, together with a flag telling whether the point
lies in the open set where the objective is twice continuously
differentiable, and an optional label of the smooth piece that is active
there.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Hashable, Optional

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class OracleSample:
    """Oracle data at one point.

    Attributes
    ----------
    point : ndarray, shape (n,)
    value : float
    gradient : ndarray, shape (n,)
    hessian : ndarray, shape (n, n) or None
        ``None`` only for first-order oracles.
    in_domain : bool
        False when the point is (numerically) a nonsmooth point.
    region : hashable or None
        Label of the active smooth piece, when the oracle knows one.
    """

    point: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None
    in_domain: bool = True
    region: Optional[Hashable] = None

    def __post_init__(self):
        point = np.array(self.point, dtype=float).reshape(-1)
        gradient = np.array(self.gradient, dtype=float).reshape(-1)
        if gradient.shape != point.shape:
            raise InvalidInputError(
                f"gradient has shape {gradient.shape}, point has {point.shape}")
        if not (np.all(np.isfinite(point)) and np.all(np.isfinite(gradient))
                and np.isfinite(self.value)):
            raise InvalidInputError("oracle sample contains non-finite entries")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "gradient", gradient)
        object.__setattr__(self, "value", float(self.value))
        if self.hessian is not None:
            hess = np.array(self.hessian, dtype=float)
            n = point.size
            if hess.shape != (n, n):
                raise InvalidInputError(f"hessian must be {n}x{n}")
            if not np.all(np.isfinite(hess)):
                raise InvalidInputError("hessian contains non-finite entries")
            scale = max(1.0, float(np.max(np.abs(hess))))
            if np.max(np.abs(hess - hess.T)) > 1e-12 * scale:
                raise InvalidInputError("hessian is not symmetric")
            object.__setattr__(self, "hessian", hess)

    @property
    def dim(self) -> int:
        return self.point.size


class Oracle:
    """Base class for oracles; subclasses implement :meth:`evaluate`."""

    def evaluate(self, x) -> OracleSample:  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x) -> OracleSample:
        return self.evaluate(x)


class FunctionOracle(Oracle):
    """Oracle built from a callable returning ``(value, gradient, hessian)``.

    ``in_domain`` and ``region`` are optional callables of the point.
    """

    def __init__(self, fun: Callable, in_domain: Callable | None = None,
                 region: Callable | None = None):
        self.fun = fun
        self._in_domain = in_domain
        self._region = region

    def evaluate(self, x) -> OracleSample:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        value, grad, hess = self.fun(x)
        return OracleSample(
            point=x,
            value=value,
            gradient=np.atleast_1d(grad),
            hessian=None if hess is None else np.atleast_2d(hess),
            in_domain=True if self._in_domain is None else bool(self._in_domain(x)),
            region=None if self._region is None else self._region(x),
        )


class CountingOracle(Oracle):
    """Wrapper counting every evaluation of the wrapped oracle."""

    def __init__(self, oracle: Oracle):
        self.oracle = oracle
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate(self, x) -> OracleSample:
        with self._lock:
            self.calls += 1
        return self.oracle.evaluate(x)


class IdentityHessianOracle(Oracle):
    """First-order analogue: reports ``scale * I`` in place of the Hessian."""

    def __init__(self, oracle: Oracle, scale: float):
        if not scale > 0:
            raise InvalidInputError("scale must be positive")
        self.oracle = oracle
        self.scale = float(scale)

    def evaluate(self, x) -> OracleSample:
        s = self.oracle.evaluate(x)
        return OracleSample(s.point, s.value, s.gradient,
                            self.scale * np.eye(s.dim), s.in_domain, s.region)


def identity_hessian_wrapper(oracle: Oracle, scale: float) -> Oracle:
    return IdentityHessianOracle(oracle, scale)


class SumOracle(Oracle):
    """Oracle for ``f + r``; domain and region come from ``f``."""

    def __init__(self, f: Oracle, r: Oracle):
        self.f = f
        self.r = r

    def evaluate(self, x) -> OracleSample:
        a = self.f.evaluate(x)
        b = self.r.evaluate(x)
        hess = None
        if a.hessian is not None and b.hessian is not None:
            hess = a.hessian + b.hessian
        return OracleSample(a.point, a.value + b.value, a.gradient + b.gradient,
                            hess, a.in_domain and b.in_domain, a.region)
