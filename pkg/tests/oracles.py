"""Small scripted oracles shared by the tests."""

import numpy as np

from kbundle.oracle import FunctionOracle


def abs_plus_square():
    """``|x| + x^2`` on the line, regions labelled by sign."""
    return FunctionOracle(
        lambda x: (abs(x[0]) + x[0] ** 2, np.array([np.sign(x[0]) + 2 * x[0]]),
                   np.array([[2.0]])),
        in_domain=lambda x: x[0] != 0, region=lambda x: int(np.sign(x[0])))


def abs_minus_quarter():
    """``|x| - x^2/4``: weakly convex with parameter 1/2."""
    return FunctionOracle(
        lambda x: (abs(x[0]) - 0.25 * x[0] ** 2,
                   np.array([np.sign(x[0]) - 0.5 * x[0]]), np.array([[-0.5]])),
        in_domain=lambda x: x[0] != 0, region=lambda x: int(np.sign(x[0])))


def quadratic(A, b):
    """``1/2 x.A.x - b.x``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return FunctionOracle(lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b, A))


def smooth_square(scale):
    """``scale * x^2`` on the line."""
    return FunctionOracle(lambda x: (scale * x[0] ** 2, np.array([2 * scale * x[0]]),
                                     np.array([[2.0 * scale]])))


def max_affine(G, c):
    """``max_i G_i.x + c_i`` with a tiny common curvature so Hessians exist."""
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)

    def fun(x):
        vals = G @ x + c
        i = int(np.argmax(vals))
        return vals[i], G[i], np.zeros((x.size, x.size))

    def region(x):
        return int(np.argmax(G @ x + c))

    return FunctionOracle(fun, region=region)


def two_piece_step(a, b):
    """Newton point of ``|x| + x^2`` for the bundle ``{a, -b}`` (``a, b > 0``).

    Both linearizations agree at ``(a - b)(a + b) / (2 (1 + a + b))``; with
    ``k = 2`` in one dimension the active subspace is that single point.
    """
    return (a - b) * (a + b) / (2.0 * (1.0 + a + b))
