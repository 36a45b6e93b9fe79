import math

import numpy as np
import pytest

from kbundle.bundle import (Bundle, bundle_theta, diameter, optimality_certificate,
                            points_distinct, replace_reference, sigma_check, theta)
from kbundle.errors import DegenerateBundleError, InvalidInputError
from kbundle.oracle import CountingOracle, FunctionOracle, OracleSample

from oracles import abs_plus_square, max_affine


def sample(x, g, value=0.0):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return OracleSample(x, value, np.atleast_1d(np.asarray(g, dtype=float)),
                        np.eye(x.size))


class TestTheta:
    def test_single_gradient(self):
        est = theta([[3.0, 4.0]])
        assert est.theta == pytest.approx(5.0, abs=1e-14)
        np.testing.assert_allclose(est.lam, [1.0])

    def test_symmetric_pair(self):
        est = theta([[1.0, 0.0], [-1.0, 0.0]])
        assert est.theta == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(est.lam, [0.5, 0.5], atol=1e-12)

    def test_orthogonal_pair_matches_grid(self):
        G = np.array([[2.0, 0.0], [0.0, 2.0]])
        grid = np.linspace(0, 1, 100001)
        norms = np.linalg.norm(grid[:, None] * G[0] + (1 - grid)[:, None] * G[1], axis=1)
        est = theta(G)
        assert est.theta == pytest.approx(norms.min(), abs=1e-9)
        assert est.theta == pytest.approx(math.sqrt(2), abs=1e-12)
        np.testing.assert_allclose(est.aggregate_gradient, [1.0, 1.0], atol=1e-12)

    def test_interior_face(self):
        # hull of three points; the nearest point is on the edge between the first two
        G = np.array([[1.0, 1.0], [-1.0, 1.0], [0.0, 3.0]])
        est = theta(G)
        assert est.theta == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(est.lam, [0.5, 0.5, 0.0], atol=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            theta([[np.nan, 1.0]])
        with pytest.raises(InvalidInputError):
            theta(np.zeros((0, 2)))

    def test_bundle_theta_center(self):
        S = Bundle((sample([0.5], [2.0]), sample([-0.5], [-2.0])))
        est = bundle_theta(S)
        np.testing.assert_allclose(est.center, [0.0], atol=1e-15)


class TestSigma:
    def test_single_zero_gradient(self):
        assert sigma_check([[0.0, 0.0]]) == pytest.approx(1.0)

    def test_identical_gradients(self):
        assert sigma_check([[1.0, 2.0], [1.0, 2.0]]) == pytest.approx(0.0, abs=1e-14)

    def test_unit_vectors_match_gram_eigenvalue(self):
        # Gram matrix of the columns (1,0,1), (0,1,1) is [[2,1],[1,2]], eigenvalues 3 and 1
        assert sigma_check([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(1.0, abs=1e-14)

    def test_too_many_vectors(self):
        with pytest.raises(InvalidInputError, match="n \\+ 1"):
            sigma_check(np.ones((4, 2)))


class TestReplace:
    def test_single_point_always_replaced(self):
        S = Bundle((sample([1.0], [1.0]),))
        new, idx, thetas = replace_reference(S, sample([0.2], [0.4]))
        assert idx == 0 and new[0].point[0] == 0.2
        assert thetas.shape == (1,)

    def test_same_sign_point_replaced(self):
        f = abs_plus_square()
        S = Bundle.from_points(f, [[0.5], [-0.5]])
        new, idx, thetas = replace_reference(S, f(np.array([-0.1])))
        assert idx == 1
        # independent evaluation of both swaps
        g = {x: np.sign(x) + 2 * x for x in (0.5, -0.5, -0.1)}
        expect = [theta([[g[-0.5]], [g[-0.1]]]).theta, theta([[g[0.5]], [g[-0.1]]]).theta]
        np.testing.assert_allclose(thetas, expect, atol=1e-14)

    def test_full_bundle_of_affine_max(self):
        rng = np.random.default_rng(3)
        G = rng.standard_normal((3, 2))
        G[2] = -(0.3 * G[0] + 0.3 * G[1]) / 0.4
        f = max_affine(G, np.zeros(3))
        # one point per region, found by sampling directions
        pts = {}
        for ang in np.linspace(0, 2 * np.pi, 3600, endpoint=False):
            x = 0.1 * np.array([np.cos(ang), np.sin(ang)])
            pts.setdefault(f(x).region, x)
        assert len(pts) == 3
        S = Bundle.from_points(f, [pts[i] for i in range(3)])
        for i in range(3):
            # regions are cones, so halving a point keeps its region
            cand = f(0.5 * pts[i])
            assert cand.region == i
            _, idx, _ = replace_reference(S, cand)
            assert idx == i

    def test_tie_goes_to_lowest_index(self):
        S = Bundle((sample([1.0], [1.0]), sample([2.0], [1.0])))
        _, idx, thetas = replace_reference(S, sample([3.0], [1.0]))
        assert thetas[0] == thetas[1] and idx == 0

    def test_coinciding_candidate(self):
        S = Bundle((sample([1.0], [1.0]), sample([2.0], [1.0])))
        with pytest.raises(DegenerateBundleError):
            replace_reference(S, sample([2.0], [3.0]))


class TestCertificate:
    def test_single_point(self):
        S = Bundle((sample([0.3, 0.1], [1.0, 0.0]),))
        cert = optimality_certificate(S, bundle_theta(S))
        np.testing.assert_allclose(cert.center, [0.3, 0.1])
        assert cert.diameter == 0.0 and cert.upper_value is None

    def test_symmetric_pair(self):
        f = CountingOracle(abs_plus_square())
        S = Bundle.from_points(f, [[0.5], [-0.5]])
        est = bundle_theta(S)
        cert = optimality_certificate(S, est, oracle=f, lipschitz=3.0)
        assert cert.center[0] == pytest.approx(0.0, abs=1e-15)
        assert cert.diameter == 1.0
        assert cert.gap_bound == pytest.approx(3.0)
        assert cert.upper_value == pytest.approx(0.0, abs=1e-15)
        assert f.calls == 3

    def test_center_outside_domain(self):
        f = abs_plus_square()
        S = Bundle.from_points(f, [[0.5], [-0.5]])
        kinked = FunctionOracle(f.fun, in_domain=lambda x: False)
        cert = optimality_certificate(S, bundle_theta(S), oracle=kinked)
        assert cert.upper_value is None and cert.gap_bound is None

    def test_center_matches_extended_precision(self):
        rng = np.random.default_rng(0)
        P = rng.standard_normal((3, 4)) * 10
        G = rng.standard_normal((3, 4))
        S = Bundle(tuple(sample(p, g) for p, g in zip(P, G)))
        est = bundle_theta(S)
        cert = optimality_certificate(S, est)
        exact = [math.fsum(est.lam[i] * P[i, j] for i in range(3)) for j in range(4)]
        np.testing.assert_array_equal(cert.center, exact)

    def test_mismatched_multipliers(self):
        S = Bundle((sample([0.0], [1.0]), sample([1.0], [1.0])))
        est = theta([[1.0]])
        with pytest.raises(InvalidInputError):
            optimality_certificate(S, est)


def test_bundle_rejects_duplicates_and_mixed_dimensions():
    with pytest.raises(DegenerateBundleError):
        Bundle((sample([1.0], [1.0]), sample([1.0], [2.0])))
    with pytest.raises(InvalidInputError):
        Bundle((sample([1.0], [1.0]), sample([1.0, 2.0], [2.0, 0.0])))
    with pytest.raises(InvalidInputError):
        Bundle(())


def test_distinctness_is_scale_relative():
    assert points_distinct([1e-20], [2e-20])
    assert not points_distinct([1.0], [1.0 + 1e-16])


def test_diameter_matches_brute_force():
    rng = np.random.default_rng(1)
    P = rng.standard_normal((6, 3))
    brute = max(np.linalg.norm(a - b) for a in P for b in P)
    assert diameter(P) == pytest.approx(brute, rel=1e-15)
    assert diameter(P[:1]) == 0.0
