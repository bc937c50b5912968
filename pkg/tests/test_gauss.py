"""
tests/test_gauss.py — Gaussian markets: canonical form and mutual funds.
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

import numpy as np
import pytest

from src.isomarket.errors import InvalidInputError, NumericalError
from src.isomarket.gauss import (
    GaussianMarket,
    apply_basis_change,
    canonical_gauss,
    canonical_market,
    gauss_isomorphic,
    min_variance_solve,
    orthonormal_completion,
    portfolio_variance,
    span_residual,
    two_fund_basis,
    validate_gaussian,
)


def random_market(rng, n):
    b = rng.normal(size=(n, n))
    return GaussianMarket(rng.normal(size=n), b @ b.T + n * np.eye(n), rng.normal(size=n))


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


class TestCanonicalForm:
    def test_already_canonical(self):
        form = canonical_gauss(GaussianMarket([1.0, 0.0], np.eye(2), [0.0, 1.0]))
        assert form.invariants == pytest.approx((2, 1.0, 0.0, 1.0))

    def test_rotated_example(self):
        form = canonical_gauss(GaussianMarket([3.0, 4.0], np.eye(2), [5.0, 0.0]))
        assert form.invariants == pytest.approx((2, 5.0, 3.0, 4.0))

    def test_scaled_covariance(self):
        form = canonical_gauss(GaussianMarket([2.0, 0.0], 4 * np.eye(2), [4.0, 2.0]))
        assert form.invariants == pytest.approx((2, 1.0, 2.0, 1.0))

    def test_zero_mean_normalises_cost(self):
        form = canonical_gauss(GaussianMarket([0.0, 0.0], np.eye(2), [3.0, 4.0]))
        assert form.invariants == pytest.approx((2, 0.0, 5.0, 0.0))

    def test_canonicalizer_reaches_normal_form(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 5):
            market = random_market(rng, n)
            form = canonical_gauss(market)
            image, target = form.apply(market), canonical_market(form)
            assert np.allclose(image.mean, target.mean, atol=1e-10)
            assert np.allclose(image.covariance, target.covariance, atol=1e-10)
            assert np.allclose(image.cost, target.cost, atol=1e-10)

    def test_invariant_under_basis_change(self):
        rng = np.random.default_rng(1)
        market = random_market(rng, 4)
        reference = canonical_gauss(market).invariants
        for _ in range(20):
            basis = rng.normal(size=(4, 4)) + 3 * np.eye(4)
            moved = canonical_gauss(apply_basis_change(market, basis)).invariants
            assert np.allclose(moved, reference, atol=1e-8)


class TestIsomorphism:
    def test_orthogonal_relabeling(self):
        rng = np.random.default_rng(2)
        market = random_market(rng, 3)
        assert gauss_isomorphic(market, apply_basis_change(market, random_orthogonal(rng, 3)))

    def test_same_invariants_from_different_bases(self):
        rng = np.random.default_rng(3)
        canon = GaussianMarket([5.0, 0.0, 0.0], np.eye(3), [3.0, 4.0, 0.0])
        a = apply_basis_change(canon, random_orthogonal(rng, 3))
        b = apply_basis_change(canon, rng.normal(size=(3, 3)) + 2 * np.eye(3))
        assert gauss_isomorphic(a, b)

    def test_differing_alpha(self):
        a = GaussianMarket([1.0, 0.0], np.eye(2), [0.0, 1.0])
        b = GaussianMarket([2.0, 0.0], np.eye(2), [0.0, 1.0])
        assert not gauss_isomorphic(a, b)

    def test_differing_dimension(self):
        a = GaussianMarket([1.0], np.eye(1), [1.0])
        b = GaussianMarket([1.0, 0.0], np.eye(2), [1.0, 0.0])
        assert not gauss_isomorphic(a, b)

    def test_equivalence_on_a_batch(self):
        rng = np.random.default_rng(4)
        canon = GaussianMarket([1.0, 0.0], np.eye(2), [0.5, 2.0])
        batch = [apply_basis_change(canon, rng.normal(size=(2, 2)) + 2 * np.eye(2)) for _ in range(5)]
        for a in batch:
            assert gauss_isomorphic(a, a)
            for b in batch:
                assert gauss_isomorphic(a, b) == gauss_isomorphic(b, a)


class TestValidation:
    def test_asymmetric_covariance(self):
        with pytest.raises(InvalidInputError):
            validate_gaussian(GaussianMarket([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], [1.0, 0.0]))

    def test_singular_covariance(self):
        with pytest.raises(NumericalError):
            validate_gaussian(GaussianMarket([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            validate_gaussian(GaussianMarket([0.0, 0.0], np.eye(2), [1.0]))


class TestOrthonormalCompletion:
    def test_completes_a_row(self):
        basis = orthonormal_completion([[0.0, 1.0, 0.0]])
        assert np.allclose(basis @ basis.T, np.eye(3), atol=1e-12)
        assert np.allclose(basis[0], [0.0, 1.0, 0.0])

    def test_batch(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=(10, 1, 4))
        v /= np.linalg.norm(v, axis=2, keepdims=True)
        basis = orthonormal_completion(v)
        assert basis.shape == (10, 4, 4)
        for b, row in zip(basis, v[:, 0]):
            assert np.allclose(b @ b.T, np.eye(4), atol=1e-12)
            assert np.allclose(b[0], row)


class TestMutualFunds:
    def test_identity_covariance(self):
        funds = two_fund_basis(GaussianMarket([1.0, 2.0], np.eye(2), [0.0, 1.0]))
        assert np.allclose(funds.first, [1.0, 2.0])
        assert np.allclose(funds.second, [0.0, 1.0])
        assert not funds.degenerate

    def test_parallel_mean_and_cost(self):
        funds = two_fund_basis(GaussianMarket([1.0, 2.0], np.eye(2), [2.0, 4.0]))
        assert funds.degenerate
        assert funds.span().shape == (2, 1)

    def test_min_variance_example(self):
        market = GaussianMarket([1.0, 0.0], np.eye(2), [0.0, 1.0])
        x = min_variance_solve(market, 2.0, 3.0)
        assert np.allclose(x, [2.0, 3.0])
        assert portfolio_variance(market, x) == pytest.approx(13.0)

    def test_min_variance_beats_grid_search(self):
        rng = np.random.default_rng(6)
        market = random_market(rng, 3)
        x = min_variance_solve(market, 1.5, -0.5)
        assert market.mean @ x == pytest.approx(1.5, abs=1e-10)
        assert market.cost @ x == pytest.approx(-0.5, abs=1e-10)
        free = np.cross(market.mean, market.cost)
        best = portfolio_variance(market, x)
        for s in np.linspace(-2, 2, 401):
            assert portfolio_variance(market, x + s * free) >= best - 1e-10

    def test_zero_targets(self):
        rng = np.random.default_rng(7)
        assert np.allclose(min_variance_solve(random_market(rng, 4), 0.0, 0.0), 0.0)

    def test_solution_in_fund_span(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            market = random_market(rng, n)
            x = min_variance_solve(market, *rng.normal(size=2))
            assert span_residual(two_fund_basis(market), x) <= 1e-10

    def test_rotation_commutes_with_solve(self):
        rng = np.random.default_rng(9)
        market = random_market(rng, 4)
        rot = random_orthogonal(rng, 4)
        direct = min_variance_solve(market, 1.0, 2.0)
        rotated = rot @ min_variance_solve(apply_basis_change(market, rot), 1.0, 2.0)
        assert np.allclose(direct, rotated, atol=1e-10)

    def test_degenerate_consistent_targets(self):
        market = GaussianMarket([1.0, 2.0], np.eye(2), [2.0, 4.0])
        x = min_variance_solve(market, 1.0, 2.0)
        assert market.mean @ x == pytest.approx(1.0)

    def test_degenerate_inconsistent_targets(self):
        market = GaussianMarket([1.0, 2.0], np.eye(2), [2.0, 4.0])
        with pytest.raises(InvalidInputError):
            min_variance_solve(market, 1.0, 3.0)
