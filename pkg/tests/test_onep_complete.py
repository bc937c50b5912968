"""
tests/test_onep_complete.py — Complete one-period markets.

Joint isomorphism is cross-checked against an exhaustive permutation search.
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from itertools import permutations

import numpy as np
import pytest

from src.isomarket.errors import InvalidInputError
from src.isomarket.finprob import MultiMeasureSpace, expectation, measures_preserved
from src.isomarket.onep_complete import (
    CompleteMarket1P,
    Verdict,
    canonical_rn_space,
    casino_comparison,
    casino_product,
    classification_invariant,
    implied_measure,
    isomorphic_up_to_casino,
    jointly_isomorphic,
    price,
    project_onto_q,
    quantile_market,
    transport_payoff,
)


def brute_force_isomorphic(s1: MultiMeasureSpace, s2: MultiMeasureSpace, tol=1e-10) -> bool:
    """Search every bijection between the non-null atoms."""
    a1, a2 = s1.base.support, s2.base.support
    if len(a1) != len(a2):
        return False
    m1, m2 = s1.measures[:, a1], s2.measures[:, a2]
    return any(np.all(np.abs(m1 - m2[:, list(p)]) <= tol) for p in permutations(range(len(a2))))


def random_space(rng, atoms, n, lattice=False):
    """Random valid space; lattice values make coincidences (and isomorphisms) likely."""
    if lattice:
        raw = rng.integers(1, 3, size=(n + 1, atoms)).astype(float)
    else:
        raw = rng.uniform(0.1, 1.0, size=(n + 1, atoms))
    raw /= raw.sum(axis=1, keepdims=True)
    return MultiMeasureSpace.from_arrays(raw[0], list(raw[1:]))


class TestPrice:
    def test_constant_payoff_is_scale(self):
        m = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75], scale_c=0.97)
        assert price(m, [1.0, 1.0]) == pytest.approx(0.97)

    def test_simple_claim(self):
        m = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75])
        assert price(m, [4.0, 0.0]) == pytest.approx(1.0)

    def test_positive_claim_has_positive_price(self):
        m = CompleteMarket1P.from_measures([0.2, 0.3, 0.5], [0.1, 0.1, 0.8])
        assert price(m, [0.0, 1.0, 0.0]) > 0

    def test_misaligned_payoff(self):
        m = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75])
        with pytest.raises(InvalidInputError):
            price(m, [1.0, 2.0, 3.0])

    def test_implied_measure_recovers_q(self):
        m = CompleteMarket1P.from_measures([0.2, 0.3, 0.5], [0.1, 0.1, 0.8], scale_c=0.9)
        assert np.allclose(implied_measure(m), [0.1, 0.1, 0.8])


class TestClassificationInvariant:
    def test_q_equals_p0(self):
        inv = classification_invariant(MultiMeasureSpace.from_arrays([0.2, 0.3, 0.5], [[0.2, 0.3, 0.5]]))
        assert len(inv.entries) == 1
        entry = inv.entries[0]
        assert entry.rn_vector == pytest.approx((1.0,))
        assert entry.mass == pytest.approx(1.0)
        assert entry.profile.atom_masses == pytest.approx((0.5, 0.3, 0.2))
        assert entry.profile.continuous_mass == 0.0

    def test_relabeling_gives_same_invariant(self):
        s1 = MultiMeasureSpace.from_arrays([0.2, 0.3, 0.5], [[0.1, 0.4, 0.5]])
        s2 = MultiMeasureSpace.from_arrays([0.5, 0.2, 0.3], [[0.5, 0.1, 0.4]])
        assert classification_invariant(s1).matches(classification_invariant(s2))

    def test_distinct_markets(self):
        s1 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.25, 0.75]])
        s2 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.3, 0.7]])
        assert not classification_invariant(s1).matches(classification_invariant(s2))

    def test_masses_and_means(self):
        rng = np.random.default_rng(5)
        inv = classification_invariant(random_space(rng, 7, 2))
        masses = np.array([e.mass for e in inv.entries])
        rn = np.array([e.rn_vector for e in inv.entries])
        assert masses.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(masses @ rn, 1.0, atol=1e-10)

    def test_casino_product_smears_profiles(self):
        s = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.25, 0.75]])
        inv = classification_invariant(casino_product(CompleteMarket1P(s), 4).space)
        assert all(e.profile.continuous_mass == 1.0 for e in inv.entries)
        assert inv.matches(classification_invariant(s).refine(4))


class TestJointIsomorphism:
    def test_swap(self):
        s1 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.25, 0.75]], ["a", "b"])
        s2 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.75, 0.25]], ["x", "y"])
        assert jointly_isomorphic(s1, s2) == {"a": "y", "b": "x"}

    def test_identity(self):
        s = MultiMeasureSpace.from_arrays([0.2, 0.3, 0.5], [[0.1, 0.4, 0.5]])
        assert jointly_isomorphic(s, s) == {0: 0, 1: 1, 2: 2}

    def test_absent(self):
        s1 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.25, 0.75]])
        s2 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.3, 0.7]])
        assert jointly_isomorphic(s1, s2) is None

    def test_different_measure_counts_rejected(self):
        s1 = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.25, 0.75]])
        s2 = MultiMeasureSpace.from_arrays([0.5, 0.5])
        with pytest.raises(InvalidInputError):
            jointly_isomorphic(s1, s2)

    def test_agrees_with_exhaustive_search(self):
        rng = np.random.default_rng(2024)
        for trial in range(200):
            atoms = int(rng.integers(1, 7))
            n = int(rng.integers(1, 3))
            s1 = random_space(rng, atoms, n, lattice=True)
            if trial % 2:
                order = rng.permutation(atoms)
                s2 = MultiMeasureSpace.from_arrays(s1.p0[order], [m[order] for m in s1.extra_measures])
            else:
                s2 = random_space(rng, atoms, n, lattice=True)
            mapping = jointly_isomorphic(s1, s2)
            assert (mapping is not None) == brute_force_isomorphic(s1, s2)
            if mapping is not None:
                assert measures_preserved(s1, s2, mapping)


class TestQuantileMarket:
    def test_two_atom_steps(self):
        qm = quantile_market(CompleteMarket1P.from_measures([0.5, 0.5], [0.75, 0.25]))
        assert np.allclose(qm.breakpoints, [0.0, 0.5, 1.0])
        assert np.allclose(qm.rn_values, [0.5, 1.5])

    def test_casino_is_one_step(self):
        qm = quantile_market(CompleteMarket1P.from_measures([0.3, 0.7], [0.3, 0.7]))
        assert np.allclose(qm.breakpoints, [0.0, 1.0])
        assert np.allclose(qm.rn_values, [1.0])

    def test_unit_price_and_mass(self):
        qm = quantile_market(CompleteMarket1P.from_measures([0.2, 0.3, 0.5], [0.1, 0.1, 0.8], scale_c=0.95))
        assert qm.total_mass() == pytest.approx(1.0, abs=1e-10)
        assert qm.price_step([0.0, 1.0], [1.0]) == pytest.approx(0.95, abs=1e-12)
        assert qm.price_function(np.ones_like) == pytest.approx(0.95, abs=1e-12)

    def test_prices_agree_on_random_payoffs(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(1000):
            atoms = int(rng.integers(2, 9))
            p0 = rng.dirichlet(np.ones(atoms))
            q = rng.dirichlet(np.ones(atoms))
            m = CompleteMarket1P.from_measures(p0, q, scale_c=float(rng.uniform(0.5, 1.5)))
            x = rng.normal(size=atoms)
            worst = max(worst, abs(price(m, x) - quantile_market(m).price_step(*transport_payoff(m, x))))
        assert worst <= 1e-10


class TestCasinoEquivalence:
    def test_refinement_is_isomorphic(self):
        m1 = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75])
        m2 = CompleteMarket1P.from_measures([0.25] * 4, [0.125, 0.125, 0.375, 0.375])
        assert isomorphic_up_to_casino(m1, m2)
        assert jointly_isomorphic(m1.space, m2.space) is None

    def test_scale_matters(self):
        m1 = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75], scale_c=1.0)
        m2 = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75], scale_c=0.9)
        assert casino_comparison(m1, m2).verdict is Verdict.DISTINCT

    def test_different_rn_law(self):
        m1 = CompleteMarket1P.from_measures([0.5, 0.5], [0.25, 0.75])
        m2 = CompleteMarket1P.from_measures([0.5, 0.5], [0.3, 0.7])
        assert not isomorphic_up_to_casino(m1, m2)

    def test_invariant_under_casino_product(self):
        m = CompleteMarket1P.from_measures([0.2, 0.3, 0.5], [0.1, 0.1, 0.8])
        for grid in (1, 3, 16):
            assert isomorphic_up_to_casino(m, casino_product(m, grid))

    def test_canonical_rn_space_is_casino_equivalent(self):
        s = MultiMeasureSpace.from_arrays([0.25] * 4, [[0.125, 0.125, 0.375, 0.375]])
        collapsed = canonical_rn_space(s)
        assert collapsed.size == 2
        assert isomorphic_up_to_casino(CompleteMarket1P(s), CompleteMarket1P(collapsed))


class TestProjection:
    def test_injective_rn_leaves_payoff(self):
        s = MultiMeasureSpace.from_arrays([0.2, 0.3, 0.5], [[0.1, 0.4, 0.5]])
        assert np.array_equal(project_onto_q(s, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_equal_rn_averages(self):
        s = MultiMeasureSpace.from_arrays([0.5, 0.5], [[0.5, 0.5]])
        assert np.allclose(project_onto_q(s, [0.0, 2.0]), [1.0, 1.0])

    def test_preserves_every_measure(self):
        s = MultiMeasureSpace.from_arrays([0.25] * 4, [[0.125, 0.125, 0.375, 0.375], [0.1, 0.1, 0.4, 0.4]])
        payoff = np.array([1.0, 3.0, -2.0, 5.0])
        projected = project_onto_q(s, payoff)
        for i in range(3):
            assert expectation(s, projected, i) == pytest.approx(expectation(s, payoff, i), abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        s = random_space(rng, 6, 1, lattice=True)
        once = project_onto_q(s, rng.normal(size=6))
        assert np.allclose(project_onto_q(s, once), once, atol=1e-12)
