"""
onep_complete.py — Complete one-period markets.

A complete market is a space with exactly one extra measure Q (the pricing
measure) and a scale C = price of the constant payoff 1. Everything here is
classified through the law of the Radon–Nikodym vector:

  - classification_invariant / jointly_isomorphic   isomorphism up to atom relabeling
  - quantile_market / casino_comparison              isomorphism after adding a casino
  - project_onto_q                                   conditioning a payoff on the RN vector
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable

import numpy as np

from .config import IDENTITY_TOL, MEASURE_TOL
from .errors import InvalidInputError
from .finprob import (
    MultiMeasureSpace,
    Payoff,
    as_payoff,
    group_by_tolerance,
    product_with_casino,
    require_valid,
    rn_derivative,
    rn_vectors,
)
from .logger import get_logger

log = get_logger(__name__)


# ── Markets ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CompleteMarket1P:
    space: MultiMeasureSpace
    scale_c: float = 1.0

    @classmethod
    def from_measures(cls, p0, q, scale_c: float = 1.0, labels=None) -> "CompleteMarket1P":
        return cls(MultiMeasureSpace.from_arrays(p0, [q], labels), float(scale_c))

    @property
    def q(self) -> np.ndarray:
        return self.space.extra_measures[0]


def validate_market(market: CompleteMarket1P) -> None:
    if market.space.n != 1:
        raise InvalidInputError(f"a complete market carries one pricing measure, got {market.space.n}")
    if not (np.isfinite(market.scale_c) and market.scale_c > 0):
        raise InvalidInputError(f"scale_c must be positive, got {market.scale_c}")
    require_valid(market.space)


def price(market: CompleteMarket1P, payoff) -> float:
    """c(X) = C · E_Q[X]."""
    validate_market(market)
    values = as_payoff(market.space, payoff)
    return float(market.scale_c * np.dot(market.q, values))


def implied_measure(market: CompleteMarket1P) -> np.ndarray:
    """Recover Q atom by atom from prices: Q({k}) = c(1_k) / c(1)."""
    validate_market(market)
    unit = price(market, np.ones(market.space.size))
    indicator = np.zeros(market.space.size)
    recovered = np.empty(market.space.size)
    for k in range(market.space.size):
        indicator[k] = 1.0
        recovered[k] = price(market, indicator) / unit
        indicator[k] = 0.0
    return recovered


def casino_product(market: CompleteMarket1P, grid: int) -> CompleteMarket1P:
    return CompleteMarket1P(product_with_casino(market.space, grid), market.scale_c)


# ── Classification invariant ──────────────────────────────────────────────────

@dataclass(frozen=True)
class ConditionalProfile:
    atom_masses: tuple[float, ...]
    continuous_mass: float = 0.0

    def close_to(self, other: "ConditionalProfile", tol: float = IDENTITY_TOL) -> bool:
        width = max(len(self.atom_masses), len(other.atom_masses))
        a = np.zeros(width)
        b = np.zeros(width)
        a[: len(self.atom_masses)] = self.atom_masses
        b[: len(other.atom_masses)] = other.atom_masses
        return bool(np.all(np.abs(a - b) <= tol)) and abs(self.continuous_mass - other.continuous_mass) <= tol


@dataclass(frozen=True)
class InvariantEntry:
    rn_vector: tuple[float, ...]
    mass: float
    profile: ConditionalProfile


@dataclass(frozen=True)
class ClassificationInvariant:
    entries: tuple[InvariantEntry, ...]
    scale_c: float | None = None

    @property
    def n(self) -> int:
        return len(self.entries[0].rn_vector) if self.entries else 0

    def matches(self, other: "ClassificationInvariant", tol: float = IDENTITY_TOL) -> bool:
        if self.n != other.n or len(self.entries) != len(other.entries):
            return False
        if (self.scale_c is None) != (other.scale_c is None):
            return False
        if self.scale_c is not None and abs(self.scale_c - other.scale_c) > tol:
            return False
        for a, b in zip(self.entries, other.entries):
            if np.any(np.abs(np.subtract(a.rn_vector, b.rn_vector)) > tol):
                return False
            if abs(a.mass - b.mass) > tol or not a.profile.close_to(b.profile, tol):
                return False
        return True

    def refine(self, grid: int) -> "ClassificationInvariant":
        """The invariant of the same space after multiplying by a casino of `grid` cells."""
        if grid < 1:
            raise InvalidInputError(f"casino grid must be >= 1, got {grid}")
        if grid == 1:
            return self
        smeared = ConditionalProfile((), 1.0)
        return replace(self, entries=tuple(replace(e, profile=smeared) for e in self.entries))


def _rn_classes(space: MultiMeasureSpace) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """(support atoms, groups of support positions, representative RN vectors)."""
    require_valid(space)
    support = space.base.support
    groups, reps = group_by_tolerance(rn_vectors(space)[support], MEASURE_TOL)
    return support, groups, reps


def classification_invariant(space: MultiMeasureSpace | CompleteMarket1P) -> ClassificationInvariant:
    scale_c = None
    if isinstance(space, CompleteMarket1P):
        validate_market(space)
        space, scale_c = space.space, space.scale_c

    support, groups, reps = _rn_classes(space)
    entries = []
    for members, rep in zip(groups, reps):
        masses = space.p0[support[members]]
        mass = float(masses.sum())
        if space.casino_grid > 1:
            profile = ConditionalProfile((), 1.0)
        else:
            profile = ConditionalProfile(tuple(sorted((masses / mass).tolist(), reverse=True)), 0.0)
        entries.append(InvariantEntry(tuple(float(v) for v in rep), mass, profile))
    return ClassificationInvariant(tuple(entries), scale_c)


def jointly_isomorphic(s1: MultiMeasureSpace, s2: MultiMeasureSpace) -> dict | None:
    """Label bijection carrying every measure of s1 onto s2, or None."""
    if s1.n != s2.n:
        raise InvalidInputError(f"spaces carry {s1.n} and {s2.n} extra measures")
    if not classification_invariant(s1).matches(classification_invariant(s2)):
        return None

    sup1, groups1, _ = _rn_classes(s1)
    sup2, groups2, _ = _rn_classes(s2)
    mapping = {}
    for g1, g2 in zip(groups1, groups2):
        a1, a2 = sup1[g1], sup2[g2]
        if len(a1) != len(a2):
            log.debug("classes agree only after smearing; no atom bijection")
            return None
        o1 = a1[np.lexsort((a1, -s1.p0[a1]))]
        o2 = a2[np.lexsort((a2, -s2.p0[a2]))]
        if np.any(np.abs(s1.p0[o1] - s2.p0[o2]) > IDENTITY_TOL):
            return None
        mapping.update({s1.labels[i]: s2.labels[j] for i, j in zip(o1, o2)})
    return mapping


def canonical_rn_space(space: MultiMeasureSpace) -> MultiMeasureSpace:
    """One atom per distinct RN vector, weighted by its P0-mass."""
    support, groups, reps = _rn_classes(space)
    masses = np.array([space.p0[support[g]].sum() for g in groups])
    labels = [tuple(float(v) for v in rep) for rep in reps]
    extra = [reps[:, i] * masses for i in range(space.n)]
    return MultiMeasureSpace.from_arrays(masses, extra, labels)


# ── Quantile markets ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AtomLayout:
    """Support atoms sorted by RN value, each occupying [left, right) of the unit interval."""
    atoms: np.ndarray
    left: np.ndarray
    right: np.ndarray
    rn: np.ndarray


def atom_layout(market: CompleteMarket1P) -> AtomLayout:
    validate_market(market)
    support = market.space.base.support
    rn = rn_derivative(market.space, 1)[support]
    order = np.argsort(rn, kind="stable")
    atoms = support[order]
    right = np.cumsum(market.space.p0[atoms])
    right[-1] = 1.0
    left = np.concatenate([[0.0], right[:-1]])
    return AtomLayout(atoms, left, right, rn[order])


@dataclass(frozen=True, eq=False)
class QuantileMarket:
    breakpoints: np.ndarray
    rn_values: np.ndarray
    scale_c: float = 1.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def rn_at(self, u) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, u, side="right") - 1
        return self.rn_values[np.clip(idx, 0, len(self.rn_values) - 1)]

    def total_mass(self) -> float:
        return float(np.dot(self.widths, self.rn_values))

    def price_step(self, breakpoints, values) -> float:
        """Exact price of the step payoff equal to values[k] on [breakpoints[k], breakpoints[k+1])."""
        breakpoints = np.asarray(breakpoints, dtype=float)
        values = np.asarray(values, dtype=float)
        if len(breakpoints) != len(values) + 1:
            raise InvalidInputError("step payoff needs one more breakpoint than values")
        grid = np.union1d(self.breakpoints, np.clip(breakpoints, 0.0, 1.0))
        mids = 0.5 * (grid[:-1] + grid[1:])
        idx = np.clip(np.searchsorted(breakpoints, mids, side="right") - 1, 0, len(values) - 1)
        return float(self.scale_c * np.sum(np.diff(grid) * self.rn_at(mids) * values[idx]))

    def price_function(self, payoff: Callable[[np.ndarray], np.ndarray], points: int = 10_000) -> float:
        """Midpoint quadrature for payoffs that are not step functions of u."""
        u = (np.arange(points) + 0.5) / points
        return float(self.scale_c * np.mean(self.rn_at(u) * payoff(u)))


def quantile_market(market: CompleteMarket1P) -> QuantileMarket:
    layout = atom_layout(market)
    # equal RN values merge into one step
    breaks = np.flatnonzero(np.diff(layout.rn) > MEASURE_TOL)
    starts = np.concatenate([[0], breaks + 1])
    breakpoints = np.concatenate([[0.0], layout.right[breaks], [1.0]])
    return QuantileMarket(breakpoints, layout.rn[starts].copy(), market.scale_c)


def transport_payoff(market: CompleteMarket1P, payoff) -> tuple[np.ndarray, np.ndarray]:
    """The payoff seen as a step function of u: (breakpoints, values)."""
    values = as_payoff(market.space, payoff)
    layout = atom_layout(market)
    return np.concatenate([[0.0], layout.right]), values[layout.atoms]


class Verdict(str, Enum):
    ISOMORPHIC = "isomorphic"
    DISTINCT = "distinct"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class CasinoComparison:
    verdict: Verdict
    l1_distance: float
    scale_gap: float


def casino_comparison(m1: CompleteMarket1P, m2: CompleteMarket1P,
                      tol: float = IDENTITY_TOL) -> CasinoComparison:
    """Compare the P0-laws of dQ/dP as quantile step functions in L1."""
    q1, q2 = quantile_market(m1), quantile_market(m2)
    scale_gap = abs(m1.scale_c - m2.scale_c)
    grid = np.union1d(q1.breakpoints, q2.breakpoints)
    mids = 0.5 * (grid[:-1] + grid[1:])
    distance = float(np.sum(np.diff(grid) * np.abs(q1.rn_at(mids) - q2.rn_at(mids))))

    if scale_gap > tol:
        verdict = Verdict.DISTINCT
    elif distance <= tol:
        verdict = Verdict.ISOMORPHIC
    elif distance <= 10 * tol:
        verdict = Verdict.INDETERMINATE
        log.warning("casino comparison indeterminate: L1 distance %.3g within 10x tolerance", distance)
    else:
        verdict = Verdict.DISTINCT
    return CasinoComparison(verdict, distance, scale_gap)


def isomorphic_up_to_casino(m1: CompleteMarket1P, m2: CompleteMarket1P) -> bool:
    return casino_comparison(m1, m2).verdict is Verdict.ISOMORPHIC


# ── Projection ────────────────────────────────────────────────────────────────

def project_onto_q(space: MultiMeasureSpace, payoff) -> Payoff:
    """E_{P0}[payoff | RN vector]; null atoms keep their value."""
    values = as_payoff(space, payoff)
    support, groups, _ = _rn_classes(space)
    projected = values.copy()
    for members in groups:
        if len(members) < 2:
            continue
        atoms = support[members]
        w = space.p0[atoms]
        projected[atoms] = np.dot(w, values[atoms]) / w.sum()
    return projected
