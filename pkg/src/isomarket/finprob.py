"""
finprob.py — Finite probability spaces carrying several equivalent measures.

A MultiMeasureSpace is the one-period substrate everything else is built on:
a base measure P0 on finitely many atoms plus n extra measures P1..Pn.

Conventions:
  - Atoms of P0-weight 0 are kept but ignored by isomorphism and pricing (mod 0).
  - Measures are compared with MEASURE_TOL; derived identities with IDENTITY_TOL.
  - Ties are broken by atom position, so every canonical form is deterministic.
"""
from collections import deque
from dataclasses import dataclass, field
from math import factorial, prod
from typing import Hashable, Sequence

import numpy as np

from .config import GROUP_CAP, IDENTITY_TOL, MEASURE_TOL
from .errors import GroupTooLargeError, InvalidInputError
from .logger import get_logger

log = get_logger(__name__)

# A payoff is a plain float array aligned to the atoms of a space.
Payoff = np.ndarray


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


# ── Domain types ──────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FiniteSpace:
    atom_labels: tuple[Hashable, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atom_labels", tuple(self.atom_labels))
        object.__setattr__(self, "weights", _readonly(self.weights).reshape(-1))

    @classmethod
    def from_weights(cls, weights, labels: Sequence[Hashable] | None = None) -> "FiniteSpace":
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if labels is None:
            labels = range(len(weights))
        return cls(tuple(labels), weights)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def support(self) -> np.ndarray:
        """Indices of the non-null atoms."""
        return np.flatnonzero(self.weights > 0)


@dataclass(frozen=True, eq=False)
class MultiMeasureSpace:
    base: FiniteSpace
    extra_measures: tuple[np.ndarray, ...] = ()
    # Number of casino cells each original atom was smeared into (1 = plain finite space).
    casino_grid: int = 1

    def __post_init__(self):
        extra = tuple(_readonly(m).reshape(-1) for m in self.extra_measures)
        object.__setattr__(self, "extra_measures", extra)

    @classmethod
    def from_arrays(cls, p0, extra=(), labels: Sequence[Hashable] | None = None) -> "MultiMeasureSpace":
        return cls(FiniteSpace.from_weights(p0, labels), tuple(extra))

    @property
    def n(self) -> int:
        return len(self.extra_measures)

    @property
    def size(self) -> int:
        return self.base.size

    @property
    def labels(self) -> tuple[Hashable, ...]:
        return self.base.atom_labels

    @property
    def p0(self) -> np.ndarray:
        return self.base.weights

    @property
    def measures(self) -> np.ndarray:
        """(n+1, atoms) array: row 0 is P0, row i is Pi."""
        return np.vstack([self.p0, *self.extra_measures]) if self.n else self.p0[None, :]

    def measure(self, i: int) -> np.ndarray:
        return self.p0 if i == 0 else self.extra_measures[i - 1]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


# ── Validation ────────────────────────────────────────────────────────────────

def _measure_violations(name: str, weights: np.ndarray, atoms: int) -> list[str]:
    if len(weights) != atoms:
        return [f"{name}: length {len(weights)} does not match {atoms} atoms"]
    if not np.all(np.isfinite(weights)):
        return [f"{name}: non-finite weight"]
    problems = []
    negative = np.flatnonzero(weights < 0)
    if negative.size:
        problems.append(f"{name}: negative weight at atom {negative[0]}")
    total = float(weights.sum())
    if abs(total - 1.0) > MEASURE_TOL:
        problems.append(f"{name}: mass {total:.12g} differs from 1")
    return problems


def validate_space(space: MultiMeasureSpace | FiniteSpace) -> ValidationReport:
    """Check every invariant of a space; returns the violations instead of raising."""
    if isinstance(space, FiniteSpace):
        space = MultiMeasureSpace(space)

    problems: list[str] = []
    atoms = space.size
    if len(space.labels) != atoms:
        problems.append(f"atom_labels: {len(space.labels)} labels for {atoms} atoms")
    if len(set(space.labels)) != len(space.labels):
        problems.append("atom_labels: labels are not distinct")

    problems += _measure_violations("P0", space.p0, atoms)
    positive = space.p0 > 0
    for i, weights in enumerate(space.extra_measures, start=1):
        found = _measure_violations(f"P{i}", weights, atoms)
        problems += found
        if len(weights) != atoms:
            continue
        mismatch = np.flatnonzero((weights > 0) != positive)
        if mismatch.size:
            problems.append(f"P{i}: equivalence violated at atom {mismatch[0]}")

    return ValidationReport(tuple(problems))


def require_valid(space: MultiMeasureSpace | FiniteSpace) -> None:
    report = validate_space(space)
    if not report.ok:
        raise InvalidInputError("invalid space: " + "; ".join(report.violations))


def as_payoff(space: MultiMeasureSpace, payoff) -> Payoff:
    values = np.asarray(payoff, dtype=float).reshape(-1)
    if len(values) != space.size:
        raise InvalidInputError(f"payoff has {len(values)} values for {space.size} atoms")
    return values


# ── Radon–Nikodym derivatives ─────────────────────────────────────────────────

def rn_derivative(space: MultiMeasureSpace, i: int) -> np.ndarray:
    """dPi/dP0 per atom; null atoms carry the marker value 1."""
    if not 1 <= i <= space.n:
        raise InvalidInputError(f"measure index {i} outside 1..{space.n}")
    require_valid(space)
    p0 = space.p0
    q = np.ones(space.size)
    positive = p0 > 0
    q[positive] = space.extra_measures[i - 1][positive] / p0[positive]
    return q


def rn_vectors(space: MultiMeasureSpace) -> np.ndarray:
    """(atoms, n) array of all Radon–Nikodym derivatives."""
    if space.n == 0:
        return np.ones((space.size, 0))
    return np.column_stack([rn_derivative(space, i) for i in range(1, space.n + 1)])


def group_by_tolerance(rows, tol: float = MEASURE_TOL) -> tuple[list[np.ndarray], np.ndarray]:
    """
    Partition row indices into classes of rows equal within `tol` per coordinate.

    Returns (groups, representatives). Groups are ordered lexicographically by
    representative; members inside a group keep index order.
    """
    rows = np.asarray(rows, dtype=float)
    rows = rows.reshape(len(rows), -1)
    if len(rows) == 0:
        return [], np.empty((0, rows.shape[1]))

    unique, inverse = np.unique(rows, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    reps = np.empty_like(unique)
    n_reps = 0
    group_of_unique = np.empty(len(unique), dtype=int)
    for u, row in enumerate(unique):
        if n_reps:
            hit = np.flatnonzero(np.all(np.abs(reps[:n_reps] - row) <= tol, axis=1))
            if hit.size:
                group_of_unique[u] = hit[0]
                continue
        reps[n_reps] = row
        group_of_unique[u] = n_reps
        n_reps += 1

    labels = group_of_unique[inverse]
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=n_reps)
    groups = np.split(order, np.cumsum(counts)[:-1])
    return groups, reps[:n_reps].copy()


# ── Isomorphisms ──────────────────────────────────────────────────────────────

def mod0_isomorphic(s1: FiniteSpace, s2: FiniteSpace) -> dict | None:
    """Measure-preserving bijection between the non-null atoms, or None."""
    require_valid(s1)
    require_valid(s2)
    a1, a2 = s1.support, s2.support
    if len(a1) != len(a2):
        return None
    o1 = a1[np.argsort(s1.weights[a1], kind="stable")]
    o2 = a2[np.argsort(s2.weights[a2], kind="stable")]
    if np.any(np.abs(s1.weights[o1] - s2.weights[o2]) > MEASURE_TOL):
        return None
    return {s1.atom_labels[i]: s2.atom_labels[j] for i, j in zip(o1, o2)}


# ── Automorphism groups ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class PermutationGroup:
    """
    A group of atom permutations given by generators.

    A permutation g is a tuple with g[k] = image of atom k. When `blocks` is
    set the group is the full symmetric group on each block (direct product),
    which is the shape automorphisms() produces.
    """
    degree: int
    generators: tuple[tuple[int, ...], ...] = ()
    blocks: tuple[tuple[int, ...], ...] | None = field(default=None)

    @property
    def identity(self) -> tuple[int, ...]:
        return tuple(range(self.degree))

    @staticmethod
    def compose(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
        """a∘b: apply b first."""
        return tuple(a[k] for k in b)

    @property
    def order(self) -> int:
        if self.blocks is not None:
            return prod(factorial(len(b)) for b in self.blocks)
        return len(self.elements())

    def elements(self, cap: int = GROUP_CAP) -> list[tuple[int, ...]]:
        """Enumerate the group by breadth-first closure; refuses groups larger than `cap`."""
        if self.blocks is not None and self.order > cap:
            raise GroupTooLargeError(f"group of order {self.order} exceeds enumeration cap {cap}")

        seen = {self.identity}
        found = [self.identity]
        queue = deque(found)
        while queue:
            g = queue.popleft()
            for gen in self.generators:
                h = self.compose(gen, g)
                if h not in seen:
                    seen.add(h)
                    found.append(h)
                    queue.append(h)
                    if len(found) > cap:
                        raise GroupTooLargeError(f"group exceeds enumeration cap {cap}")

        if len(found) <= 10_000:
            for g in found:
                for gen in self.generators:
                    if self.compose(g, gen) not in seen:
                        raise InvalidInputError("generators do not close into a group")
        return found

    def is_fixed(self, payoff, tol: float = MEASURE_TOL) -> bool:
        """True when payoff∘g == payoff for every generator (hence every element)."""
        values = np.asarray(payoff, dtype=float)
        return all(np.all(np.abs(values[list(gen)] - values) <= tol) for gen in self.generators)


def automorphisms(space: MultiMeasureSpace) -> PermutationGroup:
    """Stabilizer of all measures: symmetric groups on classes of equal measure profile."""
    require_valid(space)
    groups, _ = group_by_tolerance(space.measures.T)
    # group_by_tolerance orders classes by profile; order them by first atom instead
    classes = sorted((tuple(int(k) for k in g) for g in groups), key=lambda c: c[0])

    generators = []
    for members in classes:
        for a, b in zip(members, members[1:]):
            perm = list(range(space.size))
            perm[a], perm[b] = b, a
            generators.append(tuple(perm))

    blocks = tuple(c for c in classes if len(c) > 1)
    group = PermutationGroup(space.size, tuple(generators), blocks)
    log.debug("automorphism group: %d blocks, order %d", len(blocks), group.order)
    return group


def group_average(space: MultiMeasureSpace, group: PermutationGroup, payoff,
                  cap: int = GROUP_CAP) -> Payoff:
    """(1/|G|) Σ_g payoff(g⁻¹ω): the G-invariant element of the orbit's convex hull."""
    values = as_payoff(space, payoff)
    if group.degree != space.size:
        raise InvalidInputError(f"group acts on {group.degree} atoms, space has {space.size}")

    if group.blocks is not None:
        averaged = values.copy()
        for block in group.blocks:
            idx = list(block)
            averaged[idx] = values[idx].mean()
        return averaged

    elements = np.array(group.elements(cap))
    return values[elements].mean(axis=0)


# ── Casino products ───────────────────────────────────────────────────────────

def product_with_casino(space: MultiMeasureSpace, grid: int) -> MultiMeasureSpace:
    """Space × I discretised into `grid` equal cells; atom-major ordering."""
    if grid < 1:
        raise InvalidInputError(f"casino grid must be >= 1, got {grid}")
    require_valid(space)
    labels = tuple((label, j) for label in space.labels for j in range(grid))
    p0 = np.repeat(space.p0 / grid, grid)
    extra = tuple(np.repeat(m / grid, grid) for m in space.extra_measures)
    return MultiMeasureSpace(FiniteSpace(labels, p0), extra, casino_grid=space.casino_grid * grid)


def expectation(space: MultiMeasureSpace, payoff, i: int = 0) -> float:
    """E_{Pi}[payoff]."""
    return float(np.dot(space.measure(i), as_payoff(space, payoff)))


def rn_mean_gaps(space: MultiMeasureSpace) -> np.ndarray:
    """|E_{P0}[q_i] - 1| for every extra measure."""
    q = rn_vectors(space)
    return np.abs(space.p0 @ q - 1.0)


def measures_preserved(s1: MultiMeasureSpace, s2: MultiMeasureSpace, mapping: dict,
                       tol: float = IDENTITY_TOL) -> bool:
    """True when mapping (label -> label) carries every measure of s1 onto s2."""
    index1 = {label: k for k, label in enumerate(s1.labels)}
    index2 = {label: k for k, label in enumerate(s2.labels)}
    src = np.array([index1[a] for a in mapping])
    dst = np.array([index2[b] for b in mapping.values()])
    if len(src) == 0:
        return False
    return bool(np.all(np.abs(s1.measures[:, src] - s2.measures[:, dst]) <= tol))
