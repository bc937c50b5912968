"""
rearrange.py — Monotone rearrangement of payoffs over a market with a casino.

A CasinoSample lists rows (x, y, width, weight, value): x is the RN value (or
vector) of an atom, [y - width/2, y + width/2) the casino interval the row
covers and weight the P0-mass of the row. Rearranging keeps the P0-law of the
value and moves every Pi-law in the requested direction; the result is
monotone in the RN vector.

Inside a row U runs linearly over part of the CDF jump of its RN class, so a
row is cut wherever the target quantile function jumps. The P0-law is then
preserved exactly, up to rounding. Rows of zero width are points and are never cut.
"""
from dataclasses import dataclass, replace

import numpy as np

from .config import CASINO_GRID, IDENTITY_TOL, MEASURE_TOL
from .errors import CasinoRequiredError, InvalidInputError
from .finprob import (
    MultiMeasureSpace,
    as_payoff,
    group_by_tolerance,
    product_with_casino,
    require_valid,
    rn_vectors,
)
from .logger import get_logger

log = get_logger(__name__)


# ── Laws ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    support: np.ndarray
    masses: np.ndarray

    @classmethod
    def from_weighted(cls, values, weights=None, tol: float = MEASURE_TOL) -> "DiscreteLaw":
        """Aggregate weighted values; values within `tol` share one support point."""
        values = np.asarray(values, dtype=float).reshape(-1)
        weights = np.full(len(values), 1.0 / max(len(values), 1)) if weights is None \
            else np.asarray(weights, dtype=float).reshape(-1)
        if len(values) == 0 or len(values) != len(weights):
            raise InvalidInputError("a law needs matching, non-empty values and weights")
        keep = weights > 0
        groups, reps = group_by_tolerance(values[keep], tol)
        masses = np.array([weights[keep][g].sum() for g in groups])
        total = masses.sum()
        if not (np.isfinite(total) and total > 0):
            raise InvalidInputError("a law needs positive total weight")
        return cls(reps[:, 0].copy(), masses / total)

    @property
    def _cumulative(self) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0
        return cum

    def cdf(self, x, tol: float = MEASURE_TOL):
        """F(x) = mass of {value <= x}."""
        return self._cumulative[np.searchsorted(self.support, np.asarray(x) + tol, side="right")]

    def left_limit(self, x, tol: float = MEASURE_TOL):
        """F(x-) = mass of {value < x}."""
        return self._cumulative[np.searchsorted(self.support, np.asarray(x) - tol, side="left")]

    def quantile(self, p, tol: float = MEASURE_TOL):
        """inf{x : F(x) >= p}, no range check on p."""
        cum = self._cumulative[1:]
        idx = np.searchsorted(cum, np.asarray(p) - tol, side="left")
        return self.support[np.clip(idx, 0, len(self.support) - 1)]


def u_m(law: DiscreteLaw, x, y):
    """(1-y)·F(x-) + y·F(x+): spreads each atom of the RN law uniformly over its CDF jump."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y >= 1)):
        raise InvalidInputError("casino coordinate must lie in [0, 1)")
    u = (1.0 - y) * law.left_limit(x) + y * law.cdf(x)
    return np.clip(u, 0.0, 1.0)


def generalized_inverse_cdf(law, p, weights=None):
    """Left-continuous inverse of a law or of a (weighted) empirical sample."""
    if not isinstance(law, DiscreteLaw):
        law = DiscreteLaw.from_weighted(law, weights)
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0) | (p_arr > 1)) or not np.all(np.isfinite(p_arr)):
        raise InvalidInputError("probability must lie in (0, 1]")
    result = law.quantile(p_arr)
    return float(result) if np.ndim(result) == 0 else result


# ── Casino samples ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CasinoSample:
    x: np.ndarray          # (rows, n) RN vectors
    y: np.ndarray
    weight: np.ndarray
    value: np.ndarray
    atom: np.ndarray | None = None   # source atom of each row, when built from a space
    cell: np.ndarray | None = None
    width: np.ndarray | None = None  # casino interval length per row; None means points

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x.reshape(len(x), -1))
        if self.width is None:
            object.__setattr__(self, "width", np.zeros(len(x)))
        for name in ("y", "weight", "value", "width"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        rows = len(self.x)
        if not (len(self.y) == len(self.weight) == len(self.value) == len(self.width) == rows):
            raise InvalidInputError("casino sample columns differ in length")
        if np.any(self.width < 0) or np.any(self.y - self.width / 2 < -MEASURE_TOL) \
                or np.any(self.y + self.width / 2 > 1.0 + MEASURE_TOL):
            raise InvalidInputError("casino intervals must lie inside [0, 1]")
        if abs(float(self.weight.sum()) - 1.0) > IDENTITY_TOL:
            raise InvalidInputError(f"casino sample weights sum to {self.weight.sum():.12g}")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def rows(self) -> int:
        return len(self.x)

    def with_values(self, values) -> "CasinoSample":
        return replace(self, value=np.asarray(values, dtype=float))

    def split(self, row, y, width, fraction, value) -> "CasinoSample":
        """Pieces of rows: piece k comes from row[k] and carries fraction[k] of its mass."""
        return CasinoSample(
            x=self.x[row],
            y=y,
            weight=self.weight[row] * fraction,
            value=value,
            atom=None if self.atom is None else self.atom[row],
            cell=None if self.cell is None else self.cell[row],
            width=width,
        )

    def measure_weights(self, i: int) -> np.ndarray:
        """Row masses under P0 (i=0) or Pi."""
        return self.weight if i == 0 else self.weight * self.x[:, i - 1]

    @classmethod
    def from_space(cls, space: MultiMeasureSpace, payoff, grid: int = CASINO_GRID) -> "CasinoSample":
        """
        Rows for every non-null atom and casino cell, atom-major.

        `payoff` is either one value per atom or an (atoms, grid) table.
        """
        if grid < 1:
            raise InvalidInputError(f"casino grid must be >= 1, got {grid}")
        require_valid(space)
        table = np.asarray(payoff, dtype=float)
        if table.ndim == 1:
            table = np.repeat(as_payoff(space, table)[:, None], grid, axis=1)
        if table.shape != (space.size, grid):
            raise InvalidInputError(f"payoff table shape {table.shape} != {(space.size, grid)}")

        support = space.base.support
        atom = np.repeat(support, grid)
        cell = np.tile(np.arange(grid), len(support))
        return cls(
            x=rn_vectors(space)[atom],
            y=(cell + 0.5) / grid,
            weight=space.p0[atom] / grid,
            value=table[atom, cell],
            atom=atom,
            cell=cell,
            width=np.full(len(atom), 1.0 / grid),
        )


# ── Rearrangement operators ───────────────────────────────────────────────────

def _check_sign(sign: int) -> None:
    if sign not in (1, -1):
        raise InvalidInputError(f"sign must be +1 or -1, got {sign}")


def _rearrange_rows(x, y, width, weight, value, sign: int):
    """
    Pieces of the rearranged rows as (source row, y, width, mass fraction, value).

    U = F(x-) + y·(F(x) - F(x-)) maps a row onto [u_lo, u_hi); the row is cut
    at every CDF level of the value law strictly inside that interval.
    """
    law = DiscreteLaw.from_weighted(x, weight)
    low, high = law.left_limit(x), law.cdf(x)
    target = DiscreteLaw.from_weighted(value if sign == 1 else -value, weight)
    cuts = target._cumulative[1:-1]
    padded = np.append(cuts, 1.0)

    y_lo = y - width / 2
    u_lo = low + y_lo * (high - low)
    u_hi = u_lo + width * (high - low)

    start = np.searchsorted(cuts, u_lo + MEASURE_TOL, side="right")
    stop = np.maximum(np.searchsorted(cuts, u_hi - MEASURE_TOL, side="left"), start)
    counts = stop - start + 1
    row = np.repeat(np.arange(len(x)), counts)
    k = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    left = np.where(k == 0, u_lo[row], padded[np.minimum(start[row] + k - 1, len(cuts))])
    right = np.where(k == counts[row] - 1, u_hi[row], padded[np.minimum(start[row] + k, len(cuts))])

    span = (u_hi - u_lo)[row]
    has_span = span > 0
    safe = np.where(has_span, span, 1.0)
    t0 = np.where(has_span, (left - u_lo[row]) / safe, 0.0)
    t1 = np.where(has_span, (right - u_lo[row]) / safe, 1.0)
    piece_width = (t1 - t0) * width[row]
    piece_y = y_lo[row] + t0 * width[row] + piece_width / 2

    values = target.quantile(np.maximum((left + right) / 2, np.finfo(float).tiny))
    return row, piece_y, piece_width, t1 - t0, values if sign == 1 else -values


def rearrange_pm(sample: CasinoSample, sign: int) -> CasinoSample:
    """R+ (sign +1) or R- (sign -1) for a scalar RN value of mean one."""
    _check_sign(sign)
    if sample.n != 1:
        raise InvalidInputError(f"rearrange_pm needs scalar RN values, got dimension {sample.n}")
    mean = float(np.dot(sample.weight, sample.x[:, 0]))
    if abs(mean - 1.0) > 1e-8:
        raise InvalidInputError(f"RN values have mean {mean:.12g}, expected 1")
    pieces = _rearrange_rows(sample.x[:, 0], sample.y, sample.width, sample.weight, sample.value, sign)
    return sample.split(*pieces)


def conditional_rearrange(sample: CasinoSample, j: int, sign: int) -> CasinoSample:
    """Rearrange along coordinate j (1-based) separately inside each slice of the other coordinates."""
    _check_sign(sign)
    if not 1 <= j <= sample.n:
        raise InvalidInputError(f"coordinate {j} outside 1..{sample.n}")

    rest = np.delete(sample.x, j - 1, axis=1)
    slices = group_by_tolerance(rest)[0] if rest.shape[1] else [np.arange(sample.rows)]

    parts = []
    for rows in slices:
        rows = np.asarray(rows)
        w = sample.weight[rows]
        xs = sample.x[rows, j - 1]
        total = w.sum()
        mean = np.dot(w, xs) / total
        if not (np.isfinite(mean) and mean > 0):
            raise InvalidInputError(f"slice conditional mean of q_{j} is not positive")
        row, y, width, fraction, value = _rearrange_rows(
            xs / mean, sample.y[rows], sample.width[rows], w / total, sample.value[rows], sign)
        parts.append((rows[row], y, width, fraction, value))

    row, y, width, fraction, value = (np.concatenate(column) for column in zip(*parts))
    order = np.argsort(row, kind="stable")
    log.debug("conditional rearrangement along q_%d over %d slices, %d -> %d rows",
              j, len(slices), sample.rows, len(row))
    return sample.split(row[order], y[order], width[order], fraction[order], value[order])


def composite_rearrange(sample: CasinoSample, signs) -> CasinoSample:
    """R_n ∘ … ∘ R_1."""
    signs = list(signs)
    if len(signs) != sample.n:
        raise InvalidInputError(f"{len(signs)} signs for {sample.n} RN coordinates")
    for j, sign in enumerate(signs, start=1):
        sample = conditional_rearrange(sample, j, sign)
    return sample


# ── Properties ────────────────────────────────────────────────────────────────

def law_discrepancy(before: CasinoSample, after: CasinoSample, i: int = 0) -> float:
    """Largest CDF gap between the Pi-laws of the values before and after."""
    w_b, w_a = before.measure_weights(i), after.measure_weights(i)
    points = np.union1d(before.value, after.value)
    law_b = DiscreteLaw.from_weighted(before.value, w_b)
    law_a = DiscreteLaw.from_weighted(after.value, w_a)
    return float(np.max(np.abs(law_b.cdf(points) - law_a.cdf(points))))


def q_law_dominates(before: CasinoSample, after: CasinoSample, measure_index: int, sign: int,
                    tol: float = MEASURE_TOL) -> bool:
    """
    Sign +1: Pi{after <= k} <= Pi{before <= k} for every k.
    Sign -1: the reverse inequality.
    """
    return q_dominance_gap(before, after, measure_index, sign) <= tol


def q_dominance_gap(before: CasinoSample, after: CasinoSample, measure_index: int, sign: int) -> float:
    """How far the dominance inequality of q_law_dominates is violated (0 when it holds)."""
    _check_sign(sign)
    w_b, w_a = before.measure_weights(measure_index), after.measure_weights(measure_index)
    points = np.union1d(before.value, after.value)
    cdf_b = DiscreteLaw.from_weighted(before.value, w_b).cdf(points)
    cdf_a = DiscreteLaw.from_weighted(after.value, w_a).cdf(points)
    gap = (cdf_a - cdf_b) if sign == 1 else (cdf_b - cdf_a)
    return float(max(gap.max(), 0.0))


def monotone_violations(sample: CasinoSample, signs, tol: float = MEASURE_TOL) -> int:
    """Pairs of RN classes with q ≺ q' (sign-adjusted product order) but value > value'."""
    oriented = sample.x * np.asarray(signs, dtype=float)
    groups, reps = group_by_tolerance(oriented)
    lows = np.array([sample.value[g].min() for g in groups])
    highs = np.array([sample.value[g].max() for g in groups])
    violations = 0
    for a in range(len(groups)):
        below = np.all(reps[a] <= reps + tol, axis=1)
        below[a] = False
        violations += int(np.sum(below & (highs[a] > lows + tol)))
    return violations


# ── Casino removal ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class NoCasinoResult:
    """Case "a": payoff on the refined space. Case "b": payoff on the original atoms plus its q-table."""
    case: str
    space: MultiMeasureSpace
    payoff: np.ndarray
    table: dict[tuple[float, ...], float] | None = None


def rearrange_no_casino(space: MultiMeasureSpace, payoff, signs, *,
                        continuous_coordinate: int | None = None,
                        grid: int = CASINO_GRID) -> NoCasinoResult:
    """
    Rearrange without an external casino.

    With one extra measure the casino is simulated by refining every atom into
    `grid` cells. With several measures one coordinate must have a tie-free
    conditional law (`continuous_coordinate`); then the result depends on q only.
    """
    require_valid(space)
    values = as_payoff(space, payoff)
    signs = list(signs)
    if len(signs) != space.n:
        raise InvalidInputError(f"{len(signs)} signs for {space.n} measures")

    if continuous_coordinate is not None:
        j = continuous_coordinate
        if not 1 <= j <= space.n:
            raise InvalidInputError(f"coordinate {j} outside 1..{space.n}")
        q = rn_vectors(space)[space.base.support]
        rest = np.delete(q, j - 1, axis=1)
        slices = group_by_tolerance(rest)[0] if rest.shape[1] else [np.arange(len(q))]
        for rows in slices:
            if len(group_by_tolerance(q[rows, j - 1])[0]) < len(rows):
                raise CasinoRequiredError(f"casino required: q_{j} has ties inside a slice")

        sample = CasinoSample.from_space(space, values, grid=1)
        out = composite_rearrange(sample, signs)
        if out.rows != sample.rows or law_discrepancy(sample, out, 0) > MEASURE_TOL:
            raise CasinoRequiredError("casino required: no payoff on the atoms has the P0-law of the input")
        result = values.copy()
        result[out.atom] = out.value
        table = {tuple(float(v) for v in row): float(v) for row, v in zip(out.x, out.value)}
        return NoCasinoResult("b", space, result, table)

    if space.n == 1:
        sample = CasinoSample.from_space(space, values, grid)
        out = rearrange_pm(sample, signs[0])
        if out.rows == sample.rows:
            result = np.repeat(values, grid)
            result[out.atom * grid + out.cell] = out.value
            return NoCasinoResult("a", product_with_casino(space, grid), result)
        return NoCasinoResult("a", _pieces_space(space, out, grid), out.value.copy())

    raise CasinoRequiredError("casino required: several measures and no tie-free coordinate")


def _pieces_space(space: MultiMeasureSpace, out: CasinoSample, grid: int) -> MultiMeasureSpace:
    """Refinement whose atoms are the rearranged pieces, labelled (atom label, cell, piece)."""
    first = np.r_[True, (out.atom[1:] != out.atom[:-1]) | (out.cell[1:] != out.cell[:-1])]
    start = np.maximum.accumulate(np.where(first, np.arange(out.rows), 0))
    piece = np.arange(out.rows) - start
    labels = [(space.labels[a], int(c), int(k)) for a, c, k in zip(out.atom, out.cell, piece)]
    p0 = out.weight
    refined = MultiMeasureSpace.from_arrays(p0, [p0 * out.x[:, i] for i in range(out.n)], labels)
    return replace(refined, casino_grid=space.casino_grid * grid)
