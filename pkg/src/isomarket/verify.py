"""
verify.py — Acceptance checks for one market spec.

Each check turns a structural property of the market into a TestReport:
  finite    validity, relabeling isomorphism, group averaging, projection,
            quantile-market prices, casino invariance, rearrangement properties
  gaussian  canonical form, basis invariance, two-fund span, constraints
  sde       martingale property of q, AMPR agreement, Lévy gates on W̃,
            dimension, canonical idempotence, price checks, replication order

A failing check logs a warning but never raises; the CLI turns failures into
exit code 1.
"""
import numpy as np

from .config import BLOCK_PATHS, CHECKS, GAUSS_TOL, IDENTITY_TOL, MEASURE_TOL, WORKERS, CheckConfig
from .ctsmkt import (
    CallClaim,
    ConstantClaim,
    LinearClaim,
    LogQPolynomialClaim,
    PutClaim,
    QCallClaim,
    ampr_agreement,
    ampr_coefficient_windows,
    ampr_realized,
    bachelier_canonicalize,
    black_scholes_price,
    canonical_ensemble,
    exchange_cost,
    price_ensemble,
    q_measurable,
    q_process,
    replication_study,
    simulate,
    with_q,
)
from .errors import InvalidInputError
from .finprob import (
    MultiMeasureSpace,
    automorphisms,
    expectation,
    group_average,
    measures_preserved,
    rn_mean_gaps,
    validate_space,
)
from .gauss import (
    apply_basis_change,
    canonical_gauss,
    canonical_market,
    min_variance_solve,
    span_residual,
    two_fund_basis,
)
from .logger import get_logger
from .onep_complete import (
    casino_comparison,
    casino_product,
    jointly_isomorphic,
    price,
    project_onto_q,
    quantile_market,
    transport_payoff,
)
from .rearrange import (
    CasinoSample,
    DiscreteLaw,
    composite_rearrange,
    law_discrepancy,
    monotone_violations,
    q_dominance_gap,
    u_m,
)
from .specfile import FiniteBlock, GaussianBlock, MarketSpecFile, RunBlock, SdeBlock
from .statcheck import MIN_QV_STEPS, TestReport, dimension_estimate, ks_against_cdf, levy_gates

log = get_logger(__name__)


def _record(results: list[TestReport], report: TestReport) -> None:
    if report.passed:
        log.info("✅ PASS — %s (%.6g <= %.6g)", report.name, report.statistic, report.threshold)
    else:
        log.warning("❌ FAIL — %s (%.6g > %.6g)", report.name, report.statistic, report.threshold)
    results.append(report)


def _check(results: list[TestReport], name: str, statistic: float, threshold: float, description: str = "") -> None:
    _record(results, TestReport(name=name, statistic=float(statistic), threshold=float(threshold),
                                description=description))


# ── Finite markets ────────────────────────────────────────────────────────────

def _permuted(space: MultiMeasureSpace, order: np.ndarray) -> MultiMeasureSpace:
    labels = [space.labels[k] for k in order]
    return MultiMeasureSpace.from_arrays(space.p0[order], [m[order] for m in space.extra_measures], labels)


def finite_checks(block: FiniteBlock, seed: int, casino_grid: int, checks: CheckConfig = CHECKS) -> list[TestReport]:
    rng = np.random.default_rng(seed)
    results: list[TestReport] = []
    space = block.to_space()

    report = validate_space(space)
    _check(results, "space_valid", len(report.violations), 0, "; ".join(report.violations))
    if not report.ok:
        return results

    if space.n:
        _check(results, "rn_mean", rn_mean_gaps(space).max(), IDENTITY_TOL, "E_P0[q_i] = 1")

        permuted = _permuted(space, rng.permutation(space.size))
        mapping = jointly_isomorphic(space, permuted)
        found = mapping is not None and measures_preserved(space, permuted, mapping)
        _check(results, "relabel_isomorphism", 0 if found else 1, 0)

    payoff = np.asarray(block.payoff if block.payoff is not None else np.arange(space.size), dtype=float)
    scale = max(1.0, float(np.abs(payoff).max()))

    group = automorphisms(space)
    averaged = group_average(space, group, payoff)
    again = group_average(space, group, averaged)
    stat = float(np.abs(again - averaged).max()) + (0.0 if group.is_fixed(averaged) else 1.0)
    _check(results, "group_average_fixed", stat, MEASURE_TOL * scale)

    projected = project_onto_q(space, payoff)
    gap = max(abs(expectation(space, projected, i) - expectation(space, payoff, i)) for i in range(space.n + 1))
    _check(results, "projection_prices", gap, IDENTITY_TOL * scale)

    if space.n == 1:
        market = block.to_market()
        qm = quantile_market(market)
        worst = 0.0
        for _ in range(1000):
            x = rng.normal(size=space.size)
            worst = max(worst, abs(price(market, x) - qm.price_step(*transport_payoff(market, x))))
        _check(results, "quantile_prices", worst, IDENTITY_TOL)
        refined = casino_comparison(market, casino_product(market, casino_grid))
        _check(results, "casino_invariance", refined.l1_distance, IDENTITY_TOL)

    if space.n:
        results += rearrangement_checks(space, payoff, block.signs_or_default(), casino_grid, checks)
    return results


def rearrangement_checks(space: MultiMeasureSpace, payoff, signs, grid: int,
                         checks: CheckConfig = CHECKS) -> list[TestReport]:
    """Law preservation, dominance, monotonicity (and U uniformity for one measure)."""
    results: list[TestReport] = []
    sample = CasinoSample.from_space(space, payoff, grid)
    out = composite_rearrange(sample, signs)

    _check(results, "rearrange_p0_law", law_discrepancy(sample, out, 0), MEASURE_TOL)
    for i, sign in enumerate(signs, start=1):
        _check(results, f"rearrange_dominance[{i}]", q_dominance_gap(sample, out, i, sign), MEASURE_TOL)
    _check(results, "rearrange_monotone", monotone_violations(out, signs), 0)

    if space.n == 1:
        x = sample.x[:, 0]
        u = u_m(DiscreteLaw.from_weighted(x, sample.weight), x, sample.y)
        _record(results, ks_against_cdf(u, lambda v: np.clip(v, 0.0, 1.0), sample.weight,
                                         threshold=2.0 / np.sqrt(grid), checks=checks, name="u_uniformity"))
    return results


# ── Gaussian markets ──────────────────────────────────────────────────────────

def random_basis(rng: np.random.Generator, n: int) -> np.ndarray:
    """Well-conditioned random invertible matrix: orthogonal · diag(0.5..2) · orthogonal."""
    q1, _ = np.linalg.qr(rng.normal(size=(n, n)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q1 @ np.diag(rng.uniform(0.5, 2.0, size=n)) @ q2


def gaussian_checks(block: GaussianBlock, seed: int, checks: CheckConfig = CHECKS) -> list[TestReport]:
    rng = np.random.default_rng(seed)
    results: list[TestReport] = []
    market = block.to_market()
    form = canonical_gauss(market)

    image, target = form.apply(market), canonical_market(form)
    residual = max(np.abs(image.mean - target.mean).max(),
                   np.abs(image.covariance - target.covariance).max(),
                   np.abs(image.cost - target.cost).max())
    _check(results, "canonical_form", residual, GAUSS_TOL)

    drift = 0.0
    for _ in range(20):
        other = canonical_gauss(apply_basis_change(market, random_basis(rng, market.dimension)))
        drift = max(drift, float(np.abs(np.subtract(other.invariants[1:], form.invariants[1:])).max()))
    _check(results, "basis_invariance", drift, GAUSS_TOL)

    if block.targets is not None:
        expected, cost = block.targets.expected, block.targets.cost
    else:
        anchor = rng.normal(size=market.dimension)
        expected, cost = float(market.mean @ anchor), float(market.cost @ anchor)
    x = min_variance_solve(market, expected, cost)
    _check(results, "two_fund_span", span_residual(two_fund_basis(market), x), IDENTITY_TOL)
    violation = max(abs(market.mean @ x - expected), abs(market.cost @ x - cost))
    _check(results, "constraints", violation, IDENTITY_TOL * max(1.0, abs(expected), abs(cost)))
    return results


# ── Diffusion markets ─────────────────────────────────────────────────────────

DEFAULT_Q_CLAIMS = (
    LogQPolynomialClaim(coefficients=[0.0, 1.0]),
    LogQPolynomialClaim(coefficients=[0.0, 0.0, 1.0]),
    QCallClaim(strike=1.0),
)


def _martingale_and_ampr(block: SdeBlock, run: RunBlock, seed: int, paths: int, steps: int,
                         checks: CheckConfig, workers: int, results: list[TestReport]) -> None:
    """Stream the ensemble in blocks of BLOCK_PATHS and accumulate q moments and AMPR windows."""
    model = block.to_model()
    dt = model.horizon / steps
    checkpoints = np.unique(np.linspace(0, steps, 11).astype(int))
    size = max(2, BLOCK_PATHS - BLOCK_PATHS % 2)
    q_sum = np.zeros(len(checkpoints))
    q_sq = np.zeros(len(checkpoints))
    real_sum = coef_sum = None

    for start in range(0, paths, size):
        count = min(size, paths - start)
        ensemble = simulate(model, dt, steps, count, seed, antithetic=run.antithetic,
                            scheme=block.scheme, path_offset=start, workers=workers)
        qp = q_process(ensemble)
        q = qp.q[:, checkpoints]
        q_sum += q.sum(axis=0)
        q_sq += (q ** 2).sum(axis=0)
        if steps >= checks.realized_window:
            real = ampr_realized(qp, dt, checks.realized_window).sum(axis=0)
            coef = ampr_coefficient_windows(qp, checks.realized_window).sum(axis=0)
            real_sum = real if real_sum is None else real_sum + real
            coef_sum = coef if coef_sum is None else coef_sum + coef

    mean = q_sum / paths
    se = np.sqrt(np.maximum(q_sq / paths - mean ** 2, 0.0) / max(paths - 1, 1))
    z = np.where(se > 0, np.abs(mean - 1.0) / np.where(se > 0, se, 1.0), np.abs(mean - 1.0) / MEASURE_TOL)
    _check(results, "martingale_q", z.max(), checks.martingale_band_se, "max |mean q_t - 1| / s.e.")

    if real_sum is not None:
        real, coef = real_sum / paths, coef_sum / paths
        if np.all(coef > 0):
            _check(results, "ampr_agreement", ampr_agreement(real[None], coef[None]), checks.ampr_agreement)
        else:
            _check(results, "ampr_agreement", np.abs(real - coef).max(), MEASURE_TOL)


def _price_row(results: list[TestReport], name: str, estimate, reference: float, band: float) -> None:
    gap = abs(estimate.price - reference)
    stat = gap / estimate.stderr if estimate.stderr > 0 else gap / MEASURE_TOL
    _check(results, name, stat, band, f"{estimate.price:.6g} vs {reference:.6g}")


def replication_checks(model, dts, paths: int, seed: int, checks: CheckConfig = CHECKS,
                       workers: int = WORKERS) -> tuple[list, list[TestReport]]:
    """RMS tracking error per rebalancing step, gated on exactness or on the √dt order."""
    reports, order = replication_study(model, dts, paths, seed, checks, workers)
    results: list[TestReport] = []
    worst = max(rep.rms_error for rep in reports)
    if worst <= IDENTITY_TOL:
        # errors are roundoff, so a fitted order would be noise
        _check(results, "replication_exact", worst, IDENTITY_TOL, "max RMS tracking error")
    elif len(reports) > 1:
        _check(results, "replication_order", abs(order - checks.order_target), checks.order_tolerance,
               f"fitted order {order:.3f}")
    return reports, results


def sde_checks(spec: MarketSpecFile, seed: int, paths: int, steps: int,
               checks: CheckConfig = CHECKS, workers: int = WORKERS) -> list[TestReport]:
    block, run = spec.sde, spec.run
    results: list[TestReport] = []
    model = block.to_model()
    dt = model.horizon / steps

    _martingale_and_ampr(block, run, seed, paths, steps, checks, workers, results)

    ensemble = simulate(model, dt, steps, paths, seed, antithetic=run.antithetic,
                        scheme=block.scheme, workers=workers)
    ensemble = with_q(ensemble)
    discount = np.exp(-model.r * model.horizon)
    _price_row(results, "price_constant", price_ensemble(ensemble, ConstantClaim()), discount, checks.price_band_se)

    for k, claim in enumerate(spec.claims):
        if isinstance(claim, LinearClaim):
            _price_row(results, f"exchange_cost[{k}]", price_ensemble(ensemble, claim),
                       exchange_cost(model, claim.a0, claim.a), checks.price_band_se)
        elif isinstance(claim, (CallClaim, PutClaim)) and model.family == "gbm" and model.dimension == 1:
            reference = black_scholes_price(float(model.x0[0]), claim.strike, model.r, abs(float(model.vol[0, 0])),
                                            model.horizon, claim.kind)
            _price_row(results, f"black_scholes[{k}]", price_ensemble(ensemble, claim), reference,
                       checks.price_band_se)

    if run.rebalance_dts:
        results += replication_checks(model, run.rebalance_dts, paths, seed, checks, workers)[1]

    levy_steps = max(steps, MIN_QV_STEPS)
    if levy_steps != steps:
        log.info("Canonical checks run on %d steps (quadratic-variation gates need %d)", levy_steps, MIN_QV_STEPS)
        ensemble = with_q(simulate(model, model.horizon / levy_steps, levy_steps, paths, seed,
                                   antithetic=run.antithetic, scheme=block.scheme, workers=workers))
    dt = model.horizon / levy_steps

    try:
        canonical = bachelier_canonicalize(ensemble, model, checks)
    except InvalidInputError as e:
        # path-dependent or vanishing AMPR: the market has no canonical Bachelier image
        log.info("Canonical checks skipped: %s", e)
        return results

    image = canonical.canonical
    for report in levy_gates(image.w_increments, dt, model.horizon, checks):
        _record(results, report)
    if levy_steps >= 1000:
        _check(results, "dimension", abs(dimension_estimate(image.w_increments, dt, checks) - model.dimension), 0)

    again = bachelier_canonicalize(canonical_ensemble(canonical), checks=checks).canonical
    _check(results, "canonical_idempotence", np.abs(again.w_increments - image.w_increments).max(), 1e-12)

    twin = simulate(image.model, dt, levy_steps, paths, seed + 1, antithetic=run.antithetic, workers=workers)
    q_claims = [c for c in spec.claims if q_measurable(c)] or list(DEFAULT_Q_CLAIMS)
    for k, claim in enumerate(q_claims):
        here, there = price_ensemble(canonical, claim), price_ensemble(twin, claim)
        joint = np.hypot(here.stderr, there.stderr)
        gap = abs(here.price - there.price)
        _check(results, f"canonical_price[{k}]", gap / joint if joint > 0 else gap / MEASURE_TOL,
               checks.price_band_se, f"{claim.kind}: {here.price:.6g} vs {there.price:.6g}")
    return results


# ── Entry point ───────────────────────────────────────────────────────────────

def run_acceptance_checks(spec: MarketSpecFile, *, seed: int, paths: int, steps: int, casino_grid: int,
                          checks: CheckConfig = CHECKS, workers: int = WORKERS) -> list[TestReport]:
    """Run every check that applies to the spec file's market block."""
    if spec.finite is not None:
        results = finite_checks(spec.finite, seed, casino_grid, checks)
    elif spec.gaussian is not None:
        results = gaussian_checks(spec.gaussian, seed, checks)
    else:
        results = sde_checks(spec, seed, paths, steps, checks, workers)

    passed = sum(1 for r in results if r.passed)
    log.info("Acceptance checks: %d / %d passed", passed, len(results))
    return results
