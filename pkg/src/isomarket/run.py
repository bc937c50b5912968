"""
run.py — Command-line entry point.

Every subcommand reads one JSON spec, calls the library and writes
report.csv, series_*.csv and run_report.json into --out.

Subcommands:
  classify          classification invariant (and isomorphism with --against)
  canon-gauss       canonical (α, β, γ) form of a Gaussian market
  solve-two-fund    minimum-variance portfolio for the spec file's targets
  rearrange         composite rearrangement of the spec file's payoff
  project-q         projection of the payoff onto functions of the RN vector
  simulate          path ensemble summary of a diffusion market
  ampr              coefficient vs realized absolute market price of risk
  canonicalize-cts  canonical Bachelier image and its Lévy gates
  replicate         mutual-fund replication error across rebalancing steps
  price             Monte Carlo prices of the spec file's claims
  verify            the acceptance checks for the spec file

Run this with:
  python -m src.isomarket.run price --spec specs/gbm.json --out out/

Exit codes: 0 success, 1 failed check, 2 invalid input, 3 numerical failure.
"""
import argparse
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import CASINO_GRID, CHECKS, DEFAULT_SEED, LEDGER_PATH, WORKERS, CheckConfig
from .ctsmkt import (
    ampr_agreement,
    ampr_coefficient,
    ampr_coefficient_windows,
    ampr_realized,
    bachelier_canonicalize,
    price_ensemble,
    simulate,
    with_q,
)
from .errors import InvalidInputError, NumericalError
from .finprob import expectation
from .gauss import canonical_gauss, min_variance_solve, portfolio_variance, two_fund_basis
from .ledger import record_run
from .logger import get_logger
from .onep_complete import (
    casino_comparison,
    classification_invariant,
    jointly_isomorphic,
    project_onto_q,
    quantile_market,
)
from .rearrange import CasinoSample, composite_rearrange
from .report import ReportRow, RunReport, config_hash, invariant_frame, rows_from_checks, write_report, write_table
from .specfile import MarketSpecFile, describe_validation_error, load_spec
from .statcheck import TestReport, levy_gates
from .verify import rearrangement_checks, replication_checks, run_acceptance_checks

log = get_logger("isomarket.run")

DEFAULT_PATHS = 2000
DEFAULT_STEPS = 100


@dataclass
class Settings:
    seed: int
    paths: int
    steps: int
    casino_grid: int
    checks: CheckConfig
    workers: int
    against: str | None = None


@dataclass
class Outcome:
    rows: list[ReportRow] = field(default_factory=list)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)


def _block(spec: MarketSpecFile, kind: str):
    block = getattr(spec, kind)
    if block is None:
        raise InvalidInputError(f"this subcommand needs a {kind} market block, got {spec.market_kind}")
    return block


def _row(name: str, value, uncertainty=None, passed=None) -> ReportRow:
    return ReportRow(name=name, value=float(value),
                     uncertainty=None if uncertainty is None else float(uncertainty), passed=passed)


def _check_row(report: TestReport) -> ReportRow:
    return rows_from_checks([report])[0]


# ── Finite markets ────────────────────────────────────────────────────────────

def cmd_classify(spec: MarketSpecFile, settings: Settings) -> Outcome:
    block = _block(spec, "finite")
    space = block.to_space()
    subject = block.to_market() if space.n == 1 else space
    invariant = classification_invariant(subject)
    out = Outcome(rows=[_row("measures", space.n), _row("classes", len(invariant.entries))])
    out.tables["invariant.csv"] = invariant_frame(invariant)

    if space.n == 1:
        qm = quantile_market(subject)
        out.tables["series_quantile.csv"] = pd.DataFrame(
            {"u_left": qm.breakpoints[:-1], "u_right": qm.breakpoints[1:], "rn": qm.rn_values})

    if settings.against:
        other_block = _block(load_spec(settings.against), "finite")
        other = other_block.to_space()
        mapping = jointly_isomorphic(space, other)
        log.info("isomorphic: %s", "true" if mapping is not None else "false")
        out.rows.append(_row("isomorphic", mapping is not None))
        if mapping is not None:
            out.tables["series_bijection.csv"] = pd.DataFrame(
                {"from": [str(a) for a in mapping], "to": [str(b) for b in mapping.values()]})
        if space.n == 1 and other.n == 1:
            comparison = casino_comparison(block.to_market(), other_block.to_market())
            log.info("up to casino: %s (L1 distance %.3g)", comparison.verdict.value, comparison.l1_distance)
            out.rows.append(_row("casino_l1_distance", comparison.l1_distance))
            out.rows.append(_row("isomorphic_up_to_casino", comparison.verdict.value == "isomorphic"))
    return out


def _payoff(block) -> np.ndarray:
    if block.payoff is None:
        raise InvalidInputError("this subcommand needs finite.payoff")
    return np.asarray(block.payoff, dtype=float)


def cmd_rearrange(spec: MarketSpecFile, settings: Settings) -> Outcome:
    block = _block(spec, "finite")
    space = block.to_space()
    payoff = _payoff(block)
    signs = block.signs_or_default()
    sample = CasinoSample.from_space(space, payoff, settings.casino_grid)
    result = composite_rearrange(sample, signs)

    out = Outcome()
    for i in range(space.n + 1):
        out.rows.append(_row(f"expectation_before[{i}]", np.dot(sample.measure_weights(i), sample.value)))
        out.rows.append(_row(f"expectation_after[{i}]", np.dot(result.measure_weights(i), result.value)))
    out.rows += [_check_row(r) for r in rearrangement_checks(space, payoff, signs, settings.casino_grid,
                                                              settings.checks)]
    columns = {"atom": [str(space.labels[a]) for a in result.atom], "cell": result.cell,
               "y": result.y, "width": result.width, "p0_mass": result.weight}
    columns.update({f"q_{i + 1}": result.x[:, i] for i in range(result.n)})
    columns.update({"value_before": payoff[result.atom], "value_after": result.value})
    out.tables["series_rearranged.csv"] = pd.DataFrame(columns)
    return out


def cmd_project_q(spec: MarketSpecFile, settings: Settings) -> Outcome:
    block = _block(spec, "finite")
    space = block.to_space()
    payoff = _payoff(block)
    projected = project_onto_q(space, payoff)
    out = Outcome()
    for i in range(space.n + 1):
        out.rows.append(_row(f"expectation_before[{i}]", expectation(space, payoff, i)))
        out.rows.append(_row(f"expectation_after[{i}]", expectation(space, projected, i)))
    out.tables["series_projected.csv"] = pd.DataFrame(
        {"atom": [str(label) for label in space.labels], "payoff": payoff, "projected": projected})
    return out


# ── Gaussian markets ──────────────────────────────────────────────────────────

def cmd_canon_gauss(spec: MarketSpecFile, settings: Settings) -> Outcome:
    form = canonical_gauss(_block(spec, "gaussian").to_market())
    out = Outcome(rows=[_row("dimension", form.dimension), _row("alpha", form.alpha),
                        _row("beta", form.beta), _row("gamma", form.gamma)])
    frame = pd.DataFrame(form.canonicalizer, columns=[f"c_{j + 1}" for j in range(form.dimension)])
    frame.insert(0, "row", np.arange(1, form.dimension + 1))
    out.tables["series_canonicalizer.csv"] = frame
    return out


def cmd_solve_two_fund(spec: MarketSpecFile, settings: Settings) -> Outcome:
    block = _block(spec, "gaussian")
    if block.targets is None:
        raise InvalidInputError("solve-two-fund needs gaussian.targets")
    market = block.to_market()
    x = min_variance_solve(market, block.targets.expected, block.targets.cost)
    funds = two_fund_basis(market)
    out = Outcome(rows=[_row("variance", portfolio_variance(market, x)), _row("degenerate", funds.degenerate)])
    out.rows += [_row(f"weight[{i + 1}]", w) for i, w in enumerate(x)]
    out.tables["series_funds.csv"] = pd.DataFrame({
        "asset": np.arange(1, market.dimension + 1),
        "fund_1": funds.first,
        "fund_2": funds.second,
        "portfolio": x,
    })
    return out


# ── Diffusion markets ─────────────────────────────────────────────────────────

def _ensemble(spec: MarketSpecFile, settings: Settings):
    block = _block(spec, "sde")
    model = block.to_model()
    dt = model.horizon / settings.steps
    ensemble = simulate(model, dt, settings.steps, settings.paths, settings.seed,
                        antithetic=spec.run.antithetic, scheme=block.scheme, workers=settings.workers)
    return model, with_q(ensemble)


def cmd_simulate(spec: MarketSpecFile, settings: Settings) -> Outcome:
    model, ensemble = _ensemble(spec, settings)
    out = Outcome()
    root_n = np.sqrt(ensemble.n_paths)
    for i in range(model.dimension):
        terminal = ensemble.x[:, -1, i]
        out.rows.append(_row(f"mean_x_T[{i + 1}]", terminal.mean(), terminal.std(ddof=1) / root_n))
    q_t = ensemble.q.q[:, -1]
    out.rows.append(_row("mean_q_T", q_t.mean(), q_t.std(ddof=1) / root_n))

    columns = {"time": ensemble.times}
    for i in range(model.dimension):
        columns[f"mean_x_{i + 1}"] = ensemble.x[:, :, i].mean(axis=0)
        columns[f"sd_x_{i + 1}"] = ensemble.x[:, :, i].std(axis=0, ddof=1)
    columns["mean_q"] = ensemble.q.q.mean(axis=0)
    out.tables["series_paths.csv"] = pd.DataFrame(columns)
    return out


def cmd_ampr(spec: MarketSpecFile, settings: Settings) -> Outcome:
    model, ensemble = _ensemble(spec, settings)
    window = settings.checks.realized_window
    realized = ampr_realized(ensemble.q, ensemble.dt, window)
    coefficient = ampr_coefficient_windows(ensemble.q, window)
    out = Outcome(rows=[_row("ampr_at_x0", ampr_coefficient(model, model.x0, 0.0))])
    if realized.shape[1]:
        mare = ampr_agreement(realized, coefficient)
        out.rows.append(_row("ampr_agreement", mare, settings.checks.ampr_agreement,
                             mare <= settings.checks.ampr_agreement))
    out.tables["series_ampr.csv"] = pd.DataFrame({
        "window_start": np.arange(realized.shape[1]) * window * ensemble.dt,
        "realized_sq": realized.mean(axis=0),
        "coefficient_sq": coefficient.mean(axis=0),
    })
    return out


def cmd_canonicalize_cts(spec: MarketSpecFile, settings: Settings) -> Outcome:
    model, ensemble = _ensemble(spec, settings)
    image = bachelier_canonicalize(ensemble, model, settings.checks).canonical
    out = Outcome(rows=[_row("a_min", image.a.min()), _row("a_max", image.a.max())])
    out.rows += rows_from_checks(levy_gates(image.w_increments, ensemble.dt, model.horizon, settings.checks))
    columns = {"time": ensemble.times[:-1], "a": image.a}
    qv = np.cumsum(image.w_increments ** 2, axis=1).mean(axis=0)
    for i in range(model.dimension):
        columns[f"mean_x_tilde_{i + 1}"] = image.x_tilde[:, 1:, i].mean(axis=0)
        columns[f"qv_w_tilde_{i + 1}"] = qv[:, i]
    out.tables["series_canonical.csv"] = pd.DataFrame(columns)
    return out


def cmd_replicate(spec: MarketSpecFile, settings: Settings) -> Outcome:
    model = _block(spec, "sde").to_model()
    dts = spec.run.rebalance_dts or [model.horizon / settings.steps]
    reports, checks = replication_checks(model, dts, settings.paths, settings.seed, settings.checks, settings.workers)
    out = Outcome(rows=[_row(f"rms_error[dt={rep.dt:.6g}]", rep.rms_error) for rep in reports])
    out.rows += rows_from_checks(checks)
    out.tables["series_replication.csv"] = pd.DataFrame({
        "dt": [rep.dt for rep in reports],
        "rms_error": [rep.rms_error for rep in reports],
        "mean_error": [rep.mean_error for rep in reports],
        "max_error": [rep.max_error for rep in reports],
        "financing_residual": [rep.financing_residual for rep in reports],
    })
    return out


def cmd_price(spec: MarketSpecFile, settings: Settings) -> Outcome:
    if not spec.claims:
        raise InvalidInputError("price needs a non-empty claims list")
    _, ensemble = _ensemble(spec, settings)
    out = Outcome()
    for k, claim in enumerate(spec.claims):
        estimate = price_ensemble(ensemble, claim)
        log.info("%s: price %.6f (s.e. %.6f)", claim.kind, estimate.price, estimate.stderr)
        out.rows.append(_row(f"price[{k}:{claim.kind}]", estimate.price, estimate.stderr))
    return out


def cmd_verify(spec: MarketSpecFile, settings: Settings) -> Outcome:
    results = run_acceptance_checks(spec, seed=settings.seed, paths=settings.paths, steps=settings.steps,
                                    casino_grid=settings.casino_grid, checks=settings.checks,
                                    workers=settings.workers)
    return Outcome(rows=rows_from_checks(results))


COMMANDS: dict[str, Callable[[MarketSpecFile, Settings], Outcome]] = {
    "classify": cmd_classify,
    "canon-gauss": cmd_canon_gauss,
    "solve-two-fund": cmd_solve_two_fund,
    "rearrange": cmd_rearrange,
    "project-q": cmd_project_q,
    "simulate": cmd_simulate,
    "ampr": cmd_ampr,
    "canonicalize-cts": cmd_canonicalize_cts,
    "replicate": cmd_replicate,
    "price": cmd_price,
    "verify": cmd_verify,
}


# ── Entry point ───────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isomarket", description="Classify and verify financial markets.")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--spec", required=True, help="market spec JSON file")
    parser.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    parser.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
    parser.add_argument("--steps", type=int, default=None, help="time steps to the horizon")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--alpha", type=float, default=None, help="significance level of statistical gates")
    parser.add_argument("--casino-grid", type=int, default=None, help="casino cells per atom")
    parser.add_argument("--against", default=None, help="second spec for classify")
    parser.add_argument("--ledger", default=None, help="DuckDB ledger file")
    parser.add_argument("--workers", type=int, default=None, help="threads for noise generation")
    return parser


def _first(*values):
    """First value that was actually given; an explicit 0 counts."""
    return next((v for v in values if v is not None), None)


def resolve_settings(spec: MarketSpecFile, args: argparse.Namespace) -> Settings:
    run = spec.run
    seed = _first(args.seed, run.seed, DEFAULT_SEED)
    steps = _first(args.steps, run.steps)
    if steps is None:
        steps = int(round(spec.sde.T / run.dt)) if spec.sde is not None and run.dt else DEFAULT_STEPS
    checks = replace(CHECKS, alpha=args.alpha) if args.alpha is not None else CHECKS
    if not 0 < checks.alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {checks.alpha}")
    settings = Settings(
        seed=seed,
        paths=_first(args.paths, run.paths, DEFAULT_PATHS),
        steps=steps,
        casino_grid=_first(args.casino_grid, run.casino_grid, CASINO_GRID),
        checks=checks,
        workers=_first(args.workers, WORKERS),
        against=args.against,
    )
    for name in ("paths", "steps", "casino_grid", "workers"):
        if getattr(settings, name) < 1:
            raise InvalidInputError(f"{name} must be at least 1, got {getattr(settings, name)}")
    return settings


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    log.info("=" * 60)
    log.info("isomarket %s — spec %s", args.command, args.spec)
    log.info("=" * 60)

    try:
        log.info("STEP 1/3 — Loading spec...")
        spec = load_spec(args.spec)
        settings = resolve_settings(spec, args)

        log.info("STEP 2/3 — Running %s on the %s market...", args.command, spec.market_kind)
        outcome = COMMANDS[args.command](spec, settings)

        log.info("STEP 3/3 — Writing results to %s...", args.out)
        out_dir = Path(args.out)
        for name, frame in sorted(outcome.tables.items()):
            write_table(frame, out_dir / name)
        options = {
            "command": args.command,
            "seed": settings.seed,
            "paths": settings.paths,
            "steps": settings.steps,
            "casino_grid": settings.casino_grid,
            "alpha": settings.checks.alpha,
            "against": settings.against,
        }
        report = RunReport(command=argv, config_hash=config_hash(spec.model_dump(mode="json"), options),
                           rows=outcome.rows, files=sorted(outcome.tables))
        report = write_report(report, out_dir)

        ledger = args.ledger or LEDGER_PATH
        if ledger:
            record_run(report, ledger)
    except ValidationError as e:
        log.error("Invalid input: %s", describe_validation_error(e))
        return 2
    except InvalidInputError as e:
        log.error("Invalid input: %s", e)
        return 2
    except NumericalError as e:
        log.error("Numerical failure: %s", e)
        return 3
    except MemoryError as e:
        log.error("Numerical failure: out of memory (%s); lower ISOMARKET_BLOCK_PATHS or --paths", e)
        return 3

    elapsed = time.perf_counter() - start
    failed = report.failed
    log.info("")
    log.info("=" * 60)
    log.info("%s COMPLETE in %.1f seconds", args.command.upper(), elapsed)
    log.info("Rows     : %d (%d failed)", len(report.rows), len(failed))
    log.info("Files    : %s", ", ".join(report.files))
    log.info("=" * 60)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
