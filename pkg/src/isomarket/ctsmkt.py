"""
ctsmkt.py — Continuous-time diffusion markets.

    dX = μ(X, t) dt + σ(X, t) dW,   bank account e^{rt}

Covers simulation with per-path counter-based random streams, the market
price of risk θ = σ⁻¹(rX − μ) and its norm (the AMPR), the density process
q = exp(Z − ½[Z, Z]) with Z = ∫θ·dW, drift adjustment to a constant AMPR,
the canonical Bachelier image of a market with deterministic AMPR, mutual-fund
replication of W̃¹_T and Monte Carlo pricing with q-reweighting.

Stochastic integrals use left points everywhere. The quadratic variation of
Z is the predictable one, Σ|θ|²dt, so that the discrete q is an exact
martingale and canonicalization of a canonical market is an identity.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, TypeAdapter, model_validator
from scipy import stats

from .config import AMPR_FLOOR, BLOCK_PATHS, CHECKS, DEFAULT_SEED, OVERFLOW_GUARD, WORKERS, CheckConfig
from .errors import (
    InvalidInputError,
    NonDeterministicAmprError,
    NumericalError,
    OverflowGuardError,
    SingularVolatilityError,
)
from .gauss import orthonormal_completion
from .logger import get_logger

log = get_logger(__name__)

FAMILIES = ("bachelier-constant", "gbm", "cev", "canonical-bachelier")


# ── Models ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AmprSchedule:
    """Piecewise-constant A(t): values[k] on [times[k], times[k+1])."""
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(times) == 0 or len(times) != len(values):
            raise InvalidInputError("A schedule needs matching, non-empty times and values")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise InvalidInputError("A schedule times must start at 0 and increase")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float) -> "AmprSchedule":
        return cls(np.array([0.0]), np.array([float(value)]))

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    def minimum(self) -> float:
        return float(self.values.min())


def _as_loading(vol, n: int) -> np.ndarray:
    if vol is None:
        return np.eye(n)
    arr = np.asarray(vol, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr


@dataclass(frozen=True, eq=False)
class SDEModel:
    """
    family               σ(x)                    μ(x, t)
    bachelier-constant   S                       drift
    gbm                  diag(x) S               drift * x
    cev                  diag(|x|^β) S           drift * x
    canonical-bachelier  I                       r x + A(t) e1

    With drift_target set the drift is replaced by r x − A σ(x) e1.
    """
    family: str
    horizon: float
    x0: np.ndarray
    r: float = 0.0
    drift: np.ndarray | None = None
    vol: np.ndarray | None = None
    cev_beta: float = 1.0
    a_schedule: AmprSchedule | None = None
    drift_target: float | None = None
    _loading_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n = len(x0)
        object.__setattr__(self, "x0", x0)
        loading = np.eye(n) if self.family == "canonical-bachelier" else _as_loading(self.vol, n)
        object.__setattr__(self, "vol", loading)
        drift = np.zeros(n) if self.drift is None else np.asarray(self.drift, dtype=float).reshape(-1)
        object.__setattr__(self, "drift", drift)
        try:
            inverse = np.linalg.inv(loading) if loading.shape == (n, n) else None
        except np.linalg.LinAlgError:
            inverse = None
        object.__setattr__(self, "_loading_inv", inverse)

    # convenience constructors
    @classmethod
    def bachelier(cls, drift, vol, r: float, horizon: float, x0) -> "SDEModel":
        return cls("bachelier-constant", horizon, x0, r, drift, vol)

    @classmethod
    def gbm(cls, drift, vol, r: float, horizon: float, x0) -> "SDEModel":
        return cls("gbm", horizon, x0, r, drift, vol)

    @classmethod
    def cev(cls, drift, vol, beta: float, r: float, horizon: float, x0) -> "SDEModel":
        return cls("cev", horizon, x0, r, drift, vol, cev_beta=beta)

    @classmethod
    def canonical_bachelier(cls, schedule: AmprSchedule | float, r: float, horizon: float,
                            dimension: int = 1, x0=None) -> "SDEModel":
        if not isinstance(schedule, AmprSchedule):
            schedule = AmprSchedule.constant(schedule)
        x0 = np.zeros(dimension) if x0 is None else x0
        return cls("canonical-bachelier", horizon, x0, r, a_schedule=schedule)

    @property
    def dimension(self) -> int:
        return len(self.x0)

    @property
    def family_tag(self) -> str:
        return "drift-adjusted" if self.drift_target is not None else self.family

    def _scale(self, x: np.ndarray) -> np.ndarray:
        if self.family == "gbm":
            return x
        if self.family == "cev":
            return np.abs(x) ** self.cev_beta
        return np.ones_like(x)

    def _a(self, t, shape) -> np.ndarray:
        if self.a_schedule is None:
            raise InvalidInputError("canonical-bachelier model needs an A schedule")
        return np.broadcast_to(self.a_schedule(t), shape)

    def sigma(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._scale(x)[..., :, None] * self.vol

    def mu(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.drift_target is not None:
            return self.r * x - self.drift_target * self._scale(x) * self.vol[:, 0]
        if self.family == "bachelier-constant":
            return np.broadcast_to(self.drift, x.shape).copy()
        if self.family in ("gbm", "cev"):
            return self.drift * x
        out = self.r * x
        out[..., 0] += self._a(t, x.shape[:-1])
        return out

    def theta(self, x, t=0.0) -> np.ndarray:
        """Market price of risk σ⁻¹(r x − μ), vectorized over leading axes."""
        x = np.asarray(x, dtype=float)
        scale = self._scale(x)
        singular = ~(np.abs(scale) > 0)
        if self._loading_inv is None or np.any(singular):
            raise SingularVolatilityError("volatility is singular")
        return ((self.r * x - self.mu(x, t)) / scale) @ self._loading_inv.T


def validate_model(model: SDEModel) -> None:
    n = model.dimension
    if model.family not in FAMILIES:
        raise InvalidInputError(f"unknown family {model.family!r}; expected one of {FAMILIES}")
    if n == 0:
        raise InvalidInputError("x0 must hold at least one asset")
    if not (np.isfinite(model.horizon) and model.horizon > 0):
        raise InvalidInputError(f"horizon must be positive, got {model.horizon}")
    if len(model.drift) != n or model.vol.shape != (n, n):
        raise InvalidInputError(f"drift/vol shapes do not match dimension {n}")
    if model.family == "canonical-bachelier":
        if model.a_schedule is None:
            raise InvalidInputError("canonical-bachelier model needs an A schedule")
        if model.a_schedule.minimum() < AMPR_FLOOR:
            raise InvalidInputError(f"A(t) must stay above {AMPR_FLOOR}")
    if model.drift_target is not None and not (np.isfinite(model.drift_target) and model.drift_target >= 0):
        raise InvalidInputError(f"AMPR target must be non-negative, got {model.drift_target}")
    cond = np.linalg.cond(model.sigma(model.x0, 0.0))
    if not (np.isfinite(cond) and cond < 1e8):
        raise SingularVolatilityError(f"volatility at x0 has condition number {cond:.3g}", step=0)


def ampr_coefficient(model: SDEModel, x, t=0.0):
    """|σ⁻¹(r x − μ)|."""
    value = np.linalg.norm(model.theta(x, t), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def drift_adjust(vol_model: SDEModel, target: float) -> SDEModel:
    """Replace the drift so that θ ≡ target·e1, hence AMPR ≡ target."""
    adjusted = replace(vol_model, drift_target=float(target))
    validate_model(adjusted)
    return adjusted


def mutual_fund_weights(model: SDEModel, x, t=0.0) -> np.ndarray:
    """(σσᵀ)⁻¹(r x − μ)."""
    x = np.asarray(x, dtype=float)
    return (model.theta(x, t) @ model._loading_inv) / model._scale(x)


# ── Simulation ────────────────────────────────────────────────────────────────

def _stream(seed: int, index: int) -> np.random.Generator:
    """Independent stream per path: Philox keyed by the seed, path index in the high counter word."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFF_FFFF_FFFF_FFFF, counter=int(index) << 192))


def draw_increments(seed: int, start: int, count: int, steps: int, dimension: int, dt: float,
                    antithetic: bool = False, workers: int = WORKERS) -> np.ndarray:
    """Brownian increments (count, steps, dimension) for paths start..start+count-1."""

    def fill(paths: np.ndarray) -> np.ndarray:
        out = np.empty((len(paths), steps, dimension))
        for row, p in enumerate(paths):
            index, flip = (p // 2, p % 2) if antithetic else (p, 0)
            z = _stream(seed, index).standard_normal((steps, dimension))
            out[row] = -z if flip else z
        return out

    paths = np.arange(start, start + count)
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fill, np.array_split(paths, workers)))
        noise = np.concatenate(parts)
    else:
        noise = fill(paths)
    return noise * np.sqrt(dt)


@dataclass(frozen=True, eq=False)
class QProcess:
    theta: np.ndarray         # (paths, steps, n) at left points
    z: np.ndarray             # (paths, steps+1)
    qv: np.ndarray            # predictable [Z, Z]
    realized_qv: np.ndarray   # Σ (ΔZ)²
    log_q: np.ndarray
    q: np.ndarray
    flagged: np.ndarray       # paths where |Z| crossed the overflow guard


@dataclass(frozen=True, eq=False)
class CanonicalImage:
    schedule: AmprSchedule
    a: np.ndarray             # A per step
    z_tilde: np.ndarray       # (paths, steps+1)
    w_increments: np.ndarray  # (paths, steps, n), component 0 is W̃¹
    x_tilde: np.ndarray       # (paths, steps+1, n)
    model: SDEModel

    @property
    def w_tilde(self) -> np.ndarray:
        paths, _, n = self.w_increments.shape
        return np.concatenate([np.zeros((paths, 1, n)), np.cumsum(self.w_increments, axis=1)], axis=1)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    model: SDEModel
    dt: float
    steps: int
    seed: int
    x: np.ndarray             # (paths, steps+1, n)
    dw: np.ndarray            # (paths, steps, n)
    path_offset: int = 0
    antithetic: bool = False
    scheme: str = "euler"
    q: QProcess | None = None
    canonical: CanonicalImage | None = None

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def simulate(model: SDEModel, dt: float, steps: int, n_paths: int, seed: int = DEFAULT_SEED, *,
             antithetic: bool = False, scheme: str = "euler", path_offset: int = 0,
             workers: int = WORKERS) -> PathEnsemble:
    """
    Euler–Maruyama paths (or exact log-normal steps for gbm with scheme="exact").

    Path p always uses the same stream, so blocks produced with path_offset
    concatenate to exactly the ensemble of one large run.
    """
    validate_model(model)
    if steps < 1 or n_paths < 1:
        raise InvalidInputError("steps and n_paths must be positive")
    if abs(steps * dt - model.horizon) > 1e-12 * max(1.0, model.horizon):
        raise InvalidInputError(f"steps·dt = {steps * dt!r} does not match horizon {model.horizon!r}")
    if scheme not in ("euler", "exact"):
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    if scheme == "exact" and model.family != "gbm":
        raise InvalidInputError("the exact scheme is available for the gbm family only")

    n = model.dimension
    dw = draw_increments(seed, path_offset, n_paths, steps, n, dt, antithetic, workers)
    x = np.empty((n_paths, steps + 1, n))
    x[:, 0] = model.x0
    loading = model.vol
    half_var = 0.5 * np.sum(loading ** 2, axis=1)
    stateful = model.family in ("gbm", "cev")

    for k in range(steps):
        state = x[:, k]
        t = k * dt
        shocks = dw[:, k] @ loading.T
        if scheme == "exact":
            growth = model.mu(state, t) / state
            x[:, k + 1] = state * np.exp((growth - half_var) * dt + shocks)
            continue
        if stateful:
            scale = model._scale(state)
            bad = np.flatnonzero(~np.all(np.abs(scale) > 0, axis=1))
            if bad.size:
                raise SingularVolatilityError(
                    f"volatility singular on path {path_offset + bad[0]} at step {k}",
                    path=int(path_offset + bad[0]), step=k,
                )
            shocks = scale * shocks
        x[:, k + 1] = state + model.mu(state, t) * dt + shocks

    if not np.all(np.isfinite(x)):
        raise NumericalError("simulation produced non-finite states")
    log.debug("simulated %d paths x %d steps (%s, %s)", n_paths, steps, model.family_tag, scheme)
    return PathEnsemble(model, dt, steps, seed, x, dw, path_offset, antithetic, scheme)


def q_process(ensemble: PathEnsemble, model: SDEModel | None = None) -> QProcess:
    model = model or ensemble.model
    times = ensemble.times[:-1]
    theta = model.theta(ensemble.x[:, :-1], times[None, :])
    dz = np.einsum("psn,psn->ps", theta, ensemble.dw)
    dqv = np.sum(theta ** 2, axis=2) * ensemble.dt

    zero = np.zeros((ensemble.n_paths, 1))
    z = np.concatenate([zero, np.cumsum(dz, axis=1)], axis=1)
    qv = np.concatenate([zero, np.cumsum(dqv, axis=1)], axis=1)
    realized = np.concatenate([zero, np.cumsum(dz ** 2, axis=1)], axis=1)
    log_q = z - 0.5 * qv

    flagged = np.any(np.abs(z) > OVERFLOW_GUARD, axis=1)
    if flagged.any():
        log.warning("%d path(s) crossed the overflow guard |Z| > %g", int(flagged.sum()), OVERFLOW_GUARD)
        log_q = np.where(flagged[:, None], np.clip(log_q, -OVERFLOW_GUARD, OVERFLOW_GUARD), log_q)
    return QProcess(theta, z, qv, realized, log_q, np.exp(log_q), flagged)


def with_q(ensemble: PathEnsemble) -> PathEnsemble:
    return ensemble if ensemble.q is not None else replace(ensemble, q=q_process(ensemble))


# ── AMPR estimates ────────────────────────────────────────────────────────────

def _windowed_mean(series: np.ndarray, window: int) -> np.ndarray:
    series = np.atleast_2d(series)
    n_windows = series.shape[1] // window
    trimmed = series[:, : n_windows * window]
    return trimmed.reshape(series.shape[0], n_windows, window).mean(axis=2)


def ampr_realized(q, dt: float, window: int = CHECKS.realized_window) -> np.ndarray:
    """Windowed Σ(Δq/q)² / (window·dt): an estimate of A² per window and path."""
    if isinstance(q, QProcess):
        q = q.q
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if np.any(q <= 0):
        raise InvalidInputError("q must be positive")
    ratio = np.diff(q, axis=1) / q[:, :-1]
    return _windowed_mean(ratio ** 2, window) / dt


def ampr_coefficient_windows(qp: QProcess, window: int = CHECKS.realized_window) -> np.ndarray:
    """|θ|² averaged over the same windows as ampr_realized."""
    return _windowed_mean(np.sum(qp.theta ** 2, axis=2), window)


def ampr_agreement(realized: np.ndarray, coefficient_sq: np.ndarray) -> float:
    """Mean absolute relative error between cross-path window averages."""
    real = np.mean(realized, axis=0)
    coef = np.mean(coefficient_sq, axis=0)
    if real.size == 0:
        raise InvalidInputError("no complete window to compare")
    if np.any(coef <= 0):
        return float(np.mean(np.abs(real - coef)))
    return float(np.mean(np.abs(real - coef) / coef))


# ── Canonical Bachelier image ─────────────────────────────────────────────────

def gram_schmidt_frame(v) -> np.ndarray:
    """Orthonormal matrix with first row v, completed against e1..en in order."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise InvalidInputError("gram_schmidt_frame needs a unit vector")
    return orthonormal_completion(v[None, :])


def deterministic_ampr(qp: QProcess, checks: CheckConfig = CHECKS) -> np.ndarray:
    """Per-step A(t) as the cross-path median of |θ|; refuses path-dependent AMPR."""
    a = np.linalg.norm(qp.theta, axis=2)
    schedule = np.median(a, axis=0)
    if schedule.min() < AMPR_FLOOR:
        raise InvalidInputError(f"A(t) falls below {AMPR_FLOOR}")
    variation = (a.max(axis=0) - a.min(axis=0)) / schedule
    if variation.max() > checks.ampr_variation:
        raise NonDeterministicAmprError(
            f"AMPR varies by {variation.max():.1%} across paths; canonicalization needs a deterministic A(t)"
        )
    return schedule


def bachelier_canonicalize(ensemble: PathEnsemble, model: SDEModel | None = None,
                           checks: CheckConfig = CHECKS) -> PathEnsemble:
    """
    Build W̃ and X̃ of the canonical Bachelier market carrying the same density process.

        dZ̃  = dZ − ½|θ|²dt + ½A²dt      (= d log q + ½A²dt)
        dW̃¹ = −dZ̃ / A
        dW̃ᵏ = (frame of α = −θ/A) dW    for k ≥ 2
        dX̃  = (r X̃ + A e1) dt + dW̃,    X̃₀ = 0
    """
    model = model or ensemble.model
    qp = ensemble.q if ensemble.q is not None else q_process(ensemble, model)
    a = deterministic_ampr(qp, checks)
    dt = ensemble.dt
    paths, steps, n = ensemble.dw.shape

    dz = np.diff(qp.z, axis=1)
    dqv = np.diff(qp.qv, axis=1)
    dz_tilde = dz - 0.5 * dqv + 0.5 * a ** 2 * dt
    z_tilde = np.concatenate([np.zeros((paths, 1)), np.cumsum(dz_tilde, axis=1)], axis=1)

    alpha = -qp.theta / a[None, :, None]
    alpha /= np.linalg.norm(alpha, axis=2, keepdims=True)
    if np.allclose(alpha, alpha[0, 0], rtol=0.0, atol=1e-14):
        frame = orthonormal_completion(alpha[0, 0][None, :])
        w_increments = ensemble.dw @ frame.T
    else:
        frames = orthonormal_completion(alpha.reshape(-1, 1, n))
        w_increments = np.einsum("mij,mj->mi", frames, ensemble.dw.reshape(-1, n)).reshape(paths, steps, n)
    w_increments[:, :, 0] = -dz_tilde / a[None, :]

    r = model.r
    x_tilde = np.zeros((paths, steps + 1, n))
    drift_unit = np.zeros(n)
    drift_unit[0] = 1.0
    for k in range(steps):
        x_tilde[:, k + 1] = x_tilde[:, k] + (r * x_tilde[:, k] + a[k] * drift_unit) * dt + w_increments[:, k]

    schedule = AmprSchedule(ensemble.times[:-1], a)
    canonical_model = SDEModel.canonical_bachelier(schedule, r, model.horizon, n)
    image = CanonicalImage(schedule, a, z_tilde, w_increments, x_tilde, canonical_model)
    log.debug("canonical image built: A in [%.6g, %.6g]", a.min(), a.max())
    return replace(ensemble, q=qp, canonical=image)


def canonical_ensemble(ensemble: PathEnsemble) -> PathEnsemble:
    """The canonical image as an ensemble of the canonical model."""
    if ensemble.canonical is None:
        ensemble = bachelier_canonicalize(ensemble)
    image = ensemble.canonical
    return PathEnsemble(image.model, ensemble.dt, ensemble.steps, ensemble.seed,
                        image.x_tilde, image.w_increments, ensemble.path_offset, ensemble.antithetic)


# ── Replication ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ReplicationReport:
    dt: float
    n_paths: int
    rms_error: float
    mean_error: float
    max_error: float
    financing_residual: float
    errors: np.ndarray


def replicate_fund(ensemble: PathEnsemble, model: SDEModel | None = None,
                   checks: CheckConfig = CHECKS) -> ReplicationReport:
    """
    Self-financing replication of W̃¹_T with the mutual fund.

    Holdings of the risky assets are e^{−r(T−t)}·(−1/A)(σσᵀ)⁻¹(rX − μ); the rest
    sits in the bank account. Initial capital is the price of W̃¹_T.
    """
    model = model or ensemble.model
    if ensemble.canonical is None:
        ensemble = bachelier_canonicalize(ensemble, model, checks)
    image = ensemble.canonical
    a = image.a
    dt, r, horizon = ensemble.dt, model.r, model.horizon
    times = ensemble.times
    x = ensemble.x

    value = np.full(ensemble.n_paths, -np.exp(-r * horizon) * np.sum(a) * dt)
    residual = 0.0
    growth = np.exp(r * dt)
    for k in range(ensemble.steps):
        state = x[:, k]
        holdings = -np.exp(-r * (horizon - times[k])) / a[k] * mutual_fund_weights(model, state, times[k])
        risky = np.sum(holdings * state, axis=1)
        bank = value - risky
        residual = max(residual, float(np.max(np.abs(risky + bank - value))))
        value = np.sum(holdings * x[:, k + 1], axis=1) + bank * growth

    target = np.sum(image.w_increments[:, :, 0], axis=1)
    errors = value - target
    return ReplicationReport(
        dt=dt,
        n_paths=ensemble.n_paths,
        rms_error=float(np.sqrt(np.mean(errors ** 2))),
        mean_error=float(np.mean(errors)),
        max_error=float(np.max(np.abs(errors))),
        financing_residual=residual,
        errors=errors,
    )


def convergence_order(dts, rms) -> float:
    """Least-squares slope of log RMS against log dt."""
    slope, _ = np.polyfit(np.log(np.asarray(dts, dtype=float)), np.log(np.asarray(rms, dtype=float)), 1)
    return float(slope)


def _merge_reports(parts: list[ReplicationReport]) -> ReplicationReport:
    errors = np.concatenate([part.errors for part in parts])
    return ReplicationReport(
        dt=parts[0].dt,
        n_paths=len(errors),
        rms_error=float(np.sqrt(np.mean(errors ** 2))),
        mean_error=float(np.mean(errors)),
        max_error=float(np.max(np.abs(errors))),
        financing_residual=max(part.financing_residual for part in parts),
        errors=errors,
    )


def replication_study(model: SDEModel, dts, n_paths: int, seed: int = DEFAULT_SEED,
                      checks: CheckConfig = CHECKS, workers: int = WORKERS,
                      block_paths: int = BLOCK_PATHS) -> tuple[list[ReplicationReport], float]:
    """
    Replication error across rebalancing steps, with the fitted convergence order.

    Paths are simulated in blocks of `block_paths`; only the terminal errors
    of each block are kept, so memory grows with steps·block_paths.
    """
    scheme = "exact" if model.family == "gbm" else "euler"
    size = max(1, int(block_paths))
    reports = []
    for dt in dts:
        steps = int(round(model.horizon / dt))
        if steps < 1:
            raise InvalidInputError(f"rebalancing step {dt!r} exceeds the horizon {model.horizon!r}")
        parts = []
        for start in range(0, n_paths, size):
            ensemble = simulate(model, model.horizon / steps, steps, min(size, n_paths - start), seed,
                                scheme=scheme, path_offset=start, workers=workers)
            parts.append(replicate_fund(ensemble, model, checks))
        reports.append(_merge_reports(parts))
        log.info("replication dt=%g: RMS error %.6g over %d blocks", dt, reports[-1].rms_error, len(parts))
    order = convergence_order([rep.dt for rep in reports], [rep.rms_error for rep in reports]) \
        if len(reports) > 1 else float("nan")
    return reports, order


# ── Claims ────────────────────────────────────────────────────────────────────

class _Claim(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)

    @staticmethod
    def _asset(x_t: np.ndarray, asset: int) -> np.ndarray:
        if not 0 <= asset < x_t.shape[1]:
            raise InvalidInputError(f"asset index {asset} outside 0..{x_t.shape[1] - 1}")
        return x_t[:, asset]


class ConstantClaim(_Claim):
    kind: Literal["constant"] = "constant"
    value: float = 1.0

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        return np.full(len(x_t), self.value)


class LinearClaim(_Claim):
    kind: Literal["linear"] = "linear"
    a0: float = 0.0
    a: list[float]

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        if len(self.a) != x_t.shape[1]:
            raise InvalidInputError(f"linear claim has {len(self.a)} weights for {x_t.shape[1]} assets")
        return self.a0 + x_t @ np.asarray(self.a)


class CallClaim(_Claim):
    kind: Literal["call"] = "call"
    asset: int = 0
    strike: PositiveFloat

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        return np.maximum(self._asset(x_t, self.asset) - self.strike, 0.0)


class PutClaim(_Claim):
    kind: Literal["put"] = "put"
    asset: int = 0
    strike: PositiveFloat

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        return np.maximum(self.strike - self._asset(x_t, self.asset), 0.0)


class IndicatorClaim(_Claim):
    kind: Literal["indicator"] = "indicator"
    asset: int = 0
    lower: float
    upper: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.lower < self.upper:
            raise ValueError("indicator needs lower < upper")
        return self

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        s = self._asset(x_t, self.asset)
        return ((s >= self.lower) & (s < self.upper)).astype(float)


class LogQPolynomialClaim(_Claim):
    """Σ_k coefficients[k]·(log q_T)^k, degree at most 4."""
    kind: Literal["log_q_poly"] = "log_q_poly"
    coefficients: list[float] = Field(min_length=1, max_length=5)

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.log(q_t), self.coefficients)


class QCallClaim(_Claim):
    kind: Literal["q_call"] = "q_call"
    strike: PositiveFloat

    def payoff(self, x_t: np.ndarray, q_t: np.ndarray) -> np.ndarray:
        return np.maximum(q_t - self.strike, 0.0)


ClaimSpec = Annotated[
    Union[ConstantClaim, LinearClaim, CallClaim, PutClaim, IndicatorClaim, LogQPolynomialClaim, QCallClaim],
    Field(discriminator="kind"),
]

_claim_adapter = TypeAdapter(ClaimSpec)


def parse_claim(data: dict):
    return _claim_adapter.validate_python(data)


def q_measurable(claim) -> bool:
    """Claims that depend on the path only through q_T; isomorphisms preserve their prices."""
    return isinstance(claim, (ConstantClaim, LogQPolynomialClaim, QCallClaim))


# ── Pricing ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PriceEstimate:
    price: float
    stderr: float
    n_paths: int

    def agrees_with(self, other: "PriceEstimate", band: float = CHECKS.price_band_se) -> bool:
        return abs(self.price - other.price) <= band * np.hypot(self.stderr, other.stderr)


def price_ensemble(ensemble: PathEnsemble, claim) -> PriceEstimate:
    """e^{−rT}·mean(q_T·payoff) over a P-measure ensemble."""
    qp = ensemble.q if ensemble.q is not None else q_process(ensemble)
    if qp.flagged.any():
        raise OverflowGuardError(f"{int(qp.flagged.sum())} path(s) crossed the overflow guard")
    q_t = qp.q[:, -1]
    payoff = claim.payoff(ensemble.x[:, -1], q_t)
    if not np.all(np.isfinite(payoff)):
        raise InvalidInputError(f"claim {claim.kind} produced non-finite payoffs")

    sample = q_t * payoff
    paired = ensemble.antithetic and ensemble.path_offset % 2 == 0 and len(sample) % 2 == 0
    if paired:
        sample = sample.reshape(-1, 2).mean(axis=1)
    discount = np.exp(-ensemble.model.r * ensemble.model.horizon)
    stderr = discount * np.std(sample, ddof=1) / np.sqrt(len(sample)) if len(sample) > 1 else float("nan")
    return PriceEstimate(float(discount * np.mean(sample)), float(stderr), ensemble.n_paths)


def price_mc(model: SDEModel, claim, dt: float, n_paths: int, seed: int = DEFAULT_SEED, *,
             antithetic: bool = False, scheme: str = "euler", workers: int = WORKERS) -> PriceEstimate:
    steps = int(round(model.horizon / dt))
    ensemble = simulate(model, model.horizon / steps, steps, n_paths, seed,
                        antithetic=antithetic, scheme=scheme, workers=workers)
    return price_ensemble(ensemble, claim)


def exchange_cost(model: SDEModel, a0: float, a) -> float:
    """Cost of a0 + a·X_T bought on the exchange: bond plus assets at today's prices."""
    return float(a0 * np.exp(-model.r * model.horizon) + np.dot(a, model.x0))


def black_scholes_price(spot: float, strike: float, rate: float, vol: float, horizon: float,
                        kind: str = "call") -> float:
    sd = vol * np.sqrt(horizon)
    d1 = (np.log(spot / strike) + (rate + 0.5 * vol ** 2) * horizon) / sd
    d2 = d1 - sd
    discounted = strike * np.exp(-rate * horizon)
    if kind == "call":
        return float(spot * stats.norm.cdf(d1) - discounted * stats.norm.cdf(d2))
    if kind == "put":
        return float(discounted * stats.norm.cdf(-d2) - spot * stats.norm.cdf(-d1))
    raise InvalidInputError(f"unknown option kind {kind!r}")
