"""
gauss.py — Gaussian (Markowitz) markets.

A Gaussian market is (mean, covariance, cost) of n jointly normal assets.
After whitening with the Cholesky factor and a rotation, every market reads
(α e1, I, β e1 + γ e2); the tuple (n, α, β, γ) decides isomorphism.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .config import GAUSS_TOL, IDENTITY_TOL
from .errors import InvalidInputError, NumericalError
from .logger import get_logger

log = get_logger(__name__)

_ZERO = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianMarket:
    mean: np.ndarray
    covariance: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "covariance", np.atleast_2d(np.asarray(self.covariance, dtype=float)))
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float).reshape(-1))

    @property
    def dimension(self) -> int:
        return len(self.mean)


def validate_gaussian(market: GaussianMarket) -> None:
    n = market.dimension
    cov = market.covariance
    if n == 0 or cov.shape != (n, n) or len(market.cost) != n:
        raise InvalidInputError(f"mean, covariance {cov.shape} and cost must share dimension {n}")
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(market.mean)) and np.all(np.isfinite(market.cost))):
        raise InvalidInputError("Gaussian market data must be finite")
    if np.max(np.abs(cov - cov.T)) > IDENTITY_TOL:
        raise InvalidInputError("covariance is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if eig[-1] <= 0 or eig[0] <= 1e-10 * eig[-1]:
        raise NumericalError(f"ill-conditioned covariance (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")


def apply_basis_change(market: GaussianMarket, basis) -> GaussianMarket:
    """Express the market in the portfolios given by the columns of `basis`."""
    a = np.asarray(basis, dtype=float)
    cov = a.T @ market.covariance @ a
    return GaussianMarket(a.T @ market.mean, 0.5 * (cov + cov.T), a.T @ market.cost)


def orthonormal_completion(initial, tol: float = 1e-8) -> np.ndarray:
    """
    Extend orthonormal rows to an orthonormal basis of R^n.

    Candidates e1..en are tried in order and kept when they add a direction
    (residual norm > tol). Accepts (k, n) or a batch (m, k, n); returns rows.
    """
    arr = np.asarray(initial, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    m, k, n = arr.shape
    basis = np.zeros((m, n, n))
    basis[:, :k] = arr
    count = np.full(m, k)
    batch = np.arange(m)

    for i in range(n):
        if np.all(count >= n):
            break
        w = -np.einsum("mk,mkn->mn", basis[:, :, i], basis)
        w[:, i] += 1.0
        # second pass keeps the rows orthogonal to machine precision
        w -= np.einsum("mk,mkn->mn", np.einsum("mkn,mn->mk", basis, w), basis)
        norm = np.linalg.norm(w, axis=1)
        take = (norm > tol) & (count < n)
        if np.any(take):
            rows = batch[take]
            basis[rows, count[rows]] = w[take] / norm[take, None]
            count[rows] += 1

    return basis[0] if single else basis


# ── Canonical form ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CanonicalGaussForm:
    dimension: int
    alpha: float
    beta: float
    gamma: float
    canonicalizer: np.ndarray

    @property
    def invariants(self) -> tuple[int, float, float, float]:
        return (self.dimension, self.alpha, self.beta, self.gamma)

    def apply(self, market: GaussianMarket) -> GaussianMarket:
        m = self.canonicalizer
        return GaussianMarket(m @ market.mean, m @ market.covariance @ m.T, m @ market.cost)


def canonical_market(form: CanonicalGaussForm) -> GaussianMarket:
    n = form.dimension
    mean = np.zeros(n)
    cost = np.zeros(n)
    mean[0] = form.alpha
    cost[0] = form.beta
    if n > 1:
        cost[1] = form.gamma
    return GaussianMarket(mean, np.eye(n), cost)


def canonical_gauss(market: GaussianMarket) -> CanonicalGaussForm:
    validate_gaussian(market)
    n = market.dimension
    chol = linalg.cholesky(market.covariance, lower=True)
    whitener = linalg.solve_triangular(chol, np.eye(n), lower=True)
    m = whitener @ market.mean
    c = whitener @ market.cost

    alpha = float(np.linalg.norm(m))
    if alpha > _ZERO:
        u1 = m / alpha
        beta = float(u1 @ c)
        residual = c - beta * u1
        gamma = float(np.linalg.norm(residual))
        initial = [u1, residual / gamma] if gamma > _ZERO else [u1]
    else:
        alpha = 0.0
        beta = float(np.linalg.norm(c))
        gamma = 0.0
        initial = [c / beta] if beta > _ZERO else []
    if gamma <= _ZERO:
        gamma = 0.0

    rotation = orthonormal_completion(np.reshape(initial, (len(initial), n)))
    form = CanonicalGaussForm(n, alpha, beta, gamma, rotation @ whitener)
    log.debug("canonical Gaussian form: n=%d alpha=%.6g beta=%.6g gamma=%.6g", n, alpha, beta, gamma)
    return form


def gauss_isomorphic(m1: GaussianMarket, m2: GaussianMarket, tol: float = GAUSS_TOL) -> bool:
    f1, f2 = canonical_gauss(m1), canonical_gauss(m2)
    if f1.dimension != f2.dimension:
        return False
    return bool(np.all(np.abs(np.subtract(f1.invariants[1:], f2.invariants[1:])) <= tol))


# ── Mutual funds ──────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class TwoFundBasis:
    first: np.ndarray    # Σ⁻¹ mean
    second: np.ndarray   # Σ⁻¹ cost
    degenerate: bool

    def span(self) -> np.ndarray:
        """Columns spanning the optimal-portfolio subspace."""
        if not self.degenerate:
            return np.column_stack([self.first, self.second])
        fund = self.first if np.linalg.norm(self.first) > 0 else self.second
        return fund[:, None]


def two_fund_basis(market: GaussianMarket) -> TwoFundBasis:
    validate_gaussian(market)
    factor = linalg.cho_factor(market.covariance)
    first = linalg.cho_solve(factor, market.mean)
    second = linalg.cho_solve(factor, market.cost)
    gram = np.array([[market.mean @ first, market.mean @ second],
                     [market.cost @ first, market.cost @ second]])
    scale = gram[0, 0] * gram[1, 1]
    degenerate = bool(scale <= 0 or np.linalg.det(gram) <= 1e-12 * scale)
    if degenerate:
        log.info("mean and cost are parallel: single-fund market")
    return TwoFundBasis(first, second, degenerate)


def span_residual(basis: TwoFundBasis, x) -> float:
    """Distance from x to the span of the funds, relative to |x|."""
    x = np.asarray(x, dtype=float)
    cols = basis.span()
    coeffs, *_ = np.linalg.lstsq(cols, x, rcond=None)
    return float(np.linalg.norm(cols @ coeffs - x) / max(np.linalg.norm(x), 1.0))


def portfolio_variance(market: GaussianMarket, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ market.covariance @ x)


def min_variance_solve(market: GaussianMarket, expected: float, cost: float) -> np.ndarray:
    """argmin xᵀΣx subject to meanᵀx = expected and costᵀx = cost."""
    funds = two_fund_basis(market)
    funds_matrix = np.column_stack([funds.first, funds.second])
    constraints = np.column_stack([market.mean, market.cost])
    gram = constraints.T @ funds_matrix
    targets = np.array([expected, cost], dtype=float)
    lam, *_ = np.linalg.lstsq(gram, targets, rcond=None)
    if np.linalg.norm(gram @ lam - targets) > IDENTITY_TOL * max(1.0, np.linalg.norm(targets)):
        raise InvalidInputError("constraint targets are inconsistent for a single-fund market")
    return funds_matrix @ lam
