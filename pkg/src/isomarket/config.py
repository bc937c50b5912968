"""
config.py — Loads settings from the .env file.
All other modules import from here instead of reading .env directly.

Two kinds of settings live here:
  - run settings (seed, casino grid, worker count, ledger path) read from the environment
  - numerical tolerances and the CheckConfig record that every pass/fail gate reads
"""
import os
from dataclasses import dataclass

from dotenv import load_dotenv

# Load variables from .env into the environment
load_dotenv()

LOG_LEVEL      = os.getenv("ISOMARKET_LOG_LEVEL", "INFO")
DEFAULT_SEED   = int(os.getenv("ISOMARKET_SEED", "42"))
CASINO_GRID    = int(os.getenv("ISOMARKET_CASINO_GRID", "256"))
GROUP_CAP      = int(os.getenv("ISOMARKET_GROUP_CAP", "1000000"))
WORKERS        = int(os.getenv("ISOMARKET_WORKERS", "1"))
LEDGER_PATH    = os.getenv("ISOMARKET_LEDGER", "")
BLOCK_PATHS    = int(os.getenv("ISOMARKET_BLOCK_PATHS", "500"))

# ── Tolerances ────────────────────────────────────────────────────────────────
MEASURE_TOL    = 1e-12   # construction-level comparisons of measures and RN values
IDENTITY_TOL   = 1e-10   # derived identities (E[q] = 1, price equalities)
GAUSS_TOL      = 1e-8    # canonical Gaussian forms
AMPR_FLOOR     = 1e-6    # smallest admissible A(t)
OVERFLOW_GUARD = 700.0   # |Z| beyond this flags a path


@dataclass(frozen=True)
class CheckConfig:
    """Every threshold used by a statistical or acceptance gate."""
    alpha: float = 0.01
    qv_band_sigmas: float = 3.0
    rank_threshold: float = 1e-3
    skew_gate: float = 0.1
    kurtosis_gate: float = 0.2
    ampr_variation: float = 0.05
    ampr_agreement: float = 0.10
    price_band_se: float = 3.0
    martingale_band_se: float = 4.0
    realized_window: int = 32
    order_target: float = 0.5
    order_tolerance: float = 0.15


CHECKS = CheckConfig(alpha=float(os.getenv("ISOMARKET_ALPHA", "0.01")))
