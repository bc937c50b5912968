"""
specfile.py — Pydantic schema for market spec files.

A spec file is JSON with "version": "1", exactly one market block
(finite, gaussian or sde), an optional claims list and an optional run block.
Unknown fields are rejected.
"""
import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .ctsmkt import AmprSchedule, ClaimSpec, SDEModel, drift_adjust
from .errors import InvalidInputError
from .finprob import MultiMeasureSpace
from .gauss import GaussianMarket
from .logger import get_logger
from .onep_complete import CompleteMarket1P

log = get_logger(__name__)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


# ── Market blocks ─────────────────────────────────────────────────────────────

class FiniteBlock(_Strict):
    labels: list[str] | None = None
    p0: list[float]
    measures: list[list[float]] = Field(default_factory=list)
    scale_c: PositiveFloat | None = None
    payoff: list[float] | None = None
    signs: list[Literal[1, -1]] | None = None

    @model_validator(mode="after")
    def _aligned(self):
        atoms = len(self.p0)
        if self.labels is not None and len(self.labels) != atoms:
            raise ValueError(f"finite.labels has {len(self.labels)} entries for {atoms} atoms")
        for i, m in enumerate(self.measures):
            if len(m) != atoms:
                raise ValueError(f"finite.measures[{i}] has {len(m)} entries for {atoms} atoms")
        if self.payoff is not None and len(self.payoff) != atoms:
            raise ValueError(f"finite.payoff has {len(self.payoff)} entries for {atoms} atoms")
        if self.signs is not None and len(self.signs) != len(self.measures):
            raise ValueError(f"finite.signs has {len(self.signs)} entries for {len(self.measures)} measures")
        return self

    def to_space(self) -> MultiMeasureSpace:
        return MultiMeasureSpace.from_arrays(self.p0, self.measures, self.labels)

    def to_market(self) -> CompleteMarket1P:
        if len(self.measures) != 1:
            raise InvalidInputError("a complete market needs exactly one extra measure")
        return CompleteMarket1P(self.to_space(), self.scale_c or 1.0)

    def signs_or_default(self) -> list[int]:
        return list(self.signs) if self.signs is not None else [1] * len(self.measures)


class TwoFundTargets(_Strict):
    expected: float
    cost: float


class GaussianBlock(_Strict):
    mean: list[float]
    covariance: list[list[float]]
    cost: list[float]
    targets: TwoFundTargets | None = None

    @model_validator(mode="after")
    def _aligned(self):
        n = len(self.mean)
        if len(self.cost) != n or len(self.covariance) != n or any(len(row) != n for row in self.covariance):
            raise ValueError(f"gaussian.mean, gaussian.covariance and gaussian.cost must share dimension {n}")
        return self

    def to_market(self) -> GaussianMarket:
        return GaussianMarket(self.mean, self.covariance, self.cost)


class ScheduleBlock(_Strict):
    times: list[float]
    values: list[PositiveFloat]


class SdeBlock(_Strict):
    family: Literal["bachelier-constant", "gbm", "cev", "canonical-bachelier"]
    r: float = 0.0
    T: PositiveFloat
    x0: list[float]
    drift: list[float] | None = None
    vol: float | list[float] | list[list[float]] | None = None
    cev_beta: float = 1.0
    a_schedule: ScheduleBlock | None = None
    drift_target: NonNegativeFloat | None = None
    scheme: Literal["euler", "exact"] = "euler"

    @model_validator(mode="after")
    def _aligned(self):
        n = len(self.x0)
        if self.drift is not None and len(self.drift) != n:
            raise ValueError(f"sde.drift has {len(self.drift)} entries for dimension {n}")
        if isinstance(self.vol, list):
            shape = np.shape(self.vol)
            if shape not in ((n,), (n, n)):
                raise ValueError(f"sde.vol has shape {shape} for dimension {n}")
        if self.family == "canonical-bachelier" and self.a_schedule is None:
            raise ValueError("sde.a_schedule is required for canonical-bachelier")
        return self

    def to_model(self) -> SDEModel:
        schedule = None
        if self.a_schedule is not None:
            schedule = AmprSchedule(self.a_schedule.times, self.a_schedule.values)
        model = SDEModel(self.family, self.T, self.x0, self.r, self.drift, self.vol,
                         cev_beta=self.cev_beta, a_schedule=schedule)
        return drift_adjust(model, self.drift_target) if self.drift_target is not None else model


class RunBlock(_Strict):
    dt: PositiveFloat | None = None
    steps: PositiveInt | None = None
    paths: PositiveInt | None = None
    seed: int | None = None
    casino_grid: PositiveInt | None = None
    antithetic: bool = False
    rebalance_dts: list[PositiveFloat] | None = None


class MarketSpecFile(_Strict):
    version: Literal["1"]
    finite: FiniteBlock | None = None
    gaussian: GaussianBlock | None = None
    sde: SdeBlock | None = None
    claims: list[ClaimSpec] = Field(default_factory=list)
    run: RunBlock = Field(default_factory=RunBlock)

    @model_validator(mode="after")
    def _one_market(self):
        present = [name for name in ("finite", "gaussian", "sde") if getattr(self, name) is not None]
        if len(present) != 1:
            raise ValueError(f"exactly one market block required, found {present or 'none'}")
        if self.sde is not None:
            n = len(self.sde.x0)
            for i, claim in enumerate(self.claims):
                asset = getattr(claim, "asset", None)
                if asset is not None and not 0 <= asset < n:
                    raise ValueError(f"claims[{i}].asset {asset} outside 0..{n - 1}")
                weights = getattr(claim, "a", None)
                if weights is not None and len(weights) != n:
                    raise ValueError(f"claims[{i}].a has {len(weights)} entries for dimension {n}")
        return self

    @property
    def market_kind(self) -> str:
        return next(name for name in ("finite", "gaussian", "sde") if getattr(self, name) is not None)


# ── Loading ───────────────────────────────────────────────────────────────────

def describe_validation_error(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{path}: {item['msg']}")
    return "; ".join(parts)


def load_spec(path: str | Path) -> MarketSpecFile:
    """Read and validate a spec file; every failure surfaces as InvalidInputError."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InvalidInputError(f"cannot read spec file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"spec file {path} is not valid JSON: {e}") from e
    try:
        spec = MarketSpecFile.model_validate(data)
    except ValidationError as e:
        raise InvalidInputError(f"invalid spec file {path}: {describe_validation_error(e)}") from e
    log.debug("loaded %s spec from %s", spec.market_kind, path)
    return spec
