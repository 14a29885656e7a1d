"""YAML experiment configuration, validated with strict pydantic models."""
from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from .adversary import AttackKind, AttackStrategy
from .inference import GRID_BINS
from .security import DETECTION_MODELS

Probability = Annotated[float, Field(ge=0.0, le=1.0)]
Bins = Annotated[int, Field(ge=8, le=1 << 16)]


class ConfigError(ValueError):
    """Unreadable or invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AttackConfig(_Strict):
    strategy: AttackKind
    attack_probability: Probability = 1.0

    def build(self) -> AttackStrategy:
        return AttackStrategy(self.strategy, self.attack_probability)


class SimulateConfig(_Strict):
    n_bobs: PositiveInt
    n_rounds: PositiveInt
    p_separable: Probability
    p_fidelity: Probability
    phis: Optional[list[float]] = None
    attack: Optional[AttackConfig] = None
    stop_on_detection: bool = True
    trials: PositiveInt = 1
    bins: Bins = GRID_BINS
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _check_phis(self):
        if self.phis is not None and len(self.phis) != self.n_bobs:
            raise ValueError(f"phis needs {self.n_bobs} entries, got {len(self.phis)}")
        return self


class SecurityMapConfig(_Strict):
    strategies: list[AttackKind] = Field(default_factory=lambda: [AttackKind.MEASURE_RESEND_ENTANGLED])
    n_bobs: list[PositiveInt] = Field(default_factory=lambda: [1, 2])
    p_s_points: Annotated[int, Field(ge=2)] = 11
    p_f_points: Annotated[int, Field(ge=2)] = 11
    n_cap: Optional[PositiveInt] = None
    curve_truth_sets: PositiveInt = 16
    curve_repetitions: PositiveInt = 4
    detection_model: Literal[DETECTION_MODELS] = "table"
    bins: Bins = GRID_BINS
    seed: Optional[int] = None


class OptimizeConfig(_Strict):
    n_bobs: PositiveInt
    n_rounds: PositiveInt
    strategy: AttackKind = AttackKind.MEASURE_RESEND_ENTANGLED
    lambda_e_threshold: Annotated[float, Field(ge=0.0, le=2.0)] = 0.5
    initial_points: Annotated[int, Field(ge=2)] = 11
    refinements: Annotated[int, Field(ge=0, le=8)] = 3
    repetitions: PositiveInt = 16
    truth_sets: PositiveInt = 64
    p_s_values: Optional[list[Probability]] = None
    p_f_values: Optional[list[Probability]] = None
    bins: Bins = GRID_BINS
    seed: Optional[int] = None


class FisherConfig(_Strict):
    n_bobs: list[PositiveInt] = Field(default_factory=lambda: [1, 2, 3])
    n_rounds: PositiveInt = 100
    p_s_values: list[Probability] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    p_f_values: list[Probability] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])


class FigureConfig(_Strict):
    n_bobs: list[PositiveInt] = Field(default_factory=lambda: [1, 2, 3])
    n_rounds: list[PositiveInt] = Field(default_factory=lambda: [100])
    strategy: AttackKind = AttackKind.MEASURE_RESEND_ENTANGLED
    lambda_e_threshold: Annotated[float, Field(ge=0.0, le=2.0)] = 0.5
    initial_points: Annotated[int, Field(ge=2)] = 5
    refinements: Annotated[int, Field(ge=0, le=8)] = 2
    repetitions: PositiveInt = 4
    truth_sets: PositiveInt = 8
    # figure 4: Alice's dispersion against the number of rounds
    round_counts: list[PositiveInt] = Field(default_factory=lambda: [10, 20, 50, 100, 200, 500])
    hybrid_p_separable: Probability = 0.5
    hybrid_p_fidelity: Probability = 0.25
    # figures 5 and 6: security maps
    p_s_points: Annotated[int, Field(ge=2)] = 11
    p_f_points: Annotated[int, Field(ge=2)] = 11
    curve_truth_sets: PositiveInt = 16
    curve_repetitions: PositiveInt = 4
    detection_model: Literal[DETECTION_MODELS] = "table"
    bins: Bins = GRID_BINS
    seed: Optional[int] = None


COMMAND_CONFIGS = {
    "simulate": SimulateConfig,
    "security-map": SecurityMapConfig,
    "optimize": OptimizeConfig,
    "fisher": FisherConfig,
    "figure": FigureConfig,
}


def load_config(command: str, path: str | Path | None):
    """Parse and validate the YAML file for ``command``; no file means defaults."""
    model = COMMAND_CONFIGS[command]
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return model.model_validate(data)
    except ValueError as exc:
        raise ConfigError(_describe(exc)) from exc


def _describe(exc: ValueError) -> str:
    errors = getattr(exc, "errors", None)
    if not callable(errors):
        return str(exc)
    lines = []
    for err in errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "invalid configuration\n  " + "\n  ".join(lines)
