"""JSON configuration for the command line suites.

Unknown keys are rejected everywhere. Measures are referenced by name from
the ``measures`` table or by a bare integer state index (a unit point mass).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CheckSpec(_Strict):
    name: str
    kind: str
    params: dict[str, Any] = Field(default_factory=dict)
    budget: int = Field(default=100_000, ge=0)
    max_seconds: float = Field(default=60.0, gt=0)


class GridSpec(_Strict):
    r_min: float = Field(gt=0)
    r_max: float = Field(gt=0)
    per_decade: int = Field(default=64, ge=64)


class RadialCase(_Strict):
    d: int
    alpha: float = Field(gt=0)
    shape: Literal["power", "shifted"] = "power"
    k_max: int = Field(default=3, ge=1, le=4)
    grid: GridSpec | None = None
    window: tuple[float, float] = (1e2, 1e4)
    chain_r: tuple[float, float] = (1e-4, 1e-1)
    slope_tol: float = 0.05
    beta: float | None = None
    band: tuple[float, float] = (0.1, 10.0)
    spread_limit: float = 9.0
    chain_points: int = Field(default=7, ge=2)


class OutputSpec(_Strict):
    report: str | None = None
    soups: str | None = None
    csv_dir: str | None = None
    timings: bool = False


class Config(_Strict):
    rates: list[list[float]] | None = None
    alpha: list[float] = Field(default_factory=lambda: [1.0])
    epsilon: float = Field(default=1e-8, gt=0)
    seed: int = Field(default=42, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    measures: dict[str, list[float]] = Field(default_factory=dict)
    checks: list[CheckSpec] = Field(default_factory=list)
    sample_count: int = Field(default=10, ge=0)
    radial: list[RadialCase] = Field(default_factory=list)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("alpha")
    @classmethod
    def _positive_alpha(cls, v):
        if not v or any(a <= 0 for a in v):
            raise ValueError("alpha values must be positive")
        return v

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        """Canonical text of the fields that determine results (not threads or output paths)."""
        return json.dumps(self.model_dump(mode="json", exclude={"threads", "output"}), sort_keys=True)

    def measure(self, ref: Union[str, int], m: int) -> list[float]:
        if isinstance(ref, bool):
            raise ConfigError("measure reference must be a name or a state index")
        if isinstance(ref, int):
            if not 0 <= ref < m:
                raise ConfigError(f"state {ref} out of range")
            w = [0.0] * m
            w[ref] = 1.0
            return w
        if isinstance(ref, list):
            if len(ref) != m:
                raise ConfigError("inline measure has the wrong length")
            return [float(v) for v in ref]
        if ref not in self.measures:
            raise ConfigError(f"unknown measure {ref!r}")
        w = self.measures[ref]
        if len(w) != m:
            raise ConfigError(f"measure {ref!r} has {len(w)} weights for {m} states")
        return w


def load_config(path: str | Path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def parse_config(text: str) -> Config:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        return Config.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
