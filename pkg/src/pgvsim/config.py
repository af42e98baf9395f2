"""Run configuration: TOML schema, validation, and defaults.

A run is described by one TOML document with optional blocks [domain],
[resolution], [physics], [noise], [integrator], [output] and [experiment],
plus a required top-level integer ``seed``. Unknown keys anywhere are
rejected. ``parse_config`` validates the whole document before any array is
allocated and reports violations as dotted field paths (exit code 2 at the
command line).
"""

from __future__ import annotations

import math
import sys
from typing import Annotated, Literal, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "RunConfig",
    "config_to_dict",
    "default_config",
    "parse_config",
    "parse_config_file",
    "validate_config",
]

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Schema violation, carrying dotted field paths in the message."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Block):
    lx: float = Field(default=TWO_PI, gt=0.0, allow_inf_nan=False)
    ly: float = Field(default=TWO_PI, gt=0.0, allow_inf_nan=False)


class ResolutionConfig(_Block):
    nx: int = Field(default=16, ge=4)
    ny: int = Field(default=16, ge=4)
    nz_t: int = Field(default=8, ge=4)
    nz_v: int = Field(default=8, ge=4)


class PhysicsConfig(_Block):
    f: float = Field(default=1.0, allow_inf_nan=False)
    robin_alpha: float = Field(default=1.0, gt=0.0, allow_inf_nan=False)


class NoiseConfig(_Block):
    sigma: float = Field(default=0.1, ge=0.0, allow_inf_nan=False)
    decay_q: float = Field(default=1.5, ge=1.0, allow_inf_nan=False)
    n_active: int = Field(default=64, ge=1)
    ou_alpha: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)


class IntegratorConfig(_Block):
    dt: float = Field(default=1e-3, gt=0.0, allow_inf_nan=False)
    scheme: Literal["imex-h", "exp-euler-direct"] = "imex-h"
    dt_wiener: float | None = Field(default=None, gt=0.0, allow_inf_nan=False)
    linear: bool = False

    @model_validator(mode="after")
    def _dt_commensurate(self):
        if self.dt_wiener is not None:
            ratio = self.dt / self.dt_wiener
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ValueError(
                    "integrator.dt: dt must be a positive integer multiple of"
                    f" the Wiener grid step dt_wiener (dt={self.dt},"
                    f" dt_wiener={self.dt_wiener})"
                )
        return self


class OutputConfig(_Block):
    dir: str = "out"
    snapshot_every: int = Field(default=0, ge=0)


class SimulateConfig(_Block):
    kind: Literal["simulate"] = "simulate"
    horizon: float = Field(default=10.0, gt=0.0, allow_inf_nan=False)
    sample_every: int = Field(default=10, ge=1)
    t0_norm: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    n_low: int = Field(default=32, ge=1)


class PullbackConfig(_Block):
    kind: Literal["pullback"] = "pullback"
    s_list: tuple[float, ...] = (-1.0, -2.0, -4.0, -8.0)
    members: int = Field(default=16, ge=2)
    radius: float = Field(default=1.0, gt=0.0, allow_inf_nan=False)
    n_low: int = Field(default=32, ge=1)
    burn_in: float = Field(default=40.0, ge=0.0, allow_inf_nan=False)

    @field_validator("s_list")
    @classmethod
    def _s_list_past(cls, v):
        if len(v) < 2:
            raise ValueError("s_list: need at least two release times")
        if any(s >= 0.0 or not math.isfinite(s) for s in v):
            raise ValueError("s_list: release times must be finite and negative")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("s_list: release times must be strictly decreasing")
        return v


class DimensionConfig(_Block):
    kind: Literal["dimension"] = "dimension"
    k: int = Field(default=16, ge=1)
    spinup: float = Field(default=2.0, ge=0.0, allow_inf_nan=False)
    horizon: float = Field(default=10.0, gt=0.0, allow_inf_nan=False)
    reorth_every: int = Field(default=10, ge=1)
    t0_norm: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    n_low: int = Field(default=32, ge=1)


class MixingConfig(_Block):
    kind: Literal["mixing"] = "mixing"
    k_gain: float = Field(default=200.0, ge=0.0, allow_inf_nan=False)
    mu_min: float = Field(default=50.0, gt=0.0, allow_inf_nan=False)
    pairs: int = Field(default=100, ge=1)
    eps: float = Field(default=0.25, gt=0.0, le=1.0, allow_inf_nan=False)
    horizon: float = Field(default=0.6, gt=0.0, allow_inf_nan=False)
    budget: float = Field(default=1e6, gt=0.0, allow_inf_nan=False)
    sample_every: int = Field(default=5, ge=1)
    n_low: int = Field(default=32, ge=1)
    wasserstein_members: int = Field(default=64, ge=2)
    wasserstein_horizon: float = Field(default=2.0, gt=0.0, allow_inf_nan=False)
    wasserstein_dt: float = Field(default=0.01, gt=0.0, allow_inf_nan=False)
    wasserstein_sample_every: int = Field(default=25, ge=1)


class LyapunovCheckConfig(_Block):
    kind: Literal["lyapunov-check"] = "lyapunov-check"
    members: int = Field(default=500, ge=100)
    checkpoints: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0)
    t0_norm: float = Field(default=2.0, ge=0.0, allow_inf_nan=False)
    estimate_members: int = Field(default=1000, ge=100)
    estimate_horizon: float = Field(default=10.0, gt=0.0, allow_inf_nan=False)
    estimate_t0_norm: float = Field(default=0.5, ge=0.0, allow_inf_nan=False)
    n_low: int = Field(default=32, ge=1)

    @field_validator("checkpoints")
    @classmethod
    def _checkpoints_increasing(cls, v):
        if len(v) < 1:
            raise ValueError("checkpoints: need at least one checkpoint")
        if any(t <= 0.0 or not math.isfinite(t) for t in v):
            raise ValueError("checkpoints: times must be finite and positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("checkpoints: times must be strictly increasing")
        return v


class ValidateConfig(_Block):
    kind: Literal["validate"] = "validate"
    samples: int = Field(default=100, ge=10)


ExperimentConfig = Annotated[
    Union[
        SimulateConfig,
        PullbackConfig,
        DimensionConfig,
        MixingConfig,
        LyapunovCheckConfig,
        ValidateConfig,
    ],
    Field(discriminator="kind"),
]


class RunConfig(_Block):
    seed: int = Field(ge=0, lt=2**64)
    domain: DomainConfig = DomainConfig()
    resolution: ResolutionConfig = ResolutionConfig()
    physics: PhysicsConfig = PhysicsConfig()
    noise: NoiseConfig = NoiseConfig()
    integrator: IntegratorConfig = IntegratorConfig()
    output: OutputConfig = OutputConfig()
    experiment: ExperimentConfig = SimulateConfig()

    @model_validator(mode="after")
    def _cross_checks(self):
        res = self.resolution
        n_modes = (res.nx + 1) * (res.ny + 1) * res.nz_t
        if self.noise.n_active > n_modes:
            raise ValueError(
                f"noise.n_active: {self.noise.n_active} exceeds the mode count"
                f" {n_modes} of the configured resolution"
            )
        return self


def _format_validation_error(err: ValidationError) -> str:
    lines = []
    for item in err.errors():
        path = ".".join(str(p) for p in item["loc"] if not str(p).startswith("tag"))
        msg = item["msg"]
        # pydantic prefixes custom ValueError messages with "Value error, "
        msg = msg.removeprefix("Value error, ")
        lines.append(f"{path}: {msg}" if path and not msg.startswith(path) else msg)
    return "; ".join(lines)


def validate_config(data: dict) -> RunConfig:
    """Validate an already-parsed mapping, raising :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation_error(err)) from err


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a TOML config document."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config is not valid TOML: {err}") from err
    return validate_config(data)


def parse_config_file(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_config(raw.decode("utf-8"))


def default_config(seed: int, kind: str = "simulate") -> RunConfig:
    """Config with every default applied, as if parsed from only a seed."""
    return validate_config({"seed": seed, "experiment": {"kind": kind}})


def config_to_dict(cfg: RunConfig) -> dict:
    """JSON-ready resolved config (defaults filled, tuples as lists)."""
    return cfg.model_dump(mode="json")
