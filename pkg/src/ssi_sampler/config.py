"""Experiment configuration files.

A config is a YAML mapping with sections ``seed``, ``target``, ``method``,
``metrics``, ``output`` and an optional ``ablation``. Unknown keys are
rejected. Bundled configs live in the package's ``configs`` directory and
can be referred to by name (``mog7x7_ssi``) instead of by path.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from .dynamics import HmcConfig, LangevinConfig
from .flow import FlowConfig
from .interpolant import VelocityEstimatorConfig

__all__ = [
    "ExperimentConfig",
    "SSIMethod",
    "LangevinMethod",
    "HMCMethod",
    "load_config",
    "resolve_config_path",
    "bundled_configs",
    "ConfigError",
]


class ConfigError(ValueError):
    """Invalid or missing configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TargetSection(_Strict):
    name: str
    params: dict = Field(default_factory=dict)


class VelocitySection(_Strict):
    step_size: PositiveFloat = 0.01
    num_steps: PositiveInt = 100
    precondition: bool = False
    smoothing: float = Field(0.99, gt=0, lt=1)
    tolerance: PositiveFloat = 1e-5
    n_particles: PositiveInt = 800
    chains: PositiveInt | None = None
    num_proposals: PositiveInt | None = None
    form: Literal["direct", "rescaled"] = "direct"
    warm_start: Literal["importance_sampling", "carry_over"] = "importance_sampling"
    step_cap: PositiveFloat | None = 0.5

    def build(self) -> VelocityEstimatorConfig:
        inner = LangevinConfig(self.step_size, self.num_steps, self.precondition, self.smoothing, self.tolerance)
        return VelocityEstimatorConfig(
            inner=inner,
            n_particles=self.n_particles,
            form=self.form,
            warm_start=self.warm_start,
            chains=self.chains,
            num_proposals=self.num_proposals,
            step_cap=self.step_cap,
        )


class SSIMethod(_Strict):
    name: Literal["ssi"]
    T0: float = Field(0.2, gt=0, lt=1)
    T_end: float = Field(0.99, gt=0, lt=1)
    M: PositiveInt = 100
    init_tau: PositiveFloat = 0.1
    init_steps: int = Field(100, ge=0)
    init_precondition: bool = False
    init_smoothing: float = Field(0.99, gt=0, lt=1)
    init_tolerance: PositiveFloat = 1e-5
    n_outer: PositiveInt = 1000
    block_size: PositiveInt = 128
    velocity: VelocitySection = Field(default_factory=VelocitySection)

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> FlowConfig:
        try:
            return FlowConfig(
                T0=self.T0,
                T_end=self.T_end,
                M=self.M,
                init_tau=self.init_tau,
                init_steps=self.init_steps,
                init_precondition=self.init_precondition,
                velocity=self.velocity.build(),
                n_outer=self.n_outer,
                block_size=self.block_size,
                init_smoothing=self.init_smoothing,
                init_tolerance=self.init_tolerance,
            )
        except ValueError as err:
            raise ValueError(str(err)) from None

    @property
    def n_samples(self) -> int:
        return self.n_outer


class LangevinMethod(_Strict):
    """ULA, MALA and preconditioned ULA baselines (one chain per particle)."""

    name: Literal["ula", "mala", "pula"]
    step_size: PositiveFloat
    num_steps: PositiveInt
    n_particles: PositiveInt = 1000
    smoothing: float = Field(0.99, gt=0, lt=1)
    tolerance: PositiveFloat = 1e-5
    init: Literal["gaussian", "origin"] = "gaussian"
    init_scale: PositiveFloat = 1.0
    block_size: PositiveInt = 256

    def langevin(self) -> LangevinConfig:
        return LangevinConfig(self.step_size, self.num_steps, self.name == "pula", self.smoothing, self.tolerance)

    @property
    def n_samples(self) -> int:
        return self.n_particles


class HMCMethod(_Strict):
    name: Literal["hmc"]
    step_size: PositiveFloat
    leapfrog_steps: PositiveInt = 100
    num_transitions: PositiveInt = 100
    n_particles: PositiveInt = 1000
    init: Literal["gaussian", "origin"] = "gaussian"
    init_scale: PositiveFloat = 1.0
    block_size: PositiveInt = 256

    def hmc(self) -> HmcConfig:
        return HmcConfig(self.step_size, self.leapfrog_steps, self.num_transitions)

    @property
    def n_samples(self) -> int:
        return self.n_particles


Method = Annotated[Union[SSIMethod, LangevinMethod, HMCMethod], Field(discriminator="name")]


class MetricsSection(_Strict):
    which: list[Literal["nll", "mmd", "w2", "modes"]] = Field(default_factory=lambda: ["nll", "mmd", "w2", "modes"])
    reference_size: PositiveInt | None = None
    reference_seed: int = 12345
    w2_subsample: PositiveInt = 1024
    w2_repeats: PositiveInt = 4
    mode_radius: PositiveFloat | None = None


class OutputSection(_Strict):
    directory: str | None = None
    checkpoint_every: int = Field(0, ge=0)


class AblationSection(_Strict):
    grid: list[float] = Field(default_factory=lambda: [0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    preconditioning: list[bool] = Field(default_factory=lambda: [False, True], min_length=1)


class ExperimentConfig(_Strict):
    seed: int = 0
    label: str | None = None
    target: TargetSection
    method: Method
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    output: OutputSection = Field(default_factory=OutputSection)
    ablation: AblationSection | None = None

    @model_validator(mode="after")
    def _check_ablation(self):
        if self.ablation is not None:
            if not isinstance(self.method, SSIMethod):
                raise ValueError("an ablation section requires method 'ssi'")
            for t in self.ablation.grid:
                if not 0.0 < t < self.method.T_end:
                    raise ValueError(f"ablation grid point {t} outside (0, T_end)")
        return self


_CONFIG_PACKAGE = "ssi_sampler.configs"


def bundled_configs() -> list[str]:
    """Names of the configs and config suites shipped with the package."""
    root = resources.files(_CONFIG_PACKAGE)
    names = []
    for entry in root.iterdir():
        if entry.name.endswith(".yaml"):
            names.append(entry.name[:-5])
        elif entry.is_dir() and not entry.name.startswith("__"):
            names.append(entry.name)
    return sorted(names)


def resolve_config_path(ref: str | Path) -> Path:
    """Return ``ref`` if it exists, else the bundled config or suite of that name."""
    path = Path(ref)
    if path.exists():
        return path
    root = Path(str(resources.files(_CONFIG_PACKAGE)))
    for candidate in (root / f"{ref}.yaml", root / str(ref)):
        if candidate.exists():
            return candidate
    raise ConfigError(f"no config file or bundled config named {str(ref)!r}")


def load_config(ref: str | Path) -> ExperimentConfig:
    """Parse and validate a config file (or bundled config name).

    Raises:
        ConfigError: On unreadable YAML or schema violations.
    """
    path = resolve_config_path(ref)
    if path.is_dir():
        raise ConfigError(f"{path} is a directory, expected a config file")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from None
    return parse_config(raw, source=str(path))


def parse_config(raw, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(f"{source}: {err}") from None
