"""Experiment configuration: flat JSON documents checked against a bundled schema.

Inputs are annualized; :meth:`ExperimentConfig.market` converts them to
per-step quantities with ``dt = 1 / steps_per_year`` (means and variances
scale with ``dt``, as does the risk-free rate).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema

from .estimation import EstimatorState, ModelParams, ParameterSpace
from .quantization import Quantizer, build_normal_quantizer
from .solver import MarketConfig


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("configs/schema.json").read_text())


def bundled_config(name: str) -> Path:
    """Path of a shipped config (``case1.json`` or ``case2.json``)."""
    return Path(str(resources.files(__package__).joinpath("configs", name)))


@dataclass(frozen=True)
class ExperimentConfig:
    case: str
    mu_star: float
    sigma_star: float
    r: float
    v0: float
    gamma: float
    alpha: float
    mu_bounds: tuple[float, float]
    c0_mean: float
    horizons: tuple[float, ...]
    steps_per_year: int
    n_paths: int
    n_grid_paths: int
    actions: tuple[float, ...]
    seed: int
    var_bounds: tuple[float, float] | None = None
    c0_sigma: float | None = None
    n0: int = 0
    quantizer_size: int = 10
    region_resolution: int = 9
    ellipse_angles: int = 12
    ellipse_shells: int = 6
    theta_resolution: int = 9
    family_mu_points: int = 201
    family_var_points: int = 51
    lookup: str = "nearest"
    out_dir: str | None = None

    def __post_init__(self):
        if not self.horizons:
            raise ConfigError("horizons: at least one horizon is required")
        if self.case == "II":
            if self.var_bounds is None:
                raise ConfigError("var_bounds: required in case II")
            if self.c0_sigma is None:
                raise ConfigError("c0_sigma: required in case II")
        lo, hi = self.mu_bounds
        if not lo <= self.mu_star <= hi:
            raise ConfigError("mu_star: true mean lies outside mu_bounds")
        if not lo <= self.c0_mean <= hi:
            raise ConfigError("c0_mean: initial guess lies outside mu_bounds")
        if self.case == "II":
            vlo, vhi = self.var_bounds
            if not vlo <= self.sigma_star**2 <= vhi:
                raise ConfigError("sigma_star: true variance lies outside var_bounds")
        for T in self.horizons:
            steps = T * self.steps_per_year
            if abs(steps - round(steps)) > 1e-9:
                raise ConfigError(f"horizons: {T} years is not a whole number of steps")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_year

    def steps(self, horizon: float) -> int:
        return int(round(horizon * self.steps_per_year))

    @property
    def space(self) -> ParameterSpace:
        dt = self.dt
        if self.case == "I":
            var = self.sigma_star**2 * dt
            return ParameterSpace(self.mu_bounds[0] * dt, self.mu_bounds[1] * dt, var, var)
        return ParameterSpace(self.mu_bounds[0] * dt, self.mu_bounds[1] * dt,
                              self.var_bounds[0] * dt, self.var_bounds[1] * dt)

    @property
    def true_params(self) -> ModelParams:
        return ModelParams(self.mu_star * self.dt, self.sigma_star**2 * self.dt)

    @property
    def initial_state(self) -> EstimatorState:
        dt = self.dt
        sigma0 = self.sigma_star if self.case == "I" else self.c0_sigma
        return EstimatorState(self.c0_mean * dt, sigma0**2 * dt, self.n0)

    @cached_property
    def quantizer(self) -> Quantizer:
        return build_normal_quantizer(self.quantizer_size)

    def market(self, horizon: float) -> MarketConfig:
        try:
            return MarketConfig(
                r=self.r * self.dt,
                dt=self.dt,
                gamma=self.gamma,
                actions=self.actions,
                horizon_steps=self.steps(horizon),
                alpha=self.alpha,
                quantizer=self.quantizer,
                space=self.space,
                true_params=self.true_params,
                case=self.case,
                c0=self.initial_state,
                v0=self.v0,
                region_resolution=self.region_resolution,
                ellipse_angles=self.ellipse_angles,
                ellipse_shells=self.ellipse_shells,
                theta_resolution=self.theta_resolution,
                lookup=self.lookup,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def family_grid(self):
        return self.space.grid(self.family_mu_points, self.family_var_points)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items() if v is not None}


def config_from_dict(raw: dict, seed: int | None = None) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    data = dict(raw)
    if seed is not None:
        data["seed"] = seed
    for key in ("mu_bounds", "var_bounds", "horizons", "actions"):
        if key in data:
            data[key] = tuple(float(x) for x in data[key])
    cfg = ExperimentConfig(**data)
    cfg.market(max(cfg.horizons))  # surface MarketConfig invariants early
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw, seed)
