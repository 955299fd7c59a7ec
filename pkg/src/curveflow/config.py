"""Run configuration: a JSON document with a ``schema_version`` field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .energy import ChaParams, FacetingParams, PerimeterPenalty, TwoPointKernel, random_polynomial_density
from .flow import FlowModel
from .geometry import ClosedCurve, CurveError, build_curve, resample_scaled_arclength
from .solver import NewtonSettings, StepController

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class RunConfig:
    model: dict[str, Any]
    shape: dict[str, Any]
    grid: int
    t_end: float
    sigma: float = 1e-4
    out: str = "run_out"
    snapshot_every: int = 10
    snapshot_interval: float | None = None
    gauge: str = "zero_mean_tangential"
    velocity_form: str = "gradient"
    jacobian_mode: str = "frozen_twopoint"
    seed: int = 0
    k0: float = 1e-5
    k_min: float = 1e-12
    k_max: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    stop_at_equilibrium: bool = False
    schema_version: int = SCHEMA_VERSION
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.grid < 8:
            raise ConfigError("grid must be at least 8")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be at least 1")
        if "kind" not in self.model:
            raise ConfigError("model block needs a 'kind'")
        if "kind" not in self.shape:
            raise ConfigError("shape block needs a 'kind'")
        if self.shape["kind"] == "file" and not Path(self.shape.get("path", "")).is_file():
            raise ConfigError(f"shape file {self.shape.get('path')!r} does not exist")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **kw: Any) -> RunConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # builders ---------------------------------------------------------------

    def initial_curve(self) -> ClosedCurve:
        shape = dict(self.shape)
        shape.setdefault("n", self.grid)
        if shape["kind"] != "file":
            shape["n"] = self.grid
        try:
            curve = build_curve(shape)
        except CurveError as exc:
            raise ConfigError(str(exc)) from None
        if curve.n_points != self.grid:
            curve = resample_scaled_arclength(curve, n_out=self.grid)
        return curve

    def flow_model(self, initial_length: float) -> FlowModel:
        return model_from_block(self.model, initial_length, self.gauge, self.velocity_form)

    def controller(self) -> StepController:
        return StepController(k=self.k0, sigma=self.sigma, k_min=self.k_min, k_max=self.k_max)

    def newton(self) -> NewtonSettings:
        return NewtonSettings(tol=self.newton_tol, max_iter=self.newton_max_iter, jacobian_mode=self.jacobian_mode)


def model_from_block(block: dict[str, Any], initial_length: float, gauge: str, velocity_form: str) -> FlowModel:
    """Build a flow model; lengths default to the initial curve length."""
    b = dict(block)
    kind = b.pop("kind")
    kw = {"gauge": gauge, "velocity_form": velocity_form}
    try:
        if kind == "canham_helfrich":
            return FlowModel.canham_helfrich(float(b.get("beta", 0.0)), **kw)
        if kind == "faceting":
            params = FacetingParams(
                alpha=float(b["alpha"]),
                beta=float(b["beta"]),
                kappa_star=float(b["kappa_star"]),
                l_star=float(b.get("l_star", initial_length)),
                well_scale=float(b.get("well_scale", 1.0)),
            )
            return FlowModel.faceting_model(params, **kw)
        if kind == "cha":
            kernel = TwoPointKernel(
                a0=float(b["a0"]),
                ell_star=float(b["ell_star"]),
                a=float(b.get("a", 1.0)),
                cutoff_radius=b.get("cutoff_radius"),
            )
            params = ChaParams(
                kernel=kernel,
                epsilon=float(b["epsilon"]),
                beta=float(b["beta"]),
                rho=float(b.get("rho", 1.0)),
                gamma0_length=float(b.get("gamma0_length", initial_length)),
                twopoint_method=str(b.get("twopoint_method", "auto")),
            )
            return FlowModel.cha_model(params, **kw)
        if kind == "generic":
            density = random_polynomial_density(int(b.get("seed", 0)), float(b.get("scale", 0.3)))
            pen = PerimeterPenalty(float(b.get("beta", 0.0)), float(b.get("l_star", initial_length)))
            return FlowModel.generic_model(density, pen, **kw)
    except KeyError as exc:
        raise ConfigError(f"model '{kind}' is missing parameter {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown model kind {kind!r}")
