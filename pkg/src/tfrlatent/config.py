"""Run configuration files.

A run is described by one TOML file::

    seed = 1
    output_dir = "runs/sample_C"
    threads = 1

    [simulate]
    beta = 3.33
    gamma = 10.5
    sigma_m = 0.15
    sigma_w = 0.045
    v_star = 0.3
    alpha = -1.27
    m_l = 5.736

    [fit]
    model = "forward"
    grid_nodes = 256
    [fit.bounds]
    beta = [2.5, 4.5]

    [debias]
    sigma_m_user = 0.15

Every key is optional. Unknown keys are rejected so that typos do not pass
silently, and :meth:`RunConfig.to_dict` lists every resolved value,
including defaults, for the provenance record.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from tfrlatent.core import ModelParams, SelectionKind, SelectionSpec
from tfrlatent.debias import MAX_ITERATIONS, STOP_TOLERANCE
from tfrlatent.fitting import FitConfig
from tfrlatent.likelihood import ModelKind
from tfrlatent.simulate import SimConfig


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class SimulateSection:
    beta: float = 3.33
    gamma: float = 10.5
    sigma_m: float = 0.15
    sigma_w: float = 0.045
    v_star: float = 0.3
    alpha: float = -1.27
    selection: str = "step"
    m_l: float = 5.736
    cz_min: float = 4000.0
    cz_max: float = 18000.0
    delta_cz: float = 100.0
    scale_a: float = 1.3546e-3
    density_n: float = -1.0

    def selection_spec(self) -> SelectionSpec:
        return SelectionSpec(SelectionKind(self.selection), self.m_l)

    def truth(self) -> ModelParams:
        return ModelParams(self.beta, self.gamma, self.sigma_m, self.sigma_w, self.v_star,
                           self.alpha)

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(self.truth(), cz_min=self.cz_min, cz_max=self.cz_max,
                         delta_cz=self.delta_cz, scale_a=self.scale_a,
                         density_n=self.density_n, selection=self.selection_spec(),
                         seed=seed)


@dataclass
class FitSection:
    model: str = "forward"
    grid_nodes: int | None = None
    inc_min_deg: float = 1.0
    n_walkers: int | None = None
    max_steps: int = 50_000
    check_every: int = 200
    bounds: dict[str, list[float]] = field(default_factory=dict)

    def fit_config(self, kind: str | None, seed: int, threads: int,
                   grid_nodes: int | None = None) -> FitConfig:
        return FitConfig(ModelKind.parse(kind or self.model),
                         n_nodes=grid_nodes or self.grid_nodes,
                         inc_min_deg=self.inc_min_deg,
                         bounds={k: tuple(v) for k, v in self.bounds.items()},
                         n_walkers=self.n_walkers, seed=seed, max_steps=self.max_steps,
                         check_every=self.check_every, threads=threads)


@dataclass
class DebiasSection:
    sigma_m_user: float = 0.0
    tolerance: float = STOP_TOLERANCE
    max_iterations: int = MAX_ITERATIONS


@dataclass
class RunConfig:
    """Resolved configuration of a command-line run."""

    seed: int = 0
    output_dir: str = "."
    threads: int = 1
    simulate: SimulateSection = field(default_factory=SimulateSection)
    fit: FitSection = field(default_factory=FitSection)
    debias: DebiasSection = field(default_factory=DebiasSection)
    source: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.debias.sigma_m_user < 0:
            raise ConfigError("debias.sigma_m_user must be >= 0")
        try:
            ModelKind.parse(self.fit.model)
            SelectionKind(self.simulate.selection)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any], source: str | None = None) -> "RunConfig":
        data = dict(data)
        sections = {"simulate": SimulateSection, "fit": FitSection, "debias": DebiasSection}
        kwargs: dict[str, Any] = {}
        for key, typ in sections.items():
            kwargs[key] = _build(typ, data.pop(key, {}), key)
        kwargs.update(_check_keys(cls, data, "top level", exclude=set(sections) | {"source"}))
        try:
            return cls(**kwargs, source=source)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _check_keys(typ, data: dict, where: str, exclude=frozenset()) -> dict:
    names = {f.name for f in dataclasses.fields(typ)} - set(exclude)
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return data


def _build(typ, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    try:
        return typ(**_check_keys(typ, data, f"[{where}]"))
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration.

    Raises
    ------
    ConfigError
        If the file is missing, unparsable or has invalid values. The message
        names the path.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return RunConfig.from_dict(data, source=str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
