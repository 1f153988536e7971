"""Pipeline configuration: YAML in, frozen dataclasses out.

Every key has a default, so an empty file is a valid (single-nucleus)
configuration. Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigurationError, QpiError
from .fields import Grid
from .holo_sim import PHANTOM_CLASSES, OpticalConfig, PhantomSpec
from .recon import ReconConfig
from .segment import BT601_WEIGHTS


@dataclass(frozen=True)
class SimulationConfig:
    hologram_noise_sigma: float = 0.0
    calibration_noise_sigma: float = 0.0
    brightfield_noise_sigma: float = 2.0

    def __post_init__(self):
        if min(self.hologram_noise_sigma, self.calibration_noise_sigma, self.brightfield_noise_sigma) < 0:
            raise ConfigurationError("noise levels must be non-negative")


@dataclass(frozen=True)
class SegmentationConfig:
    window: int = 3
    init_percentiles: tuple[float, float] = (10.0, 90.0)
    luma_weights: tuple[float, float, float] = BT601_WEIGHTS

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError("median window must be odd and >= 3")
        lo, hi = self.init_percentiles
        if not 0 <= lo < hi <= 100:
            raise ConfigurationError("init_percentiles must satisfy 0 <= lo < hi <= 100")


@dataclass(frozen=True)
class AnalysisConfig:
    components: int = 2
    stability_threshold: float = 0.005
    max_drop_fraction: float = 0.2

    def __post_init__(self):
        if self.components < 1:
            raise ConfigurationError("components must be >= 1")
        if not 0 <= self.max_drop_fraction < 1:
            raise ConfigurationError("max_drop_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class PopulationEntry:
    """One phantom class and the ranges its per-nucleus parameters are drawn from.

    Ranges are ``[low, high]`` and sampled uniformly; ``color_jitter`` is the
    standard deviation (counts) of an independent per-channel shift of the
    nucleus color.
    """

    class_label: str = "smooth-small"
    count: int = 1
    nucleus_radius: tuple[float, float] = (32.0, 32.0)
    peak_phase: tuple[float, float] = (2.0, 2.0)
    texture_amplitude: tuple[float, float] = (0.0, 0.0)
    texture_correlation_length: float = 3.0
    nucleus_color: tuple[float, float, float] = (95.0, 70.0, 150.0)
    background_color: tuple[float, float, float] = (225.0, 215.0, 235.0)
    color_jitter: float = 0.0
    inner_transmittance: float = 0.85

    def __post_init__(self):
        if self.class_label not in PHANTOM_CLASSES:
            raise ConfigurationError(f"unknown class label {self.class_label!r}; expected one of {PHANTOM_CLASSES}")
        if self.count < 1:
            raise ConfigurationError(f"count must be >= 1 for {self.class_label}")
        for name in ("nucleus_radius", "peak_phase", "texture_amplitude"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range is empty: [{lo}, {hi}]")
        if self.color_jitter < 0:
            raise ConfigurationError("color_jitter must be non-negative")
        # validate the extremes through PhantomSpec's own invariants
        try:
            for pick in (0, 1):
                PhantomSpec(class_label=self.class_label, nucleus_radius=self.nucleus_radius[pick],
                            peak_phase=self.peak_phase[pick], texture_amplitude=self.texture_amplitude[pick],
                            texture_correlation_length=self.texture_correlation_length,
                            nucleus_color=self.nucleus_color, background_color=self.background_color,
                            inner_transmittance=self.inner_transmittance)
        except QpiError as exc:
            raise ConfigurationError(f"population entry {self.class_label}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    optical: OpticalConfig = field(default_factory=OpticalConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    population: tuple[PopulationEntry, ...] = (PopulationEntry(),)
    seed: int = 0
    threads: int = 1
    output_dir: str = "run"

    def __post_init__(self):
        if not self.population:
            raise ConfigurationError("population must hold at least one entry")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @property
    def total_count(self) -> int:
        return sum(e.count for e in self.population)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        """Digest of everything that affects results (``output_dir`` and ``threads`` do not)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _convert(tp, value, where: str):
    origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(args[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        args = get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigurationError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (QpiError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def config_from_dict(data: Optional[dict]) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(data)


__all__ = ["AnalysisConfig", "Grid", "PipelineConfig", "PopulationEntry", "SegmentationConfig",
           "SimulationConfig", "config_from_dict", "load_config"]
