"""Pipeline configuration: nested dataclasses with JSON (de)serialisation and
dotted-path overrides so CLI flags can mirror config keys."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cpd import CpdParams
from .radar_model import ChirpParams
from .scene_synth import BumpSpec, SceneConfig, TorsoSpec


@dataclass
class CpdConfig:
    params: CpdParams = field(default_factory=CpdParams)
    template_points: int = 400
    warm_start: bool = True
    k_neighbors: int = 16
    # Variance prior for pre-aligned (calibrated) clouds; None keeps the
    # mean-pairwise-distance annealing start.
    sigma2_init: float | None = None


@dataclass
class EmConfig:
    a0: float = 0.019               # m, eye-window radius (~5 wavelengths)
    shadowing: bool = True
    moment: float = 1.0             # A*m
    dipole_axis: tuple = (1.0, 0.0, 0.0)


@dataclass
class RadarConfig:
    chirp: ChirpParams = field(default_factory=ChirpParams)
    n_tx: int = 3
    tx_pitch: float = 7.6e-3
    n_rx: int = 4
    rx_pitch: float = 1.9e-3
    # Array center offset relative to the depth camera at the origin.
    array_origin: tuple = (2.80e-2, -3.40e-2, 1.38e-1)
    axis: tuple = (1.0, 0.0, 0.0)
    theta_scat: float = 0.25
    theta_thresh: float = 0.25
    eta_re: float = -1.0
    eta_im: float = 0.0

    @property
    def eta(self) -> complex:
        return complex(self.eta_re, self.eta_im)


@dataclass
class DspConfig:
    window: str = "hann"
    zero_pad: int = 4
    theta_span_deg: float = 45.0
    n_theta: int = 181
    smooth_window_s: float = 0.3
    detrend_window_s: float = 10.0
    range_min: float = 0.3
    range_max: float = 1.5


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    second_bump: BumpSpec | None = None
    cpd: CpdConfig = field(default_factory=CpdConfig)
    em: EmConfig = field(default_factory=EmConfig)
    radar: RadarConfig = field(default_factory=RadarConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    mode: str = "both"              # conventional | proposed | both
    t_obs_s: float | None = None    # defaults to the scene duration
    max_lag_s: float = 0.5
    artifact_level: str = "full"    # full | light

    def __post_init__(self):
        if self.mode not in ("conventional", "proposed", "both"):
            raise ValueError("mode must be conventional, proposed or both")
        if self.artifact_level not in ("full", "light"):
            raise ValueError("artifact_level must be full or light")

    @property
    def observation_duration(self) -> float:
        return self.scene.duration_s if self.t_obs_s is None else min(
            self.t_obs_s, self.scene.duration_s)


_NESTED = {
    "scene": SceneConfig, "second_bump": BumpSpec, "cpd": CpdConfig,
    "em": EmConfig, "radar": RadarConfig, "dsp": DspConfig,
    "torso": TorsoSpec, "breathing": BumpSpec, "params": CpdParams,
    "chirp": ChirpParams,
}


def _from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        if f.name in _NESTED and isinstance(val, dict):
            kwargs[f.name] = _from_dict(_NESTED[f.name], val)
        elif isinstance(val, list):
            kwargs[f.name] = tuple(val)
        else:
            kwargs[f.name] = val
    return cls(**kwargs)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> PipelineConfig:
    return _from_dict(PipelineConfig, data)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def apply_override(cfg: PipelineConfig, dotted: str, raw_value: str) -> None:
    """Set a nested config field by its JSON path, e.g.
    ``scene.breathing.amplitude=0.003``. Values parse as JSON with a plain
    string fallback."""
    parts = dotted.split(".")
    obj = cfg
    for name in parts[:-1]:
        if not hasattr(obj, name):
            raise KeyError(f"unknown config path segment '{name}' in '{dotted}'")
        nxt = getattr(obj, name)
        if nxt is None and name in _NESTED:
            nxt = _NESTED[name]()
            setattr(obj, name, nxt)
        obj = nxt
    leaf = parts[-1]
    if not hasattr(obj, leaf):
        raise KeyError(f"unknown config field '{leaf}' in '{dotted}'")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    if isinstance(value, list):
        value = tuple(value)
    setattr(obj, leaf, value)
