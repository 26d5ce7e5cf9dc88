"""Pipeline configuration: a flat key-value text format with one section
per module, round-tripping exactly."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields

__all__ = ["PipelineConfig", "config_to_text", "config_from_text", "config_hash",
           "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # grid
    grid_h: int = 50
    grid_w: int = 50
    grid_resolution: float = 1.0
    channels: int = 32
    # camera
    image_width: int = 96
    image_height: int = 64
    hfov_deg: float = 80.0
    camera_height: float = 1.6
    # encoder
    encoder_layers: int = 6
    attn_heads: int = 2
    attn_points: int = 4
    # fusion
    v2x_enabled: bool = True
    temporal_first: bool = True
    gate_forced: bool = False
    gate_value: float = 1.0
    # tracking
    detector: str = "learned"         # learned | oracle
    n_det_queries: int = 16
    det_layers: int = 3
    tau_det: float = 0.5
    r_gate: float = 3.0
    max_coast: int = 2
    # motion
    modes: int = 3
    horizon: int = 6
    nominal_speed: float = 5.0
    # accident
    safety_threshold: float = 0.5
    mode_policy: str = "top1"         # top1 | any
    time_tol: int = 1
    dist_tol: float = 2.0
    # run
    seed: int = 0

    def validate(self):
        if self.grid_h < 2 or self.grid_w < 2 or self.grid_resolution <= 0:
            raise ConfigError("bad grid geometry")
        if self.channels % self.attn_heads != 0:
            raise ConfigError("channels must divide by attention heads")
        if self.detector not in ("learned", "oracle"):
            raise ConfigError(f"unknown detector mode {self.detector!r}")
        if self.mode_policy not in ("top1", "any"):
            raise ConfigError(f"unknown mode policy {self.mode_policy!r}")
        if self.modes < 1 or self.horizon < 1:
            raise ConfigError("modes and horizon must be >= 1")
        if self.safety_threshold < 0:
            raise ConfigError("safety threshold must be non-negative")
        return self


_SECTIONS = {
    "grid": ["grid_h", "grid_w", "grid_resolution", "channels"],
    "camera": ["image_width", "image_height", "hfov_deg", "camera_height"],
    "encoder": ["encoder_layers", "attn_heads", "attn_points"],
    "fusion": ["v2x_enabled", "temporal_first", "gate_forced", "gate_value"],
    "tracking": ["detector", "n_det_queries", "det_layers", "tau_det",
                 "r_gate", "max_coast"],
    "motion": ["modes", "horizon", "nominal_speed"],
    "accident": ["safety_threshold", "mode_policy", "time_tol", "dist_tol"],
    "run": ["seed"],
}

_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, raw: str):
    ftype = _TYPES[name]
    raw = raw.strip()
    if ftype == "bool":
        if raw not in ("on", "off"):
            raise ConfigError(f"{name}: expected on/off, got {raw!r}")
        return raw == "on"
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None
    return raw


def config_to_text(cfg: PipelineConfig) -> str:
    out = io.StringIO()
    for section, names in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for n in names:
            out.write(f"{n} = {_fmt(getattr(cfg, n))}\n")
        out.write("\n")
    return out.getvalue()


def config_from_text(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    cfg = PipelineConfig()
    for section, names in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(cfg, key, _parse(key, raw))
    return cfg.validate()


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()
