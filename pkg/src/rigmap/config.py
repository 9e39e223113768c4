"""Run configuration, read from and written to a sectioned INI file.

Nested values use dotted keys, e.g. ``intrinsics.fx`` in ``[world]`` or
``odometry.rotation`` in ``[pgo]``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any

from .anchors import MappingConfig
from .correction import CorrectionConfig
from .intrinsics import BankConfig
from .pgo import PgoConfig
from .simulator import DistortionConfig, WorldConfig
from .submaps import PipelineConfig

ABLATIONS = {
    "optimization": "w/o Optimization",
    "pose-correction": "w/o Pose Correction",
    "rotation-correction": "w/o Rotation Corr.",
    "translation-correction": "w/o Translation Corr.",
    "scale-rectification": "w/o Scale Rectification",
    "local-suppression": "w/o Local Suppression",
    "adaptive-fusion": "w/o Adaptive Fusion",
    "non-linear-align": "w/o Non-Linear Align",
}


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    out: str = "out"
    alignment: str = "sim3"
    optimize: bool = True
    correct_poses: bool = True
    rectify_scale: bool = True
    scale_window: int = 100
    scale_stride: int = 5
    ablations: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    pgo: PgoConfig = field(default_factory=PgoConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    run: RunOptions = field(default_factory=RunOptions)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            world=replace(self.world, seed=seed),
            distortion=replace(self.distortion, seed=seed),
            run=replace(self.run, seed=seed),
        )

    def with_ablation(self, name: str) -> "RunConfig":
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        cfg = replace(self, run=replace(self.run, ablations=tuple(self.run.ablations) + (name,)))
        if name == "optimization":
            return replace(cfg, run=replace(cfg.run, optimize=False))
        if name == "pose-correction":
            return replace(cfg, run=replace(cfg.run, correct_poses=False))
        if name == "rotation-correction":
            return replace(cfg, correction=replace(cfg.correction, rotation=False))
        if name == "translation-correction":
            return replace(cfg, correction=replace(cfg.correction, translation=False))
        if name == "scale-rectification":
            return replace(cfg, run=replace(cfg.run, rectify_scale=False))
        if name == "local-suppression":
            return replace(cfg, mapping=replace(cfg.mapping, suppression=False))
        if name == "adaptive-fusion":
            return replace(cfg, mapping=replace(cfg.mapping, adaptive_fusion=False))
        return replace(cfg, mapping=replace(cfg.mapping, nonlinear=False))

    def with_sync(self, sync: bool, offset: float | None = None) -> "RunConfig":
        if offset is None:
            offset = 0.0 if sync else 0.5 * self.world.frame_period
        return replace(
            self,
            pipeline=replace(self.pipeline, sync=sync),
            world=replace(self.world, assistant_offset=0.0 if sync else offset),
        )


def _flatten(obj, prefix="") -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(v):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_like(text: str, default: Any, name: str):
    t = text.strip()
    if isinstance(default, bool):
        if t.lower() in ("1", "true", "yes", "on"):
            return True
        if t.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float):
        return float(t)
    if isinstance(default, tuple) or default is None:
        if t.lower() in ("none", ""):
            return () if isinstance(default, tuple) else None
        parts = [p.strip() for p in t.split(",") if p.strip()]
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            return tuple(parts)
    return t


def _set_path(obj, path: list, value):
    head = path[0]
    if not any(f.name == head for f in fields(obj)):
        raise KeyError(head)
    if len(path) == 1:
        return replace(obj, **{head: value})
    return replace(obj, **{head: _set_path(getattr(obj, head), path[1:], value)})


def to_ini(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        cp[f.name] = {k: _format(v) for k, v in _flatten(section).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig() if base is None else base
    cp = configparser.ConfigParser()
    cp.read_string(text)
    for section in cp.sections():
        if not any(f.name == section for f in fields(cfg)):
            raise ValueError(f"unknown config section [{section}]")
        obj = getattr(cfg, section)
        flat = _flatten(obj)
        for key, raw in cp[section].items():
            if key not in flat:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            value = _parse_like(raw, flat[key], f"{section}.{key}")
            obj = _set_path(obj, key.split("."), value)
        cfg = replace(cfg, **{section: obj})
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return from_ini(fh.read())


def all_keys() -> list:
    cfg = RunConfig()
    return [f"{f.name}.{k}" for f in fields(cfg) for k in _flatten(getattr(cfg, f.name))]


__all__ = ["ABLATIONS", "RunConfig", "RunOptions", "all_keys", "from_ini", "load_config", "to_ini"]
