"""Pipeline configuration: an INI-style key=value file with one section per module.

Example::

    [pipeline]
    manifest = data/manifest.txt
    out = run1
    seed = 0

    [slic]
    size = 8

    [refine]
    eta = 0.5
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .refine import EnergyParams
from .superpixel import InvalidParams, SlicParams
from .sweep import SweepParams

STAGES = ("segment", "init", "refine", "fuse", "eval")
# numeric stage ids used in artifact names (depth_v{N}_stage{S}.pfm)
STAGE_ID = {name: i for i, name in enumerate(STAGES)}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path | None = None
    out: Path = Path("out")
    slic: SlicParams = SlicParams()
    sweep: SweepParams = SweepParams()
    energy: EnergyParams = EnergyParams()
    fusion_epsilon: float | None = None  # None -> sweep inverse-depth step
    seed: int = 0
    stages: tuple[str, ...] = STAGES
    workers: int = 1
    max_neighbors: int | None = None
    dump_every: int = 0
    resume: bool = False

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.fusion_epsilon is not None and not self.fusion_epsilon > 0:
            raise ConfigError("fusion epsilon must be positive")
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise ConfigError("max_neighbors must be >= 1")
        if self.dump_every < 0:
            raise ConfigError("dump_every must be >= 0")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s): {', '.join(bad)}")
        if not self.stages:
            raise ConfigError("no stages selected")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto", "all") else int(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _stages(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.replace(" ", ",").split(",") if x.strip())


# (section, key) -> (target, attribute, converter)
KEYS = {
    ("pipeline", "manifest"): ("top", "manifest", Path),
    ("pipeline", "out"): ("top", "out", Path),
    ("pipeline", "seed"): ("top", "seed", int),
    ("pipeline", "stages"): ("top", "stages", _stages),
    ("pipeline", "workers"): ("top", "workers", int),
    ("pipeline", "max_neighbors"): ("top", "max_neighbors", _opt_int),
    ("pipeline", "resume"): ("top", "resume", _bool),
    ("slic", "size"): ("slic", "size", int),
    ("slic", "compactness"): ("slic", "compactness", float),
    ("slic", "iterations"): ("slic", "iterations", int),
    ("sweep", "levels"): ("sweep", "levels", int),
    ("sweep", "tssd_threshold"): ("sweep", "tssd_threshold", float),
    ("refine", "iterations"): ("energy", "iterations", int),
    ("refine", "sigma"): ("energy", "sigma", _opt_float),
    ("refine", "alpha"): ("energy", "alpha", float),
    ("refine", "eta"): ("energy", "eta", float),
    ("refine", "kernel_size"): ("energy", "size_init", _opt_float),
    ("refine", "kernel_step"): ("energy", "steps_init", int),
    ("refine", "occlusion_band"): ("energy", "occlusion_band", float),
    ("refine", "in_view_similarity"): ("energy", "in_view_similarity", _bool),
    ("refine", "use_smoothness"): ("energy", "use_smoothness", _bool),
    ("refine", "use_consistency"): ("energy", "use_consistency", _bool),
    ("refine", "dump_every"): ("top", "dump_every", int),
    ("fusion", "epsilon"): ("top", "fusion_epsilon", _opt_float),
}


def build_config(values: dict[tuple[str, str], str], base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply string overrides keyed by (section, key) on top of ``base``."""
    base = base or PipelineConfig()
    parts: dict[str, dict] = {"top": {}, "slic": {}, "sweep": {}, "energy": {}}
    for (sec, key), raw in values.items():
        spec = KEYS.get((sec, key))
        if spec is None:
            raise ConfigError(f"unknown config key [{sec}] {key}")
        target, attr, conv = spec
        try:
            parts[target][attr] = conv(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    # tssd threshold is shared by the sweep and the energy
    if "tssd_threshold" in parts["sweep"]:
        parts["energy"]["tssd_threshold"] = parts["sweep"]["tssd_threshold"]
    try:
        slic = replace(base.slic, **parts["slic"])
        sweep = replace(base.sweep, **parts["sweep"])
        energy = replace(base.energy, **parts["energy"])
        return replace(base, slic=slic, sweep=sweep, energy=energy, **parts["top"])
    except (ValueError, InvalidParams, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def read_config_file(path) -> dict[tuple[str, str], str]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    root = Path(path).parent
    for sec in parser.sections():
        for key, value in parser.items(sec):
            if (sec, key) in (("pipeline", "manifest"), ("pipeline", "out")):
                value = str(root / value)
            out[(sec, key)] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    values = read_config_file(path) if path is not None else {}
    values.update(overrides or {})
    return build_config(values)


def dump_config(cfg: PipelineConfig) -> str:
    """Render ``cfg`` back to the file format (all keys, resolved defaults kept as 'auto')."""
    def fmt(v):
        if v is None:
            return "auto"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ",".join(v)
        return str(v)

    src = {"top": cfg, "slic": cfg.slic, "sweep": cfg.sweep, "energy": cfg.energy}
    lines, current = [], None
    for (sec, key), (target, attr, _) in KEYS.items():
        if sec != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{sec}]")
            current = sec
        lines.append(f"{key} = {fmt(getattr(src[target], attr))}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "PipelineConfig", "STAGES", "STAGE_ID", "build_config",
           "load_config", "read_config_file", "dump_config", "KEYS"]
