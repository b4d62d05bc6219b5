"""Plain-text ``key = value`` run configuration.

Keys are namespaced by the config object they feed: ``mt.*`` (MT training),
``model.*`` (MT architecture), ``aug.*`` (augmentation), ``fvr.*``
(recognition baseline) and ``synth.*`` (synthetic data). Unprefixed keys are
the seed, the thread count and paths. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .fvreval import FVRConfig
from .model import MTConfig
from .mtaug import AugConfig
from .mttrain import TrainConfig
from .veinsim import PoseRange


class ConfigError(ValueError):
    """Bad configuration or usage (exit code 1)."""


PATH_KEYS = ("data", "checkpoint", "out", "scores", "log")


@dataclass
class SynthConfig:
    classes: int = 20
    samples: int = 10
    pose: tuple = (6.0, 3.0, 2.0, 20.0)
    test_pose: tuple | None = None

    def pose_ranges(self) -> tuple[PoseRange, PoseRange | None]:
        test = PoseRange(*self.test_pose) if self.test_pose is not None else None
        return PoseRange(*self.pose), test


@dataclass
class RunConfig:
    seed: int = 0
    threads: int | None = None
    paths: dict = field(default_factory=dict)
    mt: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)
    aug: AugConfig = field(default_factory=AugConfig)
    fvr: FVRConfig = field(default_factory=FVRConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.mt, seed=self.seed)

    def fvr_config(self) -> FVRConfig:
        return dataclasses.replace(self.fvr, seed=self.seed)

    def model_config(self, image_shape) -> MTConfig:
        return MTConfig(**{"num_kp": self.mt.num_kp, "image_shape": tuple(image_shape), **self.model,
                           "seed": self.seed})

    def path(self, key: str) -> Path | None:
        v = self.paths.get(key)
        return Path(v) if v is not None else None


_SECTIONS = {"mt": (TrainConfig, {"seed"}), "model": (MTConfig, {"seed", "num_kp", "image_shape"}),
             "aug": (AugConfig, set()), "fvr": (FVRConfig, {"seed"}), "synth": (SynthConfig, set())}


def _field_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _convert(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _convert(raw, args[0], key)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is tuple or origin is tuple:
            return tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                         for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"{source}:{no}: duplicate key {k!r}")
        out[k] = v
    return out


def build(values: dict[str, str]) -> RunConfig:
    """RunConfig from raw string values; raises ConfigError on unknown keys or bad values."""
    per_section: dict[str, dict] = {s: {} for s in _SECTIONS}
    rc = RunConfig()
    for key, raw in values.items():
        if key == "seed":
            rc.seed = _convert(raw, int, key)
        elif key == "threads":
            rc.threads = _convert(raw, int, key)
        elif key in PATH_KEYS:
            rc.paths[key] = raw
        elif "." in key and key.split(".", 1)[0] in _SECTIONS:
            sec, name = key.split(".", 1)
            cls, hidden = _SECTIONS[sec]
            types_ = _field_types(cls)
            if name not in types_ or name in hidden:
                raise ConfigError(f"unknown config key {key!r}")
            per_section[sec][name] = _convert(raw, types_[name], key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        rc.mt = TrainConfig(**per_section["mt"])
        rc.aug = AugConfig(**per_section["aug"])
        rc.fvr = FVRConfig(**per_section["fvr"])
        rc.synth = SynthConfig(**per_section["synth"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rc.model = per_section["model"]
    for name in ("pose", "test_pose"):
        v = getattr(rc.synth, name)
        if v is not None and len(v) != 4:
            raise ConfigError(f"synth.{name} needs 4 values (tx ty rot roll), got {v}")
    if rc.threads is not None and rc.threads < 1:
        raise ConfigError("threads must be >= 1")
    return rc


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return build(parse_lines(p.read_text(), str(p)))
