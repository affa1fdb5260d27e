"""``key=value`` configuration files.

One assignment per line, ``#`` starts a comment, list values are
comma-separated.  Typed views validate ranges when they are built so a bad
file fails before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .render import parse_trajectory
from .vocab import ACTIONS, APPEARANCES, SCENES, ConfigurationError, check


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def format_config(mapping) -> str:
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def split_list(value: str) -> list[str]:
    items = [v.strip() for v in value.split(",")]
    return [v for v in items if v]


def parse_resolution(value) -> tuple[int, int]:
    """``32`` or ``48x32`` (width x height)."""
    if isinstance(value, (tuple, list)):
        w, h = (int(v) for v in value)
    else:
        w_s, _, h_s = str(value).lower().partition("x")
        try:
            w = int(w_s)
            h = int(h_s) if h_s else w
        except ValueError as exc:
            raise ConfigurationError(f"bad resolution {value!r}") from exc
    if w < 2 or h < 2 or w % 2 or h % 2:
        raise ConfigurationError(f"resolution {w}x{h} must be even and at least 2")
    return w, h


def _coerce(name: str, kind, raw):
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "resolution":
            return parse_resolution(raw)
        if kind == "list":
            return tuple(split_list(raw)) if isinstance(raw, str) else tuple(raw)
        return kind(raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"key {name!r}: cannot parse {raw!r}") from exc


def _from_mapping(cls, mapping):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    missing = [name for name in cls.REQUIRED if name not in mapping]
    if missing:
        raise ConfigurationError(f"missing required config key {missing[0]!r}")
    scalar = {"int": int, "float": float, "bool": bool, "str": str}
    values = {name: _coerce(name, known[name].metadata.get("kind") or scalar[known[name].type], raw)
              for name, raw in mapping.items()}
    return cls(**values)


def _kind(kind):
    return field(metadata={"kind": kind})


@dataclass(frozen=True)
class DatasetConfig:
    """Combinatorial dataset description.

    Every (action, scene, appearance, camera) combination receives
    ``samples_per_combo`` samples.  An appearance entry may join several ids
    with ``+`` to put that many actors in the clip.
    """

    actions: tuple = _kind("list")
    scenes: tuple = _kind("list")
    appearances: tuple = _kind("list")
    cameras: tuple = _kind("list")
    samples_per_combo: int = 1
    seed: int = 0
    frames: int = 16
    resolution: tuple = field(default=(32, 32), metadata={"kind": "resolution"})
    split_ratio: float = 0.95
    n_splats: int = 600
    fps: float = 8.0

    REQUIRED = ("actions", "scenes", "appearances", "cameras", "samples_per_combo", "seed")

    def __post_init__(self):
        for a in self.actions:
            check("action", a, ACTIONS)
        for s in self.scenes:
            check("scene", s, SCENES)
        for entry in self.appearances:
            ids = entry.split("+")
            if not 1 <= len(ids) <= 2:
                raise ConfigurationError(f"appearance entry {entry!r} must name one or two actors")
            for a in ids:
                check("appearance", a, APPEARANCES)
        for c in self.cameras:
            parse_trajectory(c)
        for name in ("actions", "scenes", "appearances", "cameras"):
            if not getattr(self, name):
                raise ConfigurationError(f"config key {name!r} lists nothing")
        if self.samples_per_combo < 1:
            raise ConfigurationError("samples_per_combo must be at least 1")
        if self.frames < 2:
            raise ConfigurationError("frames must be at least 2")
        if not 0.0 < self.split_ratio <= 1.0:
            raise ConfigurationError("split_ratio must lie in (0, 1]")
        if self.n_splats < 1:
            raise ConfigurationError("n_splats must be positive")

    @classmethod
    def from_mapping(cls, mapping) -> "DatasetConfig":
        return _from_mapping(cls, mapping)

    @property
    def n_samples(self) -> int:
        return (len(self.actions) * len(self.scenes) * len(self.appearances) * len(self.cameras)
                * self.samples_per_combo)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation and model settings shared by ``train`` and ``sample``."""

    steps: int
    seed: int
    lr: float = 2e-3
    batch_size: int = 1
    T: int = 100
    channels: int = 32
    emb_dim: int = 64
    lora_rank: int = 4
    lora_scale: float = 1.0
    ddim_steps: int = 20
    guidance: float = 3.0
    text_drop: float = 0.1
    log_every: int = 10
    max_samples: int = 0          # 0 means the whole train split

    REQUIRED = ("steps", "seed")

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.T < 1:
            raise ConfigurationError("T must be at least 1")
        if self.channels < 4 or self.channels % 4:
            raise ConfigurationError("channels must be a positive multiple of 4")
        if self.lora_rank < 1:
            raise ConfigurationError("lora_rank must be at least 1")
        if not 1 <= self.ddim_steps <= self.T:
            raise ConfigurationError(f"ddim_steps must lie in [1, T={self.T}]")
        if not 0.0 <= self.text_drop < 1.0:
            raise ConfigurationError("text_drop must lie in [0, 1)")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be at least 1")

    @classmethod
    def from_mapping(cls, mapping) -> "TrainConfig":
        return _from_mapping(cls, mapping)

    def as_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
