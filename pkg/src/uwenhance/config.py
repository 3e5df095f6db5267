"""Flat ``key = value`` run configuration files.

One key per line, ``#`` starts a comment. Unknown keys are an error.
Network keys (``base_channels``, ``blocks_per_level`` ...) may appear in
any config and populate the nested `NetworkConfig`.

Dataset bookkeeping keys (``train_*``/``test_*``/``finetune_*``) record
split sizes for the run; they do not change training behaviour.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .losses import LossWeights
from .network import NetworkConfig


@dataclass(frozen=True)
class Stage:
    start_epoch: int
    batch_size: int
    patch_size: int


def _desk_schedule():
    return [Stage(0, 8, 64), Stage(25, 4, 96), Stage(38, 2, 128)]


@dataclass
class PretrainConfig:
    epochs: int = 50
    lr: float = 3e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    schedule: list = field(default_factory=_desk_schedule)
    seed: int = 0
    max_steps: int = 0
    pixel_weight: float = 1.0
    pearson_weight: float = 1.0
    augment: bool = True
    train_lsui_pairs: int = 0
    train_uieb_pairs: int = 0
    test_lsui_pairs: int = 0
    test_uieb_pairs: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigError("need 0 <= lr_min <= lr")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0 (0 = no cap)")
        validate_schedule(self.schedule, self.network.downsampling)

    def stage_at(self, epoch: int) -> Stage:
        current = self.schedule[0]
        for stage in self.schedule:
            if stage.start_epoch <= epoch:
                current = stage
        return current


@dataclass
class FinetuneConfig:
    steps: int = 1000
    batch_size: int = 2
    lr: float = 1e-5
    lr_min: float = 1e-7
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.003
    desired_q: float = -math.inf
    stop_window: int = 10
    patch_size: int = 0
    augment: bool = True
    seed: int = 0
    scorer: str = "proxy"
    scorer_entry: str = ""
    extractor: str = "random-pyramid"
    finetune_ruie: int = 0
    finetune_euvp: int = 0
    finetune_lsui: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1 or self.stop_window < 1:
            raise ConfigError("batch_size and stop_window must be >= 1")
        if self.lr < 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigError("need 0 <= lr_min <= lr")
        if self.patch_size and self.patch_size % self.network.downsampling:
            raise ConfigError(f"patch_size must be a multiple of {self.network.downsampling}")
        self.weights  # validates the lambdas

    @property
    def weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda1, self.lambda2, self.lambda3)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def validate_schedule(schedule, factor: int = 1):
    if not schedule or schedule[0].start_epoch != 0:
        raise ConfigError("schedule must start at epoch 0")
    for a, b in zip(schedule, schedule[1:]):
        if b.start_epoch <= a.start_epoch:
            raise ConfigError("schedule start epochs must increase")
        if b.batch_size > a.batch_size:
            raise ConfigError("schedule batch sizes must not increase")
        if b.patch_size < a.patch_size:
            raise ConfigError("schedule patch sizes must not decrease")
    for stage in schedule:
        if stage.batch_size < 1 or stage.patch_size < 0:
            raise ConfigError(f"invalid stage {stage}")
        if stage.patch_size % factor:
            raise ConfigError(f"patch size {stage.patch_size} not a multiple of {factor}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    low = text.strip().lower()
    if low in ("-inf", "-infinity"):
        return -math.inf
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    return float(text)


def _parse_int_list(text: str) -> list:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def parse_schedule(text: str) -> list:
    """``"0:8:64, 25:4:96"`` -> stages of ``start_epoch:batch_size:patch_size``."""
    stages = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise ConfigError(f"schedule stage {chunk!r} is not start:batch:patch")
        stages.append(Stage(*(int(p) for p in parts)))
    return stages


def format_schedule(schedule) -> str:
    return ", ".join(f"{s.start_epoch}:{s.batch_size}:{s.patch_size}" for s in schedule)


def _field_types(cls) -> dict:
    hints = {}
    for f in dataclasses.fields(cls):
        if f.name == "network":
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        hints[f.name] = type(default)
    return hints


def _convert(key: str, kind, text: str):
    try:
        if key == "schedule":
            return parse_schedule(text)
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return _parse_float(text)
        if kind is list:
            return _parse_int_list(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def parse_pairs(text: str, source: str = "<config>") -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def build_config(cls, raw: dict, overrides: Optional[dict] = None):
    """Instantiate ``cls`` from string values; ``overrides`` hold typed values and win."""
    own = _field_types(cls)
    net = _field_types(NetworkConfig)
    kwargs, net_kwargs = {}, {}
    for key, text in raw.items():
        if key in own:
            kwargs[key] = _convert(key, own[key], text)
        elif key in net:
            net_kwargs[key] = _convert(key, net[key], text)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in own:
            kwargs[key] = value
        elif key in net:
            net_kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        kwargs["network"] = NetworkConfig(**net_kwargs)
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(cls, path=None, overrides: Optional[dict] = None):
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no config file at {path}")
        raw = parse_pairs(path.read_text(encoding="utf-8"), str(path))
    return build_config(cls, raw, overrides)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], Stage):
            return format_schedule(value)
        return ", ".join(str(v) for v in value)
    return str(value)


def to_flat(config) -> dict:
    out = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "network":
            for nf in dataclasses.fields(value):
                out[nf.name] = _format_value(getattr(value, nf.name))
        else:
            out[f.name] = _format_value(value)
    return out


def dump_config(config) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(config).items())


def config_echo(config) -> dict:
    """JSON-friendly echo stored in checkpoints and run manifests."""
    return to_flat(config)


def packaged_config(name: str) -> Path:
    """Path of a config shipped with the package (e.g. ``"finetune_full"``)."""
    return Path(__file__).parent / "configs" / f"{name}.cfg"


def derive_seed(root: int, name: str) -> int:
    """Sub-seed for component ``name``: SeedSequence([root, crc32(name)])."""
    entropy = [int(root) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
