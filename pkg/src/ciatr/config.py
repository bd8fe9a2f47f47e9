"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Lists are comma-separated,
booleans are ``true``/``false``. Unknown keys are an error. Relative paths
are resolved against the directory holding the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .experiment import VARIANTS
from .synthdata import ConfoundConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


@dataclass
class RunConfig:
    # dataset
    num_classes: int = 3
    n_per_class: int = 20
    h: int = 64
    w: int = 64
    rho: float = 0.9
    num_ic_buckets: int = 4
    test_per_class: int = 200
    data_seed: int = 0
    # augmentation
    ra_max: float = 0.3
    rm_re_choices: tuple[int, ...] = (4, 8, 16)
    include_prob: float = 0.5
    sigma_rotate: float = 1.0
    sigma_scale: float = 1.0
    sigma_translate: float = 1.0
    sigma_flip_h: float = 1.0
    sigma_flip_v: float = 1.0
    augment_fixed: bool = False
    # training
    epochs: int = 150
    batch_size: int = 24
    lr: float = 0.01
    momentum: float = 0.9
    margin: float = 0.5
    lambda_d: float = 1.0
    seed: int = 0
    augment_on: bool = True
    ld_on: bool = True
    # experiment grid
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_values: tuple[int, ...] = (5, 10, 25)
    variants: tuple[str, ...] = ("ce-only", "augment", "augment+ld")
    # paths
    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = field(default="")

    def confound(self) -> ConfoundConfig:
        return ConfoundConfig(self.num_classes, self.n_per_class, self.h, self.w, self.rho,
                              self.num_ic_buckets, self.test_per_class)

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.ra_max, self.rm_re_choices, self.include_prob, self.sigma_rotate,
                             self.sigma_scale, self.sigma_translate, self.sigma_flip_h, self.sigma_flip_v,
                             enabled=True, fixed=self.augment_fixed)

    def train(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.momentum, self.margin, self.lambda_d,
                           self.seed, self.augment_on, self.ld_on)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "model.ckpt"

    def validate(self) -> None:
        names = {f.name for f in fields(self)}
        for check in (self.confound().validate, self.augment().validate, self.train().validate):
            try:
                check()
            except ValueError as exc:
                # component validators lead their messages with the field name
                msg = str(exc)
                head = msg.split()[0]
                raise ConfigError(head if head in names else "config", msg) from None
        for re in self.rm_re_choices:
            if self.h % re or self.w % re:
                raise ConfigError("rm_re_choices", f"{re} does not divide {self.h}x{self.w}")
        if self.data_seed < 0 or self.seed < 0 or any(s < 0 for s in self.seeds):
            raise ConfigError("seed", "seeds must be non-negative")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError("variants", f"unknown variants {sorted(unknown)}")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigError("n_values", "must list positive sample counts")


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _bool,
    "str": str,
    "tuple[int, ...]": _ints,
    "tuple[str, ...]": _strs,
}


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = _PARSERS[types[key]](value)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {value!r} ({exc})") from None
    cfg = RunConfig(**values)
    base = Path(base_dir)
    for key in ("data_dir", "out_dir", "checkpoint"):
        val = getattr(cfg, key)
        if val and not Path(val).is_absolute():
            setattr(cfg, key, str(base / val))
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
    return parse_config(text, path.parent)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
