"""Strict ``key = value`` run configuration.

Documents are line oriented.  ``[section]`` headers are optional; every key
is unique across sections, but a key placed under the wrong header is an
error.  ``#`` starts a comment.  Unknown keys are always rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping

from .attack import AttackConfig
from .dataio import CorruptionSpec
from .errors import ConfigError, ParseError
from .losses import LossWeights
from .model import DiscriminatorConfig, GeneratorConfig
from .train import TrainConfig

SEED_ENV = "RSRLAB_SEED"


def parse_number(text: str) -> float:
    """Float, or a fraction such as ``14/255``."""
    text = text.strip()
    try:
        if "/" in text:
            return float(Fraction(text.replace(" ", "")))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def parse_int(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"not an integer: {text!r}") from None


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_optional_number(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else parse_number(text)


def _list_of(item: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        parts = [p.strip() for p in text.split(",")]
        return [item(p) for p in parts if p]
    return parse


def _str(text: str) -> str:
    return text.strip()


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    default: Any


SCHEMA: dict[str, Key] = {
    # run
    "seed": Key("run", parse_int, 0),
    "output_dir": Key("run", _str, "runs/default"),
    "init_checkpoint": Key("run", _str, ""),
    # data
    "train_dir": Key("data", _str, ""),
    "eval_dir": Key("data", _str, ""),
    "input_dir": Key("data", _str, ""),
    "hr_patch": Key("data", parse_int, 128),
    "stride": Key("data", parse_int, 0),
    "max_train_patches": Key("data", parse_int, 200),
    "max_eval_patches": Key("data", parse_int, 16),
    "corpus_seed": Key("data", parse_int, 1234),
    "synthetic_train_images": Key("data", parse_int, 16),
    "synthetic_eval_images": Key("data", parse_int, 4),
    "synthetic_size": Key("data", parse_int, 256),
    # model
    "num_blocks": Key("model", parse_int, 4),
    "base_channels": Key("model", parse_int, 32),
    "growth_channels": Key("model", parse_int, 16),
    "scale": Key("model", parse_int, 4),
    "channels": Key("model", parse_int, 3),
    "disc_channels": Key("model", parse_int, 16),
    "feature_weights": Key("model", _str, ""),
    # train
    "learning_rate": Key("train", parse_number, 1e-4),
    "beta1": Key("train", parse_number, 0.9),
    "beta2": Key("train", parse_number, 0.99),
    "adam_eps": Key("train", parse_number, 1e-8),
    "batch_size": Key("train", parse_int, 8),
    "pretrain_iters": Key("train", parse_int, 2000),
    "l1_warmup_iters": Key("train", parse_int, 500),
    "robust_iters": Key("train", parse_int, 2000),
    "adv_fraction": Key("train", parse_number, 1.0),
    "checkpoint_every": Key("train", parse_int, 500),
    # loss
    "w_l1": Key("loss", parse_number, 1.0),
    "w_percep": Key("loss", parse_number, 1.0),
    "w_gan": Key("loss", parse_number, 0.005),
    # attack
    "epsilon": Key("attack", parse_number, 14 / 255),
    "iters": Key("attack", parse_int, 2),
    "alpha": Key("attack", parse_optional_number, None),
    "structure_scale": Key("attack", parse_number, 1.5),
    "use_l1": Key("attack", parse_bool, True),
    "use_percep": Key("attack", parse_bool, True),
    "recenter": Key("attack", parse_bool, False),
    # eval
    "corruptions": Key("eval", _list_of(_str), ["gaussian:0.04", "salt_pepper:0.02", "quantize:16"]),
    "corruption_seed": Key("eval", parse_int, 0),
    # ablate
    "sweep_epsilon": Key("ablate", _list_of(parse_number), [10 / 255, 12 / 255, 14 / 255, 16 / 255, 18 / 255]),
    "sweep_iters": Key("ablate", _list_of(parse_int), [2, 4, 6, 8]),
    "sweep_structure_scale": Key("ablate", _list_of(parse_number), [1.0, 2.0]),
    "sweep_loss": Key("ablate", _list_of(_str), ["l1", "percep"]),
    "ablate_iters": Key("ablate", parse_int, 0),
}

SECTIONS = tuple(dict.fromkeys(k.section for k in SCHEMA.values()))
LOSS_CHOICES = {"l1": (True, False), "percep": (False, True), "both": (True, True)}


class RunConfig:
    """Effective values for every schema key plus typed views onto them."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = {k: spec.default for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = v
        self.validate()

    def __getattr__(self, name: str) -> Any:
        values = self.__dict__.get("values")
        if values is not None and name in values:
            return values[name]
        raise AttributeError(name)

    def replace(self, **changes: Any) -> "RunConfig":
        return RunConfig({**self.values, **changes})

    # typed views --------------------------------------------------------

    def generator_config(self) -> GeneratorConfig:
        v = self.values
        return GeneratorConfig(v["num_blocks"], v["base_channels"], v["growth_channels"], v["scale"],
                               v["channels"], v["seed"])

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.hr_patch, self.disc_channels, self.channels)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_l1, self.w_percep, self.w_gan)

    def attack_config(self) -> AttackConfig:
        v = self.values
        return AttackConfig(v["epsilon"], v["iters"], v["alpha"], v["structure_scale"], v["use_l1"],
                            v["use_percep"], v["recenter"], v["seed"])

    def train_config(self, phase: str) -> TrainConfig:
        v = self.values
        if phase == "pretrain":
            total, warmup, adv = v["pretrain_iters"], v["l1_warmup_iters"], 0.0
        elif phase == "robust":
            total, warmup, adv = v["robust_iters"], 0, v["adv_fraction"]
        else:
            raise ValueError(f"unknown phase {phase!r}")
        return TrainConfig(
            learning_rate=v["learning_rate"], beta1=v["beta1"], beta2=v["beta2"],
            batch_size=v["batch_size"], total_iters=total, l1_warmup_iters=min(warmup, total),
            adv_fraction=adv, weights=self.loss_weights(), attack=self.attack_config(),
            seed=v["seed"], checkpoint_every=v["checkpoint_every"], adam_eps=v["adam_eps"],
        )

    def corruption_specs(self) -> list[CorruptionSpec]:
        return [CorruptionSpec.parse(t, self.corruption_seed) for t in self.corruptions]

    # validation ---------------------------------------------------------

    def validate(self) -> None:
        checks: list[tuple[str, Callable[[], Any]]] = [
            ("model", self.generator_config),
            ("model", self.discriminator_config),
            ("loss", self.loss_weights),
            ("attack", self.attack_config),
            ("train", lambda: (self.train_config("pretrain"), self.train_config("robust"))),
            ("eval", self.corruption_specs),
        ]
        for section, build in checks:
            try:
                build()
            except ConfigError as exc:
                raise ConfigError(f"[{section}] {exc}") from None
        v = self.values
        for key in ("hr_patch", "max_train_patches", "max_eval_patches", "synthetic_train_images",
                    "synthetic_eval_images", "synthetic_size", "disc_channels"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be positive, got {v[key]}")
        if v["stride"] < 0 or v["ablate_iters"] < 0:
            raise ConfigError("stride and ablate_iters must be nonnegative")
        if v["hr_patch"] % 16 or v["hr_patch"] % v["scale"] or v["hr_patch"] // v["scale"] < 8:
            raise ConfigError(f"hr_patch must be a multiple of 16 giving an LR patch of at least 8, got {v['hr_patch']}")
        if v["synthetic_size"] < v["hr_patch"]:
            raise ConfigError("synthetic_size must be at least hr_patch")
        for name in v["sweep_loss"]:
            if name not in LOSS_CHOICES:
                raise ConfigError(f"sweep_loss entry {name!r} is not one of {sorted(LOSS_CHOICES)}")

    def check_paths(self, *keys: str) -> None:
        for key in keys:
            p = self.values[key]
            if p and not Path(p).exists():
                raise ConfigError(f"{key}: path does not exist: {p}")

    # serialisation ------------------------------------------------------

    def dumps(self) -> str:
        lines = ["# effective configuration (rsrlab resolved-config)"]
        for section in SECTIONS:
            lines.append("")
            lines.append(f"[{section}]")
            for key, spec in SCHEMA.items():
                if spec.section == section:
                    lines.append(f"{key} = {format_value(self.values[key])}".rstrip())
        return "\n".join(lines) + "\n"


def _parse_value(key: str, raw: str, lineno: int | None = None) -> Any:
    try:
        return SCHEMA[key].parse(raw)
    except ValueError as exc:
        where = f"line {lineno}: " if lineno is not None else ""
        raise ConfigError(f"{where}invalid value for {key!r}: {exc}") from None


def parse_document(text: str) -> dict[str, Any]:
    """Raw key/value pairs of a config document (no defaults applied)."""
    values: dict[str, Any] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", lineno)
        if section is not None and SCHEMA[key].section != section:
            raise ParseError(f"key {key!r} belongs in [{SCHEMA[key].section}], not [{section}]", lineno)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        values[key] = _parse_value(key, raw, lineno)
    return values


def parse_config(text: str, overrides: Mapping[str, str] | None = None,
                 env: Mapping[str, str] | None = None) -> RunConfig:
    """Parse a document, then apply ``RSRLAB_SEED`` and string overrides (in that order)."""
    values = parse_document(text)
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _parse_value("seed", env[SEED_ENV])
    for key, raw in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(values)


def load_config(path: str | Path | None, overrides: Mapping[str, str] | None = None,
                env: Mapping[str, str] | None = None) -> RunConfig:
    text = ""
    if path:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        return parse_config(text, overrides, env)
    except ConfigError as exc:
        if path:
            raise type(exc)(f"{path}: {exc}") from None
        raise
