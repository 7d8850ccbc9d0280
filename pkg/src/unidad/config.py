"""Training configuration and its flat ``key = value`` text format."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

TARGET_MODES = ("online", "frozen-checkpoint", "disabled")
STUDENT_INITS = ("copy-of-source", "pre-distilled-checkpoint")
GAN_REALS = ("target", "source")
BENCHMARKS = ("close", "distant")
GAN_FAMILIES = ("hinge", "bce", "lsgan", "wgan")
# dual-domain weight when the config leaves ``a`` unset
DEFAULT_A = {"close": 0.25, "distant": 0.75}
ACTIVATIONS = ("relu", "tanh")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # dual-domain weight and loss balance
    a: float | None = None
    lambda_g_gan: float = 0.01
    lambda_d_gan: float = 0.03
    update_ratio: int = 5
    gan_family: str = "bce"
    multi_head: bool = True
    # schedule / student
    nfe: int = 3
    T: int = 1000
    # budgets
    iterations: int = 20000
    ft_iterations: int = 2000
    pretrain_iterations: int = 20000
    batch_size: int = 64
    pretrain_batch_size: int = 256
    # optimisation
    lr: float = 1e-3
    lr_student: float | None = 1e-4
    lr_fake: float | None = None
    lr_target: float | None = None
    lr_teacher: float | None = None
    # final learning rate as a fraction of the initial one (linear anneal)
    lr_decay_to: float = 0.1
    # models
    width: int = 64
    depth: int = 4
    activation: str = "relu"
    target_mode: str = "online"
    student_init: str = "copy-of-source"
    gan_reals: str = "target"
    # data / bookkeeping
    benchmark: str = "close"
    k_shot: int = 10
    seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 1000

    def __post_init__(self):
        if self.a is None:
            self.a = DEFAULT_A.get(self.benchmark, 0.25)
        self.validate()
        if self.target_mode == "disabled":
            self.a = 0.0

    def validate(self) -> None:
        def need(ok: bool, key: str, msg: str):
            if not ok:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

        need(0.0 <= self.a <= 1.0, "a", "must lie in [0, 1]")
        need(self.lambda_g_gan >= 0, "lambda_g_gan", "must be >= 0")
        need(self.lambda_d_gan >= 0, "lambda_d_gan", "must be >= 0")
        need(self.update_ratio >= 1, "update_ratio", "must be >= 1")
        need(1 <= self.nfe <= 4, "nfe", "must lie in [1, 4]")
        need(self.T >= 50, "T", "must be >= 50")
        for key in ("iterations", "ft_iterations", "pretrain_iterations"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        for key in ("batch_size", "pretrain_batch_size", "width", "depth", "eval_every", "eval_samples"):
            need(getattr(self, key) >= 1, key, "must be >= 1")
        for key in ("lr", "lr_student", "lr_fake", "lr_target", "lr_teacher"):
            v = getattr(self, key)
            need(v is None or v > 0, key, "must be > 0")
        need(0.0 < self.lr_decay_to <= 1.0, "lr_decay_to", "must lie in (0, 1]")
        need(self.gan_family in GAN_FAMILIES, "gan_family", f"must be one of {GAN_FAMILIES}")
        need(self.target_mode in TARGET_MODES, "target_mode", f"must be one of {TARGET_MODES}")
        need(self.student_init in STUDENT_INITS, "student_init", f"must be one of {STUDENT_INITS}")
        need(self.gan_reals in GAN_REALS, "gan_reals", f"must be one of {GAN_REALS}")
        need(self.benchmark in BENCHMARKS, "benchmark", f"must be one of {BENCHMARKS}")
        need(self.activation in ACTIVATIONS, "activation", f"must be one of {ACTIVATIONS}")
        need(self.k_shot in (1, 5, 10), "k_shot", "must be 1, 5 or 10")

    def lr_for(self, model: str) -> float:
        override = {"student": self.lr_student, "fake": self.lr_fake,
                    "target": self.lr_target, "teacher": self.lr_teacher}[model]
        return self.lr if override is None else override

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha1(self.to_text().encode("utf-8")).hexdigest()


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, default, key: str, lineno: int):
    kind = type(default)
    if key.startswith("lr_") or key == "a":
        kind = float
    try:
        if raw.lower() == "none" and key.startswith("lr_"):
            return None
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse {key} = {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, **overrides) -> TrainConfig:
    """Parse ``key = value`` lines; ``overrides`` win over the text and are applied
    before benchmark-dependent defaults are resolved."""
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    values: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, getattr(defaults, key), key, lineno)
        lines[key] = lineno
    values.update(overrides)
    try:
        return TrainConfig(**values)
    except ConfigError as err:
        key = str(err).split(":", 1)[0]
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{err}") from None


def parse_config(path, **overrides) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), **overrides)
