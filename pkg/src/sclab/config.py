"""Experiment configuration and its plain-text ``section.key = value`` form."""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field

from .models import EncoderSpec, HeadSpec, LatentPartition
from .scl import SclHyperparams
from .synth import SignalFamily, TransformSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    kind: str = "ADAM"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    steps: int = 3000
    batch_size: int = 64
    views: int = 2
    n_per_class: int = 100
    log_every: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    family: SignalFamily = field(default_factory=SignalFamily)
    transform: TransformSpec = field(default_factory=TransformSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    head: HeadSpec = field(default_factory=lambda: HeadSpec("DECODER", 512, (128,), (1, 512)))
    partition: LatentPartition = field(default_factory=LatentPartition)
    hp: SclHyperparams = field(default_factory=SclHyperparams)
    optim: OptimizerSettings = field(default_factory=OptimizerSettings)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> ExperimentConfig:
        fam, enc, head, part = self.family, self.encoder, self.head, self.partition
        if part.d != enc.latent_dim:
            raise ConfigError(
                f"partition {part.d_inv}+{part.d_var}+{part.d_free}={part.d} does not match "
                f"encoder latent width {enc.latent_dim}")
        if (enc.in_channels, enc.in_length) != (fam.channels, fam.length):
            raise ConfigError(f"encoder input ({enc.in_channels}, {enc.in_length}) does not match "
                              f"family signals ({fam.channels}, {fam.length})")
        if head.kind == "CLASSIFIER" and head.out_width != fam.num_classes:
            raise ConfigError(f"classifier width {head.out_width} != {fam.num_classes} classes")
        if head.kind == "DECODER" and tuple(head.out_shape) != (fam.channels, fam.length):
            raise ConfigError(f"decoder output {head.out_shape} != signal shape {(fam.channels, fam.length)}")
        try:
            self.transform.check_family(fam)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        run = self.run
        if run.steps < 0 or run.batch_size < 2 or run.views < 1 or run.n_per_class < 1:
            raise ConfigError(f"invalid run settings {run}")
        return self

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def run_name(self) -> str:
        return (f"{self.family.kind.lower()}-{self.hp.mode.lower()}-s{self.run.seed}-"
                f"{self.digest()[:8]}")


def ecg_config(**overrides) -> ExperimentConfig:
    """ECG-like defaults: 4 conv blocks (8,16,32,32), d=32 all invariant, decoder head."""
    cfg = ExperimentConfig()
    return apply_overrides(cfg, overrides) if overrides else cfg.validate()


def imu_config(**overrides) -> ExperimentConfig:
    """IMU-like defaults: 3 conv blocks (16,32,64), d=32 split 8/24/0, classifier head."""
    fam = SignalFamily.imu()
    cfg = ExperimentConfig(
        family=fam,
        transform=TransformSpec(kind="ROTATION_3D", rotation_mode="UNIFORM_SO3"),
        encoder=EncoderSpec(in_channels=3, in_length=fam.length, channels=(16, 32, 64)),
        head=HeadSpec("CLASSIFIER", fam.num_classes, (64,)),
        partition=LatentPartition(8, 24, 0),
        run=RunSettings(steps=5000, n_per_class=100),
    )
    return apply_overrides(cfg, overrides) if overrides else cfg.validate()


# -- text form ---------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _parse(text: str, hint, key: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            if text.lower() == "none":
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _parse(text, inner, key)
        if origin is tuple:
            elem = args[0] if args else float
            return tuple(_parse(t, elem, key) for t in text.split(",") if t.strip())
        if hint is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {hint}") from None


def _sections(cfg: ExperimentConfig):
    hints = typing.get_type_hints(ExperimentConfig)
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name), hints[f.name]


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    for name, section, _ in _sections(cfg):
        for f in dataclasses.fields(section):
            lines.append(f"{name}.{f.name} = {_fmt(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Return ``cfg`` with dotted keys replaced.  String values are parsed by field type."""
    grouped: dict[str, dict[str, object]] = {}
    for key, value in overrides.items():
        if "." not in key:
            raise ConfigError(f"config key {key!r} must look like section.field")
        sec, fld = key.split(".", 1)
        grouped.setdefault(sec, {})[fld] = value
    sections = {name: (section, hint) for name, section, hint in _sections(cfg)}
    updates = {}
    for sec, values in grouped.items():
        if sec not in sections:
            raise ConfigError(f"unknown config section {sec!r}; valid: {', '.join(sections)}")
        section, cls = sections[sec]
        hints = typing.get_type_hints(cls)
        kwargs = {}
        for fld, value in values.items():
            if fld not in hints:
                raise ConfigError(f"unknown config key {sec}.{fld}")
            kwargs[fld] = _parse(value, hints[fld], f"{sec}.{fld}") if isinstance(value, str) else value
        try:
            updates[sec] = dataclasses.replace(section, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{sec}: {exc}") from None
    return dataclasses.replace(cfg, **updates).validate()


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``section.key = value`` lines (``#`` comments) on top of ``base`` (ECG defaults)."""
    overrides = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'section.key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        overrides[key] = value
    base = base or ExperimentConfig()
    family_kind = overrides.get("family.kind")
    if base == ExperimentConfig() and family_kind and family_kind.strip() == "IMU_LIKE":
        base = imu_config()
    return apply_overrides(base, overrides)


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def rebalance_partition(cfg: ExperimentConfig, d_inv: int) -> ExperimentConfig:
    """Set ``d_inv`` and give the remainder to the variant slice (free width kept)."""
    d = cfg.encoder.latent_dim
    d_var = d - d_inv - cfg.partition.d_free
    if d_inv < 0 or d_var < 0:
        raise ConfigError(f"d_inv={d_inv} does not fit latent width {d} with d_free={cfg.partition.d_free}")
    return dataclasses.replace(cfg, partition=LatentPartition(d_inv, d_var, cfg.partition.d_free)).validate()


__all__ = ["ConfigError", "ExperimentConfig", "OptimizerSettings", "RunSettings", "apply_overrides",
           "dumps", "ecg_config", "imu_config", "load", "loads", "rebalance_partition", "save"]
