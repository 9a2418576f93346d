"""Deterministic training loop for the four comparator regimes."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .grad_core import NonFiniteError, NonFiniteGradientError, OptimizerState, optimizer_step, zero_grad
from .models import Model
from .scl import total_loss
from .synth import Dataset, make_dataset, sample_pair_batch

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "task", "contrastive", "total", "d_inv_pos", "d_var_pos", "d_inv_neg")
CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.txt"

# stream tags keep data, batches and latent noise on disjoint seed sequences
_BATCH_STREAM = 7
_NOISE_STREAM = 11


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, component: str, detail: str = ""):
        super().__init__(f"non-finite {component} at step {step}" + (f": {detail}" if detail else ""))
        self.step = step
        self.component = component


@dataclass
class TrainResult:
    model: Model
    log: list[dict[str, float]]
    step_count: int
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None
    checkpoint_hash: str | None = None


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/test split of the family's dataset; a pure function of the run seed."""
    return make_dataset(cfg.family, cfg.run.n_per_class, cfg.run.seed).split()


def _run(cfg: ExperimentConfig, model: Model, start_step: int, out_dir) -> TrainResult:
    cfg.validate()
    train_ds, _ = build_datasets(cfg)
    opt = cfg.optim
    state = OptimizerState(opt.kind, opt.lr, opt.beta1, opt.beta2, opt.eps)
    rows: list[dict[str, float]] = []
    seed = cfg.run.seed
    for i in range(cfg.run.steps):
        step = start_step + i
        batch = sample_pair_batch(train_ds, cfg.transform, cfg.run.batch_size, cfg.run.views,
                                  np.random.default_rng([seed, _BATCH_STREAM, step]))
        noise = np.random.default_rng([seed, _NOISE_STREAM, step])
        try:
            parts = total_loss(batch, model, cfg.hp, noise)
        except NonFiniteError as exc:
            raise TrainingDiverged(step, "forward pass", str(exc)) from exc
        for name in ("task", "contrastive", "total"):
            if not np.isfinite(getattr(parts, name).item()):
                raise TrainingDiverged(step, f"{name} loss")
        try:
            parts.total.backward()
        except NonFiniteGradientError as exc:
            raise TrainingDiverged(step, "gradient", str(exc)) from exc
        optimizer_step(model.params, state)
        zero_grad(model.params)
        if cfg.run.log_every and i % cfg.run.log_every == 0:
            rows.append({"step": step, **parts.row()})
    result = TrainResult(model, rows, start_step + cfg.run.steps)
    if out_dir is not None:
        write_run(result, cfg, out_dir)
    return result


def write_run(result: TrainResult, cfg: ExperimentConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / CONFIG_NAME)
    result.metrics_path = out / METRICS_NAME
    write_log(result.log, result.metrics_path)
    result.checkpoint_path = out / CHECKPOINT_NAME
    result.checkpoint_hash = save_checkpoint(result.checkpoint_path, result.model, result.step_count,
                                             cfg.family, {"mode": cfg.hp.mode, "config_digest": cfg.digest()})


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (int(r[k]) if k == "step" else repr(float(r[k]))) for k in LOG_FIELDS})


def read_log(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def train(cfg: ExperimentConfig, out_dir=None) -> TrainResult:
    """Train from a fresh initialization seeded by ``cfg.run.seed``.

    With ``out_dir`` the config snapshot, the per-step loss CSV and the final checkpoint are
    written there.
    """
    cfg.validate()
    model = Model(cfg.encoder, cfg.head, cfg.partition, seed=cfg.run.seed)
    return _run(cfg, model, 0, out_dir)


def _check_compatible(model: Model, cfg: ExperimentConfig) -> None:
    if model.encoder.latent_dim != cfg.encoder.latent_dim:
        raise ConfigError(f"checkpoint latent width {model.encoder.latent_dim} != "
                          f"config latent width {cfg.encoder.latent_dim}")
    if model.encoder != cfg.encoder:
        raise ConfigError(f"checkpoint encoder {model.encoder} != config encoder {cfg.encoder}")
    if model.head != cfg.head:
        raise ConfigError(f"checkpoint head {model.head} != config head {cfg.head}")


def finetune(base, cfg: ExperimentConfig, out_dir=None) -> TrainResult:
    """Continue training ``base`` (a checkpoint path, ``Checkpoint`` or ``TrainResult``) under ``cfg``.

    The partition may differ from the base run's; the encoder and head may not.  Batches
    continue the base run's step numbering so no batch is replayed.
    """
    if isinstance(base, (str, Path)):
        base = load_checkpoint(base)
    src = base.model
    _check_compatible(src, cfg)
    params = {k: type(v)(v.data, True) for k, v in src.params.items()}
    model = Model(cfg.encoder, cfg.head, cfg.partition, params=params, seed=src.seed)
    return _run(cfg, model, base.step_count, out_dir)


def trailing_means(values, window: int) -> np.ndarray:
    """Mean of each length-``window`` run ending at successive window boundaries."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v) // window
    return v[: n * window].reshape(n, window).mean(axis=1) if n else np.array([v.mean()]) if len(v) else v


__all__ = ["Checkpoint", "TrainResult", "TrainingDiverged", "build_datasets", "finetune", "read_log",
           "train", "trailing_means", "write_log"]
