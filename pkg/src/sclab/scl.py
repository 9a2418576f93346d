"""Losses: cosine distance, the variant-enhanced contrastive ratio, task losses, and their sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad_core as gc
from .grad_core import Tensor
from .models import LatentPartition, Model, kl_divergence, reparameterize, encode_distribution

MODES = ("STRUCTURED", "STANDARD_CONTRASTIVE", "AUGMENT_ONLY", "BASELINE")
CONTRASTIVE_MODES = ("STRUCTURED", "STANDARD_CONTRASTIVE")


@dataclass(frozen=True)
class SclHyperparams:
    beta: float = 1.0
    lam: float = 1.0
    denom_floor: float = 1e-4
    mode: str = "STRUCTURED"
    eps: float = 1e-8
    kl_weight: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.beta < 0 or self.lam < 0:
            raise ValueError(f"beta and lambda must be nonnegative (beta={self.beta}, lambda={self.lam})")
        if not self.denom_floor > 0:
            raise ValueError("denom_floor must be positive")

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.mode == "STANDARD_CONTRASTIVE" else self.beta


@dataclass
class LossBreakdown:
    task: Tensor
    contrastive: Tensor
    total: Tensor
    d_inv_pos: float = 0.0
    d_var_pos: float = 0.0
    d_inv_neg: float = 0.0

    def row(self) -> dict[str, float]:
        return {"task": self.task.item(), "contrastive": self.contrastive.item(), "total": self.total.item(),
                "d_inv_pos": self.d_inv_pos, "d_var_pos": self.d_var_pos, "d_inv_neg": self.d_inv_neg}


def cos_dist(u, v, eps: float = gc.EPS) -> Tensor:
    """``1 - cos(u, v)`` along the last axis."""
    return 1.0 - gc.cosine_similarity(u, v, eps)


def contrastive_terms(z_a, z_p, z_n, p: LatentPartition, hp: SclHyperparams):
    """Per-sample contrastive losses for latents ``[..., d]``, plus per-sample distances.

    ``D_inv(a,p) / ((1 + beta * D_var(a,p)) * max(D_inv(a,n), floor))``.  Without a variant
    slice the beta factor is 1; without an invariant slice only ``1 / (1 + beta * D_var(a,p))``
    remains; with neither the loss is zero.
    """
    z_a, z_p, z_n = gc.as_tensor(z_a), gc.as_tensor(z_p), gc.as_tensor(z_n)
    if not z_a.shape == z_p.shape == z_n.shape:
        raise gc.ShapeError(f"latent shapes differ: {z_a.shape}, {z_p.shape}, {z_n.shape}")
    p.check(z_a.shape[-1])
    lead = z_a.shape[:-1]
    zeros = np.zeros(lead)
    beta = hp.effective_beta
    d_inv_pos = d_inv_neg = d_var_pos = None
    if p.d_var:
        d_var_pos = cos_dist(z_a[..., p.var], z_p[..., p.var], hp.eps)
        factor = 1.0 + beta * d_var_pos
    if p.d_inv:
        d_inv_pos = cos_dist(z_a[..., p.inv], z_p[..., p.inv], hp.eps)
        d_inv_neg = cos_dist(z_a[..., p.inv], z_n[..., p.inv], hp.eps)
        den = gc.clamp_min(d_inv_neg, hp.denom_floor)
        loss = d_inv_pos / (factor * den) if p.d_var else d_inv_pos / den
    elif p.d_var:
        loss = 1.0 / factor
    else:
        loss = Tensor(zeros)
    diag = {name: (t.data if t is not None else zeros)
            for name, t in (("d_inv_pos", d_inv_pos), ("d_var_pos", d_var_pos), ("d_inv_neg", d_inv_neg))}
    return loss, diag


def contrastive_loss(z_a, z_p, z_n, p: LatentPartition, hp: SclHyperparams):
    """Batch-averaged contrastive loss and averaged diagnostics."""
    terms, diag = contrastive_terms(z_a, z_p, z_n, p, hp)
    loss = gc.mean(terms) if terms.ndim else terms
    return loss, {k: float(np.mean(v)) for k, v in diag.items()}


def task_loss(kind: str, prediction, target) -> Tensor:
    """``CROSS_ENTROPY`` on logits ``[..., K]`` with integer targets, or ``MSE``; batch-averaged."""
    prediction = gc.as_tensor(prediction)
    if kind == "CROSS_ENTROPY":
        target = np.asarray(target, dtype=np.int64)
        K = prediction.shape[-1]
        if np.any(target < 0) or np.any(target >= K):
            raise ValueError(f"class index out of range for {K} classes: {target[(target < 0) | (target >= K)]}")
        logp = gc.log_softmax(prediction, axis=-1)
        if prediction.ndim == 1:
            return -logp[int(target)]
        picked = logp[np.arange(prediction.shape[0]), target]
        return -gc.mean(picked)
    if kind == "MSE":
        target = gc.as_tensor(target)
        if target.shape != prediction.shape:
            raise gc.ShapeError(f"MSE shapes differ: {prediction.shape} vs {target.shape}")
        return gc.mean(gc.square(prediction - target))
    raise ValueError(f"unknown task loss {kind!r}; expected CROSS_ENTROPY or MSE")


def _latent(model: Model, x: np.ndarray, rng, extra: list):
    if not model.encoder.variational:
        return model.encode(Tensor(x))
    mu, log_var = encode_distribution(model.encoder, model.params, Tensor(x))
    extra.append(kl_divergence(mu, log_var))
    return reparameterize(mu, log_var, rng)


def total_loss(batch, model: Model, hp: SclHyperparams, rng: np.random.Generator | None = None) -> LossBreakdown:
    """Task loss plus ``lambda`` times the contrastive loss for one ``PairBatch``.

    BASELINE trains the task on raw windows; every other mode trains it on the (transformed)
    anchors.  Contrastive modes average the ratio over all positive views of every anchor.
    Decoder heads reconstruct their own input.
    """
    kind = "MSE" if model.head.kind == "DECODER" else "CROSS_ENTROPY"
    rng = rng if rng is not None else np.random.default_rng(0)
    kl_terms: list[Tensor] = []
    if hp.mode == "BASELINE":
        if batch.raw is None:
            raise ValueError("BASELINE mode needs raw windows in the batch")
        x = batch.raw
    else:
        if batch.anchors is None:
            raise ValueError(f"{hp.mode} mode needs transformed anchors in the batch")
        x = batch.anchors

    if hp.mode in CONTRASTIVE_MODES:
        if batch.positives is None or batch.neg_index is None and batch.negatives is None:
            raise ValueError(f"{hp.mode} mode needs positives and negatives in the batch")
        B, V = batch.positives.shape[:2]
        stacked = np.concatenate([x, batch.positives.reshape(B * V, *x.shape[1:])], axis=0)
        z_all = _latent(model, stacked, rng, kl_terms)
        z_a = z_all[:B]
        z_p = z_all[B:].reshape(B, V, -1)
        if batch.neg_index is not None:
            z_n = z_a[batch.neg_index]
        else:
            z_n = _latent(model, batch.negatives, rng, kl_terms)
        d = z_a.shape[-1]
        z_a_rep = gc.reshape(z_a, (B, 1, d)) + np.zeros((1, V, 1))
        z_n_rep = gc.reshape(z_n, (B, 1, d)) + np.zeros((1, V, 1))
        contrastive, diag = contrastive_loss(z_a_rep, z_p, z_n_rep, model.partition, hp)
    else:
        z_a = _latent(model, x, rng, kl_terms)
        contrastive, diag = Tensor(0.0), {"d_inv_pos": 0.0, "d_var_pos": 0.0, "d_inv_neg": 0.0}

    pred = model.head_forward(z_a)
    task = task_loss(kind, pred, x if kind == "MSE" else batch.labels)
    if kl_terms:
        task = task + hp.kl_weight * kl_terms[0]
    total = task + hp.lam * contrastive if hp.mode in CONTRASTIVE_MODES else task
    return LossBreakdown(task=task, contrastive=contrastive, total=total, **diag)
