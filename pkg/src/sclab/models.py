"""Encoders with partitioned latent outputs, task heads, and the Gaussian latent path."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad_core as gc
from .grad_core import ShapeError, Tensor

ENCODER_KINDS = ("MLP", "CNN1D")
HEAD_KINDS = ("CLASSIFIER", "DECODER")


@dataclass(frozen=True)
class LatentPartition:
    """Contiguous ``[inv | var | free]`` split of a latent vector."""

    d_inv: int = 32
    d_var: int = 0
    d_free: int = 0

    def __post_init__(self):
        for name in ("d_inv", "d_var", "d_free"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    @property
    def d(self) -> int:
        return self.d_inv + self.d_var + self.d_free

    @property
    def inv(self) -> slice:
        return slice(0, self.d_inv)

    @property
    def var(self) -> slice:
        return slice(self.d_inv, self.d_inv + self.d_var)

    @property
    def free(self) -> slice:
        return slice(self.d_inv + self.d_var, self.d)

    def check(self, width: int) -> None:
        if width != self.d:
            raise ShapeError(
                f"latent width {width} does not match partition "
                f"{self.d_inv}+{self.d_var}+{self.d_free}={self.d}")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "CNN1D"
    in_channels: int = 1
    in_length: int = 512
    channels: tuple[int, ...] = (8, 16, 32, 32)
    kernel: int = 5
    stride: int = 2
    hidden: tuple[int, ...] = ()
    latent_dim: int = 32
    variational: bool = False

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.kind == "CNN1D":
            self.feature_lengths()

    def feature_lengths(self) -> list[int]:
        lengths = [self.in_length]
        for _ in self.channels:
            nxt = (lengths[-1] - self.kernel) // self.stride + 1
            if lengths[-1] < self.kernel or nxt < 1:
                raise ValueError(
                    f"input length {self.in_length} too short for {len(self.channels)} conv blocks "
                    f"(kernel {self.kernel}, stride {self.stride})")
            lengths.append(nxt)
        return lengths

    @property
    def flat_width(self) -> int:
        if self.kind == "MLP":
            return (self.hidden[-1] if self.hidden else self.in_channels * self.in_length)
        return self.channels[-1] * self.feature_lengths()[-1]


@dataclass(frozen=True)
class HeadSpec:
    kind: str = "CLASSIFIER"
    out_width: int = 4
    hidden: tuple[int, ...] = (64,)
    out_shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"head kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if self.kind == "DECODER" and self.out_shape and int(np.prod(self.out_shape)) != self.out_width:
            raise ValueError(f"decoder out_shape {self.out_shape} does not hold {self.out_width} values")


def init_params(encoder: EncoderSpec, head: HeadSpec, seed: int) -> dict[str, Tensor]:
    """He-normal weights, zero biases, drawn in a fixed order from ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def dense(name, fan_in, fan_out):
        params[f"{name}.w"] = Tensor(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in), True)
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), True)

    if encoder.kind == "CNN1D":
        c_in = encoder.in_channels
        for i, c_out in enumerate(encoder.channels):
            fan_in = c_in * encoder.kernel
            params[f"enc.conv{i}.w"] = Tensor(
                rng.standard_normal((c_out, c_in, encoder.kernel)) * np.sqrt(2.0 / fan_in), True)
            params[f"enc.conv{i}.b"] = Tensor(np.zeros((c_out, 1)), True)
            c_in = c_out
    else:
        width = encoder.in_channels * encoder.in_length
        for i, h in enumerate(encoder.hidden):
            dense(f"enc.fc{i}", width, h)
            width = h
    out = 2 * encoder.latent_dim if encoder.variational else encoder.latent_dim
    dense("enc.proj", encoder.flat_width, out)

    width = encoder.latent_dim
    for i, h in enumerate(head.hidden):
        dense(f"head.fc{i}", width, h)
        width = h
    dense("head.out", width, head.out_width)
    return params


def _features(spec: EncoderSpec, params, x: Tensor) -> Tensor:
    if x.shape[-2:] != (spec.in_channels, spec.in_length) or x.ndim not in (2, 3):
        raise ShapeError(f"encoder expects input [.., {spec.in_channels}, {spec.in_length}], got {x.shape}")
    batched = x.ndim == 3
    h = x if batched else x.reshape(1, *x.shape)
    if spec.kind == "CNN1D":
        for i in range(len(spec.channels)):
            h = gc.relu(gc.conv1d(h, params[f"enc.conv{i}.w"], spec.stride) + params[f"enc.conv{i}.b"])
        h = h.reshape(h.shape[0], -1)
    else:
        h = h.reshape(h.shape[0], -1)
        for i in range(len(spec.hidden)):
            h = gc.relu(h @ params[f"enc.fc{i}.w"] + params[f"enc.fc{i}.b"])
    out = h @ params["enc.proj.w"] + params["enc.proj.b"]
    return out if batched else out.reshape(out.shape[-1])


def encode_distribution(spec: EncoderSpec, params, x) -> tuple[Tensor, Tensor]:
    """Mean and log-variance of the Gaussian latent (variational encoders only)."""
    if not spec.variational:
        raise ValueError("encode_distribution requires a variational encoder")
    out = _features(spec, params, gc.as_tensor(x))
    d = spec.latent_dim
    return out[..., :d], out[..., d:]


def encode(spec: EncoderSpec, params, x) -> Tensor:
    """Full latent ``f(x)``; variational encoders return their mean."""
    out = _features(spec, params, gc.as_tensor(x))
    return out[..., : spec.latent_dim] if spec.variational else out


def split_latent(z, p: LatentPartition) -> tuple[Tensor, Tensor, Tensor]:
    z = gc.as_tensor(z)
    p.check(z.shape[-1])
    return z[..., p.inv], z[..., p.var], z[..., p.free]


def head_forward(spec: HeadSpec, params, z) -> Tensor:
    z = gc.as_tensor(z)
    width = params["head.fc0.w"].shape[0] if spec.hidden else params["head.out.w"].shape[0]
    if z.shape[-1] != width:
        raise ShapeError(f"head expects latent width {width}, got {z.shape[-1]}")
    h = z
    for i in range(len(spec.hidden)):
        h = gc.relu(h @ params[f"head.fc{i}.w"] + params[f"head.fc{i}.b"])
    out = h @ params["head.out.w"] + params["head.out.b"]
    if spec.kind == "DECODER" and spec.out_shape:
        out = out.reshape(*z.shape[:-1], *spec.out_shape)
    return out


def reparameterize(mu, log_var, noise_seed) -> Tensor:
    """``mu + exp(log_var / 2) * eps`` with standard-normal ``eps`` from ``noise_seed``."""
    mu, log_var = gc.as_tensor(mu), gc.as_tensor(log_var)
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu {mu.shape} and log_var {log_var.shape} differ")
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
    eps = rng.standard_normal(mu.shape)
    return mu + gc.exp(log_var * 0.5) * eps


def kl_divergence(mu, log_var) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(0, 1)) summed over the latent, averaged over any batch axis."""
    mu, log_var = gc.as_tensor(mu), gc.as_tensor(log_var)
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu {mu.shape} and log_var {log_var.shape} differ")
    terms = (1.0 + log_var - gc.square(mu) - gc.exp(log_var)) * -0.5
    per_sample = gc.sum_(terms, axis=-1)
    return gc.mean(per_sample) if per_sample.ndim else per_sample


class Model:
    """Encoder, head and partition bundled with their parameters."""

    def __init__(self, encoder: EncoderSpec, head: HeadSpec, partition: LatentPartition,
                 params: dict[str, Tensor] | None = None, seed: int = 0):
        partition.check(encoder.latent_dim)
        self.encoder = encoder
        self.head = head
        self.partition = partition
        self.seed = seed
        self.params = params if params is not None else init_params(encoder, head, seed)

    def encode(self, x) -> Tensor:
        return encode(self.encoder, self.params, x)

    def head_forward(self, z) -> Tensor:
        return head_forward(self.head, self.params, z)

    def embed(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        """Deterministic latents for a stack of inputs, without building gradients."""
        x = np.asarray(x, dtype=np.float64)
        outs = [encode(self.encoder, self._frozen(), Tensor(x[i: i + batch])).data for i in range(0, len(x), batch)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.encoder.latent_dim))

    def predict_logits(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        frozen = self._frozen()
        x = np.asarray(x, dtype=np.float64)
        outs = []
        for i in range(0, len(x), batch):
            z = encode(self.encoder, frozen, Tensor(x[i: i + batch]))
            outs.append(head_forward(self.head, frozen, z).data)
        return np.concatenate(outs, axis=0)

    def _frozen(self) -> dict[str, Tensor]:
        return {k: Tensor(v.data) for k, v in self.params.items()}
