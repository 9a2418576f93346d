"""Checkpoint files.

Layout: the line ``SCLCKPT``, a ``key = value`` header terminated by ``---``, then one record
per tensor (``u32`` name length, UTF-8 name, SCLT tensor record), then a 32-byte SHA-256
digest of every preceding byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
import typing
from pathlib import Path

from .grad_core import SerializationError, Tensor, tensor_from_bytes, tensor_to_bytes
from .models import EncoderSpec, HeadSpec, LatentPartition, Model
from .synth import SignalFamily

MAGIC = b"SCLCKPT\n"
FORMAT_VERSION = 1
_END = b"---\n"


class CheckpointError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _header(model: Model, step_count: int, family: SignalFamily | None, extra: dict | None) -> str:
    lines = [f"format_version = {FORMAT_VERSION}", f"rng_seed = {model.seed}", f"step_count = {step_count}"]
    sections = [("encoder", model.encoder), ("head", model.head), ("partition", model.partition)]
    if family is not None:
        sections.append(("family", family))
    for name, obj in sections:
        for f in dataclasses.fields(obj):
            lines.append(f"{name}.{f.name} = {_fmt(getattr(obj, f.name))}")
    for k, v in (extra or {}).items():
        lines.append(f"meta.{k} = {v}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path, model: Model, step_count: int = 0, family: SignalFamily | None = None,
                    extra: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the hex SHA-256 of the file."""
    body = bytearray(MAGIC)
    body += _header(model, step_count, family, extra).encode()
    body += _END
    for name in sorted(model.params):
        raw = name.encode()
        body += struct.pack("<I", len(raw)) + raw + tensor_to_bytes(model.params[name])
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body) + digest)
    return hashlib.sha256(bytes(body) + digest).hexdigest()


def _build(cls, values: dict[str, str]):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, text in values.items():
        hint = hints[key]
        if typing.get_origin(hint) is tuple:
            kwargs[key] = tuple(int(t) for t in text.split(",") if t)
        elif hint is bool:
            kwargs[key] = text == "true"
        elif hint is int:
            kwargs[key] = int(text)
        elif hint is float:
            kwargs[key] = float(text)
        else:
            kwargs[key] = text
    return cls(**kwargs)


@dataclasses.dataclass
class Checkpoint:
    model: Model
    step_count: int
    family: SignalFamily | None
    meta: dict[str, str]


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint; nothing is returned unless the digest matches."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 32 or not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted or truncated)")
    end = body.find(b"\n" + _END, len(MAGIC) - 1)
    if end < 0:
        raise CheckpointError(f"{path}: header terminator missing")
    header = body[len(MAGIC): end + 1].decode()
    values: dict[str, str] = {}
    for line in header.splitlines():
        key, _, value = line.partition(" = ")
        values[key] = value
    version = int(values.get("format_version", "0"))
    if version > FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version} "
                              f"(this build reads <= {FORMAT_VERSION})")

    def section(prefix):
        return {k[len(prefix) + 1:]: v for k, v in values.items() if k.startswith(prefix + ".")}

    encoder = _build(EncoderSpec, section("encoder"))
    head = _build(HeadSpec, section("head"))
    partition = _build(LatentPartition, section("partition"))
    fam_values = section("family")
    family = _build(SignalFamily, fam_values) if fam_values else None

    params = {}
    pos = end + 1 + len(_END)
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4: pos + 4 + n].decode()
            arr, pos = tensor_from_bytes(body, pos + 4 + n)
            params[name] = Tensor(arr, True)
    except (struct.error, SerializationError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    model = Model(encoder, head, partition, params=params, seed=int(values["rng_seed"]))
    return Checkpoint(model, int(values["step_count"]), family, section("meta"))
