"""Robustness, retrieval and latent-geometry metrics computed from trained models."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .models import Model
from .synth import (Dataset, SignalFamily, apply_transforms, generate, random_rotations,
                    TransformSpec)

EVAL_SEED_OFFSET = 10**6
SUBSPACES = ("INV", "VAR", "FREE", "FULL")
AXES = {"X": "X_AXIS", "Y": "Y_AXIS", "Z": "Z_AXIS", "COMBINED": "UNIFORM_SO3"}


class MetricError(ValueError):
    """A metric was requested for a model or family it does not apply to."""


@dataclass
class MetricReport:
    metric: str
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    seed: int = 0

    def values(self, column: str = "value") -> np.ndarray:
        return np.array([r[column] for r in self.rows], dtype=np.float64)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", *self.columns, "seed"])
            for r in self.rows:
                w.writerow([self.metric, *(_cell(r[c]) for c in self.columns), self.seed])
        return path

    @classmethod
    def from_csv(cls, path) -> MetricReport:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        columns = tuple(header[1:-1])
        parsed = [{c: _uncell(v) for c, v in zip(columns, r[1:-1])} for r in body]
        return cls(body[0][0] if body else "", columns, parsed, int(body[0][-1]) if body else 0)


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _uncell(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def as_model(obj) -> Model:
    if isinstance(obj, Model):
        return obj
    if isinstance(obj, Checkpoint):
        return obj.model
    if hasattr(obj, "model"):
        return obj.model
    return load_checkpoint(obj).model


def _eval_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed + EVAL_SEED_OFFSET, tag])


def _slice(model: Model, subspace: str) -> slice:
    if subspace not in SUBSPACES:
        raise MetricError(f"subspace must be one of {SUBSPACES}, got {subspace!r}")
    if subspace == "FULL":
        return slice(None)
    sl = getattr(model.partition, subspace.lower())
    if sl.stop - sl.start == 0:
        raise MetricError(f"{subspace} subspace is empty under partition {model.partition}")
    return sl


def _cos_rows(a: np.ndarray, b: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    na = np.maximum(np.linalg.norm(a, axis=-1), eps)
    nb = np.maximum(np.linalg.norm(b, axis=-1), eps)
    return np.sum(a * b, axis=-1) / (na * nb)


def _require_classifier(model: Model, channels: int | None = None):
    if model.head.kind != "CLASSIFIER":
        raise MetricError("metric needs a classifier head")
    if channels is not None and model.encoder.in_channels != channels:
        raise MetricError(f"metric needs {channels}-channel input, model takes {model.encoder.in_channels}")


# -- phase and rotation robustness -------------------------------------

def default_shifts(length: int, n: int = 16) -> list[int]:
    return [int(k) for k in np.linspace(0, length, n, endpoint=False)]


def phase_similarity_curve(checkpoint, signals: np.ndarray, shifts=None, subspace: str = "FULL",
                           seed: int = 0) -> MetricReport:
    """Mean cosine similarity between a latent slice of each signal and of its circular shifts."""
    model = as_model(checkpoint)
    if model.encoder.in_channels != 1:
        raise MetricError("phase similarity applies only to single-channel families")
    sl = _slice(model, subspace)
    signals = np.asarray(signals, dtype=np.float64)
    shifts = default_shifts(signals.shape[-1]) if shifts is None else list(shifts)
    base = model.embed(signals)[:, sl]
    report = MetricReport("phase_similarity", ("subspace", "shift", "value", "count"), seed=seed)
    for k in shifts:
        shifted = np.roll(signals, int(k), axis=-1)
        sim = _cos_rows(base, model.embed(shifted)[:, sl])
        report.rows.append({"subspace": subspace, "shift": int(k), "value": float(sim.mean()),
                            "count": len(signals)})
    return report


def accuracy(checkpoint, signals: np.ndarray, labels: np.ndarray) -> float:
    model = as_model(checkpoint)
    pred = model.predict_logits(signals).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)) * 100.0)


def rotation_consistency(checkpoint, dataset: Dataset, n_rotations: int = 5, seed: int = 0,
                         mode: str = "UNIFORM_SO3", angle_range=(0.0, 2 * np.pi)) -> float:
    """Percentage of (sample, rotation) pairs whose predicted class survives the rotation."""
    model = as_model(checkpoint)
    _require_classifier(model, 3)
    x = dataset.signals
    base = model.predict_logits(x).argmax(axis=1)
    rng = _eval_rng(seed, 1)
    agree = 0
    for _ in range(n_rotations):
        R = random_rotations(rng, mode, angle_range, len(x))
        agree += int(np.sum(model.predict_logits(R @ x).argmax(axis=1) == base))
    return 100.0 * agree / (n_rotations * len(x))


def _rotated(x: np.ndarray, mode: str, rng) -> np.ndarray:
    return random_rotations(rng, mode, (0.0, 2 * np.pi), len(x)) @ x


def axis_sweep_accuracy(checkpoint, dataset: Dataset, axes=("X", "Y", "Z", "COMBINED"), seed: int = 0,
                        angle_range=(0.0, 2 * np.pi)) -> MetricReport:
    """Test accuracy with each window rotated about one axis (or uniformly for COMBINED)."""
    model = as_model(checkpoint)
    _require_classifier(model, 3)
    report = MetricReport("axis_accuracy", ("axis", "value", "count"), seed=seed)
    for i, axis in enumerate(axes):
        if axis not in AXES:
            raise MetricError(f"axis must be one of {tuple(AXES)}, got {axis!r}")
        R = random_rotations(_eval_rng(seed, 10 + i), AXES[axis], angle_range, len(dataset))
        acc = accuracy(model, R @ dataset.signals, dataset.labels)
        report.rows.append({"axis": axis, "value": acc, "count": len(dataset)})
    return report


def stress_grid(checkpoint, dataset: Dataset, noise_stds=(0.0, 0.1, 0.3), rotation=("off", "on"),
                seed: int = 0) -> MetricReport:
    """Accuracy for every (noise std, rotation on/off) cell."""
    model = as_model(checkpoint)
    _require_classifier(model)
    report = MetricReport("stress_grid", ("noise_std", "rotation", "value", "count"), seed=seed)
    for i, std in enumerate(noise_stds):
        for j, rot in enumerate(rotation):
            if rot not in ("off", "on"):
                raise MetricError(f"rotation flag must be 'off' or 'on', got {rot!r}")
            rng = _eval_rng(seed, 100 + 10 * i + j)
            x = dataset.signals
            if rot == "on":
                _require_classifier(model, 3)
                x = _rotated(x, "UNIFORM_SO3", rng)
            if std > 0:
                x = x + std * rng.standard_normal(x.shape)
            report.rows.append({"noise_std": float(std), "rotation": rot,
                                "value": accuracy(model, x, dataset.labels), "count": len(dataset)})
    return report


# -- retrieval ---------------------------------------------------------

@dataclass(frozen=True)
class GallerySpec:
    family: SignalFamily
    size: int = 200
    queries: int = 100
    seed: int = 0


@dataclass
class RetrievalSet:
    gallery: np.ndarray
    gallery_labels: np.ndarray
    queries: np.ndarray
    query_labels: np.ndarray


def build_retrieval_set(spec: GallerySpec) -> RetrievalSet:
    """Fresh windows, balanced over classes, each circularly shifted by a random phase.

    Windows come from the evaluation seed stream, so none of them appear in training.
    """
    fam = spec.family
    rng = _eval_rng(spec.seed, 200)
    gen_seed = spec.seed + EVAL_SEED_OFFSET

    def draw(n, offset):
        per = -(-n // fam.num_classes)
        sigs, labels = [], []
        for c in range(fam.num_classes):
            s, l = generate(fam, c, offset + per, gen_seed)
            sigs.append(s[offset:])
            labels.append(l[offset:])
        order = rng.permutation(per * fam.num_classes)[:n]
        return np.concatenate(sigs)[order], np.concatenate(labels)[order]

    g, gl = draw(spec.size, 0)
    q, ql = draw(spec.queries, -(-spec.size // fam.num_classes))
    shift = TransformSpec("PHASE_SHIFT") if fam.channels == 1 else TransformSpec("ROTATION_3D")
    g = apply_transforms(g, shift, rng, 1)[0][:, 0]
    q = apply_transforms(q, shift, rng, 1)[0][:, 0]
    return RetrievalSet(g, gl, q, ql)


def retrieval_eval(checkpoint, gallery, k: int = 5) -> float:
    """Fraction (in percent) of each query's top-``k`` cosine neighbours sharing its class.

    Neighbours are ranked on the invariant slice, or the full latent when it is empty.
    """
    model = as_model(checkpoint)
    rs = gallery if isinstance(gallery, RetrievalSet) else build_retrieval_set(gallery)
    if len(rs.gallery) < k:
        raise MetricError(f"gallery of {len(rs.gallery)} items is smaller than k={k}")
    sl = slice(None) if model.partition.d_inv == 0 else model.partition.inv
    G = model.embed(rs.gallery)[:, sl]
    Q = model.embed(rs.queries)[:, sl]
    top = top_k_neighbours(Q, G, k)
    return float(np.mean(rs.gallery_labels[top] == rs.query_labels[:, None]) * 100.0)


def top_k_neighbours(queries: np.ndarray, gallery: np.ndarray, k: int) -> np.ndarray:
    """Indices ``[n_queries, k]`` of the most cosine-similar gallery rows; ties keep gallery order."""
    Gn = gallery / np.maximum(np.linalg.norm(gallery, axis=1, keepdims=True), 1e-8)
    Qn = queries / np.maximum(np.linalg.norm(queries, axis=1, keepdims=True), 1e-8)
    sims = Qn @ Gn.T
    return np.argsort(-sims, axis=1, kind="stable")[:, :k]


# -- latent geometry ---------------------------------------------------

def subspace_stats(checkpoint, batches) -> dict[str, float]:
    """Mean cosine distance per slice for positive and negative pairs over ``PairBatch`` es.

    Keys look like ``inv_pos``; empty slices are omitted.  ``count_pos`` / ``count_neg``
    hold the number of pairs averaged.
    """
    model = as_model(checkpoint)
    p = model.partition
    sums: dict[str, float] = {}
    n_pos = n_neg = 0
    for b in batches:
        B, V = b.positives.shape[:2]
        za = model.embed(b.anchors)
        zp = model.embed(b.positives.reshape(B * V, *b.anchors.shape[1:])).reshape(B, V, -1)
        zn = za[b.neg_index] if b.neg_index is not None else model.embed(b.negatives)
        for name in ("inv", "var", "free"):
            sl = getattr(p, name)
            if sl.stop == sl.start:
                continue
            d_pos = 1.0 - _cos_rows(za[:, None, sl], zp[:, :, sl])
            d_neg = 1.0 - _cos_rows(za[:, sl], zn[:, sl])
            sums[f"{name}_pos"] = sums.get(f"{name}_pos", 0.0) + float(d_pos.sum())
            sums[f"{name}_neg"] = sums.get(f"{name}_neg", 0.0) + float(d_neg.sum())
        n_pos += B * V
        n_neg += B
    if not sums:
        raise MetricError("partition has no nonempty slice")
    out = {k: v / (n_pos if k.endswith("_pos") else n_neg) for k, v in sums.items()}
    out.update(count_pos=n_pos, count_neg=n_neg)
    return out


def pca_project(embeddings: np.ndarray, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project centred rows onto the top principal axes of their covariance.

    Each axis is signed so its largest-magnitude component is positive.  Returns the
    coordinates ``[N, dims]`` and the explained variance of each axis.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) < 3:
        raise ValueError(f"PCA needs at least 3 points in a 2-D array, got shape {X.shape}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    if evals[0] <= 1e-12 * max(1.0, np.abs(X).max() ** 2):
        raise ValueError("PCA input has rank 0 (all points identical)")
    axes = evecs[:, :dims]
    flip = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(axes.shape[1])])
    axes = axes * np.where(flip == 0, 1.0, flip)
    explained = evals[:dims]
    if len(explained) < dims:
        explained = np.pad(explained, (0, dims - len(explained)))
        axes = np.pad(axes, ((0, 0), (0, dims - axes.shape[1])))
    return Xc @ axes, explained


def silhouette_score(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient with Euclidean distances (singleton clusters score 0)."""
    P = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    D = np.sqrt(np.maximum(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1), 0.0))
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two clusters")
    scores = np.zeros(len(P))
    for i in range(len(P)):
        same = labels == labels[i]
        if same.sum() <= 1:
            continue
        a = D[i, same].sum() / (same.sum() - 1)
        b = min(D[i, labels == c].mean() for c in classes if c != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


# -- SVG ---------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def line_svg(xs, series: dict[str, np.ndarray], title: str = "", width: int = 480, height: int = 300) -> str:
    pad = 40
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    y0, y1 = min(ys.min(), 0.0), max(ys.max(), 1.0)
    x0, x1 = xs.min(), xs.max() if xs.max() > xs.min() else xs.min() + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<line x1="{pad}" y1="{py(y0):.1f}" x2="{width - pad}" y2="{py(y0):.1f}" stroke="black"/>',
             f'<line x1="{pad}" y1="{py(y0):.1f}" x2="{pad}" y2="{py(y1):.1f}" stroke="black"/>']
    for i, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, vals))
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-size="11" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap_svg(values: np.ndarray, row_labels, col_labels, title: str = "", cell: int = 60) -> str:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    span = hi - lo if hi > lo else 1.0
    left, top = 80, 40
    w = left + cell * values.shape[1] + 10
    h = top + cell * values.shape[0] + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<text x="{w / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>']
    for i, rl in enumerate(row_labels):
        parts.append(f'<text x="{left - 6}" y="{top + cell * i + cell / 2 + 4:.0f}" text-anchor="end" '
                     f'font-size="11">{rl}</text>')
        for j in range(values.shape[1]):
            shade = int(255 * (1 - (values[i, j] - lo) / span))
            parts.append(f'<rect x="{left + cell * j}" y="{top + cell * i}" width="{cell}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)"/>')
            parts.append(f'<text x="{left + cell * j + cell / 2:.0f}" y="{top + cell * i + cell / 2 + 4:.0f}" '
                         f'text-anchor="middle" font-size="11">{values[i, j]:.1f}</text>')
    for j, cl in enumerate(col_labels):
        parts.append(f'<text x="{left + cell * j + cell / 2:.0f}" y="{top + cell * len(row_labels) + 16}" '
                     f'text-anchor="middle" font-size="11">{cl}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
