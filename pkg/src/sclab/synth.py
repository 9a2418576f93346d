"""Synthetic ECG-like and IMU-like signal families, their transforms, and pair sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FAMILY_KINDS = ("ECG_LIKE", "IMU_LIKE")
TRANSFORM_KINDS = ("PHASE_SHIFT", "ROTATION_3D", "NOISE", "COMPOSITE")
ROTATION_MODES = ("X_AXIS", "Y_AXIS", "Z_AXIS", "UNIFORM_SO3")
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class SignalFamily:
    kind: str = "ECG_LIKE"
    num_classes: int = 4
    length: int = 512
    channels: int = 1
    sample_rate: float = 100.0
    noise_std: float = 0.01
    amplitude_scale: float = 1.0
    orientation_jitter: float = 15.0  # degrees, IMU only

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; valid kinds: {', '.join(FAMILY_KINDS)}")
        limit = len(ECG_TEMPLATES) if self.kind == "ECG_LIKE" else len(IMU_TEMPLATES)
        if not 1 <= self.num_classes <= limit:
            raise ValueError(f"{self.kind} supports 1..{limit} classes, got {self.num_classes}")
        expected = 1 if self.kind == "ECG_LIKE" else 3
        if self.channels != expected:
            raise ValueError(f"{self.kind} signals have {expected} channel(s), got {self.channels}")

    @classmethod
    def ecg(cls, **kw) -> SignalFamily:
        return cls(**kw)

    @classmethod
    def imu(cls, **kw) -> SignalFamily:
        base = dict(kind="IMU_LIKE", num_classes=6, length=128, channels=3, sample_rate=20.0, noise_std=0.03)
        base.update(kw)
        return cls(**base)


# -- ECG-like ----------------------------------------------------------

@dataclass(frozen=True)
class BeatTemplate:
    period: float                                    # samples per beat
    bumps: tuple[tuple[float, float, float], ...]    # (offset in beat, width, amplitude), samples


ECG_TEMPLATES = (
    BeatTemplate(100.0, ((20, 5.0, 0.15), (40, 2.5, 1.0), (44, 2.0, -0.3), (70, 8.0, 0.3))),
    BeatTemplate(110.0, ((20, 5.0, 0.15), (42, 6.0, 0.8), (54, 5.0, 0.4), (80, 9.0, -0.25))),
    BeatTemplate(90.0, ((18, 5.0, 0.1), (38, 2.5, 0.5), (60, 5.0, 0.7))),
    BeatTemplate(75.0, ((30, 2.5, 0.9), (38, 2.5, 0.7), (55, 7.0, 0.25))),
)


def _ecg_one(rng: np.random.Generator, template: BeatTemplate, family: SignalFamily) -> np.ndarray:
    L = family.length
    t = np.arange(L, dtype=np.float64)
    period = template.period * rng.uniform(0.95, 1.05)
    start = rng.uniform(0.0, 4.0)
    sig = np.zeros(L)
    n_beats = int(np.ceil(L / period)) + 2
    beat_starts = start + period * np.arange(-1, n_beats)
    for offset, width, amp in template.bumps:
        a = amp * rng.uniform(0.9, 1.1) * family.amplitude_scale
        w = width * rng.uniform(0.9, 1.1)
        centers = beat_starts + offset * period / template.period
        sig += a * np.exp(-0.5 * ((t[None, :] - centers[:, None]) / w) ** 2).sum(axis=0)
    cycles = rng.integers(1, 3)
    sig += 0.05 * np.sin(2 * np.pi * cycles * t / L + rng.uniform(0, 2 * np.pi))
    sig += family.noise_std * rng.standard_normal(L)
    return sig[None, :]


def gen_ecg_like(seed: int, class_id: int, n: int, family: SignalFamily | None = None):
    """Periodic trains of Gaussian bumps, one morphology template per class.

    Sample ``i`` depends only on ``(seed, class_id, i)``.  Returns ``(signals [n,1,L], labels [n])``.
    """
    family = family or SignalFamily.ecg()
    if not 0 <= class_id < family.num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {family.num_classes})")
    template = ECG_TEMPLATES[class_id]
    out = np.stack([_ecg_one(np.random.default_rng([seed, class_id, i]), template, family)
                    for i in range(n)]) if n else np.zeros((0, 1, family.length))
    return out, np.full(n, class_id, dtype=np.int64)


# -- IMU-like ----------------------------------------------------------

@dataclass(frozen=True)
class ActivityTemplate:
    name: str
    gravity: tuple[float, float, float]
    cycles: float                          # fundamental, cycles per window
    amplitude: tuple[float, float, float]  # per-axis motion amplitude
    harmonic: float                        # weight of the second harmonic
    axis_phase: tuple[float, float, float] = (0.0, 1.2, 2.4)
    static: bool = False


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return tuple(v / np.linalg.norm(v))


IMU_TEMPLATES = (
    ActivityTemplate("walking", (0.0, 1.0, 0.0), 11, (0.35, 0.5, 0.25), 0.4),
    ActivityTemplate("jogging", (0.0, 1.0, 0.0), 17, (0.7, 1.0, 0.5), 0.5, (0.0, 0.8, 2.0)),
    ActivityTemplate("upstairs", _unit((0.1, 0.99, 0.1)), 8, (0.3, 0.45, 0.3), 0.6, (0.0, 1.6, 0.4)),
    ActivityTemplate("downstairs", _unit((0.0, 0.99, -0.14)), 14, (0.4, 0.6, 0.3), 0.3, (0.0, 2.2, 1.0)),
    ActivityTemplate("sitting", _unit((0.0, 0.3, 0.95)), 2, (0.04, 0.03, 0.06), 0.0, static=True),
    ActivityTemplate("standing", (0.0, 1.0, 0.0), 5, (0.07, 0.04, 0.06), 0.0, static=True),
)


def _imu_one(rng: np.random.Generator, tpl: ActivityTemplate, family: SignalFamily) -> np.ndarray:
    L = family.length
    t = np.arange(L, dtype=np.float64) / L
    f = tpl.cycles if tpl.static else tpl.cycles + rng.uniform(-0.5, 0.5)
    phase = rng.uniform(0, 2 * np.pi)
    amp = np.asarray(tpl.amplitude) * family.amplitude_scale * rng.uniform(0.85, 1.15, size=3)
    sig = np.empty((3, L))
    for ax in range(3):
        arg = 2 * np.pi * f * t + phase + tpl.axis_phase[ax]
        sig[ax] = tpl.gravity[ax] + amp[ax] * (np.sin(arg) + tpl.harmonic * np.sin(2 * arg + 0.5))
    if family.orientation_jitter > 0:
        R = random_rotation(rng, "UNIFORM_SO3", (0.0, np.deg2rad(family.orientation_jitter)))
        sig = R @ sig
    return sig + family.noise_std * rng.standard_normal((3, L))


def gen_imu_like(seed: int, activity_id: int, n: int, family: SignalFamily | None = None):
    """Tri-axial accelerometer windows: gravity offset plus per-activity periodic motion.

    Locomotion classes differ in fundamental frequency and harmonic content; static classes
    carry a low-amplitude sway.  Returns ``(signals [n,3,L], labels [n])``.
    """
    family = family or SignalFamily.imu()
    if not 0 <= activity_id < family.num_classes:
        raise ValueError(f"activity_id {activity_id} outside [0, {family.num_classes})")
    tpl = IMU_TEMPLATES[activity_id]
    out = np.stack([_imu_one(np.random.default_rng([seed, activity_id, i]), tpl, family)
                    for i in range(n)]) if n else np.zeros((0, 3, family.length))
    return out, np.full(n, activity_id, dtype=np.int64)


def generate(family: SignalFamily, class_id: int, n: int, seed: int):
    if family.kind == "ECG_LIKE":
        return gen_ecg_like(seed, class_id, n, family)
    return gen_imu_like(seed, class_id, n, family)


# -- transforms --------------------------------------------------------

def phase_shift(x: np.ndarray, k: int) -> np.ndarray:
    """Circular shift by ``k`` samples along the last (time) axis."""
    L = x.shape[-1]
    if not 0 <= k < L:
        raise ValueError(f"shift {k} outside [0, {L})")
    return np.roll(x, k, axis=-1)


def _axis_matrices(axis: int, theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3))
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    R[..., axis, axis] = 1.0
    R[..., i, i] = c
    R[..., j, j] = c
    R[..., i, j] = -s
    R[..., j, i] = s
    return R


def _haar_angles(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    # rotation angle of a Haar-random rotation has CDF (t - sin t) / pi on [0, pi]
    lo, hi = max(lo, 0.0), min(hi, np.pi)
    if hi <= lo:
        return np.full(n, lo)
    cdf = lambda t: (t - np.sin(t)) / np.pi  # noqa: E731
    target = rng.uniform(cdf(lo), cdf(hi), n)
    a, b = np.full(n, lo), np.full(n, hi)
    for _ in range(60):
        mid = 0.5 * (a + b)
        below = cdf(mid) < target
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return 0.5 * (a + b)


def axis_angle_matrices(axes: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for unit ``axes`` ``[n,3]`` and angles ``[n]``."""
    K = np.zeros(theta.shape + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -axes[..., 2], axes[..., 1]
    K[..., 1, 0], K[..., 1, 2] = axes[..., 2], -axes[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -axes[..., 1], axes[..., 0]
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def random_rotations(seed, mode: str, angle_range=(0.0, 2 * np.pi), n: int = 1) -> np.ndarray:
    """``n`` rotation matrices ``[n,3,3]``.

    Axis modes draw the angle uniformly from ``angle_range``.  ``UNIFORM_SO3`` draws a uniform
    axis and an angle with the Haar density restricted to ``angle_range`` clipped to ``[0, pi]``;
    with the full range this is the uniform distribution on SO(3).
    """
    if mode not in ROTATION_MODES:
        raise ValueError(f"rotation mode must be one of {ROTATION_MODES}, got {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = map(float, angle_range)
    if mode == "UNIFORM_SO3":
        axes = rng.standard_normal((n, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        return axis_angle_matrices(axes, _haar_angles(rng, lo, hi, n))
    theta = rng.uniform(lo, hi, n) if hi > lo else np.full(n, lo)
    return _axis_matrices(ROTATION_MODES.index(mode), theta)


def random_rotation(seed, mode: str, angle_range=(0.0, 2 * np.pi)) -> np.ndarray:
    return random_rotations(seed, mode, angle_range, 1)[0]


def check_orthonormal(R: np.ndarray) -> None:
    R = np.asarray(R, dtype=np.float64)
    err = np.max(np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)))
    if err > ORTHONORMAL_TOL:
        raise ValueError(f"rotation matrix is not orthonormal (max |R^T R - I| = {err:.3g})")


def apply_rotation(x: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Premultiply every time step's 3-vector by ``R`` (``x`` is ``[..., 3, L]``)."""
    check_orthonormal(R)
    if x.shape[-2] != 3:
        raise ValueError(f"rotation needs 3-channel input, got shape {x.shape}")
    return R @ x


def add_noise(x: np.ndarray, std: float, seed) -> np.ndarray:
    if std < 0:
        raise ValueError(f"noise std must be nonnegative, got {std}")
    if std == 0:
        return np.array(x, dtype=np.float64, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return x + std * rng.standard_normal(np.shape(x))


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "PHASE_SHIFT"
    phase_min: int = 0
    phase_max: int | None = None          # exclusive; None means the signal length
    rotation_mode: str = "UNIFORM_SO3"
    angle_min: float = 0.0
    angle_max: float = 2 * np.pi
    noise_std: float = 0.0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"transform kind must be one of {TRANSFORM_KINDS}, got {self.kind!r}")
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation mode must be one of {ROTATION_MODES}, got {self.rotation_mode!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    def check_family(self, family: SignalFamily) -> None:
        if self.kind == "PHASE_SHIFT" and family.channels != 1:
            raise ValueError("PHASE_SHIFT applies only to single-channel families")
        if self.kind == "ROTATION_3D" and family.channels != 3:
            raise ValueError("ROTATION_3D applies only to 3-channel families")

    def phase_bounds(self, length: int) -> tuple[int, int]:
        hi = length if self.phase_max is None else self.phase_max
        if not 0 <= self.phase_min < hi <= length:
            raise ValueError(f"phase range [{self.phase_min}, {hi}) invalid for length {length}")
        return self.phase_min, hi


@dataclass
class TransformRecord:
    shifts: np.ndarray | None = None      # integer shifts, same leading shape as the views
    rotations: np.ndarray | None = None   # [..., 3, 3]
    noise_std: float = 0.0


def apply_transforms(x: np.ndarray, spec: TransformSpec, rng: np.random.Generator, views: int = 1):
    """Draw ``views`` independent transforms per signal of ``x`` ``[N,C,L]``.

    Returns ``(out [N, views, C, L], TransformRecord)``.
    """
    N, C, L = x.shape
    out = np.repeat(x[:, None], views, axis=1)
    rec = TransformRecord(noise_std=spec.noise_std)
    shift = spec.kind == "PHASE_SHIFT" or (spec.kind == "COMPOSITE" and C == 1)
    rotate = spec.kind == "ROTATION_3D" or (spec.kind == "COMPOSITE" and C == 3)
    if shift:
        if C != 1:
            raise ValueError("PHASE_SHIFT applies only to single-channel families")
        lo, hi = spec.phase_bounds(L)
        k = rng.integers(lo, hi, size=(N, views))
        idx = (np.arange(L)[None, None, :] - k[..., None]) % L
        out = np.take_along_axis(out, idx[:, :, None, :], axis=-1)
        rec.shifts = k
    if rotate:
        if C != 3:
            raise ValueError("ROTATION_3D applies only to 3-channel families")
        R = random_rotations(rng, spec.rotation_mode, (spec.angle_min, spec.angle_max), N * views)
        R = R.reshape(N, views, 3, 3)
        out = R @ out
        rec.rotations = R
    if spec.kind in ("NOISE", "COMPOSITE") and spec.noise_std > 0:
        out = out + spec.noise_std * rng.standard_normal(out.shape)
    return out, rec


# -- datasets ----------------------------------------------------------

@dataclass
class Dataset:
    signals: np.ndarray           # [N, C, L]
    labels: np.ndarray            # [N]
    source_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.source_ids is None:
            self.source_ids = np.arange(len(self.labels))
        if self.signals.ndim != 3 or len(self.signals) != len(self.labels):
            raise ValueError(f"signals {self.signals.shape} and labels {self.labels.shape} disagree")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> Dataset:
        return Dataset(self.signals[idx], self.labels[idx], self.source_ids[idx])

    def split(self) -> tuple[Dataset, Dataset]:
        """80/20 split on source index: every fifth source goes to the test side."""
        test = (self.source_ids % 5) == 4
        return self.subset(~test), self.subset(test)


def make_dataset(family: SignalFamily, n_per_class: int, seed: int) -> Dataset:
    parts = [generate(family, c, n_per_class, seed) for c in range(family.num_classes)]
    return Dataset(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def write_csv(path, dataset: Dataset) -> int:
    """One window per row: ``label,ch0_s0,ch0_s1,...``.  Returns the number of data rows."""
    N, C, L = dataset.signals.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"ch{c}_s{s}" for c in range(C) for s in range(L)])
        for label, sig in zip(dataset.labels, dataset.signals):
            w.writerow([int(label)] + [repr(float(v)) for v in sig.reshape(-1)])
    return N


def read_csv(path) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "label":
        raise ValueError(f"{path}: header must start with 'label'")
    cols = header[1:]
    C = max(int(c.split("_")[0][2:]) for c in cols) + 1
    L = len(cols) // C
    if C * L != len(cols):
        raise ValueError(f"{path}: {len(cols)} signal columns do not form {C} equal channels")
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    signals = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), C, L)
    return Dataset(signals, labels)


# -- pair sampling -----------------------------------------------------

@dataclass
class PairBatch:
    anchors: np.ndarray          # [B, C, L]
    positives: np.ndarray        # [B, V, C, L]
    negatives: np.ndarray        # [B, C, L]
    labels: np.ndarray           # [B]
    sources: np.ndarray          # [B] source id per anchor
    neg_index: np.ndarray        # [B] row of the anchor used as each negative
    raw: np.ndarray              # [B, C, L] untransformed sources
    record: TransformRecord      # leading shape [B, V+1]; view 0 is the anchor


def sample_pair_batch(dataset: Dataset, transform: TransformSpec, B: int, V: int, seed) -> PairBatch:
    """Anchor and positives are independent transformed views of one source window.

    Each anchor's negative is another anchor in the batch drawn from a different source window.
    """
    if len(dataset) < 2:
        raise ValueError(f"dataset too small for pair sampling ({len(dataset)} windows)")
    if B < 2 or V < 1:
        raise ValueError(f"need batch >= 2 and views >= 1, got B={B}, V={V}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = len(dataset)
    reps = -(-B // N)
    rows = np.concatenate([rng.permutation(N) for _ in range(reps)])[:B]
    raw = dataset.signals[rows]
    views, rec = apply_transforms(raw, transform, rng, V + 1)
    sources = dataset.source_ids[rows]
    neg = np.empty(B, dtype=np.int64)
    for i in range(B):
        choices = np.flatnonzero(sources != sources[i])
        neg[i] = choices[rng.integers(len(choices))]
    anchors = views[:, 0]
    return PairBatch(anchors=anchors, positives=views[:, 1:], negatives=anchors[neg],
                     labels=dataset.labels[rows], sources=sources, neg_index=neg, raw=raw, record=rec)
