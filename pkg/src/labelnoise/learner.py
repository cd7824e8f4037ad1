"""Linear patch scorer trained with the soft Dice loss.

The scorer maps the k x k neighbourhood (zero-padded at the borders) of every
pixel, across all channels, to a logit. Training is mini-batch gradient
descent with momentum, where each batch's soft Dice is pooled over every
pixel in the batch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit as sigmoid

from .corrupt import (
    CorruptionSpec,
    DatasetPlan,
    NoOp,
    apply,
    build_dataset_plan,
    is_dataset_level,
)
from .grid import Mask, MultiChannelImage, round_half_up
from .seeding import OP_CORRUPT, OP_LABELED, OP_PLAN, OP_SHUFFLE, SeedKey

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Training cannot start with the given dataset/config."""


@dataclass(frozen=True, eq=False)
class PatchScorer:
    weights: np.ndarray  # (channels, k, k)
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[1] != w.shape[2] or w.shape[1] % 2 == 0:
            raise ValueError(f"weights must be (channels, k, k) with k odd, got {w.shape}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @classmethod
    def zeros(cls, channels: int, k: int = 5) -> "PatchScorer":
        return cls(np.zeros((channels, k, k)), 0.0)

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    @property
    def channels(self) -> int:
        return self.weights.shape[0]

    def flat(self) -> np.ndarray:
        return np.append(self.weights.ravel(), self.bias)

    @classmethod
    def from_flat(cls, theta: np.ndarray, channels: int, k: int) -> "PatchScorer":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1].reshape(channels, k, k), float(theta[-1]))

    def __eq__(self, other):
        if not isinstance(other, PatchScorer):
            return NotImplemented
        return np.array_equal(self.flat(), other.flat())


def patch_features(images: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    """im2col: (N, C, H, W) -> (N, H, W, C*k*k) with zero-padded borders.

    Feature index ``c*k*k + i*k + j`` reads the padded pixel at row ``y + i``
    and column ``x + j``.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    r = k // 2
    padded = np.pad(images, ((0, 0), (0, 0), (r, r), (r, r)))
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    n, c, h, w = images.shape
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5), dtype=dtype).reshape(
        n, h, w, c * k * k
    )


def _check_channels(model: PatchScorer, image: MultiChannelImage):
    if image.channels != model.channels:
        raise ValueError(
            f"image has {image.channels} channels, model expects {model.channels}"
        )


def logits(model: PatchScorer, image: MultiChannelImage) -> np.ndarray:
    _check_channels(model, image)
    x = patch_features(image.values, model.k)[0]
    return x @ model.weights.ravel() + model.bias


def forward(model: PatchScorer, image: MultiChannelImage) -> np.ndarray:
    """Per-pixel foreground probability, shape (H, W)."""
    return sigmoid(logits(model, image))


def predict(model: PatchScorer, image: MultiChannelImage, threshold: float = 0.5) -> Mask:
    return Mask((forward(model, image) >= threshold).astype(np.uint8))


def soft_dice_loss(p, g, eps: float = 1.0) -> tuple[float, np.ndarray]:
    """Soft Dice loss pooled over all entries, and its gradient w.r.t. ``p``.

    loss = 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"probability shape {p.shape} != mask shape {g.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    inter = float(np.sum(p * g))
    denom = float(np.sum(p) + np.sum(g)) + eps
    num = 2.0 * inter + eps
    loss = 1.0 - num / denom
    grad = -(2.0 * g * denom - num) / denom**2
    return loss, grad


def loss_and_gradient(
    model: PatchScorer, features: np.ndarray, targets: np.ndarray, eps: float = 1.0
) -> tuple[float, np.ndarray]:
    """Soft Dice over a stack of images and its gradient w.r.t. ``model.flat()``.

    ``features`` is the output of :func:`patch_features`; ``targets`` has the
    matching (N, H, W) shape.
    """
    feats = np.asarray(features)
    return _batch_loss_grad(feats, np.arange(feats.shape[0]), targets, model.flat(), eps)


def _batch_loss_grad(feats, rows, targets, theta, eps, reduction="image"):
    # per-image matmuls over rows of the cached feature block; avoids a gather copy
    n_feat = feats.shape[-1]
    w = theta[:-1].astype(feats.dtype)
    shape = feats.shape[1:-1]
    z = np.empty((len(rows),) + shape)
    for i, r in enumerate(rows):
        z[i] = feats[r] @ w
    z += theta[-1]
    p = sigmoid(z)
    g = np.asarray(targets, dtype=np.float64).reshape(p.shape)
    if reduction == "batch":
        loss, dp = soft_dice_loss(p, g, eps)
    else:
        dp = np.empty_like(p)
        losses = np.empty(len(rows))
        for i in range(len(rows)):
            losses[i], dp[i] = soft_dice_loss(p[i], g[i], eps)
        loss = float(losses.mean())
        dp /= len(rows)
    dz = (dp * p * (1.0 - p)).astype(feats.dtype)
    gw = np.zeros(n_feat)
    for i, r in enumerate(rows):
        gw += np.tensordot(dz[i], feats[r], axes=dz.ndim - 1)
    return loss, np.append(gw, float(dz.sum(dtype=np.float64)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.5
    momentum: float = 0.9
    batch_size: int = 8
    eps: float = 1.0
    patch_size: int = 5
    labeled_fraction: float = 1.0
    dice_reduction: str = "image"
    schedule: str = "linear"
    # gradients longer than this are rescaled; a single large step can push
    # every logit into saturation, where the soft Dice gradient vanishes
    clip_norm: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.eps <= 0:
            raise ValueError("learning_rate, batch_size and eps must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be a positive odd integer")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if self.dice_reduction not in ("image", "batch"):
            raise ValueError("dice_reduction must be 'image' or 'batch'")
        if self.schedule not in ("constant", "linear"):
            raise ValueError("schedule must be 'constant' or 'linear'")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")

    def step_size(self, epoch: int) -> float:
        if self.schedule == "linear":
            return self.learning_rate * (1.0 - epoch / self.epochs)
        return self.learning_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown train config fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: PatchScorer
    history: list = field(default_factory=list)
    plan: Optional[DatasetPlan] = None
    used_ids: tuple = ()


def labeled_subset(ids: Sequence[int], fraction: float, seed: int) -> tuple:
    """Deterministic subset of ``ids`` of size max(1, round(fraction * N))."""
    ids = tuple(ids)
    if fraction >= 1:
        return ids
    m = max(1, int(round_half_up(fraction * len(ids))))
    pick = SeedKey(seed, 0, 0, OP_LABELED).generator().permutation(len(ids))[:m]
    return tuple(ids[j] for j in sorted(pick))


def train(
    dataset,
    spec: CorruptionSpec = NoOp(),
    config: TrainConfig = TrainConfig(),
    features: Optional[np.ndarray] = None,
) -> TrainResult:
    """Train a fresh :class:`PatchScorer` on ``dataset`` (a list of samples).

    Every epoch, each training mask is re-derived from its pristine reference
    with ``SeedKey(config.seed, epoch, sample_id, OP_CORRUPT)``. Permute and
    Discard are resolved once before the first epoch. ``features`` may carry
    precomputed :func:`patch_features` for ``dataset`` (row i for sample i).
    """
    samples = list(dataset)
    if not samples:
        raise TrainingError("dataset is empty")
    by_id = {s.id: s for s in samples}
    row = {s.id: i for i, s in enumerate(samples)}
    channels = samples[0].image.channels
    k = config.patch_size

    plan = build_dataset_plan(spec, [s.id for s in samples], SeedKey(config.seed, 0, 0, OP_PLAN))
    ids = labeled_subset(plan.retained, config.labeled_fraction, config.seed)
    if not ids:
        raise TrainingError(f"no training samples left after applying {spec!r}")

    model = PatchScorer.zeros(channels, k)
    result = TrainResult(model, [], plan, ids)
    if config.epochs == 0:
        return result

    if features is None:
        feats = patch_features(np.stack([by_id[i].image.values for i in ids]), k, np.float32)
        rows = np.arange(len(ids))
    else:
        if features.shape[0] != len(samples) or features.shape[-1] != channels * k * k:
            raise ValueError("precomputed features do not match the dataset")
        feats = features
        rows = np.array([row[i] for i in ids])

    per_mask = not is_dataset_level(spec)
    theta = model.flat()
    velocity = np.zeros_like(theta)
    history = []
    for epoch in range(config.epochs):
        lr = config.step_size(epoch)
        order = SeedKey(config.seed, epoch, 0, OP_SHUFFLE).generator().permutation(len(ids))
        targets = {}
        for j in order:
            sid = ids[j]
            ref = by_id[plan.label_source(sid)].mask
            if per_mask:
                ref = apply(spec, ref, SeedKey(config.seed, epoch, sid, OP_CORRUPT))
            targets[j] = ref.values
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grad = _batch_loss_grad(
                feats,
                rows[batch],
                np.stack([targets[j] for j in batch]),
                theta,
                config.eps,
                config.dice_reduction,
            )
            if config.clip_norm:
                norm = float(np.linalg.norm(grad))
                if norm > config.clip_norm:
                    grad = grad * (config.clip_norm / norm)
            velocity = config.momentum * velocity - lr * grad
            theta = theta + velocity
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    result.model = PatchScorer.from_flat(theta, channels, k)
    result.history = history
    return result


# -- checkpoint ---------------------------------------------------------------



def save_model(model: PatchScorer, path) -> None:
    """JSON header line, then little-endian float64 weights followed by bias."""
    header = json.dumps(
        {"format": "patch-scorer", "k": model.k, "channels": model.channels},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(model.flat().astype("<f8").tobytes())


def load_model(path) -> PatchScorer:
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(data[:nl])
        k, channels = int(header["k"]), int(header["channels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header") from exc
    body = data[nl + 1 :]
    count = channels * k * k + 1
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {count} float64 values, got {len(body) / 8:g}")
    theta = np.frombuffer(body, dtype="<f8")
    return PatchScorer.from_flat(theta, channels, k)
