"""Weak-label audio CNN producing segment-level event features.

Input is a log-mel spectrogram laid out as a 1×T×128 image (time along
the height axis).  Six blocks of ``(conv3×3 → batchnorm → ReLU) × 2 →
maxpool 2×2`` reduce a 128×128 patch to 512×2×2; a 2×2 convolution with
1024 filters and a 1×1 convolution with ``n_classes`` filters then give one
output row per 128-frame segment, hopping 64 frames.  Recording-level
predictions are the mean of the sigmoid segment outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .audio import LOG_FLOOR, SEGMENT_FRAMES, SEGMENT_HOP_FRAMES, LogMelSpectrogram
from .numerics import Tensor

log = logging.getLogger(__name__)

BLOCK_FILTERS = (16, 32, 64, 128, 256, 512)


@dataclass(frozen=True)
class WalnetConfig:
    n_classes: int = 128
    filters_per_block: tuple[int, ...] = BLOCK_FILTERS
    conv_kernel: int = 3
    l7_filters: int = 1024
    l7_kernel: int = 2
    n_mels: int = 128

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if tuple(self.filters_per_block) != BLOCK_FILTERS:
            raise ValueError(f"block filter counts are fixed at {BLOCK_FILTERS}, got {self.filters_per_block}")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "filters_per_block": list(self.filters_per_block),
            "conv_kernel": self.conv_kernel,
            "l7_filters": self.l7_filters,
            "l7_kernel": self.l7_kernel,
            "n_mels": self.n_mels,
            "l8_activation": "sigmoid",
            "block_order": "conv-bn-relu-conv-bn-relu-maxpool",
        }


@dataclass
class SegmentFeatureMatrix:
    features: np.ndarray  # S × n_classes, values in (0, 1)
    source_id: str = ""
    segment_hop_frames: int = SEGMENT_HOP_FRAMES
    segment_len_frames: int = SEGMENT_FRAMES

    @property
    def n_segments(self) -> int:
        return self.features.shape[0]


@dataclass
class WeakLabelExample:
    spectrogram: LogMelSpectrogram
    labels: np.ndarray  # n_classes, {0, 1}


class _Block(nx.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng):
        self.conv1 = nx.Conv2d(in_ch, out_ch, kernel, rng, stride=1, padding=1)
        self.bn1 = nx.BatchNorm2d(out_ch)
        self.conv2 = nx.Conv2d(out_ch, out_ch, kernel, rng, stride=1, padding=1)
        self.bn2 = nx.BatchNorm2d(out_ch)

    def forward(self, x):
        x = nx.relu(self.bn1(self.conv1(x)))
        x = nx.relu(self.bn2(self.conv2(x)))
        return nx.maxpool2d(x, 2)


class WALNet(nx.Module):
    def __init__(self, cfg: WalnetConfig | None = None, seed: int = 0):
        self.cfg = cfg or WalnetConfig()
        rng = np.random.default_rng(seed)
        chans = (1,) + tuple(self.cfg.filters_per_block)
        self.blocks = [_Block(chans[i], chans[i + 1], self.cfg.conv_kernel, rng) for i in range(len(chans) - 1)]
        self.l7 = nx.Conv2d(chans[-1], self.cfg.l7_filters, self.cfg.l7_kernel, rng)
        self.l8 = nx.Conv2d(self.cfg.l7_filters, self.cfg.n_classes, 1, rng)
        self.assign_names()

    def _as_batch(self, x) -> Tensor:
        if isinstance(x, LogMelSpectrogram):
            x = x.frames
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[2] != self.cfg.n_mels:
            raise nx.ShapeError(f"expected T×{self.cfg.n_mels} spectrogram(s), got shape {data.shape}")
        if data.shape[1] < SEGMENT_FRAMES:
            raise ValueError(
                f"spectrogram has {data.shape[1]} frames; at least {SEGMENT_FRAMES} are needed. "
                f"Pad with log-floor values (log({LOG_FLOOR})), e.g. audio.pad_to_segment()"
            )
        dtype = self.l8.weight.dtype
        if isinstance(x, Tensor):
            return x.reshape(data.shape[0], 1, data.shape[1], data.shape[2])
        return Tensor(data[:, None].astype(dtype))

    def forward(self, x) -> Tensor:
        """Segment logits, shape B×S×n_classes (before the sigmoid)."""
        h = self._as_batch(x)
        for block in self.blocks:
            h = block(h)
        h = nx.relu(self.l7(h))
        h = self.l8(h)  # B × C × S × 1
        B, C, S, _ = h.shape
        return h.reshape(B, C, S).transpose(0, 2, 1)

    def trace(self, x) -> list[tuple[str, tuple[int, ...]]]:
        """Shapes (C×H×W) after every block boundary for a single input."""
        shapes = []
        with nx.no_grad():
            h = self._as_batch(x)[0:1]
            for i, block in enumerate(self.blocks):
                h = block(h)
                shapes.append((f"L{i + 1}", h.shape[1:]))
            h = nx.relu(self.l7(h))
            shapes.append(("L7", h.shape[1:]))
            h = self.l8(h)
            shapes.append(("L8", h.shape[1:]))
        return shapes


def walnet_forward(x, model: WALNet) -> Tensor:
    """Segment-level logits S×C_s for one spectrogram."""
    out = model(x)
    return out.reshape(out.shape[1], out.shape[2])


def floor_chain(T: int, halvings: int = 6) -> int:
    for _ in range(halvings):
        T //= 2
    return T


def segment_count_for_frames(T: int) -> int:
    return floor_chain(T) - 1


def receptive_field(cfg: WalnetConfig | None = None) -> tuple[int, int, int]:
    """(size, hop, start offset) of one segment output in input frames."""
    cfg = cfg or WalnetConfig()
    size, jump, start = 1, 1, 0
    pad = cfg.conv_kernel // 2
    for _ in cfg.filters_per_block:
        for _ in range(2):
            size += (cfg.conv_kernel - 1) * jump
            start -= pad * jump
        size += jump
        jump *= 2
    size += (cfg.l7_kernel - 1) * jump
    return size, jump, start


def extract_segment_features(x, model: WALNet, source_id: str | None = None) -> SegmentFeatureMatrix:
    """Sigmoid L8 activations (S × n_classes) with batch norm in eval mode."""
    if source_id is None:
        source_id = x.source_id if isinstance(x, LogMelSpectrogram) else ""
    was_training = model.training
    model.eval()
    try:
        with nx.no_grad():
            logits = walnet_forward(x, model)
            feats = nx.sigmoid(logits).data
    finally:
        model.train(was_training)
    return SegmentFeatureMatrix(feats.astype(np.float32), source_id)


def recording_pool(segment_outputs) -> Tensor:
    """Average over the segment axis (second to last)."""
    segment_outputs = nx.as_tensor(segment_outputs)
    if segment_outputs.shape[-2] < 1:
        raise ValueError("recording_pool needs at least one segment")
    return segment_outputs.mean(axis=-2)


# -- weak-label training ---------------------------------------------------------
@dataclass
class WeakLabelOptions:
    epochs: int = 30
    lr: float = 3e-4
    batch_size: int = 8
    seed: int = 0
    target_map: float | None = None  # stop early once training mAP reaches this
    eval_every: int = 1
    history: list = field(default_factory=list)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of the precision at the rank of each positive (ties by stable order)."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    y = np.asarray(labels)[order] > 0
    if not y.any():
        raise ValueError("average precision is undefined without positives")
    hits = np.cumsum(y)
    precision = hits / np.arange(1, len(y) + 1)
    return float(precision[y].mean())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Class-averaged AP over classes that have at least one positive."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    aps = [average_precision(scores[:, c], labels[:, c]) for c in range(labels.shape[1]) if labels[:, c].any()]
    return float(np.mean(aps))


def recording_scores(model: WALNet, dataset: list[WeakLabelExample], batch_size: int = 8) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    try:
        with nx.no_grad():
            for batch in _batches(dataset, batch_size, None):
                x = np.stack([ex.spectrogram.frames for ex in batch])
                out.append(recording_pool(nx.sigmoid(model(x))).data)
    finally:
        model.train(was_training)
    return np.concatenate(out)


def _batches(dataset, batch_size, rng):
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    # Batches only stack spectrograms of equal length.
    groups: dict[int, list[int]] = {}
    for i in order:
        groups.setdefault(dataset[i].spectrogram.n_frames, []).append(int(i))
    for idx in groups.values():
        for lo in range(0, len(idx), batch_size):
            yield [dataset[i] for i in idx[lo : lo + batch_size]]


def train_weak_labels(
    dataset: list[WeakLabelExample],
    cfg: WalnetConfig,
    opts: WeakLabelOptions | None = None,
    model: WALNet | None = None,
) -> tuple[WALNet, list[float]]:
    """Fit segment outputs so their pooled sigmoid matches recording labels.

    Returns the trained model and the mean binary cross-entropy per epoch.
    """
    opts = opts or WeakLabelOptions()
    if not dataset:
        raise ValueError("train_weak_labels: empty dataset")
    for i, ex in enumerate(dataset):
        if np.asarray(ex.labels).shape != (cfg.n_classes,):
            raise ValueError(
                f"example {i} has {np.asarray(ex.labels).shape[0]} labels but the network has {cfg.n_classes} classes"
            )
    model = model or WALNet(cfg, seed=opts.seed)
    model.train()
    optim = nx.Adam(model.parameters(), lr=opts.lr)
    rng = np.random.default_rng(opts.seed + 1)
    losses: list[float] = []
    for epoch in range(opts.epochs):
        total, count = 0.0, 0
        for batch in _batches(dataset, opts.batch_size, rng):
            x = np.stack([ex.spectrogram.frames for ex in batch])
            y = np.stack([np.asarray(ex.labels, dtype=np.float32) for ex in batch])
            optim.zero_grad()
            pooled = recording_pool(nx.sigmoid(model(x)))
            loss = nx.binary_cross_entropy(pooled, y)
            loss.backward()
            optim.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        losses.append(total / count)
        record = {"epoch": epoch, "bce": losses[-1]}
        if opts.target_map is not None and (epoch + 1) % opts.eval_every == 0:
            labels = np.stack([ex.labels for ex in dataset])
            record["map"] = mean_average_precision(recording_scores(model, dataset), labels)
        opts.history.append(record)
        log.info("walnet epoch %d: %s", epoch, record)
        if opts.target_map is not None and record.get("map", 0.0) >= opts.target_map:
            break
    model.eval()
    return model, losses
