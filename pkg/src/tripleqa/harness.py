"""Training, evaluation and the modality ablation / audio-feature comparisons."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data.checkpoint import load_checkpoint, save_module
from .data.dataset import N_ANSWERS, QAItem
from .model import ModelConfig, TripleAttentionQA, collate

log = logging.getLogger(__name__)

RANDOM_BASELINE = 0.20

# Fixed modality combinations: lambda for (video, subtitle, audio).
ABLATION_COMBOS = [
    ("Q+V", (1.0, 0.0, 0.0)),
    ("Q+S", (0.0, 1.0, 0.0)),
    ("Q+A", (0.0, 0.0, 1.0)),
    ("Q+V+S", (1.0, 1.0, 0.0)),
    ("Q+S+A", (0.0, 1.0, 1.0)),
    ("Q+V+S+A", (1.0, 1.0, 1.0)),
]


class TrainingError(RuntimeError):
    pass


@dataclass
class RunOptions:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    shuffle_options: bool = True


@dataclass
class RunManifest:
    seed: int
    epochs: int
    lr: float
    batch_size: int
    dropout: float
    lambdas: list[float]
    hops: int
    datasets: dict = field(default_factory=dict)
    config_hash: str = ""
    model_config: dict = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class AblationRow:
    combo: str
    lambdas: tuple[float, float, float]
    accuracy: float


def config_hash(cfg: ModelConfig, opts: RunOptions) -> str:
    blob = json.dumps({"model": cfg.to_dict(), "run": asdict(opts)}, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def shuffle_options(item: QAItem, rng: np.random.Generator) -> QAItem:
    return item.with_options(rng.permutation(N_ANSWERS))


def predict(model: TripleAttentionQA, items: list[QAItem], batch_size: int = 64) -> np.ndarray:
    """Logits N×5 in eval mode."""
    was = model.training
    model.eval()
    out = []
    try:
        with nx.no_grad():
            for lo in range(0, len(items), batch_size):
                logits, _ = model(collate(items[lo : lo + batch_size], model.cfg))
                out.append(logits.data)
    finally:
        model.train(was)
    return np.concatenate(out) if out else np.zeros((0, N_ANSWERS))


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(logits, axis=1)


@dataclass
class Evaluation:
    accuracy: float
    qids: list[str]
    predicted: np.ndarray
    correct: np.ndarray
    logits: np.ndarray

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["qid", "pred", "correct"] + [f"logit{i}" for i in range(N_ANSWERS)])
        for qid, p, c, row in zip(self.qids, self.predicted, self.correct, self.logits):
            w.writerow([qid, int(p), int(c)] + [f"{float(v):.6f}" for v in row])
        return buf.getvalue()


def evaluate(model: TripleAttentionQA, items: list[QAItem]) -> Evaluation:
    """Accuracy = fraction of items whose argmax (ties → lowest index) is correct."""
    if not items:
        raise ValueError("evaluate: no items")
    logits = predict(model, items)
    pred = argmax_lowest(logits)
    correct = np.array([it.correct for it in items])
    return Evaluation(float((pred == correct).mean()), [it.qid for it in items], pred, correct, logits)


def check_modalities(items: list[QAItem], cfg: ModelConfig) -> None:
    for modality, attr in (("video", "video_features"), ("audio", "audio_features")):
        if cfg.active(modality):
            missing = [it.qid for it in items if getattr(it, attr) is None]
            if missing:
                raise ValueError(f"{len(missing)} items lack {modality} features (first: {missing[0]})")
    if cfg.active("subtitle"):
        missing = [it.qid for it in items if len(it.subtitle) == 0]
        if missing:
            raise ValueError(f"{len(missing)} items lack subtitle tokens (first: {missing[0]})")


def train_model(
    train_items: list[QAItem],
    val_items: list[QAItem],
    cfg: ModelConfig,
    opts: RunOptions | None = None,
    out_dir=None,
    datasets: dict | None = None,
) -> tuple[TripleAttentionQA, RunManifest]:
    """Mini-batch Adam on softmax cross-entropy over the five options.

    Option order is reshuffled for every item in every epoch.  The returned
    model carries the parameters of the epoch with the best validation
    accuracy (earliest on ties).  With ``out_dir`` the run writes
    ``metrics.csv``, ``manifest.json`` and ``checkpoint/``.
    """
    opts = opts or RunOptions()
    check_modalities(train_items + val_items, cfg)
    model = TripleAttentionQA(cfg, seed=opts.seed)
    model.dropout_rng = np.random.default_rng([opts.seed, 1])
    optim = nx.Adam(model.parameters(), lr=opts.lr)
    rng = np.random.default_rng([opts.seed, 2])
    manifest = RunManifest(
        seed=opts.seed,
        epochs=opts.epochs,
        lr=opts.lr,
        batch_size=opts.batch_size,
        dropout=cfg.dropout,
        lambdas=list(cfg.lambdas),
        hops=cfg.hops,
        datasets=datasets or {},
        config_hash=config_hash(cfg, opts),
        model_config=cfg.to_dict(),
    )
    best_state = {name: p.data.copy() for name, p in model.named_parameters()}
    for epoch in range(opts.epochs):
        model.train()
        order = rng.permutation(len(train_items))
        total, seen = 0.0, 0
        for b, lo in enumerate(range(0, len(order), opts.batch_size)):
            items = [train_items[i] for i in order[lo : lo + opts.batch_size]]
            if opts.shuffle_options:
                items = [shuffle_options(it, rng) for it in items]
            batch = collate(items, cfg)
            optim.zero_grad()
            logits, _ = model(batch)
            loss, _ = nx.softmax_cross_entropy(logits, batch.correct)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            optim.step()
            total += value * len(items)
            seen += len(items)
        val_acc = evaluate(model, val_items).accuracy if val_items else float("nan")
        manifest.metrics.append({"epoch": epoch, "train_loss": total / seen, "val_acc": val_acc})
        log.info("epoch %d: loss %.4f val %.4f", epoch, total / seen, val_acc)
        if not val_items or manifest.best_epoch < 0 or val_acc > manifest.best_val_accuracy:
            manifest.best_epoch = epoch
            manifest.best_val_accuracy = val_acc
            best_state = {name: p.data.copy() for name, p in model.named_parameters()}
    model.load_state_dict(best_state)
    model.eval()
    if out_dir is not None:
        write_run(model, manifest, out_dir)
    return model, manifest


def metrics_csv(manifest: RunManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_acc"])
    for row in manifest.metrics:
        w.writerow([row["epoch"], f"{row['train_loss']:.6f}", f"{row['val_acc']:.6f}"])
    return buf.getvalue()


def write_run(model: TripleAttentionQA, manifest: RunManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(manifest))
    (out / "manifest.json").write_text(manifest.to_json())
    save_module(
        model,
        model.cfg.to_dict(),
        out / "checkpoint",
        {"seed": manifest.seed, "kind": "triple_attention_qa", "vocab_checksum": manifest.datasets.get("vocab_checksum", "")},
    )
    return out


def load_model(checkpoint_dir, expected: dict | None = None) -> TripleAttentionQA:
    from .data.checkpoint import load_into

    _, cfg, _, _ = load_checkpoint(checkpoint_dir, expected)
    model = TripleAttentionQA(ModelConfig.from_dict(cfg))
    load_into(model, checkpoint_dir)
    return model.eval()


# -- comparisons ---------------------------------------------------------------------
def run_ablation(train_items, val_items, base_cfg: ModelConfig, opts: RunOptions | None = None,
                 combos=ABLATION_COMBOS) -> list[AblationRow]:
    """Train each lambda combination with the same seed and budget."""
    opts = opts or RunOptions()
    for modality, attr in (("video", "video_features"), ("audio", "audio_features")):
        if any(getattr(it, attr) is None for it in train_items + val_items):
            raise ValueError(f"ablation needs every modality, but some items have no {modality} features")
    rows = []
    for label, lambdas in combos:
        cfg = ModelConfig.from_dict({**base_cfg.to_dict(), "lambdas": lambdas})
        _, manifest = train_model(train_items, val_items, cfg, opts)
        rows.append(AblationRow(label, lambdas, manifest.best_val_accuracy))
        log.info("ablation %s: %.4f", label, manifest.best_val_accuracy)
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["combo", "lambda1", "lambda2", "lambda3", "accuracy"])
    for r in rows:
        w.writerow([r.combo, *(f"{x:g}" for x in r.lambdas), f"{r.accuracy:.4f}"])
    return buf.getvalue()


def ablation_markdown(rows: list[AblationRow]) -> str:
    lines = [
        "| Accuracy (%) | Videos | Subtitles | Audios |",
        "|---|---|---|---|",
        f"| Random | {100 * RANDOM_BASELINE:.2f} | {100 * RANDOM_BASELINE:.2f} | {100 * RANDOM_BASELINE:.2f} |",
    ]
    for r in rows:
        cells = [f"{100 * r.accuracy:.2f}" if lam > 0 else "-" for lam in r.lambdas]
        lines.append(f"| {r.combo.replace('+', ' + ')} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def compare_audio_features(variants: dict[str, tuple[list[QAItem], list[QAItem]]], base_cfg: ModelConfig,
                           opts: RunOptions | None = None) -> dict[str, float]:
    """Q+A accuracy for each audio feature variant under identical seeds and budget."""
    opts = opts or RunOptions()
    results = {}
    for name, (train_items, val_items) in variants.items():
        dims = {it.audio_features.shape[1] for it in train_items + val_items if it.audio_features is not None}
        if len(dims) != 1:
            raise ValueError(f"variant {name}: audio feature dimensions {sorted(dims)} are not uniform")
        dim = dims.pop()
        cfg = ModelConfig.from_dict({**base_cfg.to_dict(), "lambdas": (0.0, 0.0, 1.0), "audio_in_dim": dim})
        _, manifest = train_model(train_items, val_items, cfg, opts)
        results[name] = manifest.best_val_accuracy
    return results


def comparison_csv(results: dict[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "accuracy"])
    for name, acc in results.items():
        w.writerow([f"Q+{name}", f"{acc:.4f}"])
    return buf.getvalue()


def comparison_markdown(results: dict[str, float]) -> str:
    names = [f"Q+{n}" for n in results]
    return (
        "|  | " + " | ".join(names) + " |\n"
        + "|---|" + "---|" * len(names) + "\n"
        + "| Accuracy | " + " | ".join(f"{100 * a:.2f}" for a in results.values()) + " |\n"
    )


# -- audio feature variants ----------------------------------------------------------
def extract_walnet_variant(dataset_path, model, out_dir, name: str = "walnet") -> Path:
    """Copy of a dataset whose audio features are WALNet segment outputs.

    Every item must reference its clip through ``audio_wav``.  Feature files
    go to ``out_dir/features``; other relative paths are rewritten so the
    new JSONL resolves from ``out_dir``.  Returns the new dataset path.
    """
    from .audio import load_waveform, logmel, pad_to_segment
    from .data.tensorfile import write_tensor_file
    from .walnet import extract_segment_features

    src = Path(dataset_path)
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    checksum = hashlib.sha256(
        b"".join(np.ascontiguousarray(p.data).tobytes() for _, p in model.named_parameters())
    ).hexdigest()
    lines = []
    for n, line in enumerate(src.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        wav = record.get("audio_wav")
        if wav:
            spec = pad_to_segment(logmel(load_waveform(src.parent / wav), source_id=record["qid"]))
            feats = extract_segment_features(spec, model)
            rel = f"features/{record['qid']}.{name}.tnsr"
            write_tensor_file(out / rel, feats.features, {
                "kind": f"{name}_segment_features", "source_id": feats.source_id,
                "walnet": model.cfg.to_dict(), "parameter_sha256": checksum,
            })
            record["audio_features"] = rel
            record["audio_wav"] = _relocate(src.parent, out, wav)
        else:
            record["audio_features"] = None
        if isinstance(record.get("video_features"), str):
            record["video_features"] = _relocate(src.parent, out, record["video_features"])
        lines.append(json.dumps(record, sort_keys=True))
    vocab = src.parent / "vocab.txt"
    if vocab.is_file() and vocab.resolve() != (out / "vocab.txt").resolve():
        (out / "vocab.txt").write_bytes(vocab.read_bytes())
    target = out / "dataset.jsonl"
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return target


def _relocate(src_dir: Path, out_dir: Path, rel: str) -> str:
    return Path(os.path.relpath((src_dir / rel).resolve(), out_dir.resolve())).as_posix()
