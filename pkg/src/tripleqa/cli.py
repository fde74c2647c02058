"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("tripleqa")


class UsageError(Exception):
    """Bad arguments or unusable input data (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _lambdas(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3 or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected three nonnegative numbers, got {text!r}")
    return vals


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags without defaults, so a value given
    # before the subcommand is not overwritten.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0 if defaults else argparse.SUPPRESS)
    common.add_argument("--out", type=Path, default=Path("out") if defaults else argparse.SUPPRESS)
    return common


def _training_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--embed", type=int, default=128)
    p.add_argument("--lambda", dest="lambdas", type=_lambdas, default=(1.0, 1.0, 1.0))
    p.add_argument("--missing-audio", choices=("skip", "zero"), default="skip")
    return p


def build_parser() -> argparse.ArgumentParser:
    common, training = _global_flags(False), _training_flags()
    parser = _Parser(prog="tripleqa", parents=[_global_flags(True)])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("logmel", parents=[common], help="WAV files to log-mel tensor files")
    p.add_argument("wavs", nargs="+", type=Path)

    p = sub.add_parser("walnet-train", parents=[common], help="weak-label training on a synthetic tone corpus")
    p.add_argument("--classes", type=int, default=10, help="event classes in the corpus")
    p.add_argument("--outputs", type=int, default=None, help="segment output channels (default: --classes)")
    p.add_argument("--recordings", type=int, default=200)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch", type=int, default=8)

    p = sub.add_parser("walnet-extract", parents=[common], help="replace a dataset's audio features by WALNet features")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset.jsonl whose items carry audio_wav")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic QA dataset")
    p.add_argument("--deciding", choices=("video", "subtitle", "audio", "none"), default="audio")
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--vocab", type=int, default=200)

    p = sub.add_parser("train", parents=[common, training], help="train the QA model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--val", type=Path, default=None, help="validation JSONL (default: hash split of --data)")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.add_argument("--missing-audio", choices=("skip", "zero"), default="skip")

    p = sub.add_parser("ablate", parents=[common, training], help="train the six modality combinations")
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("compare-audio", parents=[common, training], help="Q+A accuracy per audio feature variant")
    p.add_argument("variants", nargs="+", metavar="NAME=DATASET.jsonl")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer")
    p.add_argument("--bits", type=int, choices=(32, 64), default=64)
    return parser


# -- helpers -------------------------------------------------------------------------
def _load_split(path: Path, missing_audio: str, split: str = "hash"):
    from .data import load_dataset, split_items

    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    items = load_dataset(path, missing_audio=missing_audio)
    if not items:
        raise UsageError(f"{path} contains no usable items")
    return split_items(items)


def _model_config(args, vocab_size: int, video_dim: int | None, audio_dim: int | None):
    from .model import ModelConfig

    kwargs = dict(
        vocab_size=vocab_size, lambdas=tuple(args.lambdas), hops=args.hops, embed_dim=args.embed,
        hidden_dim=args.hidden, dropout=args.dropout,
    )
    if video_dim is not None:
        kwargs["video_in_dim"] = video_dim
    if audio_dim is not None:
        kwargs["audio_in_dim"] = audio_dim
    return ModelConfig(**kwargs)


def _feature_dim(items, attr: str) -> int | None:
    dims = {getattr(it, attr).shape[1] for it in items if getattr(it, attr) is not None}
    if len(dims) > 1:
        raise UsageError(f"{attr} dimensions differ across items: {sorted(dims)}")
    return dims.pop() if dims else None


def _vocab_size(path: Path) -> int:
    from .data import Vocabulary

    return len(Vocabulary.load(path.parent / "vocab.txt"))


def _run_options(args):
    from .harness import RunOptions

    if args.epochs < 1 or args.batch < 1 or args.lr <= 0:
        raise UsageError("--epochs and --batch must be positive and --lr > 0")
    return RunOptions(epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=args.seed)


def _write_table(out: Path, stem: str, csv_text: str, md_text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(csv_text)
    (out / f"{stem}.md").write_text(md_text)
    print(md_text, end="")


def _markdown_from_csv(csv_text: str) -> str:
    rows = [line.split(",") for line in csv_text.strip().splitlines()]
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------------
def cmd_logmel(args) -> int:
    from .audio import load_waveform, logmel, save_logmel

    args.out.mkdir(parents=True, exist_ok=True)
    for wav in args.wavs:
        if not wav.is_file():
            raise UsageError(f"no such file: {wav}")
        spec = logmel(load_waveform(wav), source_id=wav.stem)
        target = args.out / f"{wav.stem}.logmel.tnsr"
        save_logmel(spec, target)
        print(f"{target}\t{spec.frames.shape[0]} frames")
    return 0


def cmd_walnet_train(args) -> int:
    from .data import save_module, weak_label_corpus
    from .walnet import WalnetConfig, WeakLabelOptions, mean_average_precision, recording_scores, train_weak_labels

    outputs = args.outputs or args.classes
    if outputs < args.classes:
        raise UsageError(f"--outputs ({outputs}) must be at least --classes ({args.classes})")
    train = weak_label_corpus(args.recordings, args.classes, seed=args.seed, label_dim=outputs)
    held_out = weak_label_corpus(max(args.recordings // 4, 10), args.classes, seed=args.seed + 10_000, label_dim=outputs)
    cfg = WalnetConfig(n_classes=outputs)
    model, losses = train_weak_labels(
        train, cfg, WeakLabelOptions(epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=args.seed)
    )
    labels = np.stack([ex.labels for ex in held_out])[:, : args.classes]
    mAP = mean_average_precision(recording_scores(model, held_out)[:, : args.classes], labels)
    extra = {"kind": "walnet", "seed": args.seed, "corpus_classes": args.classes, "held_out_map": mAP}
    save_module(model, cfg.to_dict(), args.out / "checkpoint", extra)
    rows = "epoch,bce\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(losses))
    (args.out / "walnet_metrics.csv").write_text(rows)
    print(f"held-out mAP {mAP:.4f}")
    return 0


def load_walnet(checkpoint: Path):
    from .data import load_checkpoint, load_into
    from .walnet import WALNet, WalnetConfig

    _, cfg, manifest, _ = load_checkpoint(checkpoint)
    if manifest.get("kind") != "walnet":
        raise UsageError(f"{checkpoint} is not a WALNet checkpoint")
    model = WALNet(WalnetConfig(n_classes=cfg["n_classes"]))
    load_into(model, checkpoint)
    return model.eval()


def cmd_walnet_extract(args) -> int:
    from .harness import extract_walnet_variant

    model = load_walnet(args.checkpoint)
    target = extract_walnet_variant(args.data, model, args.out)
    print(target)
    return 0


def cmd_synth(args) -> int:
    from .data import SyntheticSpec, generate_synthetic

    try:
        spec = SyntheticSpec(
            n_items=args.n, vocab_size=args.vocab, deciding_modality=args.deciding,
            n_event_classes=args.classes, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(generate_synthetic(spec, args.out))
    return 0


def cmd_train(args) -> int:
    from .data import load_dataset
    from .harness import check_modalities, train_model

    opts = _run_options(args)
    if args.val is None:
        train, val = _load_split(args.data, args.missing_audio)
    else:
        train = load_dataset(args.data, missing_audio=args.missing_audio)
        val = load_dataset(args.val, missing_audio=args.missing_audio)
    cfg = _model_config(args, _vocab_size(args.data), _feature_dim(train, "video_features"),
                        _feature_dim(train, "audio_features"))
    try:
        check_modalities(train + val, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    from .data import Vocabulary

    datasets = {
        "train": str(args.data),
        "val": str(args.val) if args.val else f"{args.data} (hash split)",
        "vocab_checksum": Vocabulary.load(args.data.parent / "vocab.txt").checksum(),
    }
    _, manifest = train_model(train, val, cfg, opts, args.out, datasets)
    print(f"best val accuracy {manifest.best_val_accuracy:.4f} at epoch {manifest.best_epoch}")
    return 0


def cmd_eval(args) -> int:
    from .data import CheckpointError, load_dataset, split_items
    from .harness import evaluate, load_model

    try:
        model = load_model(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    items = load_dataset(args.data, missing_audio=args.missing_audio)
    if args.split != "all":
        items = dict(zip(("train", "val"), split_items(items)))[args.split]
    cfg = model.cfg
    for attr, dim, modality in (("video_features", cfg.video_in_dim, "video"),
                                ("audio_features", cfg.audio_in_dim, "audio")):
        have = _feature_dim(items, attr)
        if cfg.active(modality) and have is not None and have != dim:
            raise UsageError(f"checkpoint expects {modality} dimension {dim}, dataset has {have}")
    result = evaluate(model, items)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "predictions.csv").write_text(result.predictions_csv())
    print(f"accuracy {result.accuracy:.4f} on {len(items)} items")
    return 0


def cmd_ablate(args) -> int:
    from .harness import ablation_csv, ablation_markdown, run_ablation

    opts = _run_options(args)
    train, val = _load_split(args.data, args.missing_audio)
    for attr, modality in (("video_features", "video"), ("audio_features", "audio")):
        missing = [it.qid for it in train + val if getattr(it, attr) is None]
        if missing:
            raise UsageError(f"ablation needs {modality} features for every item; missing for {missing[0]}")
    cfg = _model_config(args, _vocab_size(args.data), _feature_dim(train, "video_features"),
                        _feature_dim(train, "audio_features"))
    rows = run_ablation(train, val, cfg, opts)
    _write_table(args.out, "ablation", ablation_csv(rows), ablation_markdown(rows))
    return 0


def cmd_compare_audio(args) -> int:
    from .harness import compare_audio_features, comparison_csv, comparison_markdown

    opts = _run_options(args)
    variants, vocab = {}, None
    for spec in args.variants:
        name, sep, path = spec.partition("=")
        if not sep or not name:
            raise UsageError(f"variant must look like NAME=path/to/dataset.jsonl, got {spec!r}")
        variants[name] = _load_split(Path(path), args.missing_audio)
        vocab = vocab or _vocab_size(Path(path))
    cfg = _model_config(args, vocab, None, None)
    try:
        results = compare_audio_features(variants, cfg, opts)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_table(args.out, "audio_comparison", comparison_csv(results), comparison_markdown(results))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_gradient_suite

    dtype = np.float64 if args.bits == 64 else np.float32
    results = run_gradient_suite(args.seed, dtype)
    for name, err in results.items():
        print(f"{name:24s} {err:.3e}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e}")
    return 0 if worst < TOLERANCE[dtype] else 2


COMMANDS = {
    "logmel": cmd_logmel,
    "walnet-train": cmd_walnet_train,
    "walnet-extract": cmd_walnet_extract,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "compare-audio": cmd_compare_audio,
    "gradcheck": cmd_gradcheck,
}


def cli_main(argv=None) -> int:
    from .audio import AudioFormatError, AudioParseError
    from .data import DatasetError, TensorFileError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DatasetError, TensorFileError, AudioFormatError, AudioParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
