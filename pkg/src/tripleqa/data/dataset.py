"""JSON-lines QA datasets with per-modality feature references."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorfile import TensorFileError, read_tensor_file

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
N_ANSWERS = 5


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class Vocabulary:
    """Token list where the line number is the index; 0 is padding, 1 unknown."""

    def __init__(self, tokens: list[str]):
        if len(tokens) < 2:
            raise ValueError("a vocabulary needs at least the padding and unknown entries")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text) -> np.ndarray:
        words = text.split() if isinstance(text, str) else list(text)
        return np.array([self.index.get(w, UNK) for w in words], dtype=np.int64)

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def to_text(self) -> str:
        return "\n".join(self.tokens) + "\n"

    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class QAItem:
    qid: str
    question: np.ndarray
    answers: list[np.ndarray]
    correct: int
    subtitle: np.ndarray
    video_features: np.ndarray | None = None
    audio_features: np.ndarray | None = None
    has_audio: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.answers) != N_ANSWERS:
            raise DatasetError(f"item {self.qid} has {len(self.answers)} answers; exactly {N_ANSWERS} are required")
        if not 0 <= self.correct < N_ANSWERS:
            raise DatasetError(f"item {self.qid}: correct index {self.correct} outside [0, {N_ANSWERS})")

    def with_options(self, order) -> QAItem:
        """Copy with answers reordered by ``order`` and the label remapped."""
        order = [int(i) for i in order]
        if sorted(order) != list(range(N_ANSWERS)):
            raise ValueError(f"not a permutation of the {N_ANSWERS} options: {order}")
        return QAItem(
            self.qid,
            self.question,
            [self.answers[i] for i in order],
            order.index(self.correct),
            self.subtitle,
            self.video_features,
            self.audio_features,
            self.has_audio,
            self.meta,
        )


def _load_features(value, base: Path, line: int, what: str):
    if value is None:
        return None
    if isinstance(value, str):
        path = base / value
        if not path.is_file():
            raise DatasetError(f"{what} file not found: {path}", line)
        try:
            arr = read_tensor_file(path)
        except TensorFileError as exc:
            raise DatasetError(f"{what} file {path}: {exc}", line) from exc
    else:
        arr = np.asarray(value, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0:
        if arr.size == 0:
            return None
        raise DatasetError(f"{what} must be a [length, dim] matrix, got shape {arr.shape}", line)
    return arr.astype(np.float32, copy=False)


def parse_item(record: dict, vocab: Vocabulary, base: Path, line: int) -> QAItem:
    for key in ("qid", "question", "answers", "correct"):
        if key not in record:
            raise DatasetError(f"missing field '{key}'", line)
    answers = record["answers"]
    if not isinstance(answers, list) or len(answers) != N_ANSWERS:
        n = len(answers) if isinstance(answers, list) else "non-list"
        raise DatasetError(f"expected {N_ANSWERS} answers, found {n}", line)
    correct = record["correct"]
    if not isinstance(correct, int) or not 0 <= correct < N_ANSWERS:
        raise DatasetError(f"correct index {correct!r} outside [0, {N_ANSWERS})", line)
    question = vocab.encode(record["question"])
    if len(question) == 0:
        raise DatasetError("empty question", line)
    encoded_answers = [vocab.encode(a) for a in answers]
    if any(len(a) == 0 for a in encoded_answers):
        raise DatasetError("empty answer option", line)
    subtitle = vocab.encode(record.get("subtitle") or "")
    video = _load_features(record.get("video_features"), base, line, "video_features")
    audio = _load_features(record.get("audio_features"), base, line, "audio_features")
    return QAItem(
        str(record["qid"]),
        question,
        encoded_answers,
        correct,
        subtitle,
        video,
        audio,
        audio is not None,
        record.get("meta", {}),
    )


def load_dataset(path, vocab=None, missing_audio: str = "skip", audio_dim: int = 128) -> list[QAItem]:
    """Read a JSONL dataset; feature paths resolve relative to its directory.

    ``vocab`` is a :class:`Vocabulary`, a path, or ``None`` for ``vocab.txt``
    next to the dataset.  Items without audio are dropped when
    ``missing_audio == "skip"`` or given a single zero audio row with
    ``"zero"``; either way they keep ``has_audio = False``.
    """
    if missing_audio not in ("skip", "zero"):
        raise ValueError(f"missing_audio must be 'skip' or 'zero', got {missing_audio!r}")
    path = Path(path)
    if vocab is None:
        vocab = path.parent / "vocab.txt"
    if not isinstance(vocab, Vocabulary):
        vocab = Vocabulary.load(vocab)
    items: list[QAItem] = []
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc}", line_no) from exc
            item = parse_item(record, vocab, path.parent, line_no)
            if not item.has_audio:
                if missing_audio == "skip":
                    skipped += 1
                    continue
                item.audio_features = np.zeros((1, audio_dim), dtype=np.float32)
            items.append(item)
    if skipped:
        log.info("skipped %d items without audio in %s", skipped, path)
    return items


def is_validation(qid: str, folds: int = 6) -> bool:
    digest = hashlib.sha256(qid.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % folds == 0


def split_items(items: list[QAItem], folds: int = 6) -> tuple[list[QAItem], list[QAItem]]:
    """Deterministic train/validation split: one fold in ``folds`` by qid hash."""
    train = [it for it in items if not is_validation(it.qid, folds)]
    val = [it for it in items if is_validation(it.qid, folds)]
    return train, val
