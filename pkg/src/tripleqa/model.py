"""Triple-attention question answering over question, video, subtitle and audio.

Each modality is encoded into a sequence of ``hidden_dim`` vectors.  A joint
memory vector starts from the masked stream means and is refined over
``hops`` rounds: at each hop the memory attends to the question and to every
active modality, and the memory grows by the lambda-weighted element-wise
products of the question context with each modality context::

    m_{k+1} = m_k + l1 * (q ⊙ v) + l2 * (q ⊙ s) + l3 * (q ⊙ a)

With ``lambdas == (1, 0, 0)`` this is the two-stream dual-attention update.
The final memory is concatenated with each encoded answer option and scored
by a shared two-layer feed-forward network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .data.dataset import N_ANSWERS, PAD, QAItem
from .numerics import Tensor

MODALITIES = ("video", "subtitle", "audio")


@dataclass
class ModelConfig:
    vocab_size: int
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    hops: int = 2
    embed_dim: int = 128
    hidden_dim: int = 32
    video_in_dim: int = 512
    audio_in_dim: int = 128
    n_answers: int = N_ANSWERS
    dropout: float = 0.5
    zero_init_scorer: bool = True
    max_question: int = 64
    max_answer: int = 32
    max_subtitle: int = 1024
    max_video: int = 512
    max_audio: int = 512

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if len(self.lambdas) != 3 or any(x < 0 for x in self.lambdas):
            raise ValueError(f"lambdas must be three nonnegative numbers, got {self.lambdas}")
        if self.hops < 1:
            raise ValueError(f"hops must be >= 1, got {self.hops}")
        for name in ("embed_dim", "hidden_dim", "video_in_dim", "audio_in_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_answers != N_ANSWERS:
            raise ValueError(f"n_answers is fixed at {N_ANSWERS}")

    def active(self, modality: str) -> bool:
        return self.lambdas[MODALITIES.index(modality)] > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**{**d, "lambdas": tuple(d["lambdas"])})


@dataclass
class EncodedStream:
    vectors: Tensor  # B × L × H
    mask: np.ndarray  # B × L, True on real positions
    modality: str

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class MemoryState:
    k: int
    m: Tensor  # B × H


@dataclass
class ContextVectors:
    q: Tensor
    v: Tensor | None = None
    s: Tensor | None = None
    a: Tensor | None = None
    attention_weights: dict[str, np.ndarray] = field(default_factory=dict)


# -- batching ------------------------------------------------------------------
def _pad_tokens(seqs, cap: int) -> tuple[np.ndarray, np.ndarray]:
    seqs = [np.asarray(s, dtype=np.int64)[:cap] for s in seqs]
    if any(len(s) == 0 for s in seqs):
        raise ValueError("empty token sequence")
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, _length_mask([len(s) for s in seqs], L)


def _length_mask(lengths, L: int) -> np.ndarray:
    return np.arange(L)[None, :] < np.asarray(lengths)[:, None]


def _pad_features(mats, cap: int, dim: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for m in mats:
        if m is None:
            raise ValueError(f"{what} features are required for this configuration but an item has none")
        m = np.asarray(m, dtype=np.float32)[:cap]
        if m.ndim != 2 or m.shape[1] != dim:
            raise nx.ShapeError(f"{what} features have shape {m.shape}; expected [length, {dim}]")
        if m.shape[0] == 0:
            raise ValueError(f"{what} features are empty")
        rows.append(m)
    L = max(m.shape[0] for m in rows)
    out = np.zeros((len(rows), L, dim), dtype=np.float32)
    for i, m in enumerate(rows):
        out[i, : m.shape[0]] = m
    return out, _length_mask([m.shape[0] for m in rows], L)


@dataclass
class Batch:
    qids: list[str]
    question: np.ndarray
    question_mask: np.ndarray
    answers: np.ndarray  # B × 5 × Ta
    answer_mask: np.ndarray
    correct: np.ndarray
    subtitle: np.ndarray | None = None
    subtitle_mask: np.ndarray | None = None
    video: np.ndarray | None = None
    video_mask: np.ndarray | None = None
    audio: np.ndarray | None = None
    audio_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.qids)


def collate(items: list[QAItem], cfg: ModelConfig) -> Batch:
    """Pad a list of items into arrays; only modalities with lambda > 0 are kept."""
    q, qm = _pad_tokens([it.question for it in items], cfg.max_question)
    flat_answers = [a for it in items for a in it.answers]
    a, am = _pad_tokens(flat_answers, cfg.max_answer)
    B = len(items)
    batch = Batch(
        [it.qid for it in items],
        q,
        qm,
        a.reshape(B, N_ANSWERS, -1),
        am.reshape(B, N_ANSWERS, -1),
        np.array([it.correct for it in items], dtype=np.int64),
    )
    if cfg.active("subtitle"):
        batch.subtitle, batch.subtitle_mask = _pad_tokens([it.subtitle for it in items], cfg.max_subtitle)
    if cfg.active("video"):
        batch.video, batch.video_mask = _pad_features(
            [it.video_features for it in items], cfg.max_video, cfg.video_in_dim, "video"
        )
    if cfg.active("audio"):
        batch.audio, batch.audio_mask = _pad_features(
            [it.audio_features for it in items], cfg.max_audio, cfg.audio_in_dim, "audio"
        )
    return batch


# -- building blocks --------------------------------------------------------------
def masked_mean(stream: EncodedStream) -> Tensor:
    w = stream.mask.astype(stream.vectors.dtype)
    total = (stream.vectors * w[:, :, None]).sum(axis=1)
    return total / stream.lengths[:, None].astype(stream.vectors.dtype)


def init_memory(q: EncodedStream, streams: dict[str, EncodedStream], lambdas) -> Tensor:
    """m_0 = mean(q) ⊙ (l1·mean(v) + l2·mean(s) + l3·mean(a)), or mean(q) if all lambdas are 0."""
    mix = None
    for lam, modality in zip(lambdas, MODALITIES):
        if lam == 0:
            continue
        if modality not in streams:
            raise ValueError(f"lambda for {modality} is {lam} but no {modality} stream was given")
        term = lam * masked_mean(streams[modality])
        mix = term if mix is None else mix + term
    q_bar = masked_mean(q)
    return q_bar if mix is None else q_bar * mix


def update_memory(m: Tensor, contexts: ContextVectors, lambdas) -> Tensor:
    """m + l1·(q⊙v) + l2·(q⊙s) + l3·(q⊙a); zero-lambda terms are skipped."""
    out = m
    for lam, ctx, modality in zip(lambdas, (contexts.v, contexts.s, contexts.a), MODALITIES):
        if lam == 0:
            continue
        if ctx is None:
            raise ValueError(f"lambda for {modality} is {lam} but its context vector is missing")
        if ctx.shape != m.shape:
            raise nx.ShapeError(f"{modality} context shape {ctx.shape} does not match memory {m.shape}")
        out = out + lam * (contexts.q * ctx)
    return out


class Attention(nx.Module):
    """Additive attention: score_i = w · tanh(W_f f_i + W_m m)."""

    def __init__(self, hidden: int, rng):
        self.feature = nx.Linear(hidden, hidden, rng)
        self.memory = nx.Linear(hidden, hidden, rng, bias=False)
        self.score = nx.Linear(hidden, 1, rng, bias=False)

    def forward(self, stream: EncodedStream, m: Tensor) -> tuple[Tensor, Tensor]:
        if not stream.mask.any(axis=1).all():
            raise ValueError(f"{stream.modality}: every position of a stream is masked")
        B, L, H = stream.vectors.shape
        hidden = nx.tanh(self.feature(stream.vectors) + self.memory(m).reshape(B, 1, H))
        scores = self.score(hidden).reshape(B, L)
        weights = nx.softmax(scores, axis=1, mask=stream.mask)
        context = (weights.reshape(B, L, 1) * stream.vectors).sum(axis=1)
        return context, weights


class StreamEncoder(nx.Module):
    """Two strided 1-D convolutions (kernel 3, stride 2, padding 1, ReLU): length L → ceil(ceil(L/2)/2)."""

    def __init__(self, in_dim: int, hidden: int, rng):
        self.in_dim = in_dim
        self.conv1 = nx.Conv1d(in_dim, hidden, 3, rng, stride=2, padding=1)
        self.conv2 = nx.Conv1d(hidden, hidden, 3, rng, stride=2, padding=1)

    def forward(self, x, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise nx.ShapeError(f"stream encoder expects feature dimension {self.in_dim}, got {x.shape[-1]}")
        lengths = mask.sum(axis=1)
        for conv in (self.conv1, self.conv2):
            x = x * mask[:, :, None].astype(x.dtype)
            x = nx.relu(conv(x))
            lengths = (lengths + 1) // 2
            mask = _length_mask(lengths, x.shape[1])
        return x * mask[:, :, None].astype(x.dtype), mask


def encoded_length(n: int) -> int:
    half = -(-n // 2)
    return -(-half // 2)


class TripleAttentionQA(nx.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        E, H = cfg.embed_dim, cfg.hidden_dim
        self.embedding = nx.Embedding(cfg.vocab_size, E, rng)
        self.question_lstm = nx.LSTM(E, H, rng, bidirectional=True)
        self.question_proj = nx.Linear(2 * H, H, rng)
        self.video_encoder = StreamEncoder(cfg.video_in_dim, H, rng)
        self.subtitle_encoder = StreamEncoder(E, H, rng)
        self.audio_encoder = StreamEncoder(cfg.audio_in_dim, H, rng)
        self.answer_lstm = nx.LSTM(E, H, rng)
        self.attn_question = Attention(H, rng)
        self.attn_video = Attention(H, rng)
        self.attn_subtitle = Attention(H, rng)
        self.attn_audio = Attention(H, rng)
        self.scorer_hidden = nx.Linear(2 * H, H, rng)
        self.scorer_out = nx.Linear(H, 1, rng)
        if cfg.zero_init_scorer:
            self.scorer_out.weight.data[...] = 0
        self.dropout_rng = np.random.default_rng(seed + 1)
        self.assign_names()

    def encoder_parameters(self, modality: str) -> list[nx.Parameter]:
        """Parameters that only the given modality's path touches."""
        prefixes = {
            "video": ("video_encoder.", "attn_video."),
            "subtitle": ("subtitle_encoder.", "attn_subtitle."),
            "audio": ("audio_encoder.", "attn_audio."),
        }[modality]
        return [p for name, p in self.named_parameters() if name.startswith(prefixes)]

    def _dropout(self, x: Tensor) -> Tensor:
        return nx.dropout(x, self.cfg.dropout, self.training, self.dropout_rng)

    # -- encoders -------------------------------------------------------------
    def embed_tokens(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError("cannot embed an empty token sequence")
        return self.embedding(tokens)

    def encode_question(self, tokens: np.ndarray, mask: np.ndarray) -> EncodedStream:
        states, _ = self.question_lstm(self.embed_tokens(tokens), mask=mask)
        return EncodedStream(self.question_proj(states), mask, "question")

    def encode_stream(self, features, mask: np.ndarray, modality: str) -> EncodedStream:
        encoder = {"video": self.video_encoder, "subtitle": self.subtitle_encoder, "audio": self.audio_encoder}[modality]
        if modality == "subtitle":
            features = self.embed_tokens(features)
        vectors, out_mask = encoder(features, mask)
        return EncodedStream(vectors, out_mask, modality)

    def encode_answers(self, tokens: np.ndarray, mask: np.ndarray) -> Tensor:
        B, n, T = tokens.shape
        if n != N_ANSWERS:
            raise ValueError(f"expected {N_ANSWERS} answer options, got {n}")
        # One call per option with identical shapes: a matrix product can round a
        # row differently depending on where it sits, and permuting the options
        # must permute the encodings exactly.
        finals = [self.answer_lstm(self.embed_tokens(tokens[:, j]), mask=mask[:, j])[1] for j in range(n)]
        return nx.stack(finals, axis=1)

    def encode(self, batch: Batch) -> tuple[EncodedStream, dict[str, EncodedStream], Tensor]:
        q = self.encode_question(batch.question, batch.question_mask)
        streams = {}
        raw = {
            "video": (batch.video, batch.video_mask),
            "subtitle": (batch.subtitle, batch.subtitle_mask),
            "audio": (batch.audio, batch.audio_mask),
        }
        for modality in MODALITIES:
            if self.cfg.active(modality):
                feats, mask = raw[modality]
                if feats is None:
                    raise ValueError(f"lambda for {modality} is positive but the batch has no {modality} input")
                streams[modality] = self.encode_stream(feats, mask, modality)
        answers = self.encode_answers(batch.answers, batch.answer_mask)
        return q, streams, answers

    # -- attention memory -----------------------------------------------------
    def attend(self, stream: EncodedStream, m: Tensor) -> tuple[Tensor, Tensor]:
        module = {
            "question": self.attn_question,
            "video": self.attn_video,
            "subtitle": self.attn_subtitle,
            "audio": self.attn_audio,
        }[stream.modality]
        return module(stream, m)

    def hop(self, q: EncodedStream, streams: dict[str, EncodedStream], m: Tensor) -> ContextVectors:
        q_ctx, q_w = self.attend(q, m)
        ctx = ContextVectors(q_ctx, attention_weights={"question": q_w.data})
        for modality, attr in zip(MODALITIES, ("v", "s", "a")):
            if modality in streams:
                c, w = self.attend(streams[modality], m)
                setattr(ctx, attr, c)
                ctx.attention_weights[modality] = w.data
        return ctx

    def memory_trajectory(self, q, streams, hops: int | None = None):
        """Memories m_0..m_K and the contexts of every hop."""
        lambdas = self.cfg.lambdas
        m = init_memory(q, streams, lambdas)
        memories, contexts = [MemoryState(0, m)], []
        for k in range(hops or self.cfg.hops):
            ctx = self.hop(q, streams, m)
            m = update_memory(m, ctx, lambdas)
            memories.append(MemoryState(k + 1, m))
            contexts.append(ctx)
        return memories, contexts

    def score_answers(self, m: Tensor, answers: Tensor) -> Tensor:
        """Logits B×5 from [m ; answer_j] through one shared feed-forward scorer."""
        B, n, H = answers.shape
        if n != N_ANSWERS:
            raise ValueError(f"expected {N_ANSWERS} answer encodings, got {n}")
        logits = []
        for j in range(n):  # per option, for exact permutation equivariance
            joint = nx.concat([m, answers[:, j]], axis=-1)
            hidden = self._dropout(nx.relu(self.scorer_hidden(joint)))
            logits.append(self.scorer_out(hidden))
        return nx.concat(logits, axis=1)

    def forward(self, batch: Batch) -> tuple[Tensor, dict]:
        q, streams, answers = self.encode(batch)
        q = EncodedStream(self._dropout(q.vectors), q.mask, q.modality)
        streams = {k: EncodedStream(self._dropout(s.vectors), s.mask, s.modality) for k, s in streams.items()}
        memories, contexts = self.memory_trajectory(q, streams)
        logits = self.score_answers(memories[-1].m, answers)
        diagnostics = {
            "attention": [ctx.attention_weights for ctx in contexts],
            "memory": [state.m.data for state in memories],
        }
        return logits, diagnostics


def forward_qa(item: QAItem, model: TripleAttentionQA, training: bool = False) -> tuple[Tensor, dict]:
    """Logits (length 5) and per-hop attention maps for a single item."""
    was = model.training
    model.train(training)
    try:
        logits, diag = model(collate([item], model.cfg))
    finally:
        model.train(was)
    return logits.reshape(N_ANSWERS), diag
