"""Synthetic corpora standing in for movie QA clips.

Every QA item has a latent event class.  Exactly one modality (the
*deciding* modality) carries that class: a tone burst in the audio, a
feature motif in the video, or the event word in the subtitles.  The other
modalities carry the same kind of cue for an independently drawn class, so
they look alike but say nothing about the answer.  The correct option names
the event; four distractors name other classes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..audio import (
    FRAME_LEN,
    HOP,
    TARGET_RATE,
    LogMelSpectrogram,
    Waveform,
    load_waveform,
    logmel,
    segment_means,
    write_waveform,
)
from .dataset import N_ANSWERS, Vocabulary
from .tensorfile import write_tensor_file

MODALITIES = ("video", "subtitle", "audio", "none")

EVENT_NAMES = [
    "gunshot", "crash", "siren", "bark", "bell", "horn", "applause", "glass",
    "engine", "scream", "thunder", "whistle", "knock", "splash", "alarm", "drum",
]
QUESTION_TEMPLATES = [
    "what happens in this scene ?",
    "what sound is heard in the clip ?",
    "which event takes place here ?",
    "what do we hear when the scene starts ?",
]
ANSWER_PREFIXES = ["a", "the", "there is a", "you hear a"]

# 256 log-mel frames: three full 128-frame segments with no leftover frames.
QA_CLIP_SAMPLES = 255 * HOP + FRAME_LEN
WEAK_CLIP_SAMPLES = 127 * HOP + FRAME_LEN


def tone_frequencies(n_classes: int, low: float = 300.0, high: float = 7000.0) -> np.ndarray:
    """Log-spaced fundamental frequency for every event class."""
    if n_classes == 1:
        return np.array([low])
    return low * (high / low) ** (np.arange(n_classes) / (n_classes - 1))


def render_clip(rng: np.random.Generator, n_samples: int, events, n_classes: int,
                noise: float = 0.01, harmonic: float = 0.4) -> np.ndarray:
    """White-noise bed plus a Hann-shaped tone burst per ``(class, onset, length)`` event.

    Each burst has its class fundamental plus a second harmonic at relative
    level ``harmonic``.
    """
    freqs = tone_frequencies(n_classes)
    x = noise * rng.standard_normal(n_samples)
    for cls, onset, length in events:
        t = np.arange(length) / TARGET_RATE
        f = freqs[cls]
        amp = rng.uniform(0.15, 0.3)
        burst = amp * (np.sin(2 * np.pi * f * t) + harmonic * np.sin(4 * np.pi * f * t + 0.5))
        x[onset : onset + length] += burst * np.hanning(length)
    return np.clip(x, -1.0, 1.0)


def weak_label_corpus(n_recordings: int, n_classes: int = 10, seed: int = 0, max_events: int = 3,
                      n_samples: int = WEAK_CLIP_SAMPLES, label_dim: int | None = None):
    """Recordings with 1 to ``max_events`` tone bursts and recording-level labels.

    ``label_dim`` pads the label vectors with always-negative classes, so a
    network with more outputs than event classes can be trained.
    """
    from ..walnet import WeakLabelExample

    label_dim = label_dim or n_classes
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_recordings):
        k = int(rng.integers(1, max_events + 1))
        classes = rng.choice(n_classes, size=k, replace=False)
        events = []
        for c in classes:
            length = int(rng.integers(TARGET_RATE // 5, TARGET_RATE // 2))
            onset = int(rng.integers(0, n_samples - length))
            events.append((int(c), onset, length))
        # Pure tones: with ten log-spaced classes a second harmonic would sit on
        # the fundamental two classes up.
        x = render_clip(rng, n_samples, events, n_classes, harmonic=0.0)
        spec = logmel(Waveform(x), source_id=f"weak{i:05d}")
        labels = np.zeros(label_dim, dtype=np.float32)
        labels[classes] = 1
        examples.append(WeakLabelExample(spec, labels))
    return examples


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 600
    vocab_size: int = 200
    deciding_modality: str = "audio"
    n_event_classes: int = 5
    seed: int = 0
    video_in_dim: int = 512
    video_frames: tuple[int, int] = (8, 16)
    subtitle_tokens: tuple[int, int] = (12, 30)
    motif_scale: float = 3.0
    clip_frames: int = 256

    def __post_init__(self):
        if self.deciding_modality not in MODALITIES:
            raise ValueError(f"deciding_modality must be one of {MODALITIES}, got {self.deciding_modality!r}")
        if not N_ANSWERS <= self.n_event_classes <= len(EVENT_NAMES):
            raise ValueError(
                f"n_event_classes must lie in [{N_ANSWERS}, {len(EVENT_NAMES)}], got {self.n_event_classes}"
            )
        if self.clip_frames < 128:
            raise ValueError(f"clip_frames must be at least one 128-frame segment, got {self.clip_frames}")
        if self.vocab_size < len(_fixed_tokens(self.n_event_classes)) + 1:
            raise ValueError(f"vocab_size {self.vocab_size} leaves no room for subtitle filler words")


def _fixed_tokens(n_classes: int) -> list[str]:
    words = ["<pad>", "<unk>"]
    for text in QUESTION_TEMPLATES + ANSWER_PREFIXES:
        for w in text.split():
            if w not in words:
                words.append(w)
    return words + EVENT_NAMES[:n_classes]


def build_vocabulary(spec: SyntheticSpec) -> Vocabulary:
    fixed = _fixed_tokens(spec.n_event_classes)
    filler = [f"w{i:03d}" for i in range(spec.vocab_size - len(fixed))]
    return Vocabulary(fixed + filler)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write ``dataset.jsonl``, ``vocab.txt``, feature tensors and WAVs under ``out_dir``.

    Output bytes depend only on ``spec``.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary(spec)
    vocab.save(out / "vocab.txt")
    filler = [t for t in vocab.tokens if t.startswith("w") and t[1:].isdigit()]
    n_cls = spec.n_event_classes
    clip_samples = (spec.clip_frames - 1) * HOP + FRAME_LEN

    rng = np.random.default_rng(spec.seed)
    motifs = rng.standard_normal((n_cls, spec.video_in_dim))
    motifs /= np.linalg.norm(motifs, axis=1, keepdims=True)

    lines = []
    for n in range(spec.n_items):
        qid = f"q{n:05d}"
        event = int(rng.integers(n_cls))
        planted = {m: (event if m == spec.deciding_modality else int(rng.integers(n_cls)))
                   for m in ("video", "subtitle", "audio")}

        distractors = rng.choice([c for c in range(n_cls) if c != event], size=N_ANSWERS - 1, replace=False)
        options = [event] + [int(d) for d in distractors]
        order = rng.permutation(N_ANSWERS)
        options = [options[i] for i in order]
        correct = int(np.where(order == 0)[0][0])
        answers = [f"{ANSWER_PREFIXES[int(rng.integers(len(ANSWER_PREFIXES)))]} {EVENT_NAMES[c]}" for c in options]
        question = QUESTION_TEMPLATES[int(rng.integers(len(QUESTION_TEMPLATES)))]

        n_sub = int(rng.integers(spec.subtitle_tokens[0], spec.subtitle_tokens[1] + 1))
        words = [filler[int(i)] for i in rng.integers(len(filler), size=n_sub)]
        words.insert(int(rng.integers(n_sub + 1)), EVENT_NAMES[planted["subtitle"]])
        subtitle = " ".join(words)

        n_vid = int(rng.integers(spec.video_frames[0], spec.video_frames[1] + 1))
        video = rng.standard_normal((n_vid, spec.video_in_dim))
        start = int(rng.integers(0, n_vid - 2))
        video[start : start + 3] += spec.motif_scale * motifs[planted["video"]]
        video_rel = f"features/{qid}.video.tnsr"
        write_tensor_file(out / video_rel, video.astype(np.float32), {"kind": "video", "qid": qid})

        length = int(rng.integers(int(0.6 * TARGET_RATE), int(1.0 * TARGET_RATE)))
        onset = int(rng.integers(0, clip_samples - length))
        wave_data = render_clip(rng, clip_samples, [(planted["audio"], onset, length)], n_cls)
        wav_rel = f"audio/{qid}.wav"
        write_waveform(out / wav_rel, wave_data)
        spec_ = logmel(load_waveform(out / wav_rel), source_id=qid)
        audio_rel = f"features/{qid}.audio.tnsr"
        write_tensor_file(out / audio_rel, segment_means(spec_), {"kind": "logmel_segment_means", **spec_.manifest()})

        lines.append(
            json.dumps(
                {
                    "qid": qid,
                    "question": question,
                    "answers": answers,
                    "correct": correct,
                    "subtitle": subtitle,
                    "video_features": video_rel,
                    "audio_features": audio_rel,
                    "audio_wav": wav_rel,
                    "meta": {"event_class": event, "planted": planted, "options": options},
                },
                sort_keys=True,
            )
        )
    (out / "dataset.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {**asdict(spec), "tone_frequencies_hz": [round(float(f), 3) for f in tone_frequencies(n_cls)]}
    (out / "synthetic_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "dataset.jsonl"


def spectrogram_of(dataset_dir, record: dict) -> LogMelSpectrogram:
    return logmel(load_waveform(Path(dataset_dir) / record["audio_wav"]), source_id=record["qid"])
