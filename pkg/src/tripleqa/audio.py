"""Waveform ingestion and 128-band log-mel spectrograms.

Audio is normalized to mono, 44.1 kHz, amplitudes in [-1, 1] (PCM-16 scaled
by 1/32768).  Spectrogram frames are 2048 samples with a 512-sample hop, so
128 frames span about 1.5 s, the segment length the audio network works
with.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

TARGET_RATE = 44100
N_MELS = 128
FRAME_LEN = 2048
HOP = 512
LOG_FLOOR = 1e-6
RESAMPLE_TAPS = 32
SEGMENT_FRAMES = 128
SEGMENT_HOP_FRAMES = 64


class AudioFormatError(ValueError):
    """The file is not PCM-16 RIFF/WAVE audio."""


class AudioParseError(ValueError):
    """The file is malformed or truncated."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = TARGET_RATE

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class LogMelSpectrogram:
    frames: np.ndarray  # T × n_mels
    frame_hop_seconds: float = HOP / TARGET_RATE
    source_id: str = ""
    params: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def manifest(self) -> dict:
        return {
            "kind": "logmel",
            "source_id": self.source_id,
            "frame_hop_seconds": self.frame_hop_seconds,
            **self.params,
        }


# -- WAV I/O -------------------------------------------------------------------
def load_waveform(path) -> Waveform:
    """Read a PCM-16 WAV file as a mono 44.1 kHz waveform."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise AudioFormatError(f"{path}: not PCM audio ({msg})") from exc
        raise AudioParseError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise AudioParseError(f"{path}: truncated RIFF header") from exc
    if width != 2:
        raise AudioFormatError(f"{path}: unsupported bit depth {8 * width}; only 16-bit PCM is accepted")
    if n_channels not in (1, 2):
        raise AudioFormatError(f"{path}: {n_channels} channels; expected mono or stereo")
    expected = n_frames * n_channels * width
    if len(raw) < expected:
        raise AudioParseError(f"{path}: data chunk truncated ({len(raw)} of {expected} bytes)")

    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64).reshape(-1, n_channels)
    mono = pcm.mean(axis=1) / 32768.0
    if rate != TARGET_RATE:
        mono = resample(mono, rate, TARGET_RATE)
    return Waveform(mono, TARGET_RATE)


def write_waveform(path, samples: np.ndarray, sample_rate: int = TARGET_RATE) -> None:
    """Write mono samples in [-1, 1] as PCM-16."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def resample(x: np.ndarray, rate_in: int, rate_out: int, taps: int = RESAMPLE_TAPS) -> np.ndarray:
    """Hann-windowed sinc interpolation with ``taps`` input samples per output.

    The sinc cutoff follows the lower of the two Nyquist frequencies, so
    downsampling is low-passed.
    """
    x = np.asarray(x, dtype=np.float64)
    if rate_in == rate_out:
        return x.copy()
    n_out = len(x) * rate_out // rate_in
    step = rate_in / rate_out
    cutoff = min(1.0, rate_out / rate_in)
    half = taps // 2
    offsets = np.arange(taps) - half + 1
    out = np.empty(n_out)
    for start in range(0, n_out, 1 << 15):
        pos = np.arange(start, min(n_out, start + (1 << 15))) * step
        idx = np.floor(pos).astype(np.int64)[:, None] + offsets
        d = pos[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * d) * (0.5 + 0.5 * np.cos(np.pi * d / half))
        kernel[np.abs(d) >= half] = 0.0
        valid = (idx >= 0) & (idx < len(x))
        out[start : start + len(pos)] = (np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0) * kernel).sum(axis=1)
    return out


# -- spectrograms ----------------------------------------------------------------
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_LEN, sample_rate: int = TARGET_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``n_mels × (n_fft // 2 + 1)``, peak 1."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        raise ValueError(f"waveform of {n_samples} samples is shorter than one {frame_len}-sample frame")
    return 1 + (n_samples - frame_len) // hop


def logmel(w: Waveform, n_mels: int = N_MELS, frame_len: int = FRAME_LEN, hop: int = HOP,
           source_id: str = "") -> LogMelSpectrogram:
    """Log-mel spectrogram with ``1 + (len - frame_len) // hop`` frames."""
    x = np.asarray(w.samples, dtype=np.float64)
    T = frame_count(len(x), frame_len, hop)
    frames = sliding_window_view(x, frame_len)[::hop][:T]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame_len) / frame_len)  # periodic Hann
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    fb = mel_filterbank(n_mels, frame_len, w.sample_rate)
    mel = np.log(power @ fb.T + LOG_FLOOR)
    params = {
        "n_mels": n_mels,
        "frame_len": frame_len,
        "hop": hop,
        "sample_rate": w.sample_rate,
        "window": "hann",
        "mel_scale": "htk",
        "log_floor": LOG_FLOOR,
    }
    return LogMelSpectrogram(mel.astype(np.float32), hop / w.sample_rate, source_id, params)


def segment_count(n_frames: int) -> int:
    """Number of 128-frame windows at hop 64 after truncating to a multiple of 64."""
    usable = (n_frames // SEGMENT_HOP_FRAMES) * SEGMENT_HOP_FRAMES
    if usable < SEGMENT_FRAMES:
        return 0
    return (usable - SEGMENT_FRAMES) // SEGMENT_HOP_FRAMES + 1


def segment_means(spec: LogMelSpectrogram) -> np.ndarray:
    """Mean log-mel frame of every 128-frame segment (S × n_mels).

    This is the raw-feature counterpart of the audio network's segment
    outputs: the same windows, summarized by their average spectrum.
    """
    S = segment_count(spec.n_frames)
    if S < 1:
        raise ValueError(f"spectrogram with {spec.n_frames} frames holds no full {SEGMENT_FRAMES}-frame segment")
    rows = [spec.frames[j * SEGMENT_HOP_FRAMES : j * SEGMENT_HOP_FRAMES + SEGMENT_FRAMES].mean(axis=0) for j in range(S)]
    return np.stack(rows).astype(np.float32)


def pad_to_segment(spec: LogMelSpectrogram) -> LogMelSpectrogram:
    """Pad short spectrograms with log-floor frames up to one full segment."""
    T = spec.n_frames
    if T >= SEGMENT_FRAMES:
        return spec
    fill = np.full((SEGMENT_FRAMES - T, spec.frames.shape[1]), np.log(LOG_FLOOR), dtype=spec.frames.dtype)
    return LogMelSpectrogram(np.concatenate([spec.frames, fill]), spec.frame_hop_seconds, spec.source_id, spec.params)


def save_logmel(spec: LogMelSpectrogram, path) -> None:
    from .data.tensorfile import write_tensor_file

    write_tensor_file(path, spec.frames, spec.manifest())


def load_logmel(path) -> LogMelSpectrogram:
    from .data.tensorfile import read_tensor_file

    frames, manifest = read_tensor_file(path, with_manifest=True)
    if frames.ndim != 2:
        raise ValueError(f"{path}: expected a [T, n_mels] tensor, got shape {frames.shape}")
    hop = manifest.get("frame_hop_seconds", HOP / TARGET_RATE)
    params = {k: v for k, v in manifest.items() if k not in ("kind", "source_id", "frame_hop_seconds")}
    return LogMelSpectrogram(frames, hop, manifest.get("source_id", Path(path).stem), params)
