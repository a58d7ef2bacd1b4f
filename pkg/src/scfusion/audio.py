"""Narrowband magnitude spectrograms from 16-bit PCM mono WAV clips."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingDataset
from .errors import ConfigurationError, InputError

NORMALIZATIONS = ("per_bin_zscore", "none")


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    transform_size: int = 512
    normalization: str = "per_bin_zscore"

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if not 1 <= self.window_samples <= self.transform_size:
            raise ConfigurationError(
                f"window of {self.window_samples} samples does not fit "
                f"transform_size {self.transform_size}"
            )
        if self.hop_samples < 1:
            raise ConfigurationError("hop must be at least one sample")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.transform_size // 2 + 1


@dataclass
class Spectrogram:
    frames: np.ndarray  # (F, B)
    frame_times: np.ndarray  # centre of each frame, seconds
    bin_freqs: np.ndarray  # Hz


def load_audio(path) -> tuple[np.ndarray, int]:
    """Samples scaled to [-1, 1) and the sample rate."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise InputError(f"{path}: unsupported WAV encoding ({exc}); expected 16-bit PCM") from exc
    except EOFError as exc:
        raise InputError(f"{path}: truncated WAV header") from exc
    if channels != 1:
        raise InputError(f"{path}: expected 1 channel, found {channels}")
    if width != 2:
        raise InputError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, samples, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


def hamming(width: int) -> np.ndarray:
    """Symmetric Hamming window, 0.54 - 0.46 cos(2 pi n / (W - 1))."""
    if width == 1:
        return np.ones(1)
    n = np.arange(width)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (width - 1))


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1


def zscore_bins(frames: np.ndarray) -> np.ndarray:
    """Zero mean, unit (population) variance per column; constant columns become 0."""
    mean = frames.mean(axis=0)
    centered = frames - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    scale = np.maximum(np.abs(frames).max(axis=0), 1.0)
    flat = std <= 1e-12 * scale
    out = np.divide(centered, std, out=np.zeros_like(centered), where=~flat)
    # second centring pass removes rounding residue left by the division
    out -= out.mean(axis=0)
    out[:, flat] = 0.0
    return out


def spectrogram(samples, config: SpectrogramConfig = SpectrogramConfig()) -> Spectrogram:
    samples = np.asarray(samples, dtype=float)
    w, h = config.window_samples, config.hop_samples
    if samples.ndim != 1:
        raise InputError("expected a 1-D sample vector")
    if len(samples) < w:
        raise InputError(f"clip of {len(samples)} samples is shorter than one {w}-sample window")
    count = frame_count(len(samples), w, h)
    idx = np.arange(w)[None, :] + h * np.arange(count)[:, None]
    frames = samples[idx] * hamming(w)
    mag = np.abs(np.fft.rfft(frames, n=config.transform_size, axis=1))
    if config.normalization == "per_bin_zscore":
        mag = zscore_bins(mag)
    times = (h * np.arange(count) + w / 2.0) / config.sample_rate
    freqs = np.arange(config.n_bins) * config.sample_rate / config.transform_size
    return Spectrogram(mag, times, freqs)


def spectrogram_dataset(spec: Spectrogram, name: str) -> EmbeddingDataset:
    """One record per frame, frequency bins as the audio feature dimension.

    The visual part is empty and labels are 0, so the file can be merged with
    externally produced embeddings later.
    """
    count = spec.frames.shape[0]
    return EmbeddingDataset(
        spec.frames,
        np.zeros((count, 0)),
        np.zeros(count, dtype=np.uint8),
        [name] * count,
        [f"{name}:{i:06d}" for i in range(count)],
    )
