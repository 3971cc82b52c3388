"""STFT analysis, weighted overlap-add synthesis and per-bin filtering.

Shape convention: tensors are stored as (channels, frames, bins) with only the
non-negative frequency bins 0..fft_size/2. Channel order is
[L_1..L_M, R_1..R_M].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "StftConfig",
    "SpectroFrameTensor",
    "analyze",
    "synthesize",
    "apply_filter_per_bin",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    window_len: int = 512
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if min(self.fft_size, self.window_len, self.hop, self.sample_rate) <= 0:
            raise ValueError("STFT parameters must be positive")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window_len > self.fft_size:
            raise ValueError("window_len must not exceed fft_size")
        if 2 * self.hop != self.window_len:
            raise ValueError("hop must be window_len / 2 (50% overlap)")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frequencies(self) -> np.ndarray:
        """Center frequency of each stored bin in Hz."""
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size

    @property
    def window(self) -> np.ndarray:
        # periodic Hann -> its square root sums to unity at 50% overlap
        n = np.arange(self.window_len)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_len))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return 1 + (n_samples - self.window_len) // self.hop


@dataclass
class SpectroFrameTensor:
    data: np.ndarray  # (channels, frames, bins), complex
    config: StftConfig = field(default_factory=StftConfig)
    length: int | None = None  # original signal length in samples

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected (channels, frames, bins), got shape {self.data.shape}")
        if self.data.shape[2] != self.config.n_bins:
            raise ValueError(
                f"tensor has {self.data.shape[2]} bins, config implies {self.config.n_bins}"
            )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def scaled(self, factor) -> "SpectroFrameTensor":
        return SpectroFrameTensor(self.data * factor, self.config, self.length)


def _as_multichannel(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("signal must be (channels, samples) or mono")
    return x


def analyze(signal, config: StftConfig | None = None) -> SpectroFrameTensor:
    """Windowed, zero-padded STFT of a (channels, samples) array.

    Frame ``l`` covers samples ``[l*hop, l*hop + window_len)``; the window sits
    at the start of the ``fft_size`` frame and the remainder is zero.
    """
    config = config or StftConfig()
    if isinstance(signal, (list, tuple)):
        lengths = {len(np.asarray(ch)) for ch in signal}
        if len(lengths) > 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")
    x = _as_multichannel(signal)
    n = x.shape[1]
    if n == 0 or x.shape[0] == 0:
        raise ValueError("empty signal")
    if n < config.window_len:
        raise ValueError(f"signal of {n} samples is shorter than one window")

    n_frames = config.n_frames(n)
    idx = np.arange(n_frames)[:, None] * config.hop + np.arange(config.window_len)
    frames = x[:, idx] * config.window
    data = np.fft.rfft(frames, n=config.fft_size, axis=-1)
    return SpectroFrameTensor(data, config, n)


def synthesize(tensor: SpectroFrameTensor, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add resynthesis, inverse of :func:`analyze` on interior samples."""
    config = tensor.config
    frames = np.fft.irfft(tensor.data, n=config.fft_size, axis=-1)[..., : config.window_len]
    frames = frames * config.window
    n_channels, n_frames = tensor.data.shape[:2]
    n_out = (n_frames - 1) * config.hop + config.window_len if n_frames else 0
    if length is None:
        length = tensor.length if tensor.length is not None else n_out
    out = np.zeros((n_channels, max(n_out, length)))
    for l in range(n_frames):
        start = l * config.hop
        out[:, start : start + config.window_len] += frames[:, l]
    return out[:, :length]


def apply_filter_per_bin(tensor: SpectroFrameTensor, w_left, w_right) -> SpectroFrameTensor:
    """Binaural output ``z_s(l, k) = w_s(k)^H y(l, k)`` for s in {L, R}.

    ``w_left`` and ``w_right`` have shape (bins, channels).
    """
    w_left = np.asarray(w_left)
    w_right = np.asarray(w_right)
    expected = (tensor.data.shape[2], tensor.data.shape[0])
    for w in (w_left, w_right):
        if w.shape != expected:
            raise ValueError(f"filter shape {w.shape} does not match (bins, channels) {expected}")
    z_left = np.einsum("kc,clk->lk", w_left.conj(), tensor.data)
    z_right = np.einsum("kc,clk->lk", w_right.conj(), tensor.data)
    return SpectroFrameTensor(np.stack([z_left, z_right]), tensor.config, tensor.length)


def read_wav(path, config: StftConfig | None = None) -> np.ndarray:
    """Read a WAV file as float (channels, samples); int16 data is scaled to [-1, 1)."""
    rate, data = wavfile.read(path)
    if config is not None and rate != config.sample_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {config.sample_rate} Hz")
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype.kind == "f":
        data = data.astype(float)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return data.T if data.ndim == 2 else data[None, :]


def write_wav(path, signal, sample_rate: int = 16000, fmt: str = "float32") -> None:
    """Write (channels, samples) as 16-bit PCM (``fmt='int16'``) or 32-bit float."""
    x = _as_multichannel(signal)
    if fmt == "int16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, data.T if data.shape[0] > 1 else data[0])
