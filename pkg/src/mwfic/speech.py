"""Deterministic speech-like test signal (formant-filtered glottal pulses plus fricatives)."""

from __future__ import annotations

from importlib import resources

import numpy as np
from scipy import signal as sps

from .stft import StftConfig, read_wav

# (F1, F2, F3) in Hz for a handful of vowels of an adult male voice
VOWELS = {
    "a": (730, 1090, 2440),
    "e": (530, 1840, 2480),
    "i": (270, 2290, 3010),
    "o": (570, 840, 2410),
    "u": (300, 870, 2240),
}
ACTIVE_LEVEL_DB = -26.0
ASSET = "speech.wav"


def _resonator(f0: float, bw: float, fs: int):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * f0 / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [sum(a)], a  # unity gain at DC


def _voiced(n: int, f0_start: float, f0_end: float, formants, fs: int, rng) -> np.ndarray:
    f0 = np.linspace(f0_start, f0_end, n) * (1 + 0.01 * rng.standard_normal())
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    # glottal spectral tilt, roughly -12 dB/octave above a few hundred Hz
    src = sps.lfilter([1.0], [1.0, -0.97], pulses)
    src = sps.lfilter([1.0], [1.0, -0.9], src)
    src = np.diff(src, prepend=0.0)  # lip radiation
    out = src
    for f, bw in zip(formants, (80, 100, 140)):
        b, a = _resonator(f, bw, fs)
        out = sps.lfilter(b, a, out)
    return out


def _fricative(n: int, fs: int, rng) -> np.ndarray:
    sos = sps.butter(4, [2500, 6500], btype="bandpass", fs=fs, output="sos")
    return 0.3 * sps.sosfilt(sos, rng.standard_normal(n))


def synthetic_speech(duration: float = 2.7, fs: int = 16000, seed: int = 50) -> np.ndarray:
    """A sentence-like signal: syllables of fricative + vowel with pauses.

    Scaled so the level over active (non-pause) segments is -26 dB re full scale.
    """
    rng = np.random.default_rng(seed)
    n_total = int(round(duration * fs))
    out = np.zeros(n_total)
    active = np.zeros(n_total, dtype=bool)
    t = int(0.12 * fs)
    f0 = 128.0
    vowels = list(VOWELS)
    while True:
        frication = int(rng.uniform(0.03, 0.08) * fs) if rng.random() < 0.5 else 0
        n_vowel = int(rng.uniform(0.12, 0.22) * fs)
        if t + frication + n_vowel > n_total - int(0.1 * fs):
            break
        if frication:
            seg = _fricative(frication, fs, rng) * np.hanning(frication)
            out[t : t + frication] += seg
            active[t : t + frication] = True
            t += frication
        f0_next = max(90.0, f0 - rng.uniform(-4, 10))
        seg = _voiced(n_vowel, f0, f0_next, VOWELS[vowels[rng.integers(len(vowels))]], fs, rng)
        env = np.sin(np.pi * np.arange(n_vowel) / n_vowel) ** 0.6
        out[t : t + n_vowel] += seg * env * rng.uniform(0.6, 1.0)
        active[t : t + n_vowel] = True
        t += n_vowel
        f0 = f0_next
        t += int(rng.uniform(0.02, 0.07) * fs) if rng.random() < 0.8 else int(0.18 * fs)
    rms = np.sqrt(np.mean(out[active] ** 2))
    return out * (10 ** (ACTIVE_LEVEL_DB / 20) / rms)


def load_speech(path=None, config: StftConfig | None = None) -> np.ndarray:
    """Mono speech samples from ``path``, or the packaged test sentence."""
    config = config or StftConfig()
    if path is None:
        with resources.as_file(resources.files("mwfic.data") / ASSET) as p:
            data = read_wav(p, config)
    else:
        data = read_wav(path, config)
    if data.shape[0] != 1:
        raise ValueError("speech input must be mono")
    return data[0]
