"""Model-exact synthetic binaural scenes.

Sources are rendered in the free field (spherical spreading, exact fractional
delays); diffuse noise and late reverberation are drawn in the STFT domain with
the sinc coherence of an isotropic field, so every oracle quantity used later
matches the signal model by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .stft import SpectroFrameTensor, StftConfig, analyze, synthesize

__all__ = [
    "ArrayGeometry",
    "ScenarioSpec",
    "SceneComponents",
    "source_position",
    "render_point_source",
    "point_source_responses",
    "diffuse_coherence_matrix",
    "coherence_factor",
    "generate_diffuse_noise",
    "synthesize_late_reverberation",
    "design_lowpass",
    "lowpass",
    "scale_to_snr",
    "build_scene",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Two behind-the-ear arrays on the interaural (y) axis, x pointing forward.

    Each side holds ``mics_per_side`` microphones on a front-to-back line; the
    front microphone of each side is the reference.
    """

    ear_spacing: float = 0.17
    mics_per_side: int = 3
    intra_array_spacing: float = 0.0076
    sound_speed: float = 343.0
    positions: np.ndarray | None = None

    def __post_init__(self):
        if self.positions is None:
            m = self.mics_per_side
            x = self.intra_array_spacing * ((m - 1) / 2 - np.arange(m))
            y = self.ear_spacing / 2
            left = np.stack([x, np.full(m, y), np.zeros(m)], axis=1)
            right = np.stack([x, np.full(m, -y), np.zeros(m)], axis=1)
            object.__setattr__(self, "positions", np.concatenate([left, right]))
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (2 * self.mics_per_side, 3) or not np.all(np.isfinite(pos)):
            raise ValueError("positions must be a finite (2M, 3) array")
        object.__setattr__(self, "positions", pos)

    @property
    def n_channels(self) -> int:
        return 2 * self.mics_per_side

    @property
    def reference_left(self) -> int:
        return 0

    @property
    def reference_right(self) -> int:
        return self.mics_per_side

    def pair_distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


def source_position(azimuth_deg: float, distance: float) -> np.ndarray:
    """Azimuth 0 is straight ahead, -90 is the left side (positive y)."""
    if not (np.isfinite(azimuth_deg) and np.isfinite(distance)) or distance <= 0:
        raise ValueError("azimuth must be finite and distance positive")
    th = np.deg2rad(azimuth_deg)
    return distance * np.array([np.cos(th), -np.sin(th), 0.0])


def _propagation(azimuth_deg, distance, geometry: ArrayGeometry):
    src = source_position(azimuth_deg, distance)
    r = np.linalg.norm(geometry.positions - src, axis=1)
    if np.any(r < 1e-9):
        raise ValueError("source coincides with a microphone")
    return r / geometry.sound_speed, 1.0 / r


def _fractional_delay(x, delays, gains, fs, n_out):
    n = x.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(n + int(np.ceil(np.max(delays) * fs)) + 2)))
    spec = np.fft.rfft(x, nfft)
    f = np.fft.rfftfreq(nfft, 1.0 / fs)
    shift = gains[:, None] * np.exp(-2j * np.pi * f[None, :] * delays[:, None])
    shift[:, -1] = shift[:, -1].real  # Nyquist bin of a real signal stays real
    return np.fft.irfft(spec * shift, nfft, axis=-1)[:, :n_out]


def render_point_source(signal, azimuth_deg: float, distance: float,
                        geometry: ArrayGeometry = ArrayGeometry(), fs: int = 16000) -> np.ndarray:
    """Free-field rendering: channel m is the signal delayed by r_m / c and scaled by 1 / r_m."""
    x = np.asarray(signal, dtype=float)
    delays, gains = _propagation(azimuth_deg, distance, geometry)
    return _fractional_delay(x, delays, gains, fs, x.size)


def point_source_responses(azimuth_deg: float, distance: float,
                           geometry: ArrayGeometry = ArrayGeometry(), fs: int = 16000,
                           duration: float = 0.050, lead: int = 32) -> np.ndarray:
    """Impulse responses truncated to ``duration`` after the direct sound.

    Responses are time-aligned so the earliest arrival sits at sample ``lead``.
    """
    delays, gains = _propagation(azimuth_deg, distance, geometry)
    delays = delays - delays.min() + lead / fs
    n = int(round(duration * fs))
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return _fractional_delay(impulse, delays, gains, fs, n)


def diffuse_coherence_matrix(geometry: ArrayGeometry, config: StftConfig) -> np.ndarray:
    """Spherically isotropic coherence sinc(2 pi f d / c) per bin, shape (bins, 2M, 2M)."""
    d = geometry.pair_distances()
    arg = 2 * config.frequencies[:, None, None] * d[None] / geometry.sound_speed
    return np.sinc(arg)  # numpy sinc(x) = sin(pi x) / (pi x)


def coherence_factor(gamma) -> np.ndarray:
    """C with C C^H = Gamma, from the eigendecomposition with negative eigenvalues clipped."""
    vals, vecs = np.linalg.eigh(gamma)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]


def _complex_gaussian(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _frames_for(n: int, config: StftConfig) -> int:
    return max(1, int(np.ceil((n - config.window_len) / config.hop)) + 1)


def generate_diffuse_noise(duration: float, geometry: ArrayGeometry = ArrayGeometry(),
                           config: StftConfig = StftConfig(), seed: int = 0) -> np.ndarray:
    """Multichannel noise whose per-bin spatial coherence is the sinc model."""
    if duration < 1.0:
        raise ValueError("duration must be at least 1 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration * config.sample_rate))
    n_frames = _frames_for(n, config)
    mix = coherence_factor(diffuse_coherence_matrix(geometry, config))
    z = _complex_gaussian(rng, (config.n_bins, geometry.n_channels, n_frames))
    data = np.einsum("kcj,kjl->clk", mix, z)
    return synthesize(SpectroFrameTensor(data, config), length=n)


def synthesize_late_reverberation(speech, geometry: ArrayGeometry = ArrayGeometry(),
                                  t60: float = 0.8, onset: float = 0.050,
                                  config: StftConfig = StftConfig(), seed: int = 0,
                                  drr_db: float | None = 0.0, reference_power: float | None = None,
                                  reference_channel: int = 0, smoothing: float = 0.050) -> np.ndarray:
    """Late-reverberation surrogate ``d = sqrt(phi_d) C n`` drawn per frame and bin.

    ``phi_d`` is the speech power envelope (recursively smoothed with time constant
    ``smoothing``), delayed by ``onset`` and attenuated by the T60 decay over the
    onset. With ``drr_db`` set, the result is rescaled so that ``reference_power``
    (default: the speech power) over the late-reverb power at
    ``reference_channel`` equals ``drr_db``; the T60 factor then cancels.
    """
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    x = np.asarray(speech, dtype=float)
    n = x.size
    rng = np.random.default_rng(seed)
    n_frames = _frames_for(n, config)
    padded = np.concatenate([x, np.zeros((n_frames - 1) * config.hop + config.window_len - n)])
    power = np.abs(analyze(padded, config).data[0]) ** 2  # (frames, bins)

    a = np.exp(-config.hop / (smoothing * config.sample_rate))
    env = sps.lfilter([1 - a], [1, -a], power, axis=0)
    lag = int(round(onset * config.sample_rate / config.hop))
    delayed = np.zeros_like(env)
    delayed[lag:] = env[: n_frames - lag]
    phi_d = delayed * 10 ** (-6 * onset / t60)

    mix = coherence_factor(diffuse_coherence_matrix(geometry, config))
    z = _complex_gaussian(rng, (config.n_bins, geometry.n_channels, n_frames))
    data = np.einsum("kcj,kjl->clk", mix, z) * np.sqrt(phi_d)[None]
    d = synthesize(SpectroFrameTensor(data, config), length=n)
    if drr_db is not None:
        p_ref = np.mean(x ** 2) if reference_power is None else reference_power
        p_rev = np.mean(d[reference_channel] ** 2)
        if p_rev > 0:
            d *= np.sqrt(p_ref * 10 ** (-drr_db / 10) / p_rev)
    return d


def design_lowpass(passband_hz: float = 1500.0, stopband_hz: float = 1800.0,
                   attenuation_db: float = 70.0, fs: int = 16000) -> np.ndarray:
    """Linear-phase Kaiser-window FIR low-pass with odd length."""
    numtaps, beta = sps.kaiserord(attenuation_db, (stopband_hz - passband_hz) / (fs / 2))
    numtaps |= 1
    return sps.firwin(numtaps, (passband_hz + stopband_hz) / 2, window=("kaiser", beta), fs=fs)


def lowpass(x, taps) -> np.ndarray:
    """Zero-delay application of a linear-phase FIR along the last axis."""
    x = np.asarray(x, dtype=float)
    delay = (len(taps) - 1) // 2
    y = sps.fftconvolve(x, np.reshape(taps, (1,) * (x.ndim - 1) + (-1,)), mode="full", axes=-1)
    return y[..., delay : delay + x.shape[-1]]


def scale_to_snr(direct_early, noise, target_snr_db: float, channel: int) -> float:
    """Gain g on the noise giving ``target_snr_db`` at ``channel`` over the full signal."""
    p_speech = np.mean(np.asarray(direct_early)[channel] ** 2)
    p_noise = np.mean(np.asarray(noise)[channel] ** 2)
    if p_speech <= 0 or p_noise <= 0:
        raise ValueError("speech and noise must have nonzero power at the reference channel")
    return float(np.sqrt(p_speech / p_noise * 10 ** (-target_snr_db / 10)))


@dataclass(frozen=True)
class ScenarioSpec:
    speech_azimuth: float = 0.0
    speech_distance: float = 1.62
    noise: str = "point"  # "point" or "diffuse"
    noise_azimuth: float = -90.0
    noise_distance: float = 1.02
    input_snr_db: float = 0.0
    noise_bandwidth_hz: float = 1500.0
    noise_stopband_hz: float = 1800.0
    t60: float = 0.8  # 0 disables late reverberation
    reverb_onset: float = 0.050
    drr_db: float = 0.0
    tail: float = 0.25  # seconds of silence appended to the speech
    seed: int = 0
    # optional extensions of the free-field point noise (None disables):
    noise_drr_db: float | None = None  # diffuse late tail of the noise, DRR at the worse ear
    sensor_noise_db: float | None = None  # white sensor noise re worse-ear noise power

    def __post_init__(self):
        if self.noise not in ("point", "diffuse"):
            raise ValueError(f"noise must be 'point' or 'diffuse', got {self.noise!r}")
        if self.t60 < 0 or self.reverb_onset < 0 or self.tail < 0:
            raise ValueError("t60, reverb_onset and tail must be non-negative")

    def with_snr(self, snr_db: float) -> "ScenarioSpec":
        return replace(self, input_snr_db=float(snr_db))


@dataclass
class SceneComponents:
    direct_early: np.ndarray
    late_reverb: np.ndarray
    noise: np.ndarray
    worse_ear: int  # reference channel index of the ear nearer the noise
    early_responses: np.ndarray  # speech impulse responses, first 50 ms
    noise_gain: float = 1.0
    spec: ScenarioSpec = field(default_factory=ScenarioSpec)
    mixture: np.ndarray = field(init=False)

    def __post_init__(self):
        shapes = {self.direct_early.shape, self.late_reverb.shape, self.noise.shape}
        if len(shapes) != 1:
            raise ValueError(f"component shapes differ: {shapes}")
        self.mixture = self.direct_early + self.late_reverb + self.noise

    @property
    def better_ear(self) -> int:
        m = self.direct_early.shape[0] // 2
        return m if self.worse_ear == 0 else 0

    def components(self) -> dict[str, np.ndarray]:
        return {"direct_early": self.direct_early, "late_reverb": self.late_reverb,
                "noise": self.noise}


def worse_ear_channel(spec: ScenarioSpec, geometry: ArrayGeometry) -> int:
    if spec.noise == "diffuse":
        return geometry.reference_left
    src = source_position(spec.noise_azimuth, spec.noise_distance)
    d_left = np.linalg.norm(geometry.positions[geometry.reference_left] - src)
    d_right = np.linalg.norm(geometry.positions[geometry.reference_right] - src)
    return geometry.reference_left if d_left <= d_right else geometry.reference_right


def build_scene(spec: ScenarioSpec, speech, geometry: ArrayGeometry = ArrayGeometry(),
                config: StftConfig = StftConfig()) -> SceneComponents:
    fs = config.sample_rate
    if spec.noise_bandwidth_hz > fs / 2:
        raise ValueError("noise bandwidth exceeds Nyquist")
    x = np.concatenate([np.asarray(speech, dtype=float), np.zeros(int(round(spec.tail * fs)))])
    n = x.size
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2**31, size=2)

    direct = render_point_source(x, spec.speech_azimuth, spec.speech_distance, geometry, fs)
    worse = worse_ear_channel(spec, geometry)
    if spec.t60 > 0:
        reverb = synthesize_late_reverberation(
            x, geometry, spec.t60, spec.reverb_onset, config, int(seeds[0]), spec.drr_db,
            reference_power=float(np.mean(direct[worse] ** 2)), reference_channel=worse)
    else:
        reverb = np.zeros_like(direct)

    if spec.noise == "diffuse":
        raw = generate_diffuse_noise(max(n / fs, 1.0), geometry, config, int(seeds[1]))[:, :n]
    else:
        taps = design_lowpass(spec.noise_bandwidth_hz, spec.noise_stopband_hz, fs=fs)
        white = np.random.default_rng(seeds[1]).standard_normal(n)
        band = lowpass(white, taps)
        raw = render_point_source(band, spec.noise_azimuth, spec.noise_distance, geometry, fs)
        if spec.noise_drr_db is not None:
            raw = raw + synthesize_late_reverberation(
                band, geometry, spec.t60 or 0.8, spec.reverb_onset, config, int(seeds[1]) + 1,
                spec.noise_drr_db, reference_power=float(np.mean(raw[worse] ** 2)),
                reference_channel=worse)
    if spec.sensor_noise_db is not None:
        level = np.mean(raw[worse] ** 2) * 10 ** (spec.sensor_noise_db / 10)
        raw = raw + np.random.default_rng(int(seeds[1]) + 2).standard_normal(raw.shape) * np.sqrt(level)
    gain = scale_to_snr(direct, raw, spec.input_snr_db, worse)
    responses = point_source_responses(spec.speech_azimuth, spec.speech_distance, geometry, fs,
                                       duration=spec.reverb_onset or 0.050)
    return SceneComponents(direct, reverb, gain * raw, worse, responses, gain, spec)
