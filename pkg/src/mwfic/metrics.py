"""Objective evaluation through shadow filtering.

The computed filters are applied to each clean scene component separately. The
"input" side of every comparison is the same component passed through the same
analysis/synthesis chain with selector (passthrough) filters, so identity filters
give exactly zero error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_toeplitz

from .beamformer import FilterPair, interaural_coherence
from .scene import SceneComponents, design_lowpass, lowpass
from .spectral import oracle_psd
from .stft import StftConfig, analyze, apply_filter_per_bin, synthesize

COMPONENTS = ("direct_early", "late_reverb", "noise")


@dataclass
class ShadowOutputs:
    outputs: dict[str, np.ndarray]  # component -> (2, samples) binaural output
    inputs: dict[str, np.ndarray]  # component -> (2, samples) passthrough reference pair
    total: np.ndarray
    worse_ear: int  # 0 = left output, 1 = right output
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def better_ear(self) -> int:
        return 1 - self.worse_ear


def shadow_filter(scene: SceneComponents, filters: FilterPair,
                  config: StftConfig = StftConfig()) -> ShadowOutputs:
    m = scene.direct_early.shape[0] // 2
    passthrough = FilterPair.passthrough(m, config.n_bins)
    outputs, inputs = {}, {}
    for name, sig in scene.components().items():
        tensor = analyze(sig, config)
        n = sig.shape[-1]
        outputs[name] = synthesize(apply_filter_per_bin(tensor, filters.w_left, filters.w_right), n)
        inputs[name] = synthesize(apply_filter_per_bin(tensor, passthrough.w_left,
                                                       passthrough.w_right), n)
    total = outputs["direct_early"] + outputs["late_reverb"] + outputs["noise"]
    worse = 0 if scene.worse_ear < m else 1
    return ShadowOutputs(outputs, inputs, total, worse, config)


def _power(x) -> float:
    return float(np.mean(np.asarray(x) ** 2))


def _db_ratio(num: float, den: float) -> float:
    if den <= 0:
        return math.inf
    if num <= 0:
        return -math.inf
    return 10 * math.log10(num / den)


def output_snr(shadow: ShadowOutputs, ear: int) -> float:
    """Direct+early speech power over noise power at output ``ear`` (0 left, 1 right), in dB."""
    return _db_ratio(_power(shadow.outputs["direct_early"][ear]),
                     _power(shadow.outputs["noise"][ear]))


def output_sur(shadow: ShadowOutputs, ear: int) -> float:
    """Direct+early speech over late reverb plus noise at ``ear``, in dB."""
    undesired = shadow.outputs["late_reverb"][ear] + shadow.outputs["noise"][ear]
    return _db_ratio(_power(shadow.outputs["direct_early"][ear]), _power(undesired))


def _pair(shadow: ShadowOutputs, which: str, side: str) -> np.ndarray:
    src = shadow.outputs if side == "out" else shadow.inputs
    if which == "undesired":
        return src["late_reverb"] + src["noise"]
    return src[which]


def msc_per_bin(pair, config: StftConfig = StftConfig()):
    """Magnitude-squared coherence of a binaural pair from long-term cross-PSDs.

    Returns ``(msc, degenerate)`` per bin.
    """
    phi = oracle_psd(analyze(pair, config))
    ic, degenerate = interaural_coherence(phi, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return np.minimum(np.abs(ic) ** 2, 1.0), degenerate


def delta_msc(shadow: ShadowOutputs, which: str = "noise", band_hz=(0.0, 1500.0),
              return_skipped: bool = False):
    """Band mean of ``|MSC_out - MSC_in|``; degenerate bins are skipped."""
    config = shadow.config
    lo, hi = band_hz
    if hi > config.sample_rate / 2 or lo < 0 or lo > hi:
        raise ValueError(f"invalid band {band_hz}")
    msc_in, deg_in = msc_per_bin(_pair(shadow, which, "in"), config)
    msc_out, deg_out = msc_per_bin(_pair(shadow, which, "out"), config)
    f = config.frequencies
    sel = (f >= lo) & (f <= hi)
    use = sel & ~deg_in & ~deg_out
    skipped = int(np.sum(sel & ~use))
    value = float(np.mean(np.abs(msc_out[use] - msc_in[use]))) if use.any() else float("nan")
    return (value, skipped) if return_skipped else value


def model_delta_msc(phi, filters: FilterPair, frequencies, band_hz=(0.0, 1500.0)) -> float:
    """Band mean of ``|MSC_out - MSC_in|`` evaluated on the per-bin model PSDs.

    Diagnostic counterpart of :func:`delta_msc`: the output coherence comes from
    ``w_L^H Phi w_R`` directly, so it contains no resynthesis effects.
    """
    m = np.shape(phi)[-1] // 2
    q = FilterPair.passthrough(m, len(frequencies))
    ic_in, deg_in = interaural_coherence(phi, q.w_left, q.w_right)
    ic_out, deg_out = interaural_coherence(phi, filters.w_left, filters.w_right)
    f = np.asarray(frequencies)
    use = (f >= band_hz[0]) & (f <= band_hz[1]) & ~deg_in & ~deg_out
    diff = np.abs(np.minimum(np.abs(ic_out) ** 2, 1.0) - np.minimum(np.abs(ic_in) ** 2, 1.0))
    return float(np.mean(diff[use])) if use.any() else float("nan")


def estimate_itd(pair, fs: int = 16000, cutoff_hz: float = 1500.0, max_lag_ms: float = 1.0,
                 energy_floor: float = 1e-20) -> float:
    """ITD in seconds, positive when the right channel lags the left.

    Peak of the normalized cross-correlation of the low-passed pair within
    +-``max_lag_ms``, refined by parabolic interpolation. Returns NaN when the
    pair carries no energy below the cutoff.
    """
    pair = np.asarray(pair, dtype=float)
    taps = design_lowpass(cutoff_hz, cutoff_hz + 300.0, fs=fs)
    left, right = lowpass(pair, taps)
    e_left, e_right = float(left @ left), float(right @ right)
    if e_left <= energy_floor or e_right <= energy_floor:
        return float("nan")
    max_lag = int(round(max_lag_ms * 1e-3 * fs))
    n = left.size
    lags = np.arange(-max_lag, max_lag + 1)
    xc = np.array([left[max(0, -t) : n - max(0, t)] @ right[max(0, t) : n - max(0, -t)]
                   for t in lags]) / math.sqrt(e_left * e_right)
    i = int(np.argmax(xc))
    shift = 0.0
    if 0 < i < len(lags) - 1:
        y0, y1, y2 = xc[i - 1], xc[i], xc[i + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            shift = 0.5 * (y0 - y2) / den
    return (lags[i] + shift) / fs


def delta_itd(shadow: ShadowOutputs, which: str = "noise", cutoff_hz: float = 1500.0,
              max_lag_ms: float = 1.0) -> float:
    """``|ITD_in - ITD_out|`` in microseconds (NaN if either estimate is invalid)."""
    fs = shadow.config.sample_rate
    itd_in = estimate_itd(_pair(shadow, which, "in"), fs, cutoff_hz, max_lag_ms)
    itd_out = estimate_itd(_pair(shadow, which, "out"), fs, cutoff_hz, max_lag_ms)
    return abs(itd_in - itd_out) * 1e6


def _lpc(frame, order: int) -> np.ndarray:
    """Prediction coefficients a_1..a_p of A(z) = 1 - sum a_k z^-k (autocorrelation method)."""
    n = frame.size
    r = np.array([frame[: n - k] @ frame[k:] for k in range(order + 1)])
    if r[0] <= 0:
        return np.zeros(order)
    r[0] *= 1 + 1e-9  # keeps the Toeplitz system positive definite for degenerate frames
    return solve_toeplitz(r[:-1], r[1:])


def lpc_cepstrum(a, order: int) -> np.ndarray:
    """Cepstrum c_1..c_order of the all-pole model 1 / A(z)."""
    p = a.size
    c = np.zeros(order + 1)
    for m in range(1, order + 1):
        acc = a[m - 1] if m <= p else 0.0
        for k in range(1, m):
            if m - k <= p:
                acc += (k / m) * c[k] * a[m - k - 1]
        c[m] = acc
    return c[1:]


def cepstral_distance(reference, degraded, fs: int = 16000, order: int = 10,
                      frame_ms: float = 30.0, keep: float = 0.95,
                      active_range_db: float = 40.0) -> float:
    """Mean LPC-cepstral distance over the best ``keep`` fraction of speech-active frames.

    Per frame: ``(10 / ln 10) * sqrt(2 * sum_j (c_ref,j - c_deg,j)^2)``, clamped to [0, 10].
    """
    ref = np.asarray(reference, dtype=float)
    deg = np.asarray(degraded, dtype=float)
    if ref.shape != deg.shape:
        raise ValueError("reference and degraded must have equal length")
    win_len = int(round(frame_ms * 1e-3 * fs))
    hop = win_len // 4
    if ref.size < win_len:
        raise ValueError("signals shorter than one frame")
    window = np.hanning(win_len)
    starts = np.arange(0, ref.size - win_len + 1, hop)
    energy = np.array([np.sum((ref[s : s + win_len] * window) ** 2) for s in starts])
    if energy.max() <= 0:
        raise ValueError("reference is silent")
    active = energy >= energy.max() * 10 ** (-active_range_db / 10)
    dist = []
    for s in starts[active]:
        c_ref = lpc_cepstrum(_lpc(ref[s : s + win_len] * window, order), order)
        c_deg = lpc_cepstrum(_lpc(deg[s : s + win_len] * window, order), order)
        d = 10 / math.log(10) * math.sqrt(2 * np.sum((c_ref - c_deg) ** 2))
        dist.append(min(max(d, 0.0), 10.0))
    dist = np.sort(dist)
    n_keep = max(1, int(round(keep * dist.size)))
    return float(np.mean(dist[:n_keep]))


@dataclass
class MetricReport:
    snr_out_worse_db: float
    snr_out_better_db: float
    delta_msc: float
    delta_itd_us: float
    cd_worse: float
    alpha: float = 0.0
    variant: str = "MWF"
    input_snr_db: float = 0.0
    sur_out_worse_db: float = float("nan")
    delta_msc_undesired: float = float("nan")
    cd_total_worse: float = float("nan")
    msc_skipped_bins: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(shadow: ShadowOutputs, scene: SceneComponents, alpha: float = 0.0,
             variant: str = "MWF", msc_band_hz=None) -> MetricReport:
    """All metrics for one filter set.

    ``cd_worse`` compares the output speech component at the worse ear with its
    passthrough input (speech distortion); ``cd_total_worse`` compares the full
    output with the same reference.
    """
    fs = shadow.config.sample_rate
    if msc_band_hz is None:
        hi = scene.spec.noise_bandwidth_hz if scene.spec.noise == "point" else fs / 2
        msc_band_hz = (0.0, hi)
    worse, better = shadow.worse_ear, shadow.better_ear
    dmsc, skipped = delta_msc(shadow, "noise", msc_band_hz, return_skipped=True)
    ref = shadow.inputs["direct_early"][worse]
    return MetricReport(
        snr_out_worse_db=output_snr(shadow, worse),
        snr_out_better_db=output_snr(shadow, better),
        delta_msc=dmsc,
        delta_itd_us=delta_itd(shadow, "noise"),
        cd_worse=cepstral_distance(ref, shadow.outputs["direct_early"][worse], fs),
        alpha=alpha,
        variant=str(variant),
        input_snr_db=scene.spec.input_snr_db,
        sur_out_worse_db=output_sur(shadow, worse),
        delta_msc_undesired=delta_msc(shadow, "undesired", (0.0, fs / 2)),
        cd_total_worse=cepstral_distance(ref, shadow.total[worse], fs),
        msc_skipped_bins=skipped,
    )
