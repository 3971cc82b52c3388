"""Oracle PSD matrices, RTFs and the undesired-component model.

All per-bin quantities are stacked along a leading bin axis: PSD matrices are
(bins, 2M, 2M), RTF vectors (bins, 2M), scalar PSDs (bins,).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamformer import BinProblem, Variant
from .scene import ArrayGeometry, SceneComponents, diffuse_coherence_matrix
from .stft import SpectroFrameTensor, StftConfig, analyze

MIN_FRAMES = 10
INACTIVE_FLOOR = 1e-12


def hermitian(phi) -> np.ndarray:
    return 0.5 * (phi + np.swapaxes(np.conj(phi), -1, -2))


def check_psd(phi, tol: float = 1e-10) -> bool:
    """Hermitian to ``tol`` (relative) with eigenvalues >= -tol * trace."""
    phi = np.asarray(phi)
    scale = np.maximum(np.abs(phi).max(axis=(-2, -1)), 1e-300)
    if np.any(np.abs(phi - np.swapaxes(phi.conj(), -1, -2)).max(axis=(-2, -1)) > tol * scale):
        return False
    trace = np.real(np.trace(phi, axis1=-2, axis2=-1))
    return bool(np.all(np.linalg.eigvalsh(hermitian(phi)) >= -tol * trace[..., None]))


def oracle_psd(tensor: SpectroFrameTensor | np.ndarray, k: int | None = None) -> np.ndarray:
    """Long-term average ``(1/L) sum_l y(l,k) y(l,k)^H``; all bins if ``k`` is None."""
    data = tensor.data if isinstance(tensor, SpectroFrameTensor) else np.asarray(tensor)
    if data.shape[1] < MIN_FRAMES:
        raise ValueError(f"need at least {MIN_FRAMES} frames, got {data.shape[1]}")
    if k is not None:
        data = data[:, :, k : k + 1]
    phi = np.einsum("clk,dlk->kcd", data, data.conj()) / data.shape[1]
    phi = hermitian(phi)
    return phi[0] if k is not None else phi


def recursive_psd(frames, smoothing: float) -> np.ndarray:
    """Recursively smoothed PSD per frame.

    ``frames`` is (frames, channels) for one bin; returns (frames, channels, channels)
    with ``Phi(l) = s Phi(l-1) + (1-s) y(l) y(l)^H`` and ``Phi(-1) = 0``.
    """
    if not 0 < smoothing < 1:
        raise ValueError("smoothing must lie in (0, 1)")
    y = np.asarray(frames, dtype=complex)
    out = np.zeros((y.shape[0], y.shape[1], y.shape[1]), dtype=complex)
    acc = np.zeros((y.shape[1], y.shape[1]), dtype=complex)
    for l in range(y.shape[0]):
        acc = smoothing * acc + (1 - smoothing) * np.outer(y[l], y[l].conj())
        out[l] = acc
    return out


@dataclass
class RtfPair:
    a_left: np.ndarray
    a_right: np.ndarray
    degenerate: np.ndarray  # bins where a reference transform vanished


def compute_rtf(early_responses, config: StftConfig = StftConfig(),
                ref_left: int = 0, ref_right: int | None = None) -> RtfPair:
    """RTFs from windowed early responses (channels, samples) via fft_size-point DFTs."""
    h = np.asarray(early_responses, dtype=float)
    if ref_right is None:
        ref_right = h.shape[0] // 2
    spec = np.fft.rfft(h, n=config.fft_size, axis=-1).T  # (bins, channels)
    pairs = []
    degenerate = np.zeros(spec.shape[0], dtype=bool)
    for ref in (ref_left, ref_right):
        den = spec[:, ref]
        bad = np.abs(den) < 1e-12
        degenerate |= bad
        a = spec / np.where(bad, 1.0, den)[:, None]
        a[bad] = 0.0
        a[:, ref] = 1.0
        pairs.append(a)
    return RtfPair(pairs[0], pairs[1], degenerate)


def diffuse_coherence(geometry: ArrayGeometry = ArrayGeometry(),
                      config: StftConfig = StftConfig()) -> np.ndarray:
    return diffuse_coherence_matrix(geometry, config)


def undesired_psd(phi_d, gamma, phi_v) -> np.ndarray:
    """``phi_d * Gamma + Phi_v`` per bin."""
    phi_d = np.asarray(phi_d, dtype=float)
    if np.any(phi_d < 0):
        raise ValueError("late-reverberation PSD must be non-negative")
    return phi_d[..., None, None] * np.asarray(gamma) + np.asarray(phi_v)


def speech_psd_and_phi_d(direct_early: SpectroFrameTensor, late_reverb: SpectroFrameTensor,
                         gamma, ref_left: int = 0, ref_right: int | None = None):
    """Returns ``(psd_left, psd_right, phi_d)``, each (bins,).

    ``phi_d`` is the trace ratio of the oracle late-reverb PSD to the coherence matrix.
    """
    x = direct_early.data
    if ref_right is None:
        ref_right = x.shape[0] // 2
    psd_left = np.mean(np.abs(x[ref_left]) ** 2, axis=0)
    psd_right = np.mean(np.abs(x[ref_right]) ** 2, axis=0)
    phi_rev = oracle_psd(late_reverb)
    tr_rev = np.real(np.trace(phi_rev, axis1=-2, axis2=-1))
    tr_gamma = np.real(np.trace(gamma, axis1=-2, axis2=-1))
    return psd_left, psd_right, tr_rev / tr_gamma


@dataclass
class SceneEstimates:
    """Everything the per-bin solver needs, estimated from oracle components."""

    psd_left: np.ndarray
    psd_right: np.ndarray  # measured at the right reference (diagnostic)
    phi_d: np.ndarray
    gamma: np.ndarray
    phi_v: np.ndarray
    phi_u: np.ndarray
    rtf: RtfPair
    active: np.ndarray
    config: StftConfig

    def problem(self, alpha: float = 0.0, variant=Variant.MWF) -> BinProblem:
        return BinProblem.from_model(self.psd_left, self.rtf.a_left, self.rtf.a_right,
                                     self.phi_u, self.phi_v, alpha, variant)


def estimate_scene(scene: SceneComponents, geometry: ArrayGeometry = ArrayGeometry(),
                   config: StftConfig = StftConfig()) -> SceneEstimates:
    tensors = {name: analyze(sig, config) for name, sig in scene.components().items()}
    gamma = diffuse_coherence(geometry, config)
    psd_left, psd_right, phi_d = speech_psd_and_phi_d(
        tensors["direct_early"], tensors["late_reverb"], gamma,
        geometry.reference_left, geometry.reference_right)
    phi_v = oracle_psd(tensors["noise"])
    phi_u = hermitian(undesired_psd(phi_d, gamma, phi_v))
    rtf = compute_rtf(scene.early_responses, config, geometry.reference_left,
                      geometry.reference_right)
    active = (psd_left >= INACTIVE_FLOOR * psd_left.max()) & ~rtf.degenerate
    if psd_left.max() <= 0:
        active[:] = False
    return SceneEstimates(psd_left, psd_right, phi_d, gamma, phi_v, phi_u, rtf, active, config)


def dump_matrices(path, matrices) -> None:
    """Debug sidecar: row-major complex64 (re, im) pairs, little-endian."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.asarray(matrices).astype("<c8").tofile(path)


def load_matrices(path, n_channels: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<c8")
    return data.reshape(-1, n_channels, n_channels)
