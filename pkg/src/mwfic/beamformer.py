"""Binaural MWF cost functions, interaural-coherence penalties and their gradients.

Every function broadcasts over leading batch dimensions so that all frequency
bins of a scene can be evaluated at once: matrices are (..., D, D), vectors
(..., D) with D = 2M, stacked weights (..., 4M) and real parameter vectors
(..., 8M) laid out as [Re w_L, Re w_R, Im w_L, Im w_R].
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

LOADING = 1e-10


class Variant(str, Enum):
    MWF = "MWF"
    IC_U = "IC_U"
    IC_V = "IC_V"


def selectors(n_mics_per_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Real unit vectors picking the left (index 0) and right (index M) references."""
    q_left = np.zeros(2 * n_mics_per_side)
    q_right = np.zeros(2 * n_mics_per_side)
    q_left[0] = 1.0
    q_right[n_mics_per_side] = 1.0
    return q_left, q_right


@dataclass(frozen=True)
class FilterPair:
    w_left: np.ndarray
    w_right: np.ndarray

    @classmethod
    def from_stacked(cls, w) -> "FilterPair":
        w = np.asarray(w)
        d = w.shape[-1] // 2
        return cls(w[..., :d], w[..., d:])

    @classmethod
    def from_real(cls, x) -> "FilterPair":
        return cls.from_stacked(real_to_complex(x))

    @classmethod
    def passthrough(cls, n_mics_per_side: int, n_bins: int | None = None) -> "FilterPair":
        q_left, q_right = selectors(n_mics_per_side)
        if n_bins is not None:
            q_left = np.tile(q_left, (n_bins, 1))
            q_right = np.tile(q_right, (n_bins, 1))
        return cls(q_left.astype(complex), q_right.astype(complex))

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.w_left, self.w_right], axis=-1)

    @property
    def real(self) -> np.ndarray:
        return complex_to_real(self.stacked)


def complex_to_real(w) -> np.ndarray:
    w = np.asarray(w)
    return np.concatenate([w.real, w.imag], axis=-1)


def real_to_complex(x) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def _quad(a, phi, b):
    """a^H phi b over batch dimensions."""
    return np.einsum("...i,...ij,...j->...", a.conj(), phi, b)


def _matvec(phi, v):
    return np.einsum("...ij,...j->...i", phi, v)


@dataclass(frozen=True)
class BinProblem:
    """One (or a batch of) per-bin optimization problems.

    ``phi_x`` is the rank-1 speech PSD ``psd_left * a_left a_left^H`` and
    ``phi_y = phi_x + phi_u`` unless given explicitly (``from_model`` adds the
    diagonally loaded ``phi_u``).
    """

    phi_x: np.ndarray
    phi_y: np.ndarray
    phi_u: np.ndarray
    phi_v: np.ndarray
    a_left: np.ndarray
    a_right: np.ndarray
    psd_left: np.ndarray | float
    psd_right: np.ndarray | float
    alpha: float = 0.0
    variant: Variant = Variant.MWF

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        d = self.phi_y.shape[-1]
        if d % 2:
            raise ValueError("matrix dimension must be 2M")
        for name in ("phi_x", "phi_y", "phi_u", "phi_v"):
            mat = getattr(self, name)
            if mat.shape[-2:] != (d, d):
                raise ValueError(f"{name} has shape {mat.shape}, expected (..., {d}, {d})")
            scale = np.maximum(np.abs(mat).max(axis=(-2, -1)), 1e-300)
            asym = np.abs(mat - np.swapaxes(mat.conj(), -1, -2)).max(axis=(-2, -1))
            if np.any(asym > 1e-10 * scale):
                raise ValueError(f"{name} is not Hermitian")

    @classmethod
    def from_model(cls, psd_left, a_left, a_right, phi_u, phi_v, alpha=0.0,
                   variant=Variant.MWF, psd_right=None) -> "BinProblem":
        """Build the rank-1 speech model.

        ``psd_right`` defaults to ``psd_left * |a_left[M]|^2``, the value implied by
        the same rank-1 model. ``phi_y`` uses the same diagonal loading of ``phi_u``
        as :func:`mwf_closed_form`, so the closed-form filters are the exact
        minimizers of the quadratic cost on both sides.
        """
        a_left = np.asarray(a_left, dtype=complex)
        psd_left = np.asarray(psd_left, dtype=float)
        m = a_left.shape[-1] // 2
        if psd_right is None:
            psd_right = psd_left * np.abs(a_left[..., m]) ** 2
        phi_x = psd_left[..., None, None] * np.einsum("...i,...j->...ij", a_left, a_left.conj())
        phi_u = np.asarray(phi_u, dtype=complex)
        return cls(phi_x, phi_x + load_diagonal(phi_u), phi_u, np.asarray(phi_v, dtype=complex),
                   a_left, np.asarray(a_right, dtype=complex), psd_left,
                   np.asarray(psd_right, dtype=float), float(alpha), variant)

    @property
    def n_mics_per_side(self) -> int:
        return self.phi_y.shape[-1] // 2

    @property
    def penalty_matrix(self) -> np.ndarray | None:
        if self.variant is Variant.IC_U:
            return self.phi_u
        if self.variant is Variant.IC_V:
            return self.phi_v
        return None

    def with_alpha(self, alpha: float, variant=None) -> "BinProblem":
        return BinProblem(self.phi_x, self.phi_y, self.phi_u, self.phi_v, self.a_left,
                          self.a_right, self.psd_left, self.psd_right, float(alpha),
                          self.variant if variant is None else variant)

    def take(self, index) -> "BinProblem":
        """Select a subset of the batch (e.g. a single bin)."""
        def pick(v):
            v = np.asarray(v)
            return v[index] if v.ndim else v
        return BinProblem(pick(self.phi_x), pick(self.phi_y), pick(self.phi_u),
                          pick(self.phi_v), pick(self.a_left), pick(self.a_right),
                          pick(self.psd_left), pick(self.psd_right), self.alpha, self.variant)


def load_diagonal(phi, eps: float = LOADING) -> np.ndarray:
    d = phi.shape[-1]
    trace = np.real(np.trace(phi, axis1=-2, axis2=-1))
    return phi + (eps * trace / d)[..., None, None] * np.eye(d)


def mwf_closed_form(psd, a, phi_u, eps: float = LOADING) -> np.ndarray:
    """Rank-1 MWF: ``psd * Phi_u^-1 a / (1 + psd * a^H Phi_u^-1 a)``.

    ``Phi_u`` is diagonally loaded by ``eps * trace / D`` before the solve.
    Raises ``numpy.linalg.LinAlgError`` if the loaded matrix is still singular.
    """
    a = np.asarray(a, dtype=complex)
    psd = np.asarray(psd, dtype=float)
    u = np.linalg.solve(load_diagonal(np.asarray(phi_u, dtype=complex), eps), a[..., None])[..., 0]
    denom = 1.0 + psd * np.real(np.einsum("...i,...i->...", a.conj(), u))
    return (psd / denom)[..., None] * u


def closed_form_filters(problem: BinProblem) -> FilterPair:
    return FilterPair(mwf_closed_form(problem.psd_left, problem.a_left, problem.phi_u),
                      mwf_closed_form(problem.psd_right, problem.a_right, problem.phi_u))


def cost_jw(w: FilterPair, problem: BinProblem) -> np.ndarray:
    """Expanded quadratic MWF cost (eight terms), real-valued."""
    q_left, q_right = selectors(problem.n_mics_per_side)
    phi_x, phi_y = problem.phi_x, problem.phi_y
    total = 0.0
    for w_s, q_s in ((w.w_left, q_left), (w.w_right, q_right)):
        q_s = q_s.astype(complex)
        total = (total + _quad(q_s, phi_x, q_s) - _quad(q_s, phi_x, w_s)
                 - _quad(w_s, phi_x, q_s) + _quad(w_s, phi_y, w_s))
    total = np.asarray(total)
    scale = 1.0 + np.abs(total)
    if np.any(np.abs(total.imag) > 1e-8 * scale):
        raise ValueError("cost has a non-negligible imaginary part; inputs not Hermitian?")
    return total.real


def interaural_coherence(phi, left, right):
    """Complex coherence ``left^H phi right / sqrt(left^H phi left * right^H phi right)``.

    Returns ``(ic, degenerate)``; where either power is zero the IC is 0 and the
    flag is set.
    """
    left = np.asarray(left, dtype=complex)
    right = np.asarray(right, dtype=complex)
    cross = _quad(left, phi, right)
    p_left = np.real(_quad(left, phi, left))
    p_right = np.real(_quad(right, phi, right))
    prod = p_left * p_right
    degenerate = ~(prod > 0)
    ic = np.where(degenerate, 0.0, cross / np.sqrt(np.where(degenerate, 1.0, prod)))
    return ic, degenerate


def input_coherence(phi, n_mics_per_side: int):
    q_left, q_right = selectors(n_mics_per_side)
    return interaural_coherence(phi, q_left, q_right)


def ic_penalty(w: FilterPair, phi) -> np.ndarray:
    """``|IC_out(w) - IC_in(q)|^2`` with the complex difference taken literally."""
    m = np.shape(phi)[-1] // 2
    ic_out, _ = interaural_coherence(phi, w.w_left, w.w_right)
    ic_in, _ = input_coherence(phi, m)
    return np.abs(ic_out - ic_in) ** 2


def total_cost(w: FilterPair, problem: BinProblem) -> np.ndarray:
    jw = cost_jw(w, problem)
    phi = problem.penalty_matrix
    if phi is None or problem.alpha == 0:
        return jw
    return jw + problem.alpha * ic_penalty(w, phi)


def _penalty_wirtinger(w_left, w_right, phi):
    """d|IC_out - IC_in|^2 / d conj(w) for each side."""
    m = phi.shape[-1] // 2
    phi_wl = _matvec(phi, w_left)
    phi_wr = _matvec(phi, w_right)
    p_left = np.real(np.einsum("...i,...i->...", w_left.conj(), phi_wl))
    p_right = np.real(np.einsum("...i,...i->...", w_right.conj(), phi_wr))
    cross = np.einsum("...i,...i->...", w_left.conj(), phi_wr)
    ok = (p_left > 0) & (p_right > 0)
    p_left = np.where(ok, p_left, 1.0)
    p_right = np.where(ok, p_right, 1.0)
    root = np.sqrt(p_left * p_right)
    ic_out = cross / root
    ic_in, _ = input_coherence(phi, m)
    err = ic_out - ic_in
    re = np.real(err.conj() * ic_out)
    d_left = (err.conj() / root)[..., None] * phi_wr - (re / p_left)[..., None] * phi_wl
    d_right = (err / root)[..., None] * phi_wl - (re / p_right)[..., None] * phi_wr
    d_left = np.where(ok[..., None], d_left, 0.0)
    d_right = np.where(ok[..., None], d_right, 0.0)
    penalty = np.where(ok, np.abs(err) ** 2, np.abs(ic_in) ** 2)
    return penalty, d_left, d_right


def cost_and_gradient(x, problem: BinProblem):
    """Total cost and its gradient with respect to the real parameters ``x``.

    For real f(w), df/dRe(w) + j df/dIm(w) = 2 df/dconj(w).
    """
    w = FilterPair.from_real(x)
    m = problem.n_mics_per_side
    phi_x, phi_y = problem.phi_x, problem.phi_y

    grads, cost = [], 0.0
    for w_s, ref in ((w.w_left, 0), (w.w_right, m)):
        phi_y_w = _matvec(phi_y, w_s)
        phi_x_q = phi_x[..., :, ref]
        cost = (cost + np.real(phi_x[..., ref, ref])
                - 2 * np.real(np.einsum("...i,...i->...", w_s.conj(), phi_x_q))
                + np.real(np.einsum("...i,...i->...", w_s.conj(), phi_y_w)))
        grads.append(phi_y_w - phi_x_q)

    phi = problem.penalty_matrix
    if phi is not None and problem.alpha != 0:
        penalty, d_left, d_right = _penalty_wirtinger(w.w_left, w.w_right, phi)
        cost = cost + problem.alpha * penalty
        grads[0] = grads[0] + problem.alpha * d_left
        grads[1] = grads[1] + problem.alpha * d_right

    g = 2 * np.concatenate(grads, axis=-1)
    return np.asarray(cost), complex_to_real(g)


def gradient(w: FilterPair, problem: BinProblem) -> np.ndarray:
    return cost_and_gradient(w.real, problem)[1]
