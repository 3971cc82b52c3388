import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mwfic.scene import ArrayGeometry
from mwfic.spectral import (check_psd, compute_rtf, diffuse_coherence, dump_matrices,
                            load_matrices, oracle_psd, recursive_psd, speech_psd_and_phi_d,
                            undesired_psd)
from mwfic.stft import SpectroFrameTensor, StftConfig


def tensor(data):
    """Wrap (channels, frames) single-bin data into a full-bin tensor."""
    cfg = StftConfig()
    full = np.zeros(data.shape + (cfg.n_bins,), dtype=complex)
    full[..., 0] = data
    return SpectroFrameTensor(full, cfg)


def cgauss(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_oracle_psd_rank_one_constant():
    phi = oracle_psd(tensor(np.ones((2, 20))), 0)
    np.testing.assert_allclose(phi, [[1, 1], [1, 1]])


def test_oracle_psd_independent_noise(rng):
    phi = oracle_psd(tensor(cgauss(rng, (2, 10000))), 0)
    assert np.abs(phi[0, 1]) <= 0.05
    np.testing.assert_allclose(np.diag(phi).real, 1.0, atol=0.05)


def test_oracle_psd_quadratic_scaling(rng):
    t = tensor(cgauss(rng, (3, 50)))
    np.testing.assert_allclose(oracle_psd(t.scaled(3.0), 0), 9 * oracle_psd(t, 0), rtol=1e-12)


def test_oracle_psd_needs_ten_frames():
    with pytest.raises(ValueError):
        oracle_psd(tensor(np.ones((2, 9))))


def test_oracle_psd_of_uncorrelated_sum(rng):
    a = tensor(cgauss(rng, (4, 10000)))
    b = tensor(2 * cgauss(rng, (4, 10000)))
    total = oracle_psd(SpectroFrameTensor(a.data + b.data, a.config), 0)
    parts = oracle_psd(a, 0) + oracle_psd(b, 0)
    assert np.linalg.norm(total - parts) <= 0.05 * np.linalg.norm(parts)


def test_recursive_psd_examples():
    y = np.array([[1.0 + 1j, 2.0]] * 2)
    out = recursive_psd(y, 0.5)
    np.testing.assert_allclose(out[1], 0.75 * np.outer(y[0], y[0].conj()))
    out = recursive_psd(y, 1e-12)
    np.testing.assert_allclose(out[1], np.outer(y[1], y[1].conj()), rtol=1e-9)
    assert recursive_psd(np.zeros((0, 3)), 0.5).shape == (0, 3, 3)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            recursive_psd(y, bad)


def test_rtf_identical_responses():
    h = np.tile(np.r_[1.0, 0.5, -0.25, np.zeros(100)], (6, 1))
    rtf = compute_rtf(h)
    np.testing.assert_allclose(rtf.a_left, 1.0, atol=1e-12)
    np.testing.assert_allclose(rtf.a_right, 1.0, atol=1e-12)


def test_rtf_delay_shift_theorem(rng):
    base = rng.standard_normal(200) * np.exp(-np.arange(200) / 30)
    h = np.zeros((6, 400))
    h[:3, :200] = base
    h[3:, 8:208] = base
    rtf = compute_rtf(h)
    k = np.arange(513)
    ok = ~rtf.degenerate
    np.testing.assert_allclose(rtf.a_left[ok, 3], np.exp(-2j * np.pi * k[ok] * 8 / 1024), atol=1e-9)
    assert rtf.a_left[0, 0] == 1.0 and rtf.a_right[0, 3] == 1.0
    assert np.all(rtf.a_left[:, 0] == 1.0) and np.all(rtf.a_right[:, 3] == 1.0)


def test_rtf_flags_degenerate_bins():
    h = np.zeros((6, 64))
    h[:, 0] = 1.0
    h[0, :] = 0.0
    rtf = compute_rtf(h)
    assert rtf.degenerate.all()


def test_diffuse_coherence_examples():
    geo = ArrayGeometry()
    cfg = StftConfig()
    gamma = diffuse_coherence(geo, cfg)
    np.testing.assert_allclose(gamma[0], np.ones((6, 6)))
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, 1, 2))
    # ear pair zero at f = c / (2 d), i.e. 1008.8 Hz; check via the model formula
    d = geo.pair_distances()[0, 3]
    f = geo.sound_speed / (2 * d)
    assert abs(np.sin(2 * np.pi * f * d / geo.sound_speed)) < 1e-12
    assert check_psd(gamma[1:], tol=1e-9)


def test_undesired_psd_examples():
    phi_v = np.eye(2)
    np.testing.assert_allclose(undesired_psd(0.0, np.ones((2, 2)), phi_v), phi_v)
    np.testing.assert_allclose(undesired_psd(2.0, np.eye(2), np.zeros((2, 2))), 2 * np.eye(2))
    np.testing.assert_allclose(undesired_psd(1.0, np.ones((2, 2)), phi_v), [[2, 1], [1, 2]])
    with pytest.raises(ValueError):
        undesired_psd(-1.0, np.eye(2), phi_v)


def test_speech_psd_and_phi_d(rng):
    cfg = StftConfig()
    frames = 10000
    direct = np.zeros((2, frames, cfg.n_bins), dtype=complex)
    direct[0] = 2.0 * np.exp(1j * rng.uniform(0, 2 * np.pi, (frames, cfg.n_bins)))
    direct[1] = 1.0
    rev = cgauss(rng, (2, frames, cfg.n_bins))
    gamma = np.tile(np.eye(2), (cfg.n_bins, 1, 1))
    psd_l, psd_r, phi_d = speech_psd_and_phi_d(SpectroFrameTensor(direct, cfg),
                                               SpectroFrameTensor(rev, cfg), gamma, 0, 1)
    np.testing.assert_allclose(psd_l, 4.0)
    np.testing.assert_allclose(psd_r, 1.0)
    assert np.all(np.abs(phi_d - 1.0) <= 0.05)
    silent = SpectroFrameTensor(np.zeros_like(rev), cfg)
    assert not np.any(speech_psd_and_phi_d(SpectroFrameTensor(direct, cfg), silent, gamma, 0, 1)[2])


def test_scene_estimates_are_valid_psd(point_estimates):
    est = point_estimates
    assert check_psd(est.phi_v)
    assert check_psd(est.phi_u)
    assert np.all(est.phi_d >= 0)
    assert est.active.sum() > 400
    np.testing.assert_allclose(np.diagonal(est.gamma, axis1=1, axis2=2), 1.0)


def test_rank_one_reconstruction_matches_oracle(point_scene, point_estimates, config):
    from mwfic.stft import analyze
    phi_x = oracle_psd(analyze(point_scene.direct_early, config))
    est = point_estimates
    model = est.psd_left[:, None, None] * np.einsum("ki,kj->kij", est.rtf.a_left,
                                                    est.rtf.a_left.conj())
    strong = est.psd_left > 1e-4 * est.psd_left.max()
    err = (np.linalg.norm(model[strong] - phi_x[strong], axis=(1, 2))
           / np.linalg.norm(phi_x[strong], axis=(1, 2)))
    assert np.max(err) <= 0.1


def test_matrix_sidecar_round_trip(tmp_path, rng):
    m = cgauss(rng, (5, 6, 6))
    path = tmp_path / "phi.bin"
    dump_matrices(path, m)
    assert path.stat().st_size == 5 * 36 * 8
    np.testing.assert_allclose(load_matrices(path, 6), m.astype(np.complex64))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_oracle_psd_is_hermitian_psd(n_channels, seed):
    rng = np.random.default_rng(seed)
    phi = oracle_psd(tensor(cgauss(rng, (n_channels, 12))), 0)
    assert check_psd(phi)
