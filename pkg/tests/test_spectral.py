import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsvoc import spectral as sp
from dpsvoc.numerics import Tensor, backward

from conftest import numeric_grad, rel_err


def _noise(n, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


def _oracle_magnitude(x, cfg):
    """Direct DFT-matrix STFT: reflect pad, periodic Hann centred in the FFT frame."""
    pad = cfg.fft_size // 2
    xp = np.pad(x, pad, mode="reflect")
    n = np.arange(cfg.win_length)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.win_length)
    full = np.zeros(cfg.fft_size)
    off = (cfg.fft_size - cfg.win_length) // 2
    full[off : off + cfg.win_length] = win
    k = np.arange(cfg.n_bins)[:, None]
    dft = np.exp(-2j * np.pi * k * np.arange(cfg.fft_size)[None, :] / cfg.fft_size)
    frames = [xp[i * cfg.hop : i * cfg.hop + cfg.fft_size] * full for i in range(len(x) // cfg.hop + 1)]
    return np.abs(np.array(frames) @ dft.T)


def test_loss_resolutions_are_fixed():
    got = [(c.win_length, c.hop, c.fft_size) for c in sp.LOSS_RESOLUTIONS]
    assert got == [(320, 80, 512), (640, 160, 1024), (1960, 256, 2048)]


def test_bins_for_smallest_config():
    assert sp.StftConfig(fft_size=512, hop=80, win_length=320).n_bins == 257


@pytest.mark.parametrize("bad", [dict(fft_size=256, hop=80, win_length=320), dict(fft_size=512, hop=400, win_length=320),
                                 dict(fft_size=512, hop=0, win_length=320)])
def test_stft_config_validation(bad):
    with pytest.raises(ValueError):
        sp.StftConfig(**bad)


def test_zero_signal_zero_magnitude():
    assert not sp.stft_magnitude(np.zeros(4000), sp.LOSS_RESOLUTIONS[0]).any()


@pytest.mark.parametrize("cfg", sp.LOSS_RESOLUTIONS + (sp.MEL_STFT,))
def test_stft_matches_dft_oracle(cfg):
    x = _noise(5000, 3)
    np.testing.assert_allclose(sp.stft_magnitude(x, cfg), _oracle_magnitude(x, cfg), rtol=1e-9, atol=1e-9)


def test_bin_centred_sinusoid_peaks_at_its_bin():
    cfg = sp.LOSS_RESOLUTIONS[0]
    k0 = 40
    x = np.sin(2 * np.pi * k0 * np.arange(8000) / cfg.fft_size)
    mag = sp.stft_magnitude(x, cfg)
    assert np.all(np.argmax(mag[3:-3], axis=1) == k0)


def test_too_short_signal_rejected():
    with pytest.raises(ValueError):
        sp.stft_magnitude(np.ones(100), sp.LOSS_RESOLUTIONS[2])


def test_spectral_convergence_closed_forms():
    cfg = sp.LOSS_RESOLUTIONS[1]
    x = _noise(6000)
    assert sp.spectral_convergence(x, x, cfg) == 0.0
    assert abs(sp.spectral_convergence(x, 2 * x, cfg) - 1.0) < 1e-9
    assert sp.spectral_convergence(x, -x, cfg) == 0.0
    with pytest.raises(ValueError):
        sp.spectral_convergence(np.zeros(6000), x, cfg)


def test_log_magnitude_closed_forms():
    cfg = sp.LOSS_RESOLUTIONS[0]
    x = _noise(6000)
    assert sp.log_stft_magnitude(x, x, cfg) == 0.0
    assert abs(sp.log_stft_magnitude(x, np.e * x, cfg) - 1.0) < 1e-6


def test_log_magnitude_hop_shift_against_oracle():
    cfg = sp.LOSS_RESOLUTIONS[0]
    x = np.sin(2 * np.pi * np.arange(4000) / 50) + 0.3 * np.sin(2 * np.pi * np.arange(4000) / 16)
    y = np.roll(x, cfg.hop)
    a = np.log(np.maximum(_oracle_magnitude(x, cfg), 1e-7))
    b = np.log(np.maximum(_oracle_magnitude(y, cfg), 1e-7))
    expected = np.abs(a - b).sum() / a.size
    assert sp.log_stft_magnitude(x, y, cfg) == pytest.approx(expected, rel=1e-9)


def test_multires_loss_zero_on_identity_and_sign_invariant():
    x, y = _noise(4000, 1), _noise(4000, 2)
    loss, rep = sp.multires_stft_loss(x, x)
    assert loss.item() == 0.0 and rep.l_stft == 0.0
    a = sp.multires_stft_loss(x, y)[0].item()
    assert sp.multires_stft_loss(-x, y)[0].item() == pytest.approx(a, rel=1e-12)
    assert sp.multires_stft_loss(x, -y)[0].item() == pytest.approx(a, rel=1e-12)


def test_multires_gradient_on_1600_samples():
    rng = np.random.default_rng(5)
    ref = rng.standard_normal(1600)
    pred = Tensor(rng.standard_normal((1, 1600)), requires_grad=True)

    def f():
        return sp.multires_stft_loss(ref, pred)[0]

    backward(f())
    for idx in rng.choice(1600, 40, replace=False):
        num = numeric_grad(lambda: f().item(), pred.data, (0, idx))
        assert rel_err(pred.grad[0, idx], num) < 1e-3


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 10.0))
def test_losses_nonnegative(seed, scale):
    x, y = _noise(3000, seed), scale * _noise(3000, seed + 1)
    for cfg in sp.LOSS_RESOLUTIONS:
        assert sp.spectral_convergence(x, y, cfg) >= 0.0
        assert sp.log_stft_magnitude(x, y, cfg) >= 0.0


# -- mel front end -----------------------------------------------------------------


def test_mel_shape_and_frame_count():
    mel = sp.mel_features(_noise(16000), 16000)
    assert mel.shape == (80, 200)
    assert np.isfinite(mel).all()


def test_mel_silence_is_log_floor():
    np.testing.assert_array_equal(sp.mel_features(np.zeros(8000)), np.log(1e-5))


def test_mel_rejects_other_rates():
    with pytest.raises(ValueError):
        sp.mel_features(np.zeros(8000), 22050)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(800, 20000))
def test_mel_frames_floor_rule(n):
    b = sp.n_mel_frames(n)
    assert b == n // 80
    assert abs(n - 80 * b) < 80


def test_mel_filterbank_spans_band():
    fbank = sp.mel_filterbank()
    assert fbank.shape == (80, 513)
    assert (fbank >= 0).all()
    assert fbank[:, 1:].sum(axis=0).min() > 0  # every non-DC bin is covered
