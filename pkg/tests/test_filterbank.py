import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import firwin

from dpsvoc import filterbank as fb
from dpsvoc.numerics import Tensor, backward, mul, sum_

from conftest import numeric_grad, rel_err

GRID = 4096


def band_center_bin(k, m):
    # (2k+1)/(2M) as a fraction of pi, on a grid covering [0, 2pi)
    return round(GRID * (2 * k + 1) / (4 * m))


@pytest.mark.parametrize("m,n_taps", [(2, 62), (4, 84)])
def test_prototype_taps_symmetric_unit_dc(m, n_taps):
    h = fb.design_prototype(fb.PROTOTYPES[m])
    assert h.shape == (n_taps,)
    np.testing.assert_array_equal(h, h[::-1])
    assert abs(h.sum() - 1.0) < 1e-9


def test_tabulated_parameters():
    assert fb.PROTOTYPES[2] == fb.PrototypeSpec(beta=9.0, n_taps=62, cutoff=0.142)
    assert fb.PROTOTYPES[4] == fb.PrototypeSpec(beta=9.0, n_taps=84, cutoff=0.04)


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(0.5, 14), n=st.integers(2, 200), cutoff=st.floats(0.01, 0.99))
def test_any_prototype_normalised_and_symmetric(beta, n, cutoff):
    h = fb.design_prototype(fb.PrototypeSpec(beta, n, cutoff))
    assert abs(h.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(h, h[::-1], atol=1e-15)


def test_prototype_matches_scipy_windowed_sinc():
    # firwin builds the same Kaiser-windowed sinc (scaled to unit DC gain)
    for spec in fb.PROTOTYPES.values():
        ref = firwin(spec.n_taps, spec.cutoff, window=("kaiser", spec.beta), scale=False)
        np.testing.assert_allclose(fb.design_prototype(spec), ref / ref.sum(), rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("bad", [(0.0, 10, 0.2), (9.0, 1, 0.2), (9.0, 10, 1.0), (9.0, 10, 0.0)])
def test_prototype_spec_validation(bad):
    with pytest.raises(ValueError):
        fb.PrototypeSpec(*bad)


def test_modulation_formula_directly():
    h = fb.design_prototype(fb.PrototypeSpec(9.0, 31, 0.2))
    bank = fb.modulate(h, 3)
    n = np.arange(31)
    for k in range(3):
        phase = (2 * k + 1) * np.pi / 6 * (n - 15) + (-1) ** k * np.pi / 4
        np.testing.assert_allclose(bank.analysis[k], 2 * h * np.cos(phase), rtol=1e-13)
    # odd length: centre tap of h_0 is 2 h(c) cos(pi/4)
    assert bank.analysis[0, 15] == pytest.approx(2 * h[15] * np.cos(np.pi / 4), rel=1e-14)


def test_modulate_needs_two_bands():
    with pytest.raises(ValueError):
        fb.modulate(np.ones(8) / 8, 1)


@pytest.mark.parametrize("m", [2, 4])
def test_bank_shape(m):
    bank = fb.make_bank(m)
    assert bank.analysis.shape == (m, fb.PROTOTYPES[m].n_taps)


@pytest.mark.parametrize("m", [2, 4])
def test_band_peak_within_two_bins_of_nominal_center(m):
    """Dense-DFT argmax of |H_k| within +-2 of 4096 bins of (2k+1)/(2M)."""
    resp = fb.magnitude_response(fb.make_bank(m), GRID)
    for k in range(m):
        assert abs(int(np.argmax(resp[k])) - band_center_bin(k, m)) <= 2, f"band {k}"


@pytest.mark.parametrize("m", [2, 4])
def test_band_energy_centroid_at_nominal_center(m):
    resp = fb.magnitude_response(fb.make_bank(m), GRID) ** 2
    bins = np.arange(resp.shape[1])
    for k in range(m):
        centroid = (resp[k] * bins).sum() / resp[k].sum()
        assert abs(centroid - band_center_bin(k, m)) <= 2


@pytest.mark.parametrize("m", [2, 4])
def test_adjacent_band_rejection_white_noise(m):
    """Periodogram oracle: averaged over many noise segments, each subband's
    power at an adjacent band's centre sits >= 40 dB below its own centre."""
    bank = fb.make_bank(m)
    rng = np.random.default_rng(0)
    seg, n_seg = GRID, 64
    x = rng.standard_normal(seg * n_seg)
    sub = fb.decompose(x, bank)
    psd = np.mean(np.abs(np.fft.rfft(sub.reshape(m, n_seg, seg), axis=2)) ** 2, axis=1)
    for k in range(m):
        own = psd[k, band_center_bin(k, m)]
        for j in (k - 1, k + 1):
            if 0 <= j < m:
                assert 10 * np.log10(own / psd[k, band_center_bin(j, m)]) >= 40.0


def test_decompose_zero_and_impulse():
    bank = fb.make_bank(4)
    assert not fb.decompose(np.zeros(300), bank).any()
    e = np.zeros(300)
    e[100] = 1.0
    sub = fb.decompose(e, bank)
    n = bank.n_taps
    start = 100 - bank.delay
    np.testing.assert_allclose(sub[:, start : start + n], bank.analysis, atol=1e-15)
    assert sub.shape == (4, 300)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_decompose_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(200), rng.standard_normal(200)
    bank = fb.make_bank(2)
    lhs = fb.decompose(a * x + b * y, bank)
    rhs = a * fb.decompose(x, bank) + b * fb.decompose(y, bank)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@pytest.mark.parametrize("m", [2, 4])
def test_tensor_decompose_matches_and_is_differentiable(m):
    bank = fb.make_bank(m)
    rng = np.random.default_rng(m)
    x = Tensor(rng.standard_normal((1, 150)), requires_grad=True)
    np.testing.assert_allclose(fb.decompose_t(x, bank).data, fb.decompose(x.data[0], bank), atol=1e-12)
    r = rng.standard_normal((m, 150))

    def f():
        return sum_(mul(fb.decompose_t(x, bank), r))

    backward(f())
    for i in (0, 40, 149):
        assert rel_err(x.grad[0, i], numeric_grad(lambda: f().item(), x.data, (0, i))) < 1e-3
