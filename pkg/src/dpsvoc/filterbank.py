"""Kaiser-window prototype design and the cosine-modulated analysis bank.

Only the analysis side exists here: excitation signals are split into M
subbands, never reconstructed.
"""
from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import kaiser

from .numerics import Tensor, conv1d


@dataclass(frozen=True)
class PrototypeSpec:
    beta: float
    n_taps: int
    cutoff: float  # fraction of pi rad/sample

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("Kaiser beta must be positive")
        if self.n_taps < 2:
            raise ValueError("prototype needs at least 2 taps")
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError("cutoff must lie in (0, 1) as a fraction of pi")


# Designs for M = 2 and M = 4 subbands.
PROTOTYPES = {
    2: PrototypeSpec(beta=9.0, n_taps=62, cutoff=0.142),
    4: PrototypeSpec(beta=9.0, n_taps=84, cutoff=0.04),
}


def design_prototype(spec):
    """Kaiser-windowed ideal lowpass, centred at (N-1)/2, normalized to unit DC gain."""
    n = np.arange(spec.n_taps) - 0.5 * (spec.n_taps - 1)
    ideal = spec.cutoff * np.sinc(spec.cutoff * n)
    h = ideal * kaiser(spec.n_taps, spec.beta, sym=True)
    return h / h.sum()


@dataclass(frozen=True)
class FilterBank:
    m: int
    prototype: np.ndarray
    analysis: np.ndarray  # (m, n_taps)

    @property
    def n_taps(self):
        return self.prototype.shape[0]

    @property
    def delay(self):
        """Group-delay compensation in samples: floor((N-1)/2)."""
        return (self.n_taps - 1) // 2


def modulate(prototype, m):
    """Cosine-modulate ``prototype`` into ``m`` analysis filters.

    h_k(n) = 2 h(n) cos((2k+1) pi/(2M) (n - (N-1)/2) + (-1)^k pi/4)
    """
    if m < 2:
        raise ValueError(f"need at least 2 subbands, got {m}")
    h = np.asarray(prototype, dtype=np.float64)
    n_taps = h.shape[0]
    k = np.arange(m)[:, None]
    n = np.arange(n_taps)[None, :]
    phase = (2 * k + 1) * (np.pi / (2 * m)) * (n - 0.5 * (n_taps - 1)) + ((-1.0) ** k) * np.pi / 4
    return FilterBank(m=m, prototype=h, analysis=2.0 * h[None, :] * np.cos(phase))


def make_bank(m):
    """Filter bank for one of the tabulated subband counts (2 or 4)."""
    try:
        spec = PROTOTYPES[m]
    except KeyError:
        raise ValueError(f"no prototype design for M={m}; available: {sorted(PROTOTYPES)}") from None
    return modulate(design_prototype(spec), m)


def _fir_padding(bank):
    c = bank.delay
    return (bank.n_taps - 1 - c, c)


def decompose(e, bank):
    """Split ``e`` into ``bank.m`` subbands of the same length, shape (m, T).

    Linear convolution with each h_k, advanced by ``bank.delay`` samples and
    truncated to ``len(e)``: an impulse at t0 yields h_k(n) with h_k(delay)
    landing on t0.
    """
    e = np.asarray(e, dtype=np.float64).ravel()
    length = len(e)
    if length < 1:
        raise ValueError("empty signal")
    full = np.stack([np.convolve(e, hk) for hk in bank.analysis])
    return full[:, bank.delay : bank.delay + length]


def decompose_t(e, bank):
    """Differentiable :func:`decompose` for a (1, T) tensor (fixed coefficients)."""
    weight = Tensor(bank.analysis[:, None, ::-1].copy())
    return conv1d(e, weight, padding=_fir_padding(bank))


def magnitude_response(bank, n_points=4096):
    """|DFT| of each analysis filter on an ``n_points`` grid over [0, 2pi); (m, n_points//2+1)."""
    return np.abs(np.fft.rfft(bank.analysis, n=n_points, axis=1))
