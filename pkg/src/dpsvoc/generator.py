"""Deterministic-plus-stochastic waveform generator.

Four trainable modules: a deterministic source (mel -> excitation by
transposed convolutions and dilated residual stacks), a stochastic source
(Gaussian noise shaped by a conditioned dilated stack), a V/UV decision
network producing frame-level soft masks, and a neural filter mapping the
masked, concatenated excitation to the waveform. In multiband mode both
excitations are split by a cosine-modulated filter bank and every subband
gets its own pair of masks.
"""
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import filterbank as fb
from .numerics import (
    ParamStore,
    Tensor,
    add,
    clip,
    concat,
    conv1d,
    conv_transpose1d,
    gated_activation,
    mul,
    no_grad,
    repeat_time,
    sigmoid,
    tanh,
)
from .spectral import N_MELS

FULL_BAND = "full_band"
MULTIBAND = "multiband"


@dataclass(frozen=True)
class GeneratorConfig:
    mode: str = FULL_BAND
    m_bands: int = 1
    n_mels: int = N_MELS
    gate_channels: int = 64
    residual_channels: int = 64
    skip_channels: int = 64
    upsample_rates: tuple = (5, 4, 4)
    det_layers: int = 3
    sto_blocks: int = 1
    filt_blocks: int = 8
    layers_per_block: int = 3
    kernel_size: int = 3
    vuv_channels: int = 64
    vuv_layers: int = 2

    def __post_init__(self):
        object.__setattr__(self, "upsample_rates", tuple(int(r) for r in self.upsample_rates))
        if self.mode not in (FULL_BAND, MULTIBAND):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == FULL_BAND and self.m_bands != 1:
            raise ValueError("full-band mode uses a single band")
        if self.mode == MULTIBAND and self.m_bands not in fb.PROTOTYPES:
            raise ValueError(f"multiband mode supports M in {sorted(fb.PROTOTYPES)}")
        if self.gate_channels % 2:
            raise ValueError("gate_channels must be even")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for centred padding")

    @property
    def hop(self):
        return math.prod(self.upsample_rates)

    @property
    def det_stages(self):
        return len(self.upsample_rates)

    @property
    def filter_in_channels(self):
        return 2 * self.m_bands

    def to_dict(self):
        d = asdict(self)
        d["upsample_rates"] = list(self.upsample_rates)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def full_config(mode=FULL_BAND, m_bands=None):
    """Full-size preset: 64 gate/residual/skip channels, 24 filter layers in 8 blocks."""
    if m_bands is None:
        m_bands = 1 if mode == FULL_BAND else 2
    return GeneratorConfig(mode=mode, m_bands=m_bands)


def toy_config(mode=MULTIBAND, m_bands=None, **overrides):
    """Desk-scale preset with the same topology: 8 residual channels, 2 filter blocks."""
    if m_bands is None:
        m_bands = 1 if mode == FULL_BAND else 2
    cfg = GeneratorConfig(
        mode=mode,
        m_bands=m_bands,
        gate_channels=16,
        residual_channels=8,
        skip_channels=8,
        filt_blocks=2,
        vuv_channels=16,
    )
    return replace(cfg, **overrides)


@dataclass
class ExcitationSet:
    e_d: Tensor
    e_s: Tensor
    subbands_d: Tensor = None
    subbands_s: Tensor = None


@dataclass
class MaskSet:
    """Frame-level masks (bands, B) and their sample-rate versions (bands, T)."""

    frame_d: Tensor
    frame_s: Tensor
    sample_d: Tensor
    sample_s: Tensor

    @property
    def n_bands(self):
        return self.frame_d.shape[0]


@dataclass(frozen=True)
class NoiseControl:
    """Constant offset added to the stochastic masks, then clipped to [0, 1]."""

    mu: float = 0.0
    bands: tuple = None  # None selects every band

    def __post_init__(self):
        if not -1.0 <= self.mu <= 1.0:
            raise ValueError(f"noise offset must lie in [-1, 1], got {self.mu}")
        if self.bands is not None:
            object.__setattr__(self, "bands", tuple(int(b) for b in self.bands))


def apply_noise_offset(masks, ctrl):
    """Return masks with ``clip(m_s^k + mu, 0, 1)`` on the selected bands.

    Deterministic masks are passed through untouched.
    """
    if not isinstance(ctrl, NoiseControl):
        ctrl = NoiseControl(**ctrl) if isinstance(ctrl, dict) else NoiseControl(mu=float(ctrl))
    n = masks.n_bands
    bands = range(n) if ctrl.bands is None else ctrl.bands
    selected = np.zeros((n, 1), dtype=bool)
    for b in bands:
        if not 0 <= b < n:
            raise ValueError(f"band index {b} out of range for {n} bands")
        selected[b] = True
    offset = np.where(selected, ctrl.mu, 0.0)

    def shift(m):
        return clip(add(m, offset), 0.0, 1.0)

    return MaskSet(
        frame_d=masks.frame_d,
        frame_s=shift(masks.frame_s),
        sample_d=masks.sample_d,
        sample_s=shift(masks.sample_s),
    )


def conv_receptive_halfwidth(dilations, kernel_size):
    return sum(d * (kernel_size - 1) // 2 for d in dilations)


class Generator:
    """Parameters plus the forward computation of every generator module."""

    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or toy_config()
        self.params = ParamStore()
        self.bank = fb.make_bank(self.cfg.m_bands) if self.cfg.mode == MULTIBAND else None
        self._build(np.random.default_rng(seed))

    # -- parameter construction ---------------------------------------------
    def _conv(self, name, c_out, c_in, k, rng, bias=True):
        self.params.add_uniform(f"{name}.w", (c_out, c_in, k), c_in * k, rng)
        if bias:
            self.params.add_uniform(f"{name}.b", (c_out,), c_in * k, rng)

    def _tconv(self, name, c_in, c_out, stride, rng):
        k = 2 * stride
        # each output sample sees c_in * k / stride input taps
        fan_in = c_in * k // stride
        self.params.add_uniform(f"{name}.w", (c_in, c_out, k), fan_in, rng)
        self.params.add_uniform(f"{name}.b", (c_out,), fan_in, rng)

    def _stack_params(self, prefix, n_blocks, rng):
        c = self.cfg
        half = c.gate_channels // 2
        for b in range(n_blocks):
            for j in range(c.layers_per_block):
                p = f"{prefix}.b{b}.l{j}"
                last = b == n_blocks - 1 and j == c.layers_per_block - 1
                self._conv(f"{p}.conv", c.gate_channels, c.residual_channels, c.kernel_size, rng)
                self._conv(f"{p}.cond", c.gate_channels, c.residual_channels, 1, rng, bias=False)
                if not last:  # the final residual path would feed nothing
                    self._conv(f"{p}.res", c.residual_channels, half, 1, rng)
                self._conv(f"{p}.skip", c.skip_channels, half, 1, rng)

    def _build(self, rng):
        c = self.cfg
        r = c.residual_channels
        # conditioning network
        self._conv("cond.conv_in", r, c.n_mels, c.kernel_size, rng)
        for i, rate in enumerate(c.upsample_rates):
            self._tconv(f"cond.up{i}", r, r, rate, rng)
        # deterministic source
        self._conv("det.conv_in", r, c.n_mels, c.kernel_size, rng)
        for i, rate in enumerate(c.upsample_rates):
            self._tconv(f"det.up{i}", r, r, rate, rng)
            for j in range(c.det_layers):
                self._conv(f"det.s{i}.l{j}.conv", r, r, c.kernel_size, rng)
                self._conv(f"det.s{i}.l{j}.out", r, r, 1, rng)
        self._conv("det.out", 1, r, 1, rng)
        # stochastic source
        self._conv("sto.in", r, 1, 1, rng)
        self._stack_params("sto", c.sto_blocks, rng)
        self._conv("sto.out", 1, c.skip_channels, 1, rng)
        # V/UV decision
        ch = c.n_mels
        for j in range(c.vuv_layers):
            self._conv(f"vuv.ctx{j}", c.vuv_channels, ch, c.kernel_size, rng)
            ch = c.vuv_channels
        for k in range(c.m_bands):
            self._conv(f"vuv.head_d{k}", 1, ch, c.kernel_size, rng)
            self._conv(f"vuv.head_s{k}", 1, ch, c.kernel_size, rng)
        # neural filter
        self._conv("filt.in", r, c.filter_in_channels, 1, rng)
        self._stack_params("filt", c.filt_blocks, rng)
        self._conv("filt.post", c.skip_channels, c.skip_channels, 1, rng)
        self._conv("filt.out", 1, c.skip_channels, 1, rng)

    # -- helpers --------------------------------------------------------------
    def _apply(self, name, x, dilation=1):
        p = self.params
        bias = p[f"{name}.b"] if f"{name}.b" in p else None
        return conv1d(x, p[f"{name}.w"], bias, dilation=dilation)

    def _apply_t(self, name, x, stride):
        p = self.params
        return conv_transpose1d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride)

    def _check_mel(self, mel):
        mel = mel if isinstance(mel, Tensor) else Tensor(mel)
        if mel.data.ndim != 2 or mel.shape[0] != self.cfg.n_mels:
            raise ValueError(f"expected mel of shape ({self.cfg.n_mels}, B), got {mel.shape}")
        if mel.shape[1] < 1:
            raise ValueError("mel spectrogram has no frames")
        return mel

    def layer_dilations(self, n_blocks):
        return [2**j for _ in range(n_blocks) for j in range(self.cfg.layers_per_block)]

    def _stack(self, prefix, x, c_hat, n_blocks):
        skips = None
        n_layers = n_blocks * self.cfg.layers_per_block
        for b in range(n_blocks):
            for j in range(self.cfg.layers_per_block):
                p = f"{prefix}.b{b}.l{j}"
                h = self._apply(f"{p}.conv", x, dilation=2**j)
                z = gated_activation(h, self._apply(f"{p}.cond", c_hat))
                if f"{p}.res.w" in self.params:
                    x = mul(add(x, self._apply(f"{p}.res", z)), math.sqrt(0.5))
                s = self._apply(f"{p}.skip", z)
                skips = s if skips is None else add(skips, s)
        return mul(skips, math.sqrt(1.0 / n_layers))

    # -- modules --------------------------------------------------------------
    def condition_upsample(self, mel):
        """Hidden conditioning features (residual_channels, hop*B)."""
        x = self._apply("cond.conv_in", self._check_mel(mel))
        for i, rate in enumerate(self.cfg.upsample_rates):
            x = self._apply_t(f"cond.up{i}", x, rate)
        return x

    def deterministic_source(self, mel):
        """Deterministic excitation e_d (1, hop*B); a pure function of the mel input."""
        x = self._apply("det.conv_in", self._check_mel(mel))
        for i, rate in enumerate(self.cfg.upsample_rates):
            x = self._apply_t(f"det.up{i}", x, rate)
            for j in range(self.cfg.det_layers):
                h = tanh(self._apply(f"det.s{i}.l{j}.conv", x, dilation=2**j))
                x = add(x, self._apply(f"det.s{i}.l{j}.out", h))
        return self._apply("det.out", tanh(x))

    def stochastic_source(self, noise, c_hat):
        """Stochastic excitation e_s (1, T) from Gaussian noise ``noise`` of length T."""
        g = noise if isinstance(noise, Tensor) else Tensor(np.asarray(noise, dtype=np.float64).reshape(1, -1))
        if g.data.size != c_hat.shape[1]:
            raise ValueError(f"noise has {g.data.size} samples, conditioning has {c_hat.shape[1]}")
        g = Tensor(g.data.reshape(1, -1)) if g.data.ndim != 2 else g
        x = tanh(self._apply("sto.in", g))
        skips = self._stack("sto", x, c_hat, self.cfg.sto_blocks)
        return self._apply("sto.out", tanh(skips))

    def vuv_masks(self, mel):
        mel = self._check_mel(mel)
        ctx = mel
        for j in range(self.cfg.vuv_layers):
            ctx = tanh(self._apply(f"vuv.ctx{j}", ctx))
        m = self.cfg.m_bands
        frame_d = concat([sigmoid(self._apply(f"vuv.head_d{k}", ctx)) for k in range(m)])
        frame_s = concat([sigmoid(self._apply(f"vuv.head_s{k}", ctx)) for k in range(m)])
        hop = self.cfg.hop
        return MaskSet(frame_d, frame_s, repeat_time(frame_d, hop), repeat_time(frame_s, hop))

    def excitation(self, e_d, e_s):
        exc = ExcitationSet(e_d=e_d, e_s=e_s)
        if self.bank is not None:
            exc.subbands_d = fb.decompose_t(e_d, self.bank)
            exc.subbands_s = fb.decompose_t(e_s, self.bank)
        return exc

    def assemble_excitation(self, exc, masks):
        return assemble_excitation(exc, masks, self.bank)

    def neural_filter(self, excitation, c_hat):
        if excitation.shape[0] != self.cfg.filter_in_channels:
            raise ValueError(
                f"neural filter expects {self.cfg.filter_in_channels} excitation channels, "
                f"got {excitation.shape[0]}"
            )
        if excitation.shape[1] != c_hat.shape[1]:
            raise ValueError("excitation and conditioning lengths differ")
        x = self._apply("filt.in", excitation)
        skips = self._stack("filt", x, c_hat, self.cfg.filt_blocks)
        h = tanh(self._apply("filt.post", tanh(skips)))
        return self._apply("filt.out", h)

    # -- end to end -----------------------------------------------------------
    def forward(self, mel, noise, ctrl=None):
        """Waveform tensor (1, hop*B) plus a dict of intermediate signals."""
        mel = self._check_mel(mel)
        c_hat = self.condition_upsample(mel)
        e_d = self.deterministic_source(mel)
        e_s = self.stochastic_source(noise, c_hat)
        masks = self.vuv_masks(mel)
        if ctrl is not None:
            masks = apply_noise_offset(masks, ctrl)
        exc = self.excitation(e_d, e_s)
        excitation = self.assemble_excitation(exc, masks)
        out = self.neural_filter(excitation, c_hat)
        return out, {"c_hat": c_hat, "exc": exc, "masks": masks, "excitation": excitation}

    def noise(self, n_samples, seed):
        return np.random.default_rng(seed).standard_normal(n_samples).reshape(1, -1)

    def synthesize(self, mel, seed=0, ctrl=None):
        """Waveform (hop*B,) as a numpy array; deterministic in (mel, seed, ctrl)."""
        mel = self._check_mel(mel)
        with no_grad():
            out, _ = self.forward(mel, self.noise(self.cfg.hop * mel.shape[1], seed), ctrl)
        return out.data.ravel().copy()

    def noise_receptive_halfwidth(self):
        """Samples on each side of t through which the noise input can influence output t."""
        c = self.cfg
        hw = conv_receptive_halfwidth(self.layer_dilations(c.sto_blocks), c.kernel_size)
        hw += conv_receptive_halfwidth(self.layer_dilations(c.filt_blocks), c.kernel_size)
        if self.bank is not None:
            hw += self.bank.n_taps
        return hw


def assemble_excitation(exc, masks, bank=None):
    """Masked excitations concatenated along channels.

    Full band gives (2, T) = [m_d*e_d, m_s*e_s]; multiband gives (2M, T) =
    [m_d^1 e_d^1 .. m_d^M e_d^M, m_s^1 e_s^1 .. m_s^M e_s^M].
    """
    if bank is None:
        if masks.n_bands != 1:
            raise ValueError(f"full-band excitation needs 1 mask band, got {masks.n_bands}")
        d, s = exc.e_d, exc.e_s
    else:
        if masks.n_bands != bank.m:
            raise ValueError(f"{masks.n_bands} mask bands for a {bank.m}-band filter bank")
        d = exc.subbands_d if exc.subbands_d is not None else fb.decompose_t(exc.e_d, bank)
        s = exc.subbands_s if exc.subbands_s is not None else fb.decompose_t(exc.e_s, bank)
    if d.shape[1] != masks.sample_d.shape[1]:
        raise ValueError("excitation and mask lengths differ")
    return concat([mul(masks.sample_d, d), mul(masks.sample_s, s)])
