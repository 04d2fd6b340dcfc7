"""STFT analysis, log-mel conditioning features and the multi-resolution STFT loss."""
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, _record, abs_, add, log, mean, mul, sqrt, square, sum_

SAMPLE_RATE = 16000
HOP = 80
N_MELS = 80
MEL_FFT = 1024
MEL_WIN = 800
MEL_FLOOR = 1e-5
LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class StftConfig:
    fft_size: int
    hop: int
    win_length: int

    def __post_init__(self):
        if min(self.fft_size, self.hop, self.win_length) <= 0:
            raise ValueError("STFT sizes must be positive")
        if self.win_length > self.fft_size:
            raise ValueError(f"win_length {self.win_length} exceeds fft_size {self.fft_size}")
        if self.hop > self.win_length:
            raise ValueError(f"hop {self.hop} exceeds win_length {self.win_length}")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, length):
        pad = self.win_length // 2
        return (length + 2 * pad - self.win_length) // self.hop + 1


# (FL, FS, FN) = (320, 80, 512), (640, 160, 1024), (1960, 256, 2048)
LOSS_RESOLUTIONS = (
    StftConfig(fft_size=512, hop=80, win_length=320),
    StftConfig(fft_size=1024, hop=160, win_length=640),
    StftConfig(fft_size=2048, hop=256, win_length=1960),
)

MEL_STFT = StftConfig(fft_size=MEL_FFT, hop=HOP, win_length=MEL_WIN)


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_length(length, cfg):
    if length <= cfg.win_length // 2:
        raise ValueError(
            f"signal of {length} samples is too short for reflective padding "
            f"of {cfg.win_length // 2} (win_length={cfg.win_length})"
        )


def _frames(x, cfg):
    """Reflect-pad by win_length//2 and cut windowed frames, (n_frames, win_length)."""
    pad = cfg.win_length // 2
    xp = np.pad(x, pad, mode="reflect")
    n = cfg.n_frames(len(x))
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop * np.arange(n)[:, None]
    return xp[idx] * hann(cfg.win_length)


def stft(x, cfg):
    """Complex one-sided STFT, shape (n_frames, fft_size//2 + 1)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    _check_length(len(x), cfg)
    return np.fft.rfft(_frames(x, cfg), n=cfg.fft_size, axis=1)


def stft_magnitude(x, cfg):
    """|STFT(x)| with Hann window and reflective centre padding.

    Frames are centred at ``t*hop``, so there are ``len(x)//hop + 1`` of them
    for even window lengths.
    """
    return np.abs(stft(x, cfg))


def stft_magnitude_t(x, cfg):
    """Differentiable |STFT| of a (1, T) or (T,) tensor; returns (n_frames, n_bins)."""
    xd = x.data.ravel()
    length = len(xd)
    _check_length(length, cfg)
    pad = cfg.win_length // 2
    window = hann(cfg.win_length)
    n = cfg.n_frames(length)
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop * np.arange(n)[:, None]
    xp = np.pad(xd, pad, mode="reflect")
    spec = np.fft.rfft(xp[idx] * window, n=cfg.fft_size, axis=1)
    mag = np.abs(spec)
    shape = x.shape

    def bw(g):
        safe = np.where(mag > 0, mag, 1.0)
        z = np.where(mag > 0, g / safe, 0.0) * spec
        # adjoint of the one-sided real DFT
        z[:, 0] *= 2.0
        if cfg.fft_size % 2 == 0:
            z[:, -1] *= 2.0
        g_frames = 0.5 * cfg.fft_size * np.fft.irfft(z, n=cfg.fft_size, axis=1)
        g_frames = g_frames[:, : cfg.win_length] * window
        gxp = np.zeros(len(xp))
        np.add.at(gxp, idx, g_frames)
        # adjoint of reflect padding
        gx = gxp[pad : pad + length].copy()
        if pad:
            gx[1 : pad + 1] += gxp[:pad][::-1]
            gx[length - 1 - pad : length - 1] += gxp[pad + length :][::-1]
        return (gx.reshape(shape),)

    return _record(mag, (x,), bw)


# ---------------------------------------------------------------------------
# mel front end
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate=SAMPLE_RATE, n_fft=MEL_FFT, n_mels=N_MELS, fmin=0.0, fmax=None):
    """HTK-scale triangular filters, shape (n_mels, n_fft//2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lower) / (centre - lower)
    down = (upper - freqs[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(up, down))


_MEL_BASIS = mel_filterbank()


def n_mel_frames(length):
    """Conditioning frames for a waveform: ``length // 80`` (the partial tail frame is dropped)."""
    return length // HOP


def mel_features(x, sample_rate=SAMPLE_RATE):
    """Log-mel spectrogram of shape (80, B) with B = len(x) // 80.

    5 ms hop, 50 ms Hann window, 1024-point FFT, 80 HTK mel bands over
    0-8 kHz, natural log with a 1e-5 floor. Frame b is centred on sample
    ``80*b`` so frame b conditions samples ``[80b, 80b + 80)``.
    """
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    x = np.asarray(x, dtype=np.float64).ravel()
    n = n_mel_frames(len(x))
    if n < 1:
        raise ValueError(f"need at least {HOP} samples, got {len(x)}")
    mag = stft_magnitude(x, MEL_STFT)[:n]
    mel = mag @ _MEL_BASIS.T
    return np.log(np.maximum(mel, MEL_FLOOR)).T


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class LossReport:
    l_sc: float = 0.0
    l_mag: float = 0.0
    l_stft: float = 0.0
    l_adv: float = 0.0
    l_comb: float = 0.0


def spectral_convergence(ref, pred, cfg):
    ref = np.asarray(ref, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ValueError("signals must have equal length")
    s_ref = stft_magnitude(ref, cfg)
    denom = np.linalg.norm(s_ref)
    if denom == 0.0:
        raise ValueError("spectral convergence is undefined for an all-zero reference")
    return float(np.linalg.norm(s_ref - stft_magnitude(pred, cfg)) / denom)


def log_stft_magnitude(ref, pred, cfg):
    ref = np.asarray(ref, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ValueError("signals must have equal length")
    a = np.log(np.maximum(stft_magnitude(ref, cfg), LOG_FLOOR))
    b = np.log(np.maximum(stft_magnitude(pred, cfg), LOG_FLOOR))
    return float(np.abs(a - b).mean())


def _stft_loss_terms(ref, pred, cfg):
    s_ref = stft_magnitude(ref, cfg)
    denom = np.linalg.norm(s_ref)
    if denom == 0.0:
        raise ValueError("spectral convergence is undefined for an all-zero reference")
    s_pred = stft_magnitude_t(pred, cfg)
    sc = mul(sqrt(sum_(square(add(s_pred, -s_ref)))), 1.0 / denom)
    log_ref = np.log(np.maximum(s_ref, LOG_FLOOR))
    mag = mean(abs_(add(log(s_pred, floor=LOG_FLOOR), -log_ref)))
    return sc, mag


def multires_stft_loss(ref, pred, resolutions=LOSS_RESOLUTIONS):
    """Mean over resolutions of (spectral convergence + log-magnitude L1).

    ``pred`` may be a :class:`Tensor` (the returned loss is then
    differentiable w.r.t. it) or an array. Returns ``(loss_tensor, report)``.
    """
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=np.float64).reshape(1, -1))
    if pred.data.size != ref.size:
        raise ValueError("signals must have equal length")
    total = None
    sc_sum = mag_sum = 0.0
    for cfg in resolutions:
        sc, mag = _stft_loss_terms(ref, pred, cfg)
        sc_sum += sc.item()
        mag_sum += mag.item()
        term = add(sc, mag)
        total = term if total is None else add(total, term)
    loss = mul(total, 1.0 / len(resolutions))
    n = len(resolutions)
    report = LossReport(l_sc=sc_sum / n, l_mag=mag_sum / n, l_stft=loss.item())
    report.l_comb = report.l_stft
    return loss, report
