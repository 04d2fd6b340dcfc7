"""Objective metrics: SNR, LAS-RMSE, MCD, F0-RMSE, V/UV error, and RTF timing."""
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .spectral import HOP, MEL_STFT, SAMPLE_RATE, hann, stft_magnitude

SNR_FRAME = 400
SNR_MAX_SHIFT = 200
SNR_CAP_DB = 100.0
LAS_FLOOR = 1e-7
MCEP_ORDER = 24
MCEP_ALPHA = 0.42
MCD_CONST = 10.0 / math.log(10.0)
F0_FRAME = 400
F0_MIN, F0_MAX = 60.0, 400.0
VOICING_THRESHOLD = 0.3
ENERGY_GATE = 1e-7  # mean-square power below which a frame is unvoiced


def _pair(ref, pred):
    ref = np.asarray(ref, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ValueError(f"signals differ in length: {ref.size} vs {pred.size}")
    return ref, pred


# ---------------------------------------------------------------------------
# SNR with per-frame alignment
# ---------------------------------------------------------------------------


def snr_frames(ref, pred, frame=SNR_FRAME, hop=HOP, max_shift=SNR_MAX_SHIFT, cap=SNR_CAP_DB):
    """Per-frame SNR in dB (NaN for silent reference frames) and the chosen shifts.

    For every ``frame``-sample frame of ``ref`` the shift in
    [-max_shift, max_shift] maximising the normalised cross-correlation with
    ``pred`` is found; the shifted prediction and the reference are then Hann
    windowed and 10*log10(|o|^2 / |o - o_hat|^2) is taken, capped at ``cap``.
    """
    ref, pred = _pair(ref, pred)
    length = ref.size
    if length < frame:
        raise ValueError(f"need at least {frame} samples for SNR, got {length}")
    starts = np.arange(0, length - frame + 1, hop)
    idx = starts[:, None] + np.arange(frame)[None, :]
    ref_frames = ref[idx]
    padded = np.pad(pred, max_shift)
    corr = kernels.shift_xcorr(ref_frames, padded, starts, max_shift)
    # energy of every candidate prediction segment
    csum = np.concatenate([[0.0], np.cumsum(padded * padded)])
    seg_start = starts[:, None] + np.arange(2 * max_shift + 1)[None, :]
    energy = csum[seg_start + frame] - csum[seg_start]
    score = np.where(energy > 0, corr / np.sqrt(np.where(energy > 0, energy, 1.0)), -np.inf)
    best = np.argmax(score, axis=1)
    shifts = best - max_shift
    aligned = padded[(starts + best)[:, None] + np.arange(frame)[None, :]]
    w = hann(frame)
    sig = np.sum((w * ref_frames) ** 2, axis=1)
    err = np.sum((w * (ref_frames - aligned)) ** 2, axis=1)
    out = np.full(len(starts), np.nan)
    live = sig > 0
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(sig[live] / err[live])
    out[live] = np.minimum(db, cap)
    return out, shifts


def snr(ref, pred, **kw):
    """Frame-averaged aligned SNR in dB; silent reference frames are skipped."""
    per_frame, _ = snr_frames(ref, pred, **kw)
    live = per_frame[~np.isnan(per_frame)]
    if live.size == 0:
        raise ValueError("reference is silent in every frame")
    return float(live.mean())


# ---------------------------------------------------------------------------
# spectral distortions
# ---------------------------------------------------------------------------


def log_amplitude_spectrum(x):
    return np.log10(np.maximum(stft_magnitude(x, MEL_STFT), LAS_FLOOR))


def las_rmse(ref, pred):
    """Per-frame RMSE between log10 amplitude spectra, averaged over frames."""
    ref, pred = _pair(ref, pred)
    diff = log_amplitude_spectrum(ref) - log_amplitude_spectrum(pred)
    return float(np.sqrt(np.mean(diff * diff, axis=1)).mean())


def mel_cepstrum(x, order=MCEP_ORDER, alpha=MCEP_ALPHA):
    """Frequency-warped cepstra (frames, order+1) of the log amplitude spectrum.

    The real cepstrum of each 1024-point frame is converted to the one-sided
    convention (c_m doubled for m >= 1) and warped by the all-pass ``alpha``.
    """
    log_mag = np.log(np.maximum(stft_magnitude(x, MEL_STFT), LAS_FLOOR))
    ceps = np.fft.irfft(log_mag, n=MEL_STFT.fft_size, axis=1)[:, : MEL_STFT.fft_size // 2 + 1]
    ceps[:, 1:] *= 2.0
    return kernels.freqt(ceps, order, alpha)


def mcd_from_cepstra(c_ref, c_pred):
    """(10/ln10) * sqrt(2 * sum_{i>=1} (c_i - c_hat_i)^2), averaged over frames."""
    c_ref = np.atleast_2d(np.asarray(c_ref, dtype=np.float64))
    c_pred = np.atleast_2d(np.asarray(c_pred, dtype=np.float64))
    if c_ref.shape != c_pred.shape:
        raise ValueError(f"cepstra shapes differ: {c_ref.shape} vs {c_pred.shape}")
    diff = c_ref[:, 1:] - c_pred[:, 1:]
    return float((MCD_CONST * np.sqrt(2.0 * np.sum(diff * diff, axis=1))).mean())


def mcd(ref, pred, order=MCEP_ORDER, alpha=MCEP_ALPHA):
    ref, pred = _pair(ref, pred)
    return mcd_from_cepstra(mel_cepstrum(ref, order, alpha), mel_cepstrum(pred, order, alpha))


# ---------------------------------------------------------------------------
# F0
# ---------------------------------------------------------------------------


@dataclass
class F0Track:
    f0: np.ndarray  # Hz, 0 where unvoiced
    voiced: np.ndarray
    hop: int = HOP

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise ValueError("f0 and voicing flags differ in length")
        if np.any((self.f0 > 0) != self.voiced):
            raise ValueError("f0 must be positive exactly on voiced frames")

    def __len__(self):
        return self.f0.size


def extract_f0(x, sample_rate=SAMPLE_RATE, frame=F0_FRAME, hop=HOP, fmin=F0_MIN, fmax=F0_MAX,
               threshold=VOICING_THRESHOLD):
    """Normalised cross-correlation pitch tracker, one value per ``hop`` samples.

    Frame b is centred on sample ``hop*b`` (``len(x)//hop`` frames, matching
    the mel front end). The shortest-lag correlation peak within 90% of the
    best peak is taken and refined by parabolic interpolation; a frame is
    voiced when that peak reaches ``threshold`` and its power clears the
    energy gate.
    """
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    x = np.asarray(x, dtype=np.float64).ravel()
    n_frames = x.size // hop
    min_lag = int(math.floor(sample_rate / fmax))
    max_lag = int(math.ceil(sample_rate / fmin))
    half = frame // 2
    padded = np.pad(x, (half, half + max_lag + 1))
    starts = np.arange(n_frames) * hop
    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    if n_frames == 0:
        return F0Track(f0, voiced, hop)
    r = kernels.nccf(padded, starts, frame, min_lag - 1, max_lag + 1)
    power = np.array([np.mean(padded[s : s + frame] ** 2) for s in starts])
    for f in range(n_frames):
        if power[f] < ENERGY_GATE:
            continue
        row = r[f]
        interior = np.arange(1, row.size - 1)
        peaks = interior[(row[interior] >= row[interior - 1]) & (row[interior] > row[interior + 1])]
        if peaks.size == 0:
            continue
        best = row[peaks].max()
        if best < threshold:
            continue
        i = peaks[row[peaks] >= 0.9 * best][0]
        a, b, c = row[i - 1], row[i], row[i + 1]
        denom = a - 2.0 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
        lag = (min_lag - 1) + i + delta
        f0[f] = sample_rate / lag
        voiced[f] = True
    return F0Track(f0, voiced, hop)


def f0_rmse_cents(ref, pred):
    """RMSE of 1200*log2(f_pred/f_ref) over frames voiced in both tracks."""
    if len(ref) != len(pred):
        raise ValueError(f"tracks differ in length: {len(ref)} vs {len(pred)}")
    both = ref.voiced & pred.voiced
    if not both.any():
        raise ValueError("no frames are voiced in both tracks")
    cents = 1200.0 * np.log2(pred.f0[both] / ref.f0[both])
    return float(np.sqrt(np.mean(cents * cents)))


def vuv_error(ref, pred):
    """Percentage of frames whose voicing flags disagree."""
    if len(ref) != len(pred):
        raise ValueError(f"tracks differ in length: {len(ref)} vs {len(pred)}")
    if len(ref) == 0:
        raise ValueError("empty tracks")
    return float(100.0 * np.mean(ref.voiced != pred.voiced))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRIC_NAMES = ("snr_db", "las_rmse_db", "mcd_db", "f0_rmse_cent", "vuv_error_pct")


@dataclass
class MetricReport:
    snr_db: float
    las_rmse_db: float
    mcd_db: float
    f0_rmse_cent: float  # NaN when no frame is voiced in both signals
    vuv_error_pct: float
    utt_id: str = ""

    def as_row(self):
        return [self.utt_id] + [getattr(self, k) for k in METRIC_NAMES]

    def to_dict(self):
        return asdict(self)


def evaluate_pair(ref, pred, utt_id=""):
    ref, pred = _pair(ref, pred)
    t_ref, t_pred = extract_f0(ref), extract_f0(pred)
    try:
        f0_err = f0_rmse_cents(t_ref, t_pred)
    except ValueError:
        f0_err = float("nan")
    return MetricReport(
        snr_db=snr(ref, pred),
        las_rmse_db=las_rmse(ref, pred),
        mcd_db=mcd(ref, pred),
        f0_rmse_cent=f0_err,
        vuv_error_pct=vuv_error(t_ref, t_pred),
        utt_id=utt_id,
    )


@dataclass
class CorpusReport:
    utterances: list = field(default_factory=list)

    def mean(self):
        if not self.utterances:
            raise ValueError("empty corpus")
        vals = {}
        for k in METRIC_NAMES:
            col = np.array([getattr(u, k) for u in self.utterances], dtype=np.float64)
            col = col[~np.isnan(col)]
            vals[k] = float(col.mean()) if col.size else float("nan")
        return MetricReport(utt_id="MEAN", **vals)


def evaluate_corpus(pairs):
    """``pairs`` yields (utt_id, reference, prediction); returns a :class:`CorpusReport`."""
    return CorpusReport([evaluate_pair(ref, pred, uid) for uid, ref, pred in pairs])


# ---------------------------------------------------------------------------
# real-time factor
# ---------------------------------------------------------------------------


def hardware_descriptor():
    model = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{model}; {os.cpu_count()} logical CPU(s); kernels={kernels.get_backend()}"


@dataclass
class RtfResult:
    rtf: float
    seconds: float
    audio_seconds: float
    hardware: str


def measure_rtf(synthesize, mels, hop=HOP, sample_rate=SAMPLE_RATE, warmup=True):
    """Wall-clock synthesis time divided by generated audio duration.

    ``synthesize`` maps one mel (80, B) to a waveform. BLAS is limited to one
    thread while timing. With ``warmup`` the first mel is synthesised once
    untimed (JIT compilation, caches).
    """
    mels = list(mels)
    if not mels:
        raise ValueError("empty corpus")
    with threadpool_limits(limits=1):
        if warmup:
            synthesize(mels[0])
        start = time.perf_counter()
        samples = 0
        for mel in mels:
            samples += np.asarray(synthesize(mel)).size
        elapsed = time.perf_counter() - start
    duration = samples / sample_rate
    return RtfResult(rtf=elapsed / duration, seconds=elapsed, audio_seconds=duration,
                     hardware=hardware_descriptor())
