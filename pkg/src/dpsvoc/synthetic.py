"""Deterministic speech-like test signals (no corpus needed)."""
import numpy as np
from scipy.signal import lfilter

from .spectral import SAMPLE_RATE

_FORMANTS = ((500.0, 80.0), (1500.0, 120.0), (2500.0, 160.0))


def _resonator(freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2.0 * np.pi * freq / sr
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def formant_filter(x, sr=SAMPLE_RATE, formants=_FORMANTS):
    y = np.asarray(x, dtype=np.float64)
    for freq, bw in formants:
        b, a = _resonator(freq, bw, sr)
        y = lfilter(b, a, y)
    return y


def speech_like(duration=1.0, seed=0, sr=SAMPLE_RATE, f0=(110.0, 160.0), noise_level=0.05):
    """Voiced/unvoiced alternating clip, peak-normalised to 0.5.

    Voiced spans carry a band-limited glottal-like pulse train with a gliding
    F0 plus light aspiration noise; unvoiced spans carry formant-shaped
    noise. Returns ``(waveform, voiced_flags)`` with one flag per sample.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    voiced = np.zeros(n, dtype=bool)
    pos = 0
    state = True
    while pos < n:
        span = int(sr * (rng.uniform(0.12, 0.25) if state else rng.uniform(0.05, 0.12)))
        voiced[pos : pos + span] = state
        pos += span
        state = not state
    f_inst = f0[0] + (f0[1] - f0[0]) * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / max(duration, 1e-9)))
    phase = 2.0 * np.pi * np.cumsum(f_inst) / sr
    n_harm = int(sr / 2 / f0[1]) - 1
    source = np.zeros(n)
    for k in range(1, n_harm + 1):
        source += np.sin(k * phase) / k
    noise = rng.standard_normal(n)
    # smooth the V/UV switch over 4 ms to avoid clicks
    ramp = int(0.004 * sr)
    gate = np.convolve(voiced.astype(float), np.ones(ramp) / ramp, mode="same")
    excitation = gate * (source + noise_level * noise) + (1.0 - gate) * 0.6 * noise
    y = formant_filter(excitation, sr)
    y *= 0.5 / np.max(np.abs(y))
    return y, voiced


def tone(freq, duration=1.0, sr=SAMPLE_RATE, amplitude=0.5, phase=0.0):
    t = np.arange(int(round(duration * sr))) / sr
    return amplitude * np.sin(2.0 * np.pi * freq * t + phase)
