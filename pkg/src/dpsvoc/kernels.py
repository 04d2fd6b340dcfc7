"""Hot numeric loops, each in a numba and a pure-numpy flavour.

The two flavours compute the same quantities (to float rounding) and are
checked against each other in the test suite. The active backend is chosen at
import time: ``"auto"`` (numba where it pays off) unless numba is missing or
``DPSVOC_DISABLE_NUMBA`` is set, in which case everything runs on numpy.
``set_backend`` switches at runtime, mainly for benchmarks and tests.

Array conventions: signals are ``(channels, time)`` float64 arrays.
"""
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, njit, numba_disabled_by_env

__all__ = [
    "conv1d_forward",
    "conv1d_backward",
    "conv_transpose1d_forward",
    "conv_transpose1d_backward",
    "freqt",
    "nccf",
    "shift_xcorr",
    "set_backend",
    "get_backend",
    "use_backend",
]


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------


def _np_conv1d_forward(xp, w, dilation, out_len):
    c_out, _, k_size = w.shape
    wk = np.ascontiguousarray(w.transpose(2, 0, 1))
    y = np.zeros((c_out, out_len))
    for k in range(k_size):
        off = k * dilation
        y += wk[k] @ xp[:, off : off + out_len]
    return y


def _np_conv1d_backward(xp, w, gy, dilation):
    k_size = w.shape[2]
    out_len = gy.shape[1]
    wk = np.ascontiguousarray(w.transpose(2, 1, 0))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for k in range(k_size):
        off = k * dilation
        gw[:, :, k] = gy @ xp[:, off : off + out_len].T
        gxp[:, off : off + out_len] += wk[k] @ gy
    return gxp, gw


def _np_conv_transpose1d_forward(x, w, stride):
    _, c_out, k_size = w.shape
    length = x.shape[1]
    wk = np.ascontiguousarray(w.transpose(2, 1, 0))
    y = np.zeros((c_out, (length - 1) * stride + k_size))
    for k in range(k_size):
        y[:, k : k + (length - 1) * stride + 1 : stride] += wk[k] @ x
    return y


def _np_conv_transpose1d_backward(x, w, gy, stride):
    k_size = w.shape[2]
    length = x.shape[1]
    wk = np.ascontiguousarray(w.transpose(2, 0, 1))
    gx = np.zeros_like(x)
    gw = np.empty_like(w)
    for k in range(k_size):
        g = np.ascontiguousarray(gy[:, k : k + (length - 1) * stride + 1 : stride])
        gx += wk[k] @ g
        gw[:, :, k] = x @ g.T
    return gx, gw


_FREQT_CACHE = {}


def _freqt_matrix(m1, m2, alpha):
    key = (m1, m2, float(alpha))
    mat = _FREQT_CACHE.get(key)
    if mat is None:
        # the recursion is linear in the input cepstrum: run it on the identity
        eye = np.eye(m1 + 1)
        b = 1.0 - alpha * alpha
        g = np.zeros((m2 + 1, m1 + 1))
        for i in range(m1, -1, -1):
            d = g.copy()
            g[0] = eye[i] + alpha * d[0]
            if m2 >= 1:
                g[1] = b * d[0] + alpha * d[1]
            for j in range(2, m2 + 1):
                g[j] = d[j - 1] + alpha * (d[j] - g[j - 1])
        mat = g
        _FREQT_CACHE[key] = mat
    return mat


def _np_freqt(c, order, alpha):
    mat = _freqt_matrix(c.shape[1] - 1, order, alpha)
    return c @ mat.T


def _np_nccf(x, starts, win, min_lag, max_lag):
    n_lags = max_lag - min_lag + 1
    starts = np.asarray(starts, dtype=np.int64)
    windows = sliding_window_view(x, win)
    seg0 = windows[starts]
    e0 = np.einsum("ij,ij->i", seg0, seg0)
    out = np.zeros((len(starts), n_lags))
    for j in range(n_lags):
        seg = windows[starts + min_lag + j]
        num = np.einsum("ij,ij->i", seg0, seg)
        den = np.sqrt(e0 * np.einsum("ij,ij->i", seg, seg))
        out[:, j] = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return out


def _np_shift_xcorr(ref, sig, starts, max_shift):
    """``out[f, s] = sum_j ref[f, j] * sig[starts[f] + s + j]`` for s in 0..2*max_shift."""
    starts = np.asarray(starts, dtype=np.int64)
    win = ref.shape[1]
    windows = sliding_window_view(sig, win)
    out = np.zeros((ref.shape[0], 2 * max_shift + 1))
    for s in range(2 * max_shift + 1):
        out[:, s] = np.einsum("ij,ij->i", ref, windows[starts + s])
    return out


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------


@njit
def _nb_conv1d_forward(xp, w, dilation, out_len):
    c_out, c_in, k_size = w.shape
    y = np.zeros((c_out, out_len))
    for o in range(c_out):
        for i in range(c_in):
            for k in range(k_size):
                wv = w[o, i, k]
                off = k * dilation
                for t in range(out_len):
                    y[o, t] += wv * xp[i, t + off]
    return y


@njit
def _nb_conv1d_backward(xp, w, gy, dilation):
    c_out, c_in, k_size = w.shape
    out_len = gy.shape[1]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for o in range(c_out):
        for i in range(c_in):
            for k in range(k_size):
                wv = w[o, i, k]
                off = k * dilation
                acc = 0.0
                for t in range(out_len):
                    g = gy[o, t]
                    acc += g * xp[i, t + off]
                    gxp[i, t + off] += wv * g
                gw[o, i, k] = acc
    return gxp, gw


@njit
def _nb_conv_transpose1d_forward(x, w, stride):
    c_in, c_out, k_size = w.shape
    length = x.shape[1]
    y = np.zeros((c_out, (length - 1) * stride + k_size))
    for i in range(c_in):
        for o in range(c_out):
            for k in range(k_size):
                wv = w[i, o, k]
                for t in range(length):
                    y[o, t * stride + k] += wv * x[i, t]
    return y


@njit
def _nb_conv_transpose1d_backward(x, w, gy, stride):
    c_in, c_out, k_size = w.shape
    length = x.shape[1]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for i in range(c_in):
        for o in range(c_out):
            for k in range(k_size):
                wv = w[i, o, k]
                acc = 0.0
                for t in range(length):
                    g = gy[o, t * stride + k]
                    gx[i, t] += wv * g
                    acc += x[i, t] * g
                gw[i, o, k] = acc
    return gx, gw


@njit
def _nb_freqt(c, order, alpha):
    n_frames, n_in = c.shape
    m1 = n_in - 1
    b = 1.0 - alpha * alpha
    out = np.zeros((n_frames, order + 1))
    g = np.zeros(order + 1)
    d = np.zeros(order + 1)
    for f in range(n_frames):
        g[:] = 0.0
        for i in range(m1, -1, -1):
            d[:] = g
            g[0] = c[f, i] + alpha * d[0]
            if order >= 1:
                g[1] = b * d[0] + alpha * d[1]
            for j in range(2, order + 1):
                g[j] = d[j - 1] + alpha * (d[j] - g[j - 1])
        out[f, :] = g
    return out


@njit
def _nb_nccf(x, starts, win, min_lag, max_lag):
    n_frames = starts.shape[0]
    n_lags = max_lag - min_lag + 1
    out = np.zeros((n_frames, n_lags))
    for f in range(n_frames):
        s0 = starts[f]
        e0 = 0.0
        for j in range(win):
            e0 += x[s0 + j] * x[s0 + j]
        for li in range(n_lags):
            s1 = s0 + min_lag + li
            num = 0.0
            e1 = 0.0
            for j in range(win):
                v = x[s1 + j]
                num += x[s0 + j] * v
                e1 += v * v
            den = np.sqrt(e0 * e1)
            if den > 0.0:
                out[f, li] = num / den
    return out


@njit
def _nb_shift_xcorr(ref, sig, starts, max_shift):
    n_frames, win = ref.shape
    n_shift = 2 * max_shift + 1
    out = np.zeros((n_frames, n_shift))
    for f in range(n_frames):
        base = starts[f]
        for s in range(n_shift):
            acc = 0.0
            for j in range(win):
                acc += ref[f, j] * sig[base + s + j]
            out[f, s] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_IMPLS = {
    "numpy": {
        "conv1d_forward": _np_conv1d_forward,
        "conv1d_backward": _np_conv1d_backward,
        "conv_transpose1d_forward": _np_conv_transpose1d_forward,
        "conv_transpose1d_backward": _np_conv_transpose1d_backward,
        "freqt": _np_freqt,
        "nccf": _np_nccf,
        "shift_xcorr": _np_shift_xcorr,
    },
    "numba": {
        "conv1d_forward": _nb_conv1d_forward,
        "conv1d_backward": _nb_conv1d_backward,
        "conv_transpose1d_forward": _nb_conv_transpose1d_forward,
        "conv_transpose1d_backward": _nb_conv_transpose1d_backward,
        "freqt": _nb_freqt,
        "nccf": _nb_nccf,
        "shift_xcorr": _nb_shift_xcorr,
    },
}

# Measured with benchmarks/bench_kernels.py on one core: BLAS-backed matmuls
# beat the scalar numba loops for channel mixing and for freqt (a cached
# warping matrix); numba only pays off on the per-frame lag loop of nccf.
_AUTO_PREFERENCE = {
    "conv1d_forward": "numpy",
    "conv1d_backward": "numpy",
    "conv_transpose1d_forward": "numpy",
    "conv_transpose1d_backward": "numpy",
    "freqt": "numpy",
    "nccf": "numba",
    "shift_xcorr": "numpy",
}

_active = {}
_backend = None


def available_backends():
    return ["numpy", "numba", "auto"] if HAVE_NUMBA else ["numpy"]


def set_backend(name):
    """Select ``"numpy"``, ``"numba"`` or ``"auto"`` (per-kernel fastest)."""
    global _backend
    if name not in ("numpy", "numba", "auto"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name != "numpy" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _active.clear()
    if name == "auto":
        _active.update({k: _IMPLS[b][k] for k, b in _AUTO_PREFERENCE.items()})
    else:
        _active.update(_IMPLS[name])
    _backend = name


def get_backend():
    return _backend


@contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def impl(name, backend):
    """Direct access to one flavour of a kernel (benchmarks, cross-checks)."""
    return _IMPLS[backend][name]


set_backend("auto" if HAVE_NUMBA and not numba_disabled_by_env() else "numpy")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(xp, w, dilation, out_len):
    return _active["conv1d_forward"](_c(xp), _c(w), int(dilation), int(out_len))


def conv1d_backward(xp, w, gy, dilation):
    return _active["conv1d_backward"](_c(xp), _c(w), _c(gy), int(dilation))


def conv_transpose1d_forward(x, w, stride):
    return _active["conv_transpose1d_forward"](_c(x), _c(w), int(stride))


def conv_transpose1d_backward(x, w, gy, stride):
    return _active["conv_transpose1d_backward"](_c(x), _c(w), _c(gy), int(stride))


def freqt(c, order, alpha):
    """Frequency-warp cepstra ``c`` of shape (frames, m1+1) to ``order`` with all-pass ``alpha``."""
    return _active["freqt"](_c(np.atleast_2d(c)), int(order), float(alpha))


def nccf(x, starts, win, min_lag, max_lag):
    """Normalized cross-correlation of ``x[s:s+win]`` with ``x[s+lag:s+lag+win]`` per start."""
    return _active["nccf"](_c(x), np.ascontiguousarray(starts, dtype=np.int64), int(win), int(min_lag), int(max_lag))


def shift_xcorr(ref, sig, starts, max_shift):
    return _active["shift_xcorr"](_c(ref), _c(sig), np.ascontiguousarray(starts, dtype=np.int64), int(max_shift))
