import numpy as np
import pytest

from dpsvoc import synthetic
from dpsvoc.numerics import Tensor, backward


def numeric_grad(f, arr, idx, h=1e-4):
    """Central difference of scalar ``f()`` w.r.t. ``arr[idx]`` (mutates and restores)."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def gradcheck(loss_fn, tensors, n_probe=None, rng=None, tol=1e-3):
    """Compare backward() against central differences for every (or ``n_probe``
    random) entry of each tensor. ``loss_fn`` builds a fresh graph each call."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)

    def f():
        return loss_fn().item()

    for t in tensors:
        flat = list(np.ndindex(t.data.shape))
        if n_probe is not None and len(flat) > n_probe:
            flat = [flat[i] for i in rng.choice(len(flat), n_probe, replace=False)]
        for idx in flat:
            num = numeric_grad(f, t.data, idx)
            ana = t.grad[idx]
            err = rel_err(ana, num)
            worst = max(worst, err)
            assert err < tol, f"{t.name}{idx}: analytic {ana:.8g} vs numeric {num:.8g}"
    return worst


def param(shape, rng, name=None, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True, name=name)


@pytest.fixture(scope="session")
def speech_clip():
    """Fixed 1 s speech-like clip (waveform, per-sample voicing)."""
    return synthetic.speech_like(1.0, seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
