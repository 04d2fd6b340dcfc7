"""Waveform discriminator and least-squares adversarial losses."""
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import ParamStore, Tensor, add, conv1d, leaky_relu, mean, mul, square

DEFAULT_LAMBDA = 4.0


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: int = 10
    kernel_size: int = 3
    width: int = 64
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.layers < 3:
            raise ValueError("discriminator needs at least 3 layers")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for non-causal centred padding")

    @property
    def dilations(self):
        """1 on the first and last layers, 1, 2, ..., layers-2 in between."""
        return [1] + list(range(1, self.layers - 1)) + [1]

    @property
    def receptive_field(self):
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def toy_discriminator_config():
    return DiscriminatorConfig(width=16)


class Discriminator:
    def __init__(self, cfg=None, seed=1):
        self.cfg = cfg or DiscriminatorConfig()
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c = self.cfg
        c_in = 1
        for i in range(c.layers):
            c_out = 1 if i == c.layers - 1 else c.width
            fan_in = c_in * c.kernel_size
            self.params.add_uniform(f"disc.l{i}.w", (c_out, c_in, c.kernel_size), fan_in, rng)
            self.params.add_uniform(f"disc.l{i}.b", (c_out,), fan_in, rng)
            c_in = c_out

    def __call__(self, x):
        return self.discriminate(x)

    def discriminate(self, x):
        """Per-sample real-valued scores (1, T); no output squashing."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64).reshape(1, -1))
        if x.data.ndim == 1:
            x = Tensor(x.data.reshape(1, -1)) if not x.requires_grad else x
        length = x.shape[-1]
        if length < self.cfg.receptive_field:
            raise ValueError(
                f"input of {length} samples is shorter than the receptive field "
                f"({self.cfg.receptive_field})"
            )
        h = x
        last = self.cfg.layers - 1
        for i, d in enumerate(self.cfg.dilations):
            h = conv1d(h, self.params[f"disc.l{i}.w"], self.params[f"disc.l{i}.b"], dilation=d)
            if i != last:
                h = leaky_relu(h, self.cfg.leaky_slope)
        return h


def generator_adv_loss(scores):
    """mean((1 - D(G(.)))^2) from discriminator scores on generated audio."""
    return mean(square(add(mul(scores, -1.0), 1.0)))


def discriminator_adv_loss(real_scores, fake_scores):
    """mean((1 - D(real))^2) + mean(D(fake)^2)."""
    return add(mean(square(add(mul(real_scores, -1.0), 1.0))), mean(square(fake_scores)))


def adversarial_loss_g(disc, generated):
    return generator_adv_loss(disc(generated))


def discriminator_loss(disc, real, generated):
    """Least-squares discriminator objective; ``generated`` is detached first."""
    gen = generated.data if isinstance(generated, Tensor) else generated
    real = real.data if isinstance(real, Tensor) else real
    fake = Tensor(np.asarray(gen, dtype=np.float64).reshape(1, -1))
    return discriminator_adv_loss(disc(Tensor(np.asarray(real, dtype=np.float64).reshape(1, -1))), disc(fake))


def combined_loss(l_stft, l_adv, lam=DEFAULT_LAMBDA):
    """l_stft + lam * l_adv (lam > 0); works on floats or tensors."""
    if not lam > 0:
        raise ValueError(f"adversarial weight must be positive, got {lam}")
    if isinstance(l_stft, Tensor) or isinstance(l_adv, Tensor):
        return add(l_stft, mul(l_adv, lam))
    return float(l_stft) + lam * float(l_adv)
