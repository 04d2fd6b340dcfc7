"""Adam training loop with alternating discriminator/generator updates."""
import csv
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import checkpoint
from .adversary import (
    DEFAULT_LAMBDA,
    Discriminator,
    DiscriminatorConfig,
    combined_loss,
    discriminator_adv_loss,
    generator_adv_loss,
)
from .generator import Generator, GeneratorConfig
from .numerics import Tensor, backward
from .spectral import LossReport, multires_stft_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "l_sc", "l_mag", "l_stft", "l_adv", "l_comb")


class DataError(ValueError):
    """Training pair whose mel frames and waveform samples do not line up."""


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    decay: float = 0.5
    decay_interval: int = 0  # 0 means a quarter of total_steps
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 1
    clip_samples: int = 8000
    total_steps: int = 1000
    warmup_steps: int = -1  # -1 means 10% of total_steps
    lam: float = DEFAULT_LAMBDA
    seed: int = 0

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ValueError("lr_init must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.clip_samples % 80 or self.clip_samples <= 0:
            raise ValueError("clip_samples must be a positive multiple of 80")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @property
    def warmup(self):
        return self.total_steps // 10 if self.warmup_steps < 0 else self.warmup_steps

    @property
    def interval(self):
        return self.decay_interval or max(1, self.total_steps // 4)

    def lr_at(self, step):
        """Exponential step decay: lr_init * decay ** (step // interval)."""
        return self.lr_init * self.decay ** (step // self.interval)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Adam:
    """Adam with bias correction over a :class:`ParamStore`."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        self.t += 1
        for k, p in self.params.items():
            adam_update(p.data, p.grad, self.m[k], self.v[k], self.t, lr, self.beta1, self.beta2, self.eps)


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of ``param`` and its moment buffers (``t`` is 1-based)."""
    if grad is None:
        return
    if grad.shape != param.shape or m.shape != param.shape or v.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def check_pair(mel, wave, hop=80):
    mel = np.asarray(mel)
    wave = np.asarray(wave).ravel()
    if mel.ndim != 2:
        raise DataError(f"mel must be (bins, frames), got shape {mel.shape}")
    if mel.shape[1] * hop != wave.size:
        raise DataError(f"{mel.shape[1]} frames need {mel.shape[1] * hop} samples, got {wave.size}")
    return mel, wave


class Trainer:
    """Owns generator, discriminator, their optimizers and the training RNG."""

    def __init__(self, gen_cfg=None, disc_cfg=None, train_cfg=None):
        self.train_cfg = train_cfg or TrainConfig()
        seed = self.train_cfg.seed
        self.generator = Generator(gen_cfg, seed=seed)
        self.discriminator = Discriminator(disc_cfg or DiscriminatorConfig(), seed=seed + 1)
        t = self.train_cfg
        self.opt_g = Adam(self.generator.params, t.adam_beta1, t.adam_beta2, t.adam_eps)
        self.opt_d = Adam(self.discriminator.params, t.adam_beta1, t.adam_beta2, t.adam_eps)
        self.rng = np.random.default_rng(seed)
        self.step = 0

    # -- data -----------------------------------------------------------------
    def sample_clip(self, mel, wave):
        hop = self.generator.cfg.hop
        mel, wave = check_pair(mel, wave, hop)
        frames = self.train_cfg.clip_samples // hop
        total = mel.shape[1]
        if total <= frames:
            return mel, wave
        start = int(self.rng.integers(0, total - frames + 1))
        return mel[:, start : start + frames], wave[start * hop : (start + frames) * hop]

    # -- one optimisation step ------------------------------------------------
    def train_step(self, batch):
        """One discriminator update (after warm-up), then one generator update.

        ``batch`` is a sequence of (mel, waveform) pairs; one random excerpt of
        ``clip_samples`` is drawn from each. Returns the batch-mean
        :class:`LossReport`.
        """
        cfg = self.train_cfg
        gen, disc = self.generator, self.discriminator
        adversarial = self.step >= cfg.warmup
        lr = cfg.lr_at(self.step)
        clips = [self.sample_clip(mel, wave) for mel, wave in batch]
        noises = [gen.noise(w.size, int(self.rng.integers(0, 2**63 - 1))) for _, w in clips]
        scale = 1.0 / len(clips)

        gen.params.zero_grad()
        outputs = []
        graphs = []
        for (mel, wave), noise in zip(clips, noises):
            out, _ = gen.forward(mel, noise)
            outputs.append(out)
            loss, rep = multires_stft_loss(wave, out)
            graphs.append((loss, rep))

        if adversarial:
            disc.params.zero_grad()
            for (_, wave), out in zip(clips, outputs):
                d_loss = discriminator_adv_loss(
                    disc(Tensor(wave.reshape(1, -1))), disc(Tensor(out.data.copy()))
                )
                backward(d_loss * scale)
            self.opt_d.step(lr)

        report = LossReport()
        for out, (l_stft, rep) in zip(outputs, graphs):
            if adversarial:
                l_adv = generator_adv_loss(disc(out))
                total = combined_loss(l_stft, l_adv, cfg.lam)
                report.l_adv += l_adv.item() * scale
            else:
                total = l_stft
            backward(total * scale)
            report.l_sc += rep.l_sc * scale
            report.l_mag += rep.l_mag * scale
            report.l_stft += rep.l_stft * scale
        backward_fill(gen.params)
        self.opt_g.step(lr)
        report.l_comb = combined_loss(report.l_stft, report.l_adv, cfg.lam)
        self.step += 1
        return report

    def fit(self, data, steps=None, log_path=None, callback=None):
        """Run ``steps`` train steps (default: up to ``total_steps``) cycling through ``data``."""
        steps = self.train_cfg.total_steps - self.step if steps is None else steps
        history = []
        writer = fh = None
        if log_path is not None:
            fh = open(log_path, "a" if self.step else "w", newline="")
            writer = csv.writer(fh)
            if not self.step:
                writer.writerow(LOG_COLUMNS)
        try:
            for _ in range(steps):
                first = (self.step * self.train_cfg.batch) % len(data)
                batch = [data[(first + i) % len(data)] for i in range(self.train_cfg.batch)]
                lr = self.train_cfg.lr_at(self.step)
                rep = self.train_step(batch)
                row = (self.step, lr, rep.l_sc, rep.l_mag, rep.l_stft, rep.l_adv, rep.l_comb)
                history.append(row)
                if writer is not None:
                    writer.writerow([row[0]] + [f"{v:.8g}" for v in row[1:]])
                if callback is not None:
                    callback(self, rep)
                if self.step % 100 == 0:
                    log.info("step %d lr %.3g l_stft %.4f l_adv %.4f", self.step, lr, rep.l_stft, rep.l_adv)
        finally:
            if fh is not None:
                fh.close()
        return history

    # -- checkpoints ----------------------------------------------------------
    def state(self):
        header = {
            "generator_config": self.generator.cfg.to_dict(),
            "discriminator_config": self.discriminator.cfg.to_dict(),
            "train_config": self.train_cfg.to_dict(),
            "step": self.step,
            "adam_t": {"g": self.opt_g.t, "d": self.opt_d.t},
            "rng_state": self.rng.bit_generator.state,
        }
        tensors = {}
        for prefix, store in (("gen", self.generator.params), ("disc", self.discriminator.params)):
            for k, p in store.items():
                tensors[f"{prefix}/{k}"] = p.data
        for prefix, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            for k in opt.m:
                tensors[f"{prefix}/m/{k}"] = opt.m[k]
                tensors[f"{prefix}/v/{k}"] = opt.v[k]
        return header, tensors

    def save(self, path):
        header, tensors = self.state()
        return checkpoint.save(path, _jsonable(header), tensors)

    @classmethod
    def load(cls, path):
        header, tensors = checkpoint.load(path)
        return cls.from_state(header, tensors)

    @classmethod
    def from_state(cls, header, tensors):
        try:
            trainer = cls(
                GeneratorConfig.from_dict(header["generator_config"]),
                DiscriminatorConfig.from_dict(header["discriminator_config"]),
                TrainConfig.from_dict(header["train_config"]),
            )
        except (KeyError, TypeError) as exc:
            raise checkpoint.CheckpointError(f"incomplete checkpoint header: {exc}") from None
        trainer.generator.params.load_state(_strip(tensors, "gen/"))
        trainer.discriminator.params.load_state(_strip(tensors, "disc/"))
        for prefix, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
            for k in opt.m:
                opt.m[k] = tensors[f"{prefix}/m/{k}"].copy()
                opt.v[k] = tensors[f"{prefix}/v/{k}"].copy()
        trainer.opt_g.t = header["adam_t"]["g"]
        trainer.opt_d.t = header["adam_t"]["d"]
        trainer.step = header["step"]
        trainer.rng.bit_generator.state = header["rng_state"]
        return trainer


def backward_fill(params):
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _strip(tensors, prefix):
    return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def load_generator(path):
    """Generator restored from a checkpoint (discriminator and optimizer state ignored)."""
    header, tensors = checkpoint.load(path)
    try:
        gen = Generator(GeneratorConfig.from_dict(header["generator_config"]))
    except (KeyError, TypeError) as exc:
        raise checkpoint.CheckpointError(f"incomplete checkpoint header: {exc}") from None
    gen.params.load_state(_strip(tensors, "gen/"))
    return gen
