"""Neural source-filter vocoder: deterministic and stochastic excitation, V/UV masks, multiband filter bank."""
from . import kernels
from .adversary import Discriminator, DiscriminatorConfig
from .filterbank import FilterBank, PrototypeSpec, make_bank
from .generator import FULL_BAND, MULTIBAND, Generator, GeneratorConfig, NoiseControl, full_config, toy_config
from .metrics import MetricReport, evaluate_pair, measure_rtf
from .spectral import StftConfig, mel_features, multires_stft_loss
from .trainer import TrainConfig, Trainer, load_generator

__version__ = "0.1.0"
