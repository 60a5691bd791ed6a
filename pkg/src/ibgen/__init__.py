"""Variational classifiers with stochastic encoders, KL-sum mutual-information
estimates and numerical evaluation of an information-theoretic generalization
bound."""

from .classifier import SoftmaxDecoder, TrainConfig, evaluate_risk, generalization_error, objective_and_gradients, train
from .data import Dataset, SyntheticSource, load_cifar10_bin, load_mnist_idx, make_synthetic, subsample, subsample_split
from .encoders import GaussianEncoder, LogNormalEncoder, RbmEncoder, cd1_step
from .errors import (
    BadMagicError,
    ConfigError,
    CountMismatchError,
    DataFormatError,
    DeskScaleError,
    DomainError,
    IbgenError,
    NonFiniteError,
    RecordLengthError,
    TruncatedFileError,
)
from .info import MiEstimate, PriorSpec, estimate_mi, kl_bernoulli, kl_gaussian_to_std_normal, kl_lognormal, kl_normal
from .nn import Rng

__version__ = "0.1.0"
