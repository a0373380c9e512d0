"""Stochastic-boundary ODEs: latent dynamics between unobserved, point-process
distributed boundary times, trained with a numpy autodiff tape."""

from .autodiff import ContractError, DiffValue, DimensionError
from .data import HawkesParams, TimedSequence, make_postdiction_dataset, make_sine_dataset
from .model import (
    ElboReport,
    RegenerativeStrodeNet,
    StrodeNet,
    TrainConfig,
    forward_sequence,
    regenerative_forward,
    train,
    train_regenerative,
)
from .nn import ConstrainedMLP, SignConstraint
from .point_process import PosteriorTimeNet, PriorIntensityNet, kl_upper_bound, sample_next_time

__version__ = "0.1.0"
