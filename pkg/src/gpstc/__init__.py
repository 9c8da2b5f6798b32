"""Learning self-triggered controllers with Gaussian-process dynamics models."""

from .belief import GaussianBelief
from .costs import CostConfig
from .errors import GpstcError, IllConditionedError, NotFittedError, NumericalError, ValidationError
from .gp import Dataset, Hyperparams, MultiGpModel, fit, predict
from .propagate import propagate_m_steps, propagate_one_step
from .vi import PolicyPair, value_iteration

__version__ = "0.1.0"
