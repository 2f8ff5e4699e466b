"""LFT modelling, discretization and robustness analysis of multi-rate sampled-data systems."""

from .discretization import (EpsCover, ErrorBoundReport, error_bound, full_zoh_discretize,
                             pade_discretize, tustin_discretize, zoh_exact)
from .errors import (BudgetExhausted, IllPosedLFTError, ModelError, ModelFileError, MrlftError,
                     NonAffineError, NumericalError)
from .hybrid import SimTrace, simulate_discrete_lft, simulate_hybrid, step_profile
from .lft import (BlockKind, BlockSpec, BlockStructure, ParameterBox, StateSpace,
                  UncertainStateSpace, eval_at, lower_lft, upper_lft)
from .modelfile import ModelFile
from .multirate import LoopSpec, MultirateController, assemble, downsample

__version__ = "0.1.0"
