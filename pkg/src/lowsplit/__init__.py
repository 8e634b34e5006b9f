"""Operator splitting with randomized dynamical low-rank steppers for stiff
semilinear matrix differential equations X' = A1 X + X A2 + F(t, X)."""

from .errors import *  # noqa: F401,F403
from .lowrank import LowRankFactor, TruncationRule, gaussian_sketch, gram_inverse, orth, truncate
from .matfun import ExpmConfig, StiffOperator, expm_action, stiff_flow
from .odesolve import IvpConfig, NonstiffField, reference_solve, solve_matrix_ivp
from .rangefinder import (AdaptiveConfig, RangefinderConfig, adaptive_corangefinder,
                          adaptive_rangefinder, dynamical_corangefinder, dynamical_rangefinder)
from .steppers import StepperConfig, StepRecord, adgn_step, adrsvd_step, dgn_step, drsvd_step
from .splitting import SemilinearProblem, SplittingConfig, integrate, lie_step, strang_step

__version__ = "0.1.0"
