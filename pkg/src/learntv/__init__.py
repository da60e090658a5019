"""Classic and learned solvers for 1D total-variation regularized least squares."""
from .operators import ConvergenceError, make_operator, operator_norm
from .proxtv import prox_tv_exact, prox_tv_lista
from .solvers import TVProblem, lambda_max, solve
from .unrolled import UnrolledNet, forward, init_net
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "TVProblem",
    "TrainConfig",
    "UnrolledNet",
    "forward",
    "init_net",
    "lambda_max",
    "make_operator",
    "operator_norm",
    "prox_tv_exact",
    "prox_tv_lista",
    "solve",
    "train",
]
