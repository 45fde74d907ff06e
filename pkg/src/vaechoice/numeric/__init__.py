"""Dense arithmetic, a reverse-mode tape and stable special functions."""

from .functions import (
    central_difference,
    gaussian_logpdf,
    gradient,
    relative_error,
    std_normal_cdf,
    std_normal_logpdf,
)
from .ops import affine, log_ndtr, log_sum_exp, softmax
from .tape import Tape, Var

__all__ = [
    "Tape",
    "Var",
    "affine",
    "central_difference",
    "gaussian_logpdf",
    "gradient",
    "log_ndtr",
    "log_sum_exp",
    "relative_error",
    "softmax",
    "std_normal_cdf",
    "std_normal_logpdf",
]
