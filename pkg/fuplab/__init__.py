"""Numerical laboratory for the fractal uncertainty principle in several dimensions."""

from .exceptions import (
    FupLabConfigError,
    FupLabConvergenceError,
    FupLabError,
    FupLabFormatError,
    FupLabRangeError,
    FupLabResolutionError,
    FupLabStageError,
)
from .experiment import Experiment, load_config, run_experiment
from .extension import complex_hessian, poisson_extend, psh_certificate
from .gridset import gen_box_porous, gen_cantor_product, gen_sierpinski
from .modification import modify_weight
from .porosity import analyze_ball_porosity, analyze_line_porosity, check_box_porosity
from .spectral import fup_norm, fup_scan
from .weights import build_damping_weight
