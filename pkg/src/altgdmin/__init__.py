"""Alternating GD and minimization solvers for low-rank recovery from column-wise measurements."""
from .errors import *  # noqa: F401,F403
from .problems import (GroundTruth, LrcsData, LrmcData, LrprData, apply_adjoint, apply_forward,
                       generate_ground_truth, load_dataset, lrcs_measure, lrmc_sample, lrpr_measure,
                       save_dataset)
from .solvers import *  # noqa: F401,F403

__version__ = "0.1.0"
