from .altgdmin import (altgdmin_lrcs, altgdmin_lrmc, altgdmin_lrpr, estimate_sigma_max, lrcs_grad_U,
                       lrcs_init, lrcs_objective, lrcs_update_B, lrmc_grad_U, lrmc_init, lrmc_objective,
                       lrmc_update_B, lrpr_grad_U, lrpr_init, lrpr_objective, lrpr_update_Bc)
from .altmin import altmin_lrcs, altmin_lrmc
from .config import FactorEstimate, RunTrace, SolverConfig, TraceRecord, read_trace_csv

__all__ = [name for name in dir() if not name.startswith("_")]
