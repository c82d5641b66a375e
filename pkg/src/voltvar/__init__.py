"""Reactive power management for radial distribution feeders."""
from .branchflow import (OperatingPoint, ResidualReport, SweepDivergence, power_loss,
                         residual_check, sweep_solve)
from .conic import ConicProblem, DualSolution, IPMResult, IPMSolver, ipm_solve
from .controller import (ControllerState, StepSizeSchedule, deterministic_step, eta_at,
                         ideal_step, stochastic_step, threshold_update)
from .kernels import BACKEND
from .network import (Bus, Line, NetworkError, PriceSchedule, RadialNetwork, build_network,
                      clamp_to_region, load_feeder, load_fixture)
from .relaxation import (AffineMaps, InfeasibleError, SolverFailure, build_maps,
                         exactness_certificate, solve_dual, solve_primal,
                         strict_feasibility_probe)

__version__ = "0.1.0"
