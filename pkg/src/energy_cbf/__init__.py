"""Kinetic-energy limiting safety filter for torque-controlled planar arms.

The filter keeps ``1/2 qdot^T D(q) qdot`` below a limit ``K_max`` by
minimally modifying a nominal torque command so that the barrier
``h = K_max - K_e`` satisfies ``hdot >= -gamma h``.
"""

from .dynamics import (DynamicsTerms, ModelError, RobotModel, State, compute_terms, desk_arm,
                       energy_rate, forward_dynamics, kinetic_energy, load_model)
from .kernels import BACKEND
from .qp import QpProblem, QpSolution, halfspace_projection, solve
from .safety_filter import FilterConfig, FilterResult, apply_filter, barrier, barrier_rate, psi
from .simulator import SimConfig, Trace, TraceRecord, rate_limit_velocity, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DynamicsTerms", "FilterConfig", "FilterResult", "ModelError", "QpProblem",
    "QpSolution", "RobotModel", "SimConfig", "State", "Trace", "TraceRecord", "apply_filter",
    "barrier", "barrier_rate", "compute_terms", "desk_arm", "energy_rate", "forward_dynamics",
    "halfspace_projection", "kinetic_energy", "load_model", "psi", "rate_limit_velocity", "run",
    "solve",
]
