"""Domain-decomposed pressure Poisson SOR solver with interchangeable
communication policies: bulk-synchronous, asynchronous one-sided, and
event-triggered with adaptive thresholds."""

from .comm import (DelayModel, DelaySampler, HaloMessage, ThreadedWindow,
                   VirtualClock, VirtualWindow, run_virtual)
from .convergence import LocalConvState, MasterState, nullify_on_new_values
from .events import GhostHistory, ThresholdState
from .grid import (BoundaryVector, ProblemInstance, Subdomain,
                   build_coefficients, l1_norm, local_residual, sor_sweep,
                   split_instance)
from .problems import (BubbleSpec, bubble_instance, instance_from_json,
                       instance_to_json, manufactured_instance,
                       rhs_from_velocity)
from .runner import (RunReport, direct_solve, run, sweep_experiment,
                     write_sweep_csv)
from .worker import Policy

__all__ = [
    "BoundaryVector", "BubbleSpec", "DelayModel", "DelaySampler",
    "GhostHistory", "HaloMessage", "LocalConvState", "MasterState",
    "Policy", "ProblemInstance", "RunReport", "Subdomain",
    "ThreadedWindow", "ThresholdState", "VirtualClock", "VirtualWindow",
    "bubble_instance", "build_coefficients", "direct_solve",
    "instance_from_json", "instance_to_json", "l1_norm",
    "local_residual", "manufactured_instance", "nullify_on_new_values",
    "rhs_from_velocity", "run", "run_virtual", "sor_sweep",
    "split_instance", "sweep_experiment", "write_sweep_csv",
]
