"""Terminal descent guidance with a learned time-to-go policy and retargeting."""

from .config import RunConfig, load_config
from .dynamics import ConstraintSet, LanderState, RolloutResult, step
from .errors import GuidanceError
from .frames import GuidanceFrame, build_guidance_frame, to_guidance, to_navigation
from .guidance import GuidanceProblem, ReducedGuidanceState, guidance_cycle, simulate, solve_cubic_coeffs
from .retarget import assess_feasibility, compute_retarget, guided_descent, project_to_boundary

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet",
    "GuidanceError",
    "GuidanceFrame",
    "GuidanceProblem",
    "LanderState",
    "ReducedGuidanceState",
    "RolloutResult",
    "RunConfig",
    "assess_feasibility",
    "build_guidance_frame",
    "compute_retarget",
    "guidance_cycle",
    "guided_descent",
    "load_config",
    "project_to_boundary",
    "simulate",
    "solve_cubic_coeffs",
    "step",
    "to_guidance",
    "to_navigation",
]
