"""Real-time retargeting: feasibility test and horizontal projection.

Onboard work is one evaluation of the conic decision function and, when
the state is outside the controllable set, one quadratic solve for the
range coordinate. The landing site is then moved along the ground track so
that the lander's reduced state sits on the boundary.
"""

import math
from dataclasses import dataclass

import numpy as np

from .boundary import eval_g
from .errors import NoHorizontalIntersection, RetargetInfeasible, UndefinedReduction
from .guidance import ReducedGuidanceState, initial_state_from_reduced, reduce_state, simulate
from .tgo import eval_tgo


@dataclass(frozen=True)
class RetargetDecision:
    feasible: bool
    s: np.ndarray
    s_projected: np.ndarray
    target_shift: float  # metres; positive moves the site further along the direction of travel
    new_target: np.ndarray


def reduced_ratios(state):
    if state.v <= 0 or state.w <= 0:
        raise UndefinedReduction("state is not in the descending regime (need v > 0, w > 0)")
    return np.array([state.S / state.v, state.H / state.w])


def assess_feasibility(boundary, state):
    return bool(eval_g(boundary, reduced_ratios(state)) > 0)


def horizontal_quadratic(geom, s2):
    """Coefficients ``(a, b, c)`` of the conic restricted to ``s2 = const``.

    The unknown is ``X = s1 - h'``. Only arithmetic and one square root are
    used downstream, so the cost is input independent.
    """
    h, k, c, s, m1, m2 = geom
    y = s2 - k
    a = m1 * c * c + m2 * s * s
    b = 2.0 * (m1 - m2) * c * s * y
    cc = (m1 * s * s + m2 * c * c) * y * y - 1.0
    return a, b, cc, h


def horizontal_roots(geom, s1, s2):
    """Both real roots ``s1'`` of the boundary on the line ``s2 = const``.

    Returns ``(nearest, other)`` by distance to ``s1``; on an exact tie
    the larger ``s1'`` (site further downrange) comes first. Raises
    ``NoHorizontalIntersection`` when the line misses the conic.
    """
    a, b, c, h = horizontal_quadratic(geom, s2)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise NoHorizontalIntersection("horizontal line misses the boundary")
    sq = disc ** 0.5
    # numerically stable pair
    q = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
    r1 = q / a
    r2 = c / q if q != 0.0 else r1
    x1 = h + r1
    x2 = h + r2
    d1 = abs(x1 - s1)
    d2 = abs(x2 - s1)
    if d2 < d1 or (d2 == d1 and x2 > x1):
        return x2, x1
    return x1, x2


def _geom(boundary):
    h, k, th, m1, m2 = boundary.geometry()
    return (h, k, math.cos(th), math.sin(th), m1, m2)


def project_to_boundary(boundary, s, inset=0.0):
    """Horizontal projection of ``s`` onto the zero set of ``g``.

    ``inset`` moves the result that far further into the controllable side.
    """
    s = np.asarray(s, dtype=float)
    s1p, _ = horizontal_roots(_geom(boundary), float(s[0]), float(s[1]))
    if inset:
        eps = 1e-6 * max(1.0, abs(s1p))
        slope = eval_g(boundary, np.array([s1p + eps, s[1]])) - eval_g(boundary, np.array([s1p - eps, s[1]]))
        s1p += inset * (1.0 if slope > 0 else -1.0)
    return np.array([s1p, s[1]])


def compute_retarget(boundary, state, current_target, direction=None, inset=0.0):
    """Decide whether to keep the site and, if not, where to move it.

    ``direction`` is the horizontal unit vector of travel (defaults to +x).
    """
    current_target = np.asarray(current_target, dtype=float)
    s = reduced_ratios(state)
    if eval_g(boundary, s) > 0:
        return RetargetDecision(True, s, s.copy(), 0.0, current_target.copy())
    try:
        sp = project_to_boundary(boundary, s, inset=inset)
    except NoHorizontalIntersection as exc:
        raise RetargetInfeasible(str(exc)) from exc
    new_range = sp[0] * state.v
    shift = new_range - state.S
    if direction is None:
        direction = np.array([1.0, 0.0, 0.0])
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    return RetargetDecision(False, s, sp, float(shift), current_target + shift * direction)


@dataclass
class GuidedOutcome:
    rollout: object
    decision: RetargetDecision
    t_go: float
    retarget_error: str = None


def guided_descent(cfg, initial, policy, boundary, retarget=True, target=None, trace=True):
    """One-shot retargeting decision at phase start, then the base policy.

    When the projection has no solution the original site is kept and the
    failure is reported in ``retarget_error``.
    """
    target = cfg.target if target is None else np.asarray(target, dtype=float)
    rs = reduce_state(initial.r, initial.v, target)
    vh = np.array([initial.v[0], initial.v[1], 0.0])
    direction = vh / np.linalg.norm(vh) if np.linalg.norm(vh) > 0 else np.array([1.0, 0.0, 0.0])
    err = None
    if retarget:
        try:
            decision = compute_retarget(boundary, rs, target, direction, inset=cfg.retarget.inset)
        except (RetargetInfeasible, UndefinedReduction) as exc:
            err = str(exc)
            decision = RetargetDecision(False, np.full(2, np.nan), np.full(2, np.nan), 0.0, target.copy())
    else:
        s = reduced_ratios(rs) if rs.v > 0 and rs.w > 0 else np.full(2, np.nan)
        feasible = bool(np.all(np.isfinite(s)) and eval_g(boundary, s) > 0) if boundary is not None else True
        decision = RetargetDecision(feasible, s, s.copy(), 0.0, target.copy())
    final_target = decision.new_target
    rs_final = reduce_state(initial.r, initial.v, final_target)
    t_go = eval_tgo(policy, rs_final)
    result = simulate(cfg, initial, t_go, target=final_target, trace=trace)
    return GuidedOutcome(result, decision, t_go, err)


def guided_descent_reduced(cfg, rs, policy, boundary, retarget=True, trace=False):
    initial = initial_state_from_reduced(rs, cfg.target, cfg.physics.m_wet)
    return guided_descent(cfg, initial, policy, boundary, retarget=retarget, trace=trace)


__all__ = [
    "RetargetDecision",
    "assess_feasibility",
    "project_to_boundary",
    "compute_retarget",
    "guided_descent",
    "guided_descent_reduced",
    "ReducedGuidanceState",
]
