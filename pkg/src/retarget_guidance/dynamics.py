"""Translational lander dynamics, path-constraint monitoring and traces."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import NonFiniteState


@dataclass(frozen=True)
class LanderState:
    t: float
    r: np.ndarray
    v: np.ndarray
    m: float

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def as_vector(self):
        return np.concatenate([self.r, self.v, [self.m]])

    @classmethod
    def from_vector(cls, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return cls(float(t), x[0:3].copy(), x[3:6].copy(), float(x[6]))


@dataclass(frozen=True)
class ConstraintSet:
    rho_min: float
    rho_max: float
    thrust_rate_max: float
    theta_lim: float
    vh_max: float
    m_terminal_min: float
    g: np.ndarray
    alpha: float
    subsurface_margin: float = 0.0

    @classmethod
    def from_config(cls, cfg):
        return cls(
            rho_min=cfg.physics.rho_min,
            rho_max=cfg.physics.rho_max,
            thrust_rate_max=cfg.limits.thrust_rate_max,
            theta_lim=math.radians(cfg.limits.theta_lim_deg),
            vh_max=cfg.limits.vh_max,
            m_terminal_min=cfg.limits.m_terminal_min,
            g=cfg.g,
            alpha=cfg.physics.alpha,
            subsurface_margin=cfg.limits.subsurface_margin,
        )

    def params(self, dt=0.1, n_sub=2, unclamped=False):
        return K.pack_params(
            g=self.g, alpha=self.alpha, rho_min=self.rho_min, rho_max=self.rho_max,
            thrust_rate_max=self.thrust_rate_max, theta_lim=self.theta_lim, vh_max=self.vh_max,
            dt=dt, n_sub=n_sub, tgo_floor=0.0, r_ref=1.0, tol_pos=0.0, tol_vel=0.0,
            m_terminal_min=self.m_terminal_min, vf=np.zeros(3), af_net=np.zeros(3),
            subsurface_margin=self.subsurface_margin, unclamped=unclamped,
        )


@dataclass(frozen=True)
class TerminalTolerances:
    pos: float = 10.0
    vel: float = 0.5


@dataclass
class StepRecord:
    state: LanderState
    a_cmd: np.ndarray
    T_c: float
    theta: float
    violations: list = field(default_factory=list)


@dataclass
class RolloutResult:
    """Outcome of one closed-loop rollout.

    ``trace`` holds one row per guidance cycle plus the terminal row, with
    columns ``kernels.TRACE_COLS``; it is empty when tracing was off.
    """

    initial: LanderState
    terminal: LanderState
    fuel_used: float
    converged: bool
    violated: list
    target: np.ndarray
    saturation_time: float = 0.0
    longest_saturation: float = 0.0
    trace: np.ndarray = None

    @property
    def time_of_flight(self):
        return self.terminal.t - self.initial.t

    @classmethod
    def from_kernel(cls, res, initial, target, trace=None):
        x = res[K.R_STATE:K.R_STATE + 7]
        terminal = LanderState.from_vector(x, initial.t + res[K.R_T])
        mask = int(res[K.R_VIOL])
        t_first = res[K.R_T_FIRST_VIOL]
        violated = [(name, float(t_first)) for bit, name in K.VIOLATION_NAMES.items() if mask & bit]
        return cls(
            initial=initial,
            terminal=terminal,
            fuel_used=float(initial.m - terminal.m),
            converged=bool(res[K.R_CONVERGED] > 0),
            violated=violated,
            target=np.asarray(target, dtype=float),
            saturation_time=float(res[K.R_SAT_TIME]),
            longest_saturation=float(res[K.R_SAT_RUN]),
            trace=trace,
        )


def violation_names(mask):
    return [name for bit, name in K.VIOLATION_NAMES.items() if mask & bit]


def check_constraints(rec, target_r, limits, t_prev=None, dt=None):
    """Names of path constraints violated by a step record.

    The thrust-rate check needs the previous thrust and the step length;
    it is skipped when either is omitted.
    """
    p = limits.params(dt=dt or 1.0)
    x = rec.state.as_vector()
    if t_prev is None or dt is None:
        t_prev, h = rec.T_c, 1.0
    else:
        h = dt
    mask = K.path_violations(x, float(rec.T_c), float(t_prev), float(h), float(rec.theta),
                             np.asarray(target_r, dtype=float), p)
    return violation_names(mask)


def step(state, a_net, dt, limits, T_prev, n_substeps=2, unclamped=False):
    """Advance one guidance cycle under a net acceleration command.

    Thrust is clamped to the bounds and rate limit (unless ``unclamped``) and
    applied along the commanded propulsive direction; RK4 runs over
    ``n_substeps`` substeps. Returns ``(new_state, StepRecord)``.
    """
    p = limits.params(dt=dt, n_sub=n_substeps, unclamped=unclamped)
    a_net = np.asarray(a_net, dtype=float)
    x = state.as_vector()
    u, t_c, _ = K.thrust_command(a_net, float(state.m), float(T_prev), float(dt), p)
    theta = math.acos(min(1.0, max(-1.0, u[2])))
    xn = K.propagate(x, u, float(t_c), float(dt), p)
    if not np.all(np.isfinite(xn)):
        raise NonFiniteState(f"non-finite state after step at t={state.t + dt}")
    new = LanderState.from_vector(xn, state.t + dt)
    rec = StepRecord(new, a_net.copy(), float(t_c), theta)
    mask = K.path_violations(xn, float(t_c), float(T_prev), float(dt), theta, np.full(3, -np.inf), p)
    rec.violations = violation_names(mask)
    return new, rec


def convergence_indicator(result, target_r, vf, tol, m_terminal_min):
    """True iff no path violations and the terminal state meets tolerances."""
    if result.violated:
        return False
    term = result.terminal
    if np.linalg.norm(term.r - np.asarray(target_r)) > tol.pos:
        return False
    if np.linalg.norm(term.v - np.asarray(vf)) > tol.vel:
        return False
    return term.m >= m_terminal_min


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(K.TRACE_COLS)
        for row in trace:
            w.writerow([f"{v:.9g}" for v in row])


def read_trace_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
