"""Cubic-polynomial base guidance and closed-loop rollouts."""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .dynamics import LanderState, RolloutResult
from .errors import NearTerminal, SingularSystem, UndefinedReduction

COND_LIMIT = 1e14


@dataclass(frozen=True)
class GuidanceProblem:
    """Boundary conditions in the navigation frame.

    ``a0`` and ``af`` are *net* accelerations (gravity included), the
    quantity the polynomial describes.
    """

    r0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    rf: np.ndarray
    vf: np.ndarray
    af: np.ndarray

    def __post_init__(self):
        for name in ("r0", "v0", "a0", "rf", "vf", "af"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def from_config(cls, cfg, r0, v0, target=None):
        return cls(
            r0=r0,
            v0=v0,
            a0=cfg.a0_net,
            rf=cfg.target if target is None else target,
            vf=np.asarray(cfg.scenario.vf, dtype=float),
            af=cfg.af_net,
        )

    def in_frame(self, frame):
        """Same problem with every vector expressed in ``frame``."""
        b = frame.basis.T
        return GuidanceProblem(b @ self.r0, b @ self.v0, b @ self.a0, b @ self.rf, b @ self.vf, b @ self.af)


@dataclass(frozen=True)
class PolyCoeffs:
    """Rows C0..C3, one column per axis."""

    C: np.ndarray

    def accel(self, tau):
        return self.C[0] + tau * (self.C[1] + tau * (self.C[2] + tau * self.C[3]))

    def velocity_change(self, tau):
        c = self.C
        return c[0] * tau + c[1] * tau**2 / 2 + c[2] * tau**3 / 3 + c[3] * tau**4 / 4

    def position_change(self, tau, v0):
        c = self.C
        return v0 * tau + c[0] * tau**2 / 2 + c[1] * tau**3 / 6 + c[2] * tau**4 / 12 + c[3] * tau**5 / 20


@dataclass(frozen=True)
class GuidanceCommand:
    a_net: np.ndarray
    t_go_remaining: float
    a_next: np.ndarray = None
    mode: int = 0


@dataclass(frozen=True)
class ReducedGuidanceState:
    """Downrange S, altitude above target H, descent rate w, horizontal speed v."""

    S: float
    H: float
    w: float
    v: float

    def as_array(self):
        return np.array([self.S, self.H, self.w, self.v])

    def ratios(self):
        if self.v <= 0 or self.w <= 0:
            raise UndefinedReduction("reduced state needs v > 0 and w > 0")
        return np.array([self.S / self.v, self.H / self.w])


def initial_state_from_reduced(rs, target, m0):
    """Planar phase-start state; the lander approaches the target along +x."""
    target = np.asarray(target, dtype=float)
    r = target + np.array([-rs.S, 0.0, rs.H])
    v = np.array([rs.v, 0.0, -rs.w])
    return LanderState(0.0, r, v, float(m0))


def reduce_state(r, v, target):
    """Reduced state of a lander at ``r`` with velocity ``v``."""
    d = np.asarray(target, dtype=float) - np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    return ReducedGuidanceState(
        S=float(np.hypot(d[0], d[1])),
        H=float(-d[2]),
        w=float(-v[2]),
        v=float(np.hypot(v[0], v[1])),
    )


def solve_cubic_coeffs(bc, t_go):
    """Per-axis cubic net-acceleration coefficients meeting ``bc`` in ``t_go``.

    ``bc`` must already be expressed in the frame the coefficients are wanted
    in. Raises ``SingularSystem`` for ``t_go <= 0`` or an ill-conditioned
    system.
    """
    if not t_go > 0:
        raise SingularSystem(f"t_go must be positive, got {t_go}")
    mat = K.eq9_matrix(float(t_go))
    if np.linalg.cond(mat) > COND_LIMIT:
        raise SingularSystem(f"boundary-condition system ill-conditioned at t_go={t_go}")
    C = np.empty((4, 3))
    for i in range(3):
        rhs = np.array([
            bc.a0[i],
            bc.af[i],
            bc.vf[i] - bc.v0[i],
            bc.rf[i] - bc.r0[i] - bc.v0[i] * t_go,
        ])
        C[:, i] = K.solve4(mat, rhs)
    return PolyCoeffs(C)


def _cycle_params(problem, dt, r_ref, tgo_floor):
    return K.pack_params(
        g=np.zeros(3), alpha=0.0, rho_min=0.0, rho_max=1.0, thrust_rate_max=1.0, theta_lim=1.0,
        vh_max=1.0, dt=dt, n_sub=1, tgo_floor=tgo_floor, r_ref=r_ref, tol_pos=0.0, tol_vel=0.0,
        m_terminal_min=0.0, vf=problem.vf, af_net=problem.af,
    )


def guidance_cycle(state, problem, t_go, dt=0.1, r_ref=1737.4e3, tgo_floor=0.0):
    """Net acceleration command for the next guidance cycle.

    ``problem.a0`` is the acceleration at the start of the cycle (the
    previous cycle's end value). The in-plane polynomial is evaluated at
    mid-cycle; out-of-plane motion is regulated to zero.
    """
    if t_go < dt:
        raise NearTerminal(f"t_go={t_go} below one cycle")
    p = _cycle_params(problem, dt, r_ref, tgo_floor)
    cmd, nxt, mode = K.guidance_accel(state.r, state.v, problem.a0, problem.rf, float(t_go), p)
    return GuidanceCommand(np.asarray(cmd), float(t_go), np.asarray(nxt), int(mode))


def simulate(cfg, initial, t_go, target=None, a0_net=None, trace=True, unclamped=False, use_numba=None):
    """Closed-loop rollout of the base policy from ``initial``."""
    target = cfg.target if target is None else np.asarray(target, dtype=float)
    a0 = cfg.a0_net if a0_net is None else np.asarray(a0_net, dtype=float)
    p = cfg.kernel_params(unclamped=unclamped)
    x0 = initial.as_vector()
    if trace:
        res, tr = K.rollout_traced(x0, a0, target, float(t_go), p, use_numba=use_numba)
        tr = tr.copy()
        tr[:, 0] += initial.t
    else:
        res = K.rollout_batch(x0[None, :], a0, target, float(t_go), p, use_numba=use_numba)[0]
        tr = None
    return RolloutResult.from_kernel(res, initial, target, trace=tr)


def rollout_many(cfg, x0s, t_gos, targets=None, use_numba=None):
    """Batch of rollouts (no traces); returns the raw kernel result array."""
    targets = cfg.target if targets is None else targets
    return K.rollout_batch(x0s, cfg.a0_net, targets, t_gos, cfg.kernel_params(), use_numba=use_numba)
