"""Closed-loop rollout kernels.

Two interchangeable implementations of the same guidance + dynamics loop:

* scalar kernels compiled with numba (``rollout_one`` and friends), looped
  over rollouts by ``rollout_batch``;
* a numpy path (``rollout_batch_numpy``) that advances every rollout of a
  batch in lock-step with array operations.

``rollout_batch`` picks the numba path unless numba is disabled through
``RETARGET_GUIDANCE_DISABLE_NUMBA``. Both paths read the same packed
parameter vector built by :func:`pack_params`.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, maybe_njit

# packed parameter layout
P_G = 0  # 3 entries
P_ALPHA = 3
P_RHO_MIN = 4
P_RHO_MAX = 5
P_DT_MAX = 6
P_THETA_LIM = 7
P_VH_MAX = 8
P_DT = 9
P_NSUB = 10
P_TGO_FLOOR = 11
P_R_REF = 12
P_TOL_POS = 13
P_TOL_VEL = 14
P_M_T = 15
P_VF = 16  # 3 entries
P_AF = 19  # 3 entries, net acceleration
P_SUB_MARGIN = 22
P_UNCLAMPED = 23
P_SIZE = 24

# violation bits
V_THRUST_BOUNDS = 1
V_THRUST_RATE = 2
V_SUBSURFACE = 4
V_ATTITUDE = 8
V_HORIZONTAL_SPEED = 16
V_TERMINAL_MASS = 32
V_NONFINITE = 64

VIOLATION_NAMES = {
    V_THRUST_BOUNDS: "ThrustBounds",
    V_THRUST_RATE: "ThrustRate",
    V_SUBSURFACE: "SubSurface",
    V_ATTITUDE: "AttitudeLimit",
    V_HORIZONTAL_SPEED: "HorizontalSpeed",
    V_TERMINAL_MASS: "TerminalMass",
    V_NONFINITE: "NonFinite",
}

# rollout result layout
R_STATE = 0  # r(3), v(3), m
R_T = 7
R_FUEL = 8
R_VIOL = 9
R_T_FIRST_VIOL = 10
R_SAT_TIME = 11
R_SAT_RUN = 12
R_NCYC = 13
R_CONVERGED = 14
R_SIZE = 15

TRACE_COLS = ("t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "Tc", "theta", "ax", "ay", "az")

# normalized cross-product threshold below which r0 and rf count as parallel
PARALLEL_TOL = 1e-9


def pack_params(
    g,
    alpha,
    rho_min,
    rho_max,
    thrust_rate_max,
    theta_lim,
    vh_max,
    dt,
    n_sub,
    tgo_floor,
    r_ref,
    tol_pos,
    tol_vel,
    m_terminal_min,
    vf,
    af_net,
    subsurface_margin=0.0,
    unclamped=False,
):
    p = np.zeros(P_SIZE)
    p[P_G:P_G + 3] = g
    p[P_ALPHA] = alpha
    p[P_RHO_MIN] = rho_min
    p[P_RHO_MAX] = rho_max
    p[P_DT_MAX] = thrust_rate_max
    p[P_THETA_LIM] = theta_lim
    p[P_VH_MAX] = vh_max
    p[P_DT] = dt
    p[P_NSUB] = n_sub
    p[P_TGO_FLOOR] = tgo_floor
    p[P_R_REF] = r_ref
    p[P_TOL_POS] = tol_pos
    p[P_TOL_VEL] = tol_vel
    p[P_M_T] = m_terminal_min
    p[P_VF:P_VF + 3] = vf
    p[P_AF:P_AF + 3] = af_net
    p[P_SUB_MARGIN] = subsurface_margin
    p[P_UNCLAMPED] = 1.0 if unclamped else 0.0
    return p


def n_cycles_for(tgo, dt):
    """Number of guidance cycles covering ``tgo``; the last one may be short."""
    return max(1, int(math.ceil(tgo / dt - 1e-9)))


# ---------------------------------------------------------------------------
# scalar kernels


@maybe_njit
def eq9_matrix(tgo):
    t2 = tgo * tgo
    t3 = t2 * tgo
    t4 = t3 * tgo
    t5 = t4 * tgo
    m = np.empty((4, 4))
    m[0, 0] = 1.0
    m[0, 1] = 0.0
    m[0, 2] = 0.0
    m[0, 3] = 0.0
    m[1, 0] = 1.0
    m[1, 1] = tgo
    m[1, 2] = t2
    m[1, 3] = t3
    m[2, 0] = tgo
    m[2, 1] = t2 / 2.0
    m[2, 2] = t3 / 3.0
    m[2, 3] = t4 / 4.0
    m[3, 0] = t2 / 2.0
    m[3, 1] = t3 / 6.0
    m[3, 2] = t4 / 12.0
    m[3, 3] = t5 / 20.0
    return m


@maybe_njit
def solve4(mat, rhs):
    """Gaussian elimination with partial pivoting on a 4x4 system."""
    a = mat.copy()
    b = rhs.copy()
    n = 4
    for col in range(n):
        piv = col
        best = abs(a[col, col])
        for row in range(col + 1, n):
            if abs(a[row, col]) > best:
                best = abs(a[row, col])
                piv = row
        if piv != col:
            for j in range(n):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        d = a[col, col]
        for row in range(col + 1, n):
            f = a[row, col] / d
            if f != 0.0:
                for j in range(col, n):
                    a[row, j] -= f * a[col, j]
                b[row] -= f * b[col]
    x = np.empty(n)
    for row in range(n - 1, -1, -1):
        s = b[row]
        for j in range(row + 1, n):
            s -= a[row, j] * x[j]
        x[row] = s / a[row, row]
    return x


@maybe_njit
def poly_eval(c, tau):
    return c[0] + tau * (c[1] + tau * (c[2] + tau * c[3]))


@maybe_njit
def guidance_frame_axes(r, target, v, r_ref):
    """Guidance basis for a lander at ``r`` heading to ``target``.

    Returns ``(ex, ey, ez, degenerate)``. Positions are taken relative to a
    point ``r_ref`` below the target so the two vectors are not parallel.
    When they are (lander directly above the site) the plane falls back to
    the one spanned by ``ex`` and the velocity.
    """
    p0 = np.empty(3)
    pf = np.empty(3)
    p0[0] = r[0] - target[0]
    p0[1] = r[1] - target[1]
    p0[2] = r[2] - target[2] + r_ref
    pf[0] = 0.0
    pf[1] = 0.0
    pf[2] = r_ref
    n0 = math.sqrt(p0[0] ** 2 + p0[1] ** 2 + p0[2] ** 2)
    ex = p0 / n0
    ez = np.cross(ex, pf)
    nz = math.sqrt(ez[0] ** 2 + ez[1] ** 2 + ez[2] ** 2)
    degenerate = False
    if nz / r_ref <= PARALLEL_TOL:
        degenerate = True
        ez = np.cross(ex, v)
        nz = math.sqrt(ez[0] ** 2 + ez[1] ** 2 + ez[2] ** 2)
        if nz <= 1e-12:
            ez = np.zeros(3)
            ez[1] = 1.0
            d = ez[0] * ex[0] + ez[1] * ex[1] + ez[2] * ex[2]
            ez = ez - d * ex
            nz = math.sqrt(ez[0] ** 2 + ez[1] ** 2 + ez[2] ** 2)
    ez = ez / nz
    ey = np.cross(ez, ex)
    return ex, ey, ez, degenerate


@maybe_njit
def guidance_accel(r, v, a_prev, target, tgo, p):
    """One base-guidance cycle.

    Returns ``(cmd, a_next, mode)``: the net acceleration held over the next
    cycle (polynomial at mid-cycle), the polynomial value at the end of the
    cycle (next cycle's initial acceleration), and 0 = polynomial,
    1 = terminal hold, 2 = polynomial with fallback plane.
    """
    af = p[P_AF:P_AF + 3]
    vf = p[P_VF:P_VF + 3]
    if tgo < p[P_TGO_FLOOR]:
        return af.copy(), af.copy(), 1
    dt = p[P_DT]
    ex, ey, ez, degenerate = guidance_frame_axes(r, target, v, p[P_R_REF])
    mat = eq9_matrix(tgo)
    cmd = np.zeros(3)
    nxt = np.zeros(3)
    rhs = np.empty(4)
    for k in range(2):
        e = ex if k == 0 else ey
        dr = (target[0] - r[0]) * e[0] + (target[1] - r[1]) * e[1] + (target[2] - r[2]) * e[2]
        v0 = v[0] * e[0] + v[1] * e[1] + v[2] * e[2]
        rhs[0] = a_prev[0] * e[0] + a_prev[1] * e[1] + a_prev[2] * e[2]
        rhs[1] = af[0] * e[0] + af[1] * e[1] + af[2] * e[2]
        rhs[2] = vf[0] * e[0] + vf[1] * e[1] + vf[2] * e[2] - v0
        rhs[3] = dr - v0 * tgo
        c = solve4(mat, rhs)
        ac = poly_eval(c, 0.5 * dt)
        an = poly_eval(c, dt)
        cmd += ac * e
        nxt += an * e
    # out-of-plane regulation toward zero offset and zero rate
    r_perp = (r[0] - target[0]) * ez[0] + (r[1] - target[1]) * ez[1] + (r[2] - target[2]) * ez[2]
    v_perp = (v[0] - vf[0]) * ez[0] + (v[1] - vf[1]) * ez[1] + (v[2] - vf[2]) * ez[2]
    a_perp = -6.0 / (tgo * tgo) * r_perp - 4.0 / tgo * v_perp
    cmd += a_perp * ez
    nxt += a_perp * ez
    return cmd, nxt, 2 if degenerate else 0


@maybe_njit
def thrust_command(a_net, m, t_prev, h, p):
    """Propulsive unit direction and thrust magnitude for a net command.

    Returns ``(u, T, T_demand)``; ``T`` is clamped to the thrust bounds and
    rate-limited against ``t_prev`` over an interval ``h`` unless the
    unclamped test flag is set.
    """
    ap = np.empty(3)
    for i in range(3):
        ap[i] = a_net[i] - p[P_G + i]
    na = math.sqrt(ap[0] ** 2 + ap[1] ** 2 + ap[2] ** 2)
    u = np.zeros(3)
    if na > 0.0:
        u = ap / na
    else:
        u[2] = 1.0
    t_dem = m * na
    t_c = t_dem
    if p[P_UNCLAMPED] == 0.0:
        t_c = min(max(t_c, p[P_RHO_MIN]), p[P_RHO_MAX])
        lim = p[P_DT_MAX] * h
        t_c = min(max(t_c, t_prev - lim), t_prev + lim)
    return u, t_c, t_dem


@maybe_njit
def _deriv(x, u, t_c, p, out):
    m = x[6]
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    for i in range(3):
        out[3 + i] = p[P_G + i] + t_c * u[i] / m
    out[6] = -p[P_ALPHA] * t_c


@maybe_njit
def propagate(x, u, t_c, h, p):
    """Advance ``x = [r, v, m]`` over ``h`` with RK4, thrust held constant."""
    nsub = int(p[P_NSUB])
    hs = h / nsub
    k1 = np.empty(7)
    k2 = np.empty(7)
    k3 = np.empty(7)
    k4 = np.empty(7)
    y = x.copy()
    tmp = np.empty(7)
    for _ in range(nsub):
        _deriv(y, u, t_c, p, k1)
        for i in range(7):
            tmp[i] = y[i] + 0.5 * hs * k1[i]
        _deriv(tmp, u, t_c, p, k2)
        for i in range(7):
            tmp[i] = y[i] + 0.5 * hs * k2[i]
        _deriv(tmp, u, t_c, p, k3)
        for i in range(7):
            tmp[i] = y[i] + hs * k3[i]
        _deriv(tmp, u, t_c, p, k4)
        for i in range(7):
            y[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y


@maybe_njit
def path_violations(x, t_c, t_prev, h, theta, target, p):
    """Bitmask of path-constraint violations at a post-step state."""
    mask = 0
    tol = 1e-9 * p[P_RHO_MAX]
    if t_c < p[P_RHO_MIN] - tol or t_c > p[P_RHO_MAX] + tol:
        mask |= V_THRUST_BOUNDS
    if abs(t_c - t_prev) > p[P_DT_MAX] * h + tol:
        mask |= V_THRUST_RATE
    if x[2] < target[2] - p[P_SUB_MARGIN]:
        mask |= V_SUBSURFACE
    if theta > p[P_THETA_LIM]:
        mask |= V_ATTITUDE
    if math.sqrt(x[3] ** 2 + x[4] ** 2) >= p[P_VH_MAX]:
        mask |= V_HORIZONTAL_SPEED
    for i in range(7):
        if not math.isfinite(x[i]):
            mask |= V_NONFINITE
    return mask


@maybe_njit
def terminal_check(x, target, p):
    """True when terminal position, velocity and mass are within tolerance."""
    dp = math.sqrt((x[0] - target[0]) ** 2 + (x[1] - target[1]) ** 2 + (x[2] - target[2]) ** 2)
    dv = math.sqrt((x[3] - p[P_VF]) ** 2 + (x[4] - p[P_VF + 1]) ** 2 + (x[5] - p[P_VF + 2]) ** 2)
    return dp <= p[P_TOL_POS] and dv <= p[P_TOL_VEL] and x[6] >= p[P_M_T]


@maybe_njit
def rollout_one(x0, a0_net, target, tgo0, p, trace, record):
    """Closed-loop rollout of the base policy from ``x0`` with initial ``tgo0``.

    ``trace`` must have at least ``n_cycles + 1`` rows when ``record`` is
    true. Returns a result vector laid out per the ``R_*`` constants.
    """
    dt = p[P_DT]
    ncyc = max(1, int(math.ceil(tgo0 / dt - 1e-9)))
    x = x0.copy()
    a_prev = a0_net.copy()
    ap0 = np.empty(3)
    for i in range(3):
        ap0[i] = a0_net[i] - p[P_G + i]
    t_prev = x0[6] * math.sqrt(ap0[0] ** 2 + ap0[1] ** 2 + ap0[2] ** 2)
    if p[P_UNCLAMPED] == 0.0:
        t_prev = min(max(t_prev, p[P_RHO_MIN]), p[P_RHO_MAX])
    tgo = tgo0
    t = 0.0
    fuel = 0.0
    viol = 0
    t_first = -1.0
    sat_time = 0.0
    sat_run = 0.0
    sat_best = 0.0
    theta = 0.0
    t_c = t_prev
    cmd = a_prev.copy()
    res = np.zeros(R_SIZE)
    for k in range(ncyc):
        h = dt if k < ncyc - 1 else tgo0 - (ncyc - 1) * dt
        if h <= 0.0:
            h = dt
        cmd, a_next, mode = guidance_accel(x[0:3], x[3:6], a_prev, target, tgo, p)
        u, t_c, t_dem = thrust_command(cmd, x[6], t_prev, h, p)
        theta = math.acos(min(1.0, max(-1.0, u[2])))
        if record:
            trace[k, 0] = t
            for i in range(7):
                trace[k, 1 + i] = x[i]
            trace[k, 8] = t_c
            trace[k, 9] = theta
            trace[k, 10] = cmd[0]
            trace[k, 11] = cmd[1]
            trace[k, 12] = cmd[2]
        x = propagate(x, u, t_c, h, p)
        fuel += p[P_ALPHA] * t_c * h
        mask = path_violations(x, t_c, t_prev, h, theta, target, p)
        if mask != 0 and t_first < 0.0:
            t_first = t + h
        viol |= mask
        if t_dem >= p[P_RHO_MAX] and p[P_UNCLAMPED] == 0.0:
            sat_time += h
            sat_run += h
            if sat_run > sat_best:
                sat_best = sat_run
        else:
            sat_run = 0.0
        t_prev = t_c
        a_prev = a_next
        t += h
        tgo -= h
        if mask & V_NONFINITE:
            break
    if record:
        trace[ncyc, 0] = t
        for i in range(7):
            trace[ncyc, 1 + i] = x[i]
        trace[ncyc, 8] = t_c
        trace[ncyc, 9] = theta
        trace[ncyc, 10] = cmd[0]
        trace[ncyc, 11] = cmd[1]
        trace[ncyc, 12] = cmd[2]
    if x[6] < p[P_M_T]:
        viol |= V_TERMINAL_MASS
    for i in range(7):
        res[R_STATE + i] = x[i]
    res[R_T] = t
    res[R_FUEL] = fuel
    res[R_VIOL] = viol
    res[R_T_FIRST_VIOL] = t_first
    res[R_SAT_TIME] = sat_time
    res[R_SAT_RUN] = sat_best
    res[R_NCYC] = ncyc
    ok = (viol == 0) and terminal_check(x, target, p)
    res[R_CONVERGED] = 1.0 if ok else 0.0
    return res


@maybe_njit
def _rollout_many(x0s, a0s, targets, tgos, p):
    n = x0s.shape[0]
    out = np.empty((n, R_SIZE))
    dummy = np.empty((1, 13))
    for i in range(n):
        out[i] = rollout_one(x0s[i], a0s[i], targets[i], tgos[i], p, dummy, False)
    return out


# ---------------------------------------------------------------------------
# numpy path


def _rows_dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def _frame_axes_numpy(r, target, v, r_ref):
    p0 = r - target
    p0[:, 2] += r_ref
    ex = p0 / np.linalg.norm(p0, axis=1)[:, None]
    pf = np.zeros_like(r)
    pf[:, 2] = r_ref
    ez = np.cross(ex, pf)
    nz = np.linalg.norm(ez, axis=1)
    degenerate = nz / r_ref <= PARALLEL_TOL
    if np.any(degenerate):
        alt = np.cross(ex[degenerate], v[degenerate])
        na = np.linalg.norm(alt, axis=1)
        bad = na <= 1e-12
        if np.any(bad):
            fb = np.zeros((int(bad.sum()), 3))
            fb[:, 1] = 1.0
            exb = ex[degenerate][bad]
            fb -= _rows_dot(fb, exb)[:, None] * exb
            alt[bad] = fb
        ez[degenerate] = alt
        nz = np.linalg.norm(ez, axis=1)
    ez = ez / nz[:, None]
    ey = np.cross(ez, ex)
    return ex, ey, ez, degenerate


def eq9_matrices(tgo):
    tgo = np.asarray(tgo, dtype=float)
    t2 = tgo * tgo
    t3 = t2 * tgo
    t4 = t3 * tgo
    t5 = t4 * tgo
    one = np.ones_like(tgo)
    zero = np.zeros_like(tgo)
    return np.stack(
        [
            np.stack([one, zero, zero, zero], -1),
            np.stack([one, tgo, t2, t3], -1),
            np.stack([tgo, t2 / 2, t3 / 3, t4 / 4], -1),
            np.stack([t2 / 2, t3 / 6, t4 / 12, t5 / 20], -1),
        ],
        -2,
    )


def guidance_accel_numpy(r, v, a_prev, target, tgo, p):
    """Vectorized :func:`guidance_accel` over rows."""
    n = r.shape[0]
    af = p[P_AF:P_AF + 3]
    vf = p[P_VF:P_VF + 3]
    dt = p[P_DT]
    hold = tgo < p[P_TGO_FLOOR]
    cmd = np.broadcast_to(af, (n, 3)).copy()
    nxt = cmd.copy()
    act = ~hold
    if np.any(act):
        ra, va, aa, ta, tg = r[act], v[act], a_prev[act], target[act], tgo[act]
        ex, ey, ez, _ = _frame_axes_numpy(ra, ta, va, p[P_R_REF])
        mats = eq9_matrices(tg)
        dr = ta - ra
        rhs = np.empty((tg.size, 4, 2))
        for k, e in enumerate((ex, ey)):
            v0 = _rows_dot(va, e)
            rhs[:, 0, k] = _rows_dot(aa, e)
            rhs[:, 1, k] = e @ af
            rhs[:, 2, k] = e @ vf - v0
            rhs[:, 3, k] = _rows_dot(dr, e) - v0 * tg
        c = np.linalg.solve(mats, rhs)
        tau = np.array([0.5 * dt, dt])
        powers = np.stack([np.ones(2), tau, tau**2, tau**3])  # (4, 2) rows=power, cols=tau
        vals = np.einsum("nck,ct->nkt", c, powers)  # (n, axis, tau)
        r_perp = -_rows_dot(dr, ez)
        v_perp = _rows_dot(va - vf, ez)
        a_perp = -6.0 / tg**2 * r_perp - 4.0 / tg * v_perp
        cmd[act] = vals[:, 0, 0, None] * ex + vals[:, 1, 0, None] * ey + a_perp[:, None] * ez
        nxt[act] = vals[:, 0, 1, None] * ex + vals[:, 1, 1, None] * ey + a_perp[:, None] * ez
    return cmd, nxt


def _thrust_numpy(a_net, m, t_prev, h, p):
    ap = a_net - p[P_G:P_G + 3]
    na = np.linalg.norm(ap, axis=1)
    u = np.zeros_like(ap)
    u[:, 2] = 1.0
    pos = na > 0
    u[pos] = ap[pos] / na[pos, None]
    t_dem = m * na
    t_c = t_dem
    if p[P_UNCLAMPED] == 0.0:
        t_c = np.clip(t_c, p[P_RHO_MIN], p[P_RHO_MAX])
        lim = p[P_DT_MAX] * h
        t_c = np.clip(t_c, t_prev - lim, t_prev + lim)
    return u, t_c, t_dem


def _propagate_numpy(x, u, t_c, h, p):
    nsub = int(p[P_NSUB])
    hs = (h / nsub)[:, None]
    g = p[P_G:P_G + 3]
    alpha = p[P_ALPHA]

    def f(y):
        d = np.empty_like(y)
        d[:, 0:3] = y[:, 3:6]
        d[:, 3:6] = g + (t_c / y[:, 6])[:, None] * u
        d[:, 6] = -alpha * t_c
        return d

    y = x.copy()
    for _ in range(nsub):
        k1 = f(y)
        k2 = f(y + 0.5 * hs * k1)
        k3 = f(y + 0.5 * hs * k2)
        k4 = f(y + hs * k3)
        y = y + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _violations_numpy(x, t_c, t_prev, h, theta, target, p):
    tol = 1e-9 * p[P_RHO_MAX]
    mask = np.zeros(x.shape[0], dtype=np.int64)
    mask |= np.where((t_c < p[P_RHO_MIN] - tol) | (t_c > p[P_RHO_MAX] + tol), V_THRUST_BOUNDS, 0)
    mask |= np.where(np.abs(t_c - t_prev) > p[P_DT_MAX] * h + tol, V_THRUST_RATE, 0)
    mask |= np.where(x[:, 2] < target[:, 2] - p[P_SUB_MARGIN], V_SUBSURFACE, 0)
    mask |= np.where(theta > p[P_THETA_LIM], V_ATTITUDE, 0)
    mask |= np.where(np.hypot(x[:, 3], x[:, 4]) >= p[P_VH_MAX], V_HORIZONTAL_SPEED, 0)
    mask |= np.where(~np.all(np.isfinite(x), axis=1), V_NONFINITE, 0)
    return mask


def rollout_batch_numpy(x0s, a0s, targets, tgos, p, trace=None):
    """Advance all rollouts together; finished rollouts are frozen.

    ``trace`` (optional) has shape ``(n, max_cycles + 1, 13)``.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n = x0s.shape[0]
    a0s = np.broadcast_to(np.asarray(a0s, dtype=float), (n, 3)).copy()
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (n, 3)).copy()
    tgos = np.broadcast_to(np.asarray(tgos, dtype=float), (n,)).copy()
    dt = p[P_DT]
    ncyc = np.maximum(1, np.ceil(tgos / dt - 1e-9).astype(np.int64))
    x = x0s.copy()
    a_prev = a0s.copy()
    t_prev = x[:, 6] * np.linalg.norm(a0s - p[P_G:P_G + 3], axis=1)
    if p[P_UNCLAMPED] == 0.0:
        t_prev = np.clip(t_prev, p[P_RHO_MIN], p[P_RHO_MAX])
    tgo = tgos.copy()
    t = np.zeros(n)
    fuel = np.zeros(n)
    viol = np.zeros(n, dtype=np.int64)
    t_first = -np.ones(n)
    sat_time = np.zeros(n)
    sat_run = np.zeros(n)
    sat_best = np.zeros(n)
    t_c = t_prev.copy()
    theta = np.zeros(n)
    cmd = a_prev.copy()
    alive = np.ones(n, dtype=bool)
    for k in range(int(ncyc.max())):
        alive = (k < ncyc) & ((viol & V_NONFINITE) == 0)
        if not np.any(alive):
            break
        idx = np.nonzero(alive)[0]
        last = k == ncyc[idx] - 1
        h = np.where(last, tgos[idx] - (ncyc[idx] - 1) * dt, dt)
        h = np.where(h <= 0.0, dt, h)
        c_a, n_a = guidance_accel_numpy(x[idx, 0:3], x[idx, 3:6], a_prev[idx], targets[idx], tgo[idx], p)
        u, tc_a, tdem = _thrust_numpy(c_a, x[idx, 6], t_prev[idx], h, p)
        th = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
        if trace is not None:
            trace[idx, k, 0] = t[idx]
            trace[idx, k, 1:8] = x[idx]
            trace[idx, k, 8] = tc_a
            trace[idx, k, 9] = th
            trace[idx, k, 10:13] = c_a
        xn = _propagate_numpy(x[idx], u, tc_a, h, p)
        mask = _violations_numpy(xn, tc_a, t_prev[idx], h, th, targets[idx], p)
        first = (mask != 0) & (t_first[idx] < 0)
        t_first[idx[first]] = t[idx[first]] + h[first]
        viol[idx] |= mask
        sat = (tdem >= p[P_RHO_MAX]) & (p[P_UNCLAMPED] == 0.0)
        sat_time[idx] += np.where(sat, h, 0.0)
        sat_run[idx] = np.where(sat, sat_run[idx] + h, 0.0)
        sat_best[idx] = np.maximum(sat_best[idx], sat_run[idx])
        x[idx] = xn
        fuel[idx] += p[P_ALPHA] * tc_a * h
        t_prev[idx] = tc_a
        t_c[idx] = tc_a
        theta[idx] = th
        cmd[idx] = c_a
        a_prev[idx] = n_a
        t[idx] += h
        tgo[idx] -= h
    if trace is not None:
        rows = np.arange(n)
        trace[rows, ncyc, 0] = t
        trace[rows, ncyc, 1:8] = x
        trace[rows, ncyc, 8] = t_c
        trace[rows, ncyc, 9] = theta
        trace[rows, ncyc, 10:13] = cmd
    viol |= np.where(x[:, 6] < p[P_M_T], V_TERMINAL_MASS, 0)
    res = np.zeros((n, R_SIZE))
    res[:, R_STATE:R_STATE + 7] = x
    res[:, R_T] = t
    res[:, R_FUEL] = fuel
    res[:, R_VIOL] = viol
    res[:, R_T_FIRST_VIOL] = t_first
    res[:, R_SAT_TIME] = sat_time
    res[:, R_SAT_RUN] = sat_best
    res[:, R_NCYC] = ncyc
    dp = np.linalg.norm(x[:, 0:3] - targets, axis=1)
    dv = np.linalg.norm(x[:, 3:6] - p[P_VF:P_VF + 3], axis=1)
    ok = (viol == 0) & (dp <= p[P_TOL_POS]) & (dv <= p[P_TOL_VEL]) & (x[:, 6] >= p[P_M_T])
    res[:, R_CONVERGED] = ok.astype(float)
    return res


# ---------------------------------------------------------------------------
# dispatch


def rollout_batch(x0s, a0s, targets, tgos, p, use_numba=None):
    """Run independent rollouts; returns an ``(n, R_SIZE)`` result array."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n = x0s.shape[0]
    a0s = np.ascontiguousarray(np.broadcast_to(np.asarray(a0s, dtype=float), (n, 3)))
    targets = np.ascontiguousarray(np.broadcast_to(np.asarray(targets, dtype=float), (n, 3)))
    tgos = np.ascontiguousarray(np.broadcast_to(np.asarray(tgos, dtype=float), (n,)))
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        if not HAVE_NUMBA:
            raise RuntimeError("numba path requested but numba is disabled")
        return _rollout_many(np.ascontiguousarray(x0s), a0s, targets, tgos, p)
    return rollout_batch_numpy(x0s, a0s, targets, tgos, p)


def rollout_traced(x0, a0, target, tgo, p, use_numba=None):
    """Single rollout returning ``(result, trace)``."""
    ncyc = n_cycles_for(tgo, p[P_DT])
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        trace = np.zeros((ncyc + 1, 13))
        res = rollout_one(
            np.asarray(x0, dtype=float), np.asarray(a0, dtype=float), np.asarray(target, dtype=float),
            float(tgo), p, trace, True,
        )
        return res, trace
    trace = np.zeros((1, ncyc + 1, 13))
    res = rollout_batch_numpy(x0, a0, target, tgo, p, trace=trace)
    return res[0], trace[0]
