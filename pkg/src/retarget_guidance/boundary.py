"""Convex controllability boundary in the reduced (S/v, H/w) plane.

Level 1 fits a soft-margin max-margin classifier on conic features
``[s1, s2, s1^2, s2^2, s1*s2]``. The resulting conic is moved to its
principal axes, and Level 2 finds the smallest shift of centroid and
orientation for which no uncontrollable sample is classified controllable.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import maybe_njit
from .errors import (
    DegenerateCenter,
    DegenerateConic,
    DegenerateLabels,
    NoFeasiblePerturbation,
    NonConvergence,
    ZeroLambda,
)


def featurize(s):
    """``[s1, s2, s1^2, s2^2, s1*s2]`` for a point or rows of points."""
    s = np.asarray(s, dtype=float)
    s1, s2 = s[..., 0], s[..., 1]
    return np.stack([s1, s2, s1 * s1, s2 * s2, s1 * s2], axis=-1)


# ---------------------------------------------------------------------------
# Level 1: soft-margin classifier, dual solved by SMO


@maybe_njit
def smo_solve(K, y, C, tol, max_iter):
    """Pairwise SMO on the dual with second-order working-set selection.

    Returns ``(alpha, b, iterations, gap)``. Ties in index selection resolve
    to the lowest index, so the result is deterministic.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    gap = np.inf
    while it < max_iter:
        m = -np.inf
        i = -1
        M = np.inf
        for t in range(n):
            yg = -y[t] * G[t]
            up = (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0)
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
            if up and yg > m:
                m = yg
                i = t
            if low and yg < M:
                M = yg
        gap = m - M
        if gap < tol or i < 0:
            break
        j = -1
        best = np.inf
        for t in range(n):
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
            if not low:
                continue
            yg = -y[t] * G[t]
            if yg >= m:
                continue
            bb = m - yg
            a = K[i, i] + K[t, t] - 2.0 * K[i, t]
            if a <= 0.0:
                a = 1e-12
            val = -bb * bb / a
            if val < best:
                best = val
                j = t
        if j < 0:
            break
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0.0:
            a = 1e-12
        step = (m + y[j] * G[j]) / a
        lim_i = C - alpha[i] if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min(step, lim_i, lim_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # snap to the box to keep the bound tests exact
        if alpha[i] < 1e-14 * C:
            alpha[i] = 0.0
        elif alpha[i] > C * (1.0 - 1e-14):
            alpha[i] = C
        if alpha[j] < 1e-14 * C:
            alpha[j] = 0.0
        elif alpha[j] > C * (1.0 - 1e-14):
            alpha[j] = C
        for t in range(n):
            G[t] += y[t] * step * (K[t, i] - K[t, j])
        it += 1
    # bias from free vectors, else the midpoint of the feasible interval
    s = 0.0
    cnt = 0
    m = -np.inf
    M = np.inf
    for t in range(n):
        yg = -y[t] * G[t]
        if 0.0 < alpha[t] < C:
            s += yg
            cnt += 1
        up = (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0)
        low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
        if up and yg > m:
            m = yg
        if low and yg < M:
            M = yg
    if cnt > 0:
        b = s / cnt
    else:
        b = 0.5 * (m + M)
    return alpha, b, it, gap


@dataclass
class Level1Model:
    """Classifier ``c . Z + b`` in raw feature space (positive = controllable)."""

    c: np.ndarray
    b: float
    gamma: float
    support: np.ndarray
    slack: np.ndarray
    alpha: np.ndarray = None
    z_mean: np.ndarray = None
    z_scale: np.ndarray = None
    iterations: int = 0

    def decision(self, Z):
        return np.asarray(Z, dtype=float) @ self.c + self.b


def _standardize(Z):
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def fit_level1(Z, d, gamma, tol=1e-6, max_iter=2000000, standardize=True):
    """Soft-margin classifier on feature rows ``Z`` with labels ``d``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = np.asarray(d, dtype=float)
    if len(set(d.tolist())) < 2:
        raise DegenerateLabels("both labels are required")
    if len(d) < 6:
        raise DegenerateLabels("need at least 6 samples")
    if standardize:
        mean, scale = _standardize(Z)
    else:
        mean, scale = np.zeros(Z.shape[1]), np.ones(Z.shape[1])
    Zs = (Z - mean) / scale
    K = Zs @ Zs.T
    alpha, b_std, it, gap = smo_solve(K, d, float(gamma), float(tol), int(max_iter))
    if gap >= tol:
        raise NonConvergence(f"SMO stopped with KKT gap {gap:.3g} after {it} iterations")
    w_std = (alpha * d) @ Zs
    c = w_std / scale
    b = float(b_std - w_std @ (mean / scale))
    f = Z @ c + b
    slack = np.maximum(0.0, 1.0 - d * f)
    return Level1Model(
        c=c, b=b, gamma=float(gamma), support=np.nonzero(alpha > 0)[0], slack=slack,
        alpha=alpha, z_mean=mean, z_scale=scale, iterations=int(it),
    )


def level1_kkt_residual(model, Z, d):
    """Largest violation of primal/dual feasibility and complementary slackness.

    Evaluated on the standardized problem the dual was solved on.
    """
    Zs = (np.asarray(Z, dtype=float) - model.z_mean) / model.z_scale
    d = np.asarray(d, dtype=float)
    a, C = model.alpha, model.gamma
    w = (a * d) @ Zs
    b = float(model.b + model.c @ model.z_mean)
    f = Zs @ w + b
    margin = d * f
    res = [
        abs(float(a @ d)) / max(1.0, C),  # equality constraint
        float(max(0.0, -a.min())) / C,
        float(max(0.0, (a - C).max())) / C,
    ]
    free = (a > 0) & (a < C)
    if np.any(free):
        res.append(float(np.max(np.abs(margin[free] - 1.0))))
    zero = a == 0
    if np.any(zero):
        res.append(float(max(0.0, np.max(1.0 - margin[zero]))))
    upper = a == C
    if np.any(upper):
        res.append(float(max(0.0, np.max(margin[upper] - 1.0))))
    return max(res)


def balanced_accuracy(pred, d):
    pred = np.asarray(pred)
    d = np.asarray(d)
    accs = [np.mean(pred[d == lab] == lab) for lab in (-1, 1) if np.any(d == lab)]
    return float(np.mean(accs))


def select_gamma(Z, d, grid, folds=5, seed=0, tol=1e-6, max_iter=2000000):
    """Gamma with the best cross-validated balanced accuracy (smallest on ties)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    # stratified folds
    parts = [[] for _ in range(folds)]
    for lab in (-1.0, 1.0):
        idx = rng.permutation(np.nonzero(d == lab)[0])
        for k, chunk in enumerate(np.array_split(idx, folds)):
            parts[k].extend(chunk.tolist())
    parts = [np.array(sorted(p), dtype=int) for p in parts]
    scores = []
    for gamma in grid:
        acc = []
        for k in range(folds):
            test = parts[k]
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            try:
                model = fit_level1(Z[train], d[train], gamma, tol=tol, max_iter=max_iter)
            except NonConvergence:
                acc.append(0.0)
                continue
            pred = np.where(model.decision(Z[test]) > 0, 1, -1)
            acc.append(balanced_accuracy(pred, d[test]))
        scores.append(float(np.mean(acc)))
    best = int(np.argmax(scores))
    return float(grid[best]), {"grid": [float(g) for g in grid], "balanced_accuracy": scores}


# ---------------------------------------------------------------------------
# conic geometry


@dataclass(frozen=True)
class ConicCoefficients:
    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    def as_array(self):
        return np.array([self.A, self.B, self.C, self.D, self.E, self.F])

    def evaluate(self, s1, s2):
        return self.A * s1 * s1 + self.B * s1 * s2 + self.C * s2 * s2 + self.D * s1 + self.E * s2 + self.F


@dataclass(frozen=True)
class CanonicalConic:
    """``M1*u^2 + M2*w^2 = 1`` in coordinates centred at (h, k), rotated by theta.

    ``Abar, Bbar, Cbar`` are the centred quadratic coefficients normalized by
    ``-lam`` (so the centred conic reads ``Abar X^2 + Bbar XY + Cbar Y^2 = 1``).
    """

    h: float
    k: float
    theta: float
    M1: float
    M2: float
    lam: float
    Abar: float
    Bbar: float
    Cbar: float


def to_general_conic(model):
    """Map ``c . [s1, s2, s1^2, s2^2, s1 s2] + b`` onto ``A..F``."""
    c = np.asarray(model.c if hasattr(model, "c") else model[0], dtype=float)
    b = float(model.b if hasattr(model, "b") else model[1])
    out = ConicCoefficients(A=c[2], B=c[4], C=c[3], D=c[0], E=c[1], F=b)
    if out.A == 0 and out.B == 0 and out.C == 0:
        raise DegenerateConic("quadratic part vanishes")
    return out


def principal_coeffs(Abar, Bbar, Cbar, theta):
    """``(M1, M2)`` of the centred quadratic form rotated by ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    m1 = Abar * c * c + Bbar * c * s + Cbar * s * s
    m2 = Abar * s * s - Bbar * c * s + Cbar * c * c
    return m1, m2


def canonicalize(conic):
    A, B, C, D, E, F = conic.as_array()
    quad = max(abs(A), abs(B), abs(C))
    if quad == 0:
        raise DegenerateConic("quadratic part vanishes")
    den = B * B - 4.0 * A * C
    if abs(den) <= 1e-12 * quad * quad:
        raise DegenerateCenter("conic has no unique centre")
    h = (2.0 * C * D - B * E) / den
    k = (2.0 * A * E - B * D) / den
    lam = A * h * h + B * h * k + C * k * k + D * h + E * k + F
    lin_scale = max(quad * (h * h + k * k), abs(D * h) + abs(E * k), abs(F), 1e-300)
    if abs(lam) <= 1e-12 * lin_scale:
        raise ZeroLambda("conic passes through its own centre")
    Abar, Bbar, Cbar = -A / lam, -B / lam, -C / lam
    if abs(Bbar) <= 1e-15 * max(abs(Abar), abs(Cbar)):
        theta = 0.0
    else:
        theta = math.atan(((Cbar - Abar) + math.sqrt(Bbar * Bbar + (Cbar - Abar) ** 2)) / Bbar)
    M1, M2 = principal_coeffs(Abar, Bbar, Cbar, theta)
    return CanonicalConic(h, k, theta, M1, M2, lam, Abar, Bbar, Cbar)


def expand_canonical(cc):
    """General coefficients of ``M1 u^2 + M2 w^2 - 1 = 0`` (unit scale)."""
    c, s = math.cos(cc.theta), math.sin(cc.theta)
    a = cc.M1 * c * c + cc.M2 * s * s
    bq = 2.0 * (cc.M1 - cc.M2) * c * s
    cq = cc.M1 * s * s + cc.M2 * c * c
    h, k = cc.h, cc.k
    return ConicCoefficients(
        A=a, B=bq, C=cq,
        D=-2.0 * a * h - bq * k,
        E=-2.0 * cq * k - bq * h,
        F=a * h * h + bq * h * k + cq * k * k - 1.0,
    )


# ---------------------------------------------------------------------------
# perturbed decision function


@dataclass
class ConicBoundary:
    """Decision function ``g`` with ``g > 0`` meaning controllable."""

    canonical: CanonicalConic
    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sign: float = 1.0
    eta: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)

    @classmethod
    def from_level1(cls, canonical):
        # f = -lam * (M1 u^2 + M2 w^2 - 1): orient g with the classifier
        return cls(canonical, np.zeros(3), -1.0 if canonical.lam > 0 else 1.0)

    def with_delta(self, delta, eta=None):
        return ConicBoundary(self.canonical, np.asarray(delta, dtype=float), self.sign,
                             self.eta if eta is None else eta, dict(self.stats))

    def geometry(self):
        """Perturbed ``(h', k', theta', M1', M2')``."""
        cc = self.canonical
        h = cc.h + self.delta[0]
        k = cc.k + self.delta[1]
        th = cc.theta + self.delta[2]
        m1, m2 = principal_coeffs(cc.Abar, cc.Bbar, cc.Cbar, th)
        return h, k, th, m1, m2

    def __call__(self, s):
        return eval_g(self, s)

    def to_dict(self):
        cc = self.canonical
        return {
            "kind": "conic_boundary",
            "h": cc.h, "k": cc.k, "theta": cc.theta, "M1": cc.M1, "M2": cc.M2, "lam": cc.lam,
            "Abar": cc.Abar, "Bbar": cc.Bbar, "Cbar": cc.Cbar,
            "delta": [float(x) for x in self.delta],
            "eta": self.eta,
            "sign": self.sign,
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d):
        cc = CanonicalConic(d["h"], d["k"], d["theta"], d["M1"], d["M2"], d["lam"], d["Abar"], d["Bbar"], d["Cbar"])
        return cls(cc, np.asarray(d["delta"], dtype=float), float(d["sign"]), float(d["eta"]), d.get("stats", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _g_batch(cc, sign, h, k, th, pts):
    m1, m2 = principal_coeffs(cc.Abar, cc.Bbar, cc.Cbar, th)
    c, s = math.cos(th), math.sin(th)
    x = pts[..., 0] - h
    y = pts[..., 1] - k
    u = c * x + s * y
    w = -s * x + c * y
    return sign * (m1 * u * u + m2 * w * w - 1.0)


def eval_g(boundary, s):
    h, k, th, _, _ = boundary.geometry()
    out = _g_batch(boundary.canonical, boundary.sign, h, k, th, np.asarray(s, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _g_multi(cc, sign, base, deltas, pts):
    """``g`` for every perturbation row (n_delta) at every point (n_pts)."""
    h = base[0] + deltas[:, 0][:, None]
    k = base[1] + deltas[:, 1][:, None]
    th = base[2] + deltas[:, 2]
    c, s = np.cos(th)[:, None], np.sin(th)[:, None]
    m1 = cc.Abar * c * c + cc.Bbar * c * s + cc.Cbar * s * s
    m2 = cc.Abar * s * s - cc.Bbar * c * s + cc.Cbar * c * c
    x = pts[None, :, 0] - h
    y = pts[None, :, 1] - k
    u = c * x + s * y
    w = -s * x + c * y
    return sign * (m1 * u * u + m2 * w * w - 1.0)


def _feasible(cc, sign, base, delta, neg, eta):
    if neg.shape[0] == 0:
        return True
    return float(_g_multi(cc, sign, base, np.atleast_2d(delta), neg).max()) <= -eta


def fit_level2(boundary0, s_points, labels, eta=0.01, grid_points=21, tol=1e-6, bounds=None, theta_weight=None):
    """Smallest (dh, dk, dtheta) with ``g <= -eta`` on every uncontrollable sample.

    The size of a shift is ``|(dh, dk, L * dtheta)|``. ``theta_weight`` sets
    the lever arm ``L``; ``None`` uses the distance from the conic centre
    to the data centroid, so a rotation is charged by how far it moves the
    boundary where the data lie. ``theta_weight=1`` gives the plain norm.

    A coarse grid over a box scaled to the data is followed by a pattern
    search that shrinks the shift while it stays feasible. Raises
    ``NoFeasiblePerturbation`` if the box holds no admissible shift.
    """
    pts = np.asarray(s_points, dtype=float)
    labels = np.asarray(labels)
    neg = pts[labels < 0]
    cc, sign = boundary0.canonical, boundary0.sign
    if theta_weight is None:
        theta_weight = max(1.0, float(np.hypot(*(pts.mean(axis=0) - [cc.h, cc.k]))))
    # the search runs on e = (dh, dk, L dtheta); W maps e back to delta
    W = np.array([1.0, 1.0, 1.0 / theta_weight])
    base = np.array([cc.h, cc.k, cc.theta])
    if _feasible(cc, sign, base, np.zeros(3), neg, eta):
        best = np.zeros(3)
    else:
        span = pts.max(axis=0) - pts.min(axis=0)
        if bounds is None:
            bounds = np.array([span[0], span[1], math.pi / 4])
        bounds = np.asarray(bounds, dtype=float) / W
        best = None
        for widen in (1.0, 2.0, 4.0):
            axes = [np.linspace(-b * widen, b * widen, grid_points) for b in bounds]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
            norms = np.einsum("ij,ij->i", grid, grid)
            order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], norms))
            grid = grid[order]
            ok = np.empty(len(grid), dtype=bool)
            for start in range(0, len(grid), 512):
                blk = grid[start:start + 512]
                ok[start:start + 512] = _g_multi(cc, sign, base, blk * W, neg).max(axis=1) <= -eta
            if np.any(ok):
                cands = grid[ok][:5]
                step = bounds * widen * 2.0 / (grid_points - 1)
                refined = [_refine(cc, sign, base, c0, neg, eta, step, tol, W) for c0 in cands]
                refined.sort(key=lambda r: (float(r @ r), tuple(r)))
                best = refined[0] * W
                break
        if best is None:
            raise NoFeasiblePerturbation("no zero-loss shift inside the search box")
    out = boundary0.with_delta(best, eta=eta)
    g_all = eval_g(out, pts)
    out.stats = {
        "n_samples": int(len(pts)),
        "n_uncontrollable": int(neg.shape[0]),
        "max_g_uncontrollable": float(g_all[labels < 0].max()) if np.any(labels < 0) else None,
        "level1_false_controllable": int(np.sum((eval_g(boundary0, pts) > 0) & (labels < 0))),
        "level1_misclassified": int(np.sum((eval_g(boundary0, pts) > 0) != (labels > 0))),
        "shrinkage": float(np.mean(g_all[labels > 0] <= 0)) if np.any(labels > 0) else 0.0,
        "delta_norm": float(np.linalg.norm(best)),
        "delta_weighted_norm": float(np.linalg.norm(best / W)) if best.any() else 0.0,
        "theta_weight": float(theta_weight),
    }
    return out


def _shrink_ray(cc, sign, base, e, neg, eta, tol, W):
    """Smallest feasible scale t in (0, 1] along ``e`` by bisection."""
    if not np.any(e):
        return e
    lo, hi = 0.0, 1.0
    if _feasible(cc, sign, base, np.zeros(3), neg, eta):
        return np.zeros(3)
    norm = float(np.linalg.norm(e))
    while (hi - lo) * norm > tol * 0.1:
        mid = 0.5 * (lo + hi)
        if _feasible(cc, sign, base, mid * e * W, neg, eta):
            hi = mid
        else:
            lo = mid
    return hi * e


def _refine(cc, sign, base, e0, neg, eta, step, tol, W):
    def ok(e):
        return _feasible(cc, sign, base, e * W, neg, eta)

    e = _shrink_ray(cc, sign, base, np.asarray(e0, dtype=float), neg, eta, tol, W)
    h = np.asarray(step, dtype=float).copy()
    while np.max(h) > tol:
        improved = False
        for j in range(3):
            for sgn in (-1.0, 1.0):
                cand = e.copy()
                cand[j] += sgn * h[j]
                if cand @ cand < e @ e and ok(cand):
                    e = _shrink_ray(cc, sign, base, cand, neg, eta, tol, W)
                    improved = True
                    continue
                # slide along the sphere |e| = const, then shrink; coordinate
                # moves alone stall where the feasible edge is curved
                nc, ne = float(np.linalg.norm(cand)), float(np.linalg.norm(e))
                if nc == 0.0 or ne == 0.0:
                    continue
                cand *= ne / nc
                if ok(cand):
                    cand = _shrink_ray(cc, sign, base, cand, neg, eta, tol, W)
                    if cand @ cand < (e @ e) * (1.0 - 1e-12):
                        e = cand
                        improved = True
        if not improved:
            h *= 0.5
    return e


# ---------------------------------------------------------------------------
# plotting support


def boundary_polyline(boundary, s1_range, s2_range, n=400):
    """Points on the zero set of ``g`` inside the given box.

    Returns a list of ``(branch_id, array of (s1, s2))``.
    """
    h, k, th, m1, m2 = boundary.geometry()
    c, s = math.cos(th), math.sin(th)
    pieces = []

    def to_s(u, w):
        x = c * u - s * w
        y = s * u + c * w
        return np.column_stack([h + x, k + y])

    if m1 > 0 and m2 > 0:
        phi = np.linspace(0.0, 2.0 * math.pi, n)
        pieces.append(to_s(np.cos(phi) / math.sqrt(m1), np.sin(phi) / math.sqrt(m2)))
    elif m1 > 0 > m2 or m2 > 0 > m1:
        diag = math.hypot(s1_range[1] - s1_range[0], s2_range[1] - s2_range[0])
        far = math.hypot(max(abs(s1_range[0] - h), abs(s1_range[1] - h)), max(abs(s2_range[0] - k), abs(s2_range[1] - k)))
        pos, negc = (m1, m2) if m1 > 0 else (m2, m1)
        tmax = math.asinh((far + diag) * math.sqrt(-negc)) + 1.0
        tau = np.linspace(-tmax, tmax, 20 * n)  # most of the branch lies outside the box
        for br in (1.0, -1.0):
            a = br * np.cosh(tau) / math.sqrt(pos)
            b = np.sinh(tau) / math.sqrt(-negc)
            pieces.append(to_s(a, b) if m1 > 0 else to_s(b, a))
    out = []
    for i, arr in enumerate(pieces):
        inside = (
            (arr[:, 0] >= s1_range[0]) & (arr[:, 0] <= s1_range[1])
            & (arr[:, 1] >= s2_range[0]) & (arr[:, 1] <= s2_range[1])
        )
        if np.any(inside):
            out.append((i, arr[inside]))
    return out
