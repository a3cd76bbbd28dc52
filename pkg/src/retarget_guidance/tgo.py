"""Time-to-go policy: sparse quadratic regression by lasso.

The model is ``t_go = K . phi(H, S, w, v)`` over the 15 monomials of
degree <= 2. Features (except the constant) and the target are z-scored
before fitting; the penalty is applied on that scale with a mean squared
loss, so ``mu`` is dimensionless and comparable across datasets.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, NonConvergence

TERMS = ("1", "H", "S", "w", "v", "H^2", "S^2", "w^2", "v^2", "HS", "Hw", "Hv", "Sw", "Sv", "wv")


def features(X):
    """Monomials for rows of ``X`` given in (S, H, w, v) column order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S, H, w, v = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return np.column_stack([
        np.ones_like(H), H, S, w, v, H * H, S * S, w * w, v * v,
        H * S, H * w, H * v, S * w, S * v, w * v,
    ])


@dataclass
class FeatureMap:
    mean: np.ndarray
    scale: np.ndarray
    terms: tuple = TERMS

    @classmethod
    def fit(cls, X):
        phi = features(X)[:, 1:]
        scale = phi.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(phi.mean(axis=0), scale)

    def transform(self, X):
        return (features(X)[:, 1:] - self.mean) / self.scale


@dataclass
class LassoFit:
    coef: np.ndarray  # standardized scale, no intercept
    intercept: float
    sweeps: int
    kkt: float


@dataclass
class TgoPolicy:
    K: np.ndarray  # raw coefficients over TERMS
    mu: float
    feature_map: FeatureMap
    margin: float = 0.0
    tgo_min: float = -np.inf
    tgo_max: float = np.inf
    fit_stats: dict = field(default_factory=dict)

    @property
    def sparsity(self):
        return int(np.sum(np.abs(self.K) > 1e-12))

    def predict_raw(self, X):
        return features(X) @ self.K

    def __call__(self, state):
        return eval_tgo(self, state)

    # -- persistence ---------------------------------------------------------

    def to_dict(self):
        return {
            "kind": "tgo_policy",
            "terms": list(TERMS),
            "K": [float(k) for k in self.K],
            "mu": self.mu,
            "margin": self.margin,
            "tgo_min": self.tgo_min,
            "tgo_max": self.tgo_max,
            "feature_mean": [float(x) for x in self.feature_map.mean],
            "feature_scale": [float(x) for x in self.feature_map.scale],
            "fit_stats": self.fit_stats,
        }

    @classmethod
    def from_dict(cls, d):
        if list(d["terms"]) != list(TERMS):
            raise ValueError("term order mismatch in stored policy")
        return cls(
            K=np.asarray(d["K"], dtype=float),
            mu=d["mu"],
            feature_map=FeatureMap(np.asarray(d["feature_mean"]), np.asarray(d["feature_scale"])),
            margin=d.get("margin", 0.0),
            tgo_min=d.get("tgo_min", -np.inf),
            tgo_max=d.get("tgo_max", np.inf),
            fit_stats=d.get("fit_stats", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _soft(x, t):
    return np.sign(x) * max(abs(x) - t, 0.0)


def kkt_residual(X, y, coef, intercept, lam):
    """Largest violation of the lasso optimality conditions (sum-loss scale)."""
    r = y - intercept - X @ coef
    grad = -(X.T @ r)
    act = coef != 0
    res = 0.0
    if np.any(act):
        res = np.max(np.abs(grad[act] + lam * np.sign(coef[act])))
    if np.any(~act):
        res = max(res, np.max(np.abs(grad[~act])) - lam)
    res = max(res, abs(r.sum()))
    return float(max(res, 0.0))


def lasso_cd(X, y, lam, tol=1e-8, max_sweeps=100000, coef0=None):
    """Minimize ``0.5*||y - b - X k||^2 + lam*||k||_1`` with ``b`` unpenalized.

    Cyclic coordinate descent with soft-thresholding. Every few sweeps the
    current support is polished by solving the reduced optimality system
    exactly, which converges where CD alone crawls on correlated columns.
    ``tol`` is relative to ``max(1, ||X^T y||_inf)``.
    """
    n, p = X.shape
    xm = X.mean(axis=0)
    Xc = X - xm
    ym = y.mean()
    yc = y - ym
    col_sq = np.einsum("ij,ij->j", Xc, Xc)
    coef = np.zeros(p) if coef0 is None else coef0.astype(float).copy()
    r = yc - Xc @ coef
    scale = max(1.0, float(np.max(np.abs(Xc.T @ yc))))
    atol = tol * scale
    for sweep in range(1, max_sweeps + 1):
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = coef[j]
            rho = Xc[:, j] @ r + col_sq[j] * old
            new = _soft(rho, lam) / col_sq[j]
            if new != old:
                r -= Xc[:, j] * (new - old)
                coef[j] = new
        if sweep % 5 == 0 or sweep == 1:
            cand = _polish(Xc, yc, coef, lam)
            if cand is not None and kkt_residual(Xc, yc, cand, 0.0, lam) <= atol:
                coef = cand
                return LassoFit(coef, ym - xm @ coef, sweep, kkt_residual(X, y, coef, ym - xm @ coef, lam))
            if kkt_residual(Xc, yc, coef, 0.0, lam) <= atol:
                return LassoFit(coef, ym - xm @ coef, sweep, kkt_residual(X, y, coef, ym - xm @ coef, lam))
    raise NonConvergence(f"lasso did not reach KKT tolerance in {max_sweeps} sweeps")


def _polish(Xc, yc, coef, lam):
    act = np.nonzero(coef)[0]
    if act.size == 0:
        return np.zeros_like(coef)
    sgn = np.sign(coef[act])
    XA = Xc[:, act]
    G = XA.T @ XA
    try:
        sol = np.linalg.solve(G, XA.T @ yc - lam * sgn)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != sgn):
        return None
    out = np.zeros_like(coef)
    out[act] = sol
    return out


def fit_lasso(X, y, mu, tol=1e-8, max_sweeps=100000):
    """Fit on raw (S, H, w, v) rows and t_go targets; returns a TgoPolicy."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < len(TERMS):
        raise InsufficientData(f"need at least {len(TERMS)} records, got {n}")
    fmap = FeatureMap.fit(X)
    Z = fmap.transform(X)
    ym, ys = y.mean(), y.std()
    ys = ys if ys > 0 else 1.0
    yt = (y - ym) / ys
    fit = lasso_cd(Z, yt, mu * n, tol=tol, max_sweeps=max_sweeps)
    k_std = fit.coef * ys / fmap.scale
    K = np.empty(len(TERMS))
    K[1:] = k_std
    K[0] = ym + ys * fit.intercept - k_std @ fmap.mean
    pol = TgoPolicy(K=K, mu=float(mu), feature_map=fmap)
    pred = pol.predict_raw(X)
    pol.fit_stats = {
        "n": int(n),
        "rmse": float(np.sqrt(np.mean((pred - y) ** 2))),
        "max_under": float(np.max(y - pred)),
        "sparsity": pol.sparsity,
        "sweeps": int(fit.sweeps),
        "kkt": float(fit.kkt),
    }
    return pol


def select_mu(X, y, grid, folds=5, seed=0):
    """Largest mu whose CV RMSE is within one standard error of the best."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    grid = sorted(float(g) for g in grid)
    means, ses = [], []
    for mu in grid:
        errs = []
        for k in range(folds):
            test = parts[k]
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            pol = fit_lasso(X[train], y[train], mu)
            errs.append(np.sqrt(np.mean((pol.predict_raw(X[test]) - y[test]) ** 2)))
        errs = np.asarray(errs)
        means.append(errs.mean())
        ses.append(errs.std(ddof=1) / np.sqrt(folds) if folds > 1 else 0.0)
    best = int(np.argmin(means))
    limit = means[best] + ses[best]
    chosen = max(i for i in range(len(grid)) if means[i] <= limit)
    return grid[chosen], {"grid": grid, "cv_rmse": [float(m) for m in means], "cv_se": [float(s) for s in ses]}


def eval_tgo(policy, state):
    """Policy value (plus its safety margin) clamped to the generation range."""
    x = np.array([[state.S, state.H, state.w, state.v]])
    val = float(policy.predict_raw(x)[0]) + policy.margin
    return float(min(max(val, policy.tgo_min), policy.tgo_max))
