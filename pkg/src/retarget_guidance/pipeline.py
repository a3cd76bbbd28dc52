"""Offline model construction and Monte Carlo campaigns."""

import csv
import json
import logging
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import boundary as bd
from .dataset import (
    build_feasibility_sets,
    dispersion_bounds,
    extract_tgo_dataset,
    label_dataset,
    nominal_state,
    sample_states,
    sigma3_bounds,
    write_dataset_csv,
    write_feasibility_csv,
)
from .errors import MissingModels
from .guidance import initial_state_from_reduced
from .retarget import guided_descent
from .tgo import TgoPolicy, fit_lasso, select_mu

log = logging.getLogger(__name__)

POLICY_FILE = "tgo_policy.json"
BOUNDARY_FILE = "boundary.json"
DATASET_FILE = "dataset.csv"
FSETS_FILE = "feasibility_sets.csv"
CURVES_FILE = "boundary_curves.csv"
REPORT_FILE = "pipeline_report.json"

# published reference row for the iterative fuel-optimal baseline (not simulated here)
FOPDG_REFERENCE = {"fuel_kg": 152.1, "time_of_flight_s": 154.8}
PUBLISHED_PROPOSED = {"fuel_kg": 154.5, "time_of_flight_s": 164.4}


def dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def fit_tgo_policy(cfg, data):
    X, y = data.arrays()
    ls = cfg.lasso
    cv = None
    mu = ls.mu
    if mu is None:
        mu, cv = select_mu(X, y, ls.mu_grid, folds=ls.cv_folds, seed=cfg.seed)
    pol = fit_lasso(X, y, mu, tol=ls.tol, max_sweeps=ls.max_sweeps)
    if ls.tgo_margin is None:
        under = y - pol.predict_raw(X)
        pol.margin = float(max(0.0, np.quantile(under, ls.tgo_margin_quantile)))
    else:
        pol.margin = float(ls.tgo_margin)
    pol.tgo_min = cfg.feasibility.tgo_min
    pol.tgo_max = cfg.feasibility.tgo_max
    if cv is not None:
        pol.fit_stats["cv"] = cv
    return pol


def fit_boundary(cfg, samples):
    s = np.array([[x.state.S / x.state.v, x.state.H / x.state.w] for x in samples])
    d = np.array([x.label for x in samples], dtype=float)
    Z = bd.featurize(s)
    sv = cfg.svm
    gamma, cv = sv.gamma, None
    if gamma is None:
        gamma, cv = bd.select_gamma(Z, d, sv.gamma_grid, folds=sv.cv_folds, seed=cfg.seed, tol=sv.tol, max_iter=sv.max_iter)
    model = bd.fit_level1(Z, d, gamma, tol=sv.tol, max_iter=sv.max_iter)
    conic = bd.to_general_conic(model)
    b0 = bd.ConicBoundary.from_level1(bd.canonicalize(conic))
    b2 = bd.fit_level2(b0, s, d, eta=cfg.level2.eta, grid_points=cfg.level2.grid_points, tol=cfg.level2.tol,
                       theta_weight=cfg.level2.theta_weight)
    b2.stats.update({
        "gamma": gamma,
        "level1_c": [float(x) for x in model.c],
        "level1_b": model.b,
        "level1_kkt": bd.level1_kkt_residual(model, Z, d),
        "level1_iterations": model.iterations,
    })
    if cv is not None:
        b2.stats["gamma_cv"] = cv
    return model, b0, b2, s, d


def write_curves(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "branch", "s1", "s2"])
        for name, pieces in curves:
            for branch, arr in pieces:
                for s1, s2 in arr:
                    w.writerow([name, branch, f"{s1:.9g}", f"{s2:.9g}"])


def run_pipeline(cfg, out_dir, workers=None, progress=None):
    """Sample, label, fit the t_go policy and the boundary; persist everything.

    Artifacts are written to a scratch directory and moved into ``out_dir``
    only after every stage succeeded.
    """
    out_dir = Path(out_dir)
    workers = cfg.workers if workers is None else workers
    nominal = nominal_state(cfg)
    bounds = dispersion_bounds(cfg) if cfg.dataset.mode == "uniform" else sigma3_bounds(cfg)
    states = sample_states(nominal, bounds, cfg.dataset.n_states, cfg.dataset.seed, cfg.dataset.mode)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".pipeline-", dir=out_dir))
    try:
        sets = build_feasibility_sets(cfg, states, workers=workers, progress=progress)
        samples = label_dataset(sets)
        data = extract_tgo_dataset(sets)
        policy = fit_tgo_policy(cfg, data)
        model, b0, b2, s, d = fit_boundary(cfg, samples)
        write_dataset_csv(tmp / DATASET_FILE, sets)
        write_feasibility_csv(tmp / FSETS_FILE, sets)
        policy.save(tmp / POLICY_FILE)
        b2.save(tmp / BOUNDARY_FILE)
        pad = 0.05 * (s.max(axis=0) - s.min(axis=0))
        box1 = (s[:, 0].min() - pad[0], s[:, 0].max() + pad[0])
        box2 = (s[:, 1].min() - pad[1], s[:, 1].max() + pad[1])
        write_curves(tmp / CURVES_FILE, [
            ("level1", bd.boundary_polyline(b0, box1, box2)),
            ("level2", bd.boundary_polyline(b2, box1, box2)),
        ])
        report = {
            "n_states": len(states),
            "n_controllable": int(np.sum(d > 0)),
            "n_uncontrollable": int(np.sum(d < 0)),
            "rollouts": int(sum(fs.n_probes for fs in sets)),
            "tgo_policy": policy.fit_stats | {"mu": policy.mu, "margin": policy.margin},
            "boundary": b2.stats,
        }
        dump_json(tmp / REPORT_FILE, report)
        for f in sorted(tmp.iterdir()):
            shutil.move(str(f), out_dir / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return policy, b2, report


def load_models(model_dir):
    model_dir = Path(model_dir)
    pf, bf = model_dir / POLICY_FILE, model_dir / BOUNDARY_FILE
    if not pf.exists() or not bf.exists():
        raise MissingModels(f"expected {POLICY_FILE} and {BOUNDARY_FILE} in {model_dir}")
    return TgoPolicy.load(pf), bd.ConicBoundary.load(bf)


# ---------------------------------------------------------------------------
# Monte Carlo


def _mc_chunk(args):
    cfg, policy, boundary, items, retarget = args
    out = []
    for idx, rs in items:
        initial = initial_state_from_reduced(rs, cfg.target, cfg.physics.m_wet)
        g = guided_descent(cfg, initial, policy, boundary, retarget=retarget, trace=False)
        dec = g.decision
        out.append({
            "seed": idx,
            "S": rs.S, "H": rs.H, "w": rs.w, "v": rs.v,
            "feasible": dec.feasible,
            "s1": float(dec.s[0]), "s2": float(dec.s[1]),
            "s1_projected": float(dec.s_projected[0]),
            "target_shift_m": dec.target_shift,
            "fuel_kg": g.rollout.fuel_used,
            "tof_s": g.rollout.time_of_flight,
            "tgo": g.t_go,
            "converged": g.rollout.converged,
            "retarget_error": g.retarget_error,
        })
    return out


def run_montecarlo(cfg, policy, boundary, n, mode="uniform", seed=None, retarget=True, workers=1):
    """Seeded campaign of guided descents; returns ``(runs, summary)``."""
    seed = cfg.montecarlo.seed if seed is None else seed
    bounds = dispersion_bounds(cfg) if mode == "uniform" else sigma3_bounds(cfg)
    states = sample_states(nominal_state(cfg), bounds, n, seed, mode) if n > 0 else []
    items = list(enumerate(states))
    chunk = max(1, min(25, -(-len(items) // max(1, 4 * workers)))) if items else 1
    jobs = [(cfg, policy, boundary, items[i:i + chunk], retarget) for i in range(0, len(items), chunk)]
    runs = []
    if workers <= 1:
        for j in jobs:
            runs.extend(_mc_chunk(j))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for r in ex.map(_mc_chunk, jobs):
                runs.extend(r)
    runs.sort(key=lambda r: r["seed"])
    return runs, summarize(runs, mode, seed, retarget)


def summarize(runs, mode, seed, retarget):
    n = len(runs)
    summary = {"n_runs": n, "mode": mode, "seed": seed, "retarget": retarget,
               "reference_fopdg": FOPDG_REFERENCE, "reference_proposed": PUBLISHED_PROPOSED}
    if n == 0:
        summary.update({"convergence_rate": None, "n_converged": 0, "n_retargeted": 0})
        return summary
    conv = np.array([r["converged"] for r in runs])
    fuel = np.array([r["fuel_kg"] for r in runs])
    tof = np.array([r["tof_s"] for r in runs])
    retargeted = np.array([(not r["feasible"]) and r["target_shift_m"] != 0.0 for r in runs])
    summary.update({
        "n_converged": int(conv.sum()),
        "convergence_rate": float(conv.mean()),
        "n_retargeted": int(retargeted.sum()),
        "n_retarget_errors": int(sum(r["retarget_error"] is not None for r in runs)),
        "fuel_kg": _stats(fuel),
        "tof_s": _stats(tof),
    })
    return summary


def _stats(x):
    return {"mean": float(x.mean()), "std": float(x.std()), "min": float(x.min()), "max": float(x.max())}


def write_decision_log(path, runs):
    with open(path, "w") as fh:
        for r in runs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
