"""Training data: sampled phase-start states, feasibility sets, labels.

For each sampled state the base policy is rolled out over a range of
initial time-to-go values. A bisection finds the lower feasibility edge and
a downward sweep from the top of the range records every feasible
``(t_go, final mass)`` pair.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import DegenerateLabels
from .guidance import ReducedGuidanceState, initial_state_from_reduced


@dataclass
class FeasibilitySet:
    state: ReducedGuidanceState
    entries: list = field(default_factory=list)  # (t_go, m_f), ascending t_go
    n_probes: int = 0

    def __bool__(self):
        return bool(self.entries)


@dataclass(frozen=True)
class LabeledSample:
    state: ReducedGuidanceState
    label: int


@dataclass
class TgoDataset:
    records: list  # (ReducedGuidanceState, t_go*, m_f*)

    def __len__(self):
        return len(self.records)

    def arrays(self):
        X = np.array([r[0].as_array() for r in self.records]).reshape(-1, 4)
        y = np.array([r[1] for r in self.records], dtype=float)
        return X, y


def nominal_state(cfg):
    sc = cfg.scenario
    return ReducedGuidanceState(
        S=sc.range, H=sc.altitude - cfg.target[2], w=sc.descent_rate, v=sc.horizontal_speed
    )


def demo_state(cfg):
    sc = cfg.scenario
    return ReducedGuidanceState(
        S=sc.demo_range, H=sc.demo_altitude - cfg.target[2], w=sc.demo_descent_rate, v=sc.demo_horizontal_speed
    )


def _table_to_shwv(vals):
    # config lists follow the table order: altitude, range, descent rate, horizontal speed
    alt, rng, w, v = vals
    return np.array([rng, alt, w, v], dtype=float)


def dispersion_bounds(cfg):
    return _table_to_shwv(cfg.scenario.dispersion)


def sigma3_bounds(cfg):
    return _table_to_shwv(cfg.scenario.sigma3)


def sample_states(nominal, bounds, n, seed, mode="uniform"):
    """Perturbed copies of ``nominal``.

    ``uniform`` draws within ``nominal +/- bounds``; ``gaussian`` treats
    ``bounds`` as 3-sigma half-widths. Coordinates are independent.
    """
    bounds = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    base = nominal.as_array()
    if mode == "uniform":
        d = rng.uniform(-1.0, 1.0, size=(n, 4)) * bounds
    elif mode == "gaussian":
        d = rng.standard_normal(size=(n, 4)) * (bounds / 3.0)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    pts = base + d
    return [ReducedGuidanceState(*row) for row in pts]


def rollout_probe(cfg, state, target=None):
    """Feasibility oracle for one state: ``probe(t_gos) -> (ok, m_f)`` arrays."""
    target = cfg.target if target is None else np.asarray(target, dtype=float)
    x0 = initial_state_from_reduced(state, target, cfg.physics.m_wet).as_vector()
    p = cfg.kernel_params()
    a0 = cfg.a0_net

    def probe(t_gos):
        t_gos = np.atleast_1d(np.asarray(t_gos, dtype=float))
        res = K.rollout_batch(np.tile(x0, (t_gos.size, 1)), a0, target, t_gos, p)
        return res[:, K.R_CONVERGED] > 0, res[:, K.R_STATE + 6]

    return probe


def compute_feasibility_set(state, tgo_min, tgo_max, eps_t, delta_tgo, probe):
    """Feasible ``(t_go, m_f)`` pairs for ``state``.

    ``probe`` maps an array of t_go values to ``(feasible, m_f)`` arrays. The
    bisection record is the last feasible probe, not the lower bracket end.
    """
    if not tgo_min < tgo_max:
        raise ValueError("tgo_min must be below tgo_max")
    lo, hi = float(tgo_min), float(tgo_max)
    found = {}
    n_probes = 0
    while hi - lo > eps_t:
        cur = 0.5 * (lo + hi)
        ok, mf = probe([cur])
        n_probes += 1
        if ok[0]:
            hi = cur
            found[cur] = float(mf[0])
        else:
            lo = cur
    last = None
    if found:
        last = min(found)
    else:
        # no feasible probe: feasibility may be a window above the lower edge
        # that the bisection stepped over, so the sweep covers the full range
        lo = float(tgo_min) - 2.0 * eps_t
    sweep = []
    t = float(tgo_max)
    while t - lo > eps_t:
        sweep.append(t)
        t -= delta_tgo
    entries = {}
    if last is not None:
        entries[last] = found[last]
    if sweep:
        ok, mf = probe(sweep)
        n_probes += len(sweep)
        for tg, good, m in zip(sweep, ok, mf):
            if good:
                entries[tg] = float(m)
    return FeasibilitySet(state, sorted(entries.items()), n_probes)


def extract_tgo_dataset(sets):
    """Fuel-optimal t_go per nonempty set; ties go to the smaller t_go."""
    records = []
    for fs in sets:
        if not fs.entries:
            continue
        best_t, best_m = fs.entries[0]
        for tg, m in fs.entries[1:]:
            if m > best_m or (m == best_m and tg < best_t):
                best_t, best_m = tg, m
        records.append((fs.state, best_t, best_m))
    return TgoDataset(records)


def label_dataset(sets):
    samples = [LabeledSample(fs.state, 1 if fs.entries else -1) for fs in sets]
    labels = {s.label for s in samples}
    if len(labels) < 2:
        raise DegenerateLabels("all samples share one label; widen or shrink the dispersion bounds")
    return samples


# ---------------------------------------------------------------------------
# parallel driver


def _feasibility_chunk(args):
    cfg, states = args
    fb = cfg.feasibility
    return [
        compute_feasibility_set(s, fb.tgo_min, fb.tgo_max, fb.eps_t, fb.delta_tgo, rollout_probe(cfg, s))
        for s in states
    ]


def build_feasibility_sets(cfg, states, workers=1, progress=None):
    """Feasibility sets for every state, in input order regardless of workers."""
    n = len(states)
    if n == 0:
        return []
    chunk = max(1, min(25, math.ceil(n / (4 * workers))))
    jobs = [(cfg, states[i:i + chunk]) for i in range(0, n, chunk)]
    out = []
    if workers <= 1:
        for job in jobs:
            out.extend(_feasibility_chunk(job))
            if progress:
                progress(len(out), n)
        return out
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for res in ex.map(_feasibility_chunk, jobs):
            out.extend(res)
            if progress:
                progress(len(out), n)
    return out


# ---------------------------------------------------------------------------
# persistence

_F = "{:.17g}"


def write_dataset_csv(path, sets):
    """One row per state: ``S,H,w,v,label,tgo_star,mf_star``."""
    best = {id(r[0]): r for r in extract_tgo_dataset(sets).records}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["S", "H", "w", "v", "label", "tgo_star", "mf_star"])
        for fs in sets:
            s = fs.state
            row = [_F.format(x) for x in (s.S, s.H, s.w, s.v)]
            rec = best.get(id(s))
            if rec is None:
                row += ["-1", "", ""]
            else:
                row += ["1", _F.format(rec[1]), _F.format(rec[2])]
            w.writerow(row)


def read_dataset_csv(path):
    """Returns ``(labeled_samples, tgo_dataset)``."""
    samples, records = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            s = ReducedGuidanceState(float(row["S"]), float(row["H"]), float(row["w"]), float(row["v"]))
            lab = int(row["label"])
            samples.append(LabeledSample(s, lab))
            if lab == 1:
                records.append((s, float(row["tgo_star"]), float(row["mf_star"])))
    return samples, TgoDataset(records)


def write_feasibility_csv(path, sets):
    """Long form ``S,H,w,v,tgo,mf``; empty sets contribute no rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["S", "H", "w", "v", "tgo", "mf"])
        for fs in sets:
            s = fs.state
            for tg, m in fs.entries:
                w.writerow([_F.format(x) for x in (s.S, s.H, s.w, s.v, tg, m)])
