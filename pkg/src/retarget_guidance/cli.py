"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 models missing,
4 unconverged rollout. Other guidance errors exit with 1.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import boundary as bd
from . import pipeline as pl
from .config import dump_config, load_config
from .dataset import compute_feasibility_set, demo_state, extract_tgo_dataset, nominal_state, read_dataset_csv, rollout_probe
from .dynamics import write_trace_csv
from .errors import ConfigError, GuidanceError, MissingModels
from .guidance import ReducedGuidanceState, initial_state_from_reduced, simulate
from .retarget import guided_descent

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MODELS, EXIT_UNCONVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("retarget_guidance")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the sampling seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _state_overrides(p):
    p.add_argument("--altitude", type=float, help="initial altitude [m]")
    p.add_argument("--range", dest="range_", type=float, help="initial downrange distance to target [m]")
    p.add_argument("--descent-rate", type=float, help="initial descent rate [m/s]")
    p.add_argument("--horizontal-speed", type=float, help="initial horizontal speed [m/s]")
    p.add_argument("--tgo", type=float, help="fixed initial time-to-go [s]; bypasses the policy")
    p.add_argument("--models", type=Path, help="directory holding tgo_policy.json and boundary.json")
    p.add_argument("--no-retarget", action="store_true", help="run the base policy at the original site")


def build_parser():
    ap = argparse.ArgumentParser(prog="retarget-guidance", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-loop rollout from the nominal (or overridden) state")
    _common(p)
    _state_overrides(p)

    p = sub.add_parser("retarget-demo", help="off-nominal retargeting scenario")
    _common(p)
    _state_overrides(p)

    p = sub.add_parser("pipeline", help="build the time-to-go policy and controllability boundary")
    _common(p)
    p.add_argument("--n-states", type=int, help="override dataset.n_states")
    p.add_argument("--smoke", action="store_true", help="50-state run for a quick end-to-end check")

    p = sub.add_parser("montecarlo", help="seeded campaign of guided descents")
    _common(p)
    p.add_argument("--n", type=int, help="number of runs (default montecarlo.n_runs)")
    p.add_argument("--mode", choices=["uniform", "gaussian"], help="dispersion model")
    p.add_argument("--models", type=Path, help="model directory (default --out)")
    p.add_argument("--no-retarget", action="store_true")

    p = sub.add_parser("boundary-export", help="write boundary polylines for plotting")
    _common(p)
    p.add_argument("--models", type=Path, help="model directory (default --out)")
    p.add_argument("--points", type=int, default=400)
    return ap


def _load(args):
    cfg = load_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = str(args.out)
    return cfg


def _initial(cfg, args, base):
    S = base.S if args.range_ is None else args.range_
    H = base.H if args.altitude is None else args.altitude - cfg.target[2]
    w = base.w if args.descent_rate is None else args.descent_rate
    v = base.v if args.horizontal_speed is None else args.horizontal_speed
    rs = ReducedGuidanceState(S, H, w, v)
    return rs, initial_state_from_reduced(rs, cfg.target, cfg.physics.m_wet)


def optimal_tgo(cfg, rs):
    """Fuel-optimal t_go of one state by the feasibility search (no models needed)."""
    fb = cfg.feasibility
    fs = compute_feasibility_set(rs, fb.tgo_min, fb.tgo_max, fb.eps_t, fb.delta_tgo, rollout_probe(cfg, rs))
    recs = extract_tgo_dataset([fs]).records
    return recs[0][1] if recs else None


def _summary(result, t_go, source, decision=None):
    out = {
        "converged": result.converged,
        "fuel_kg": result.fuel_used,
        "time_of_flight_s": result.time_of_flight,
        "t_go_s": t_go,
        "t_go_source": source,
        "terminal_mass_kg": result.terminal.m,
        "terminal_position_m": [float(x) for x in result.terminal.r],
        "terminal_velocity_mps": [float(x) for x in result.terminal.v],
        "target_m": [float(x) for x in result.target],
        "violations": [{"name": n, "t_first_s": t} for n, t in result.violated],
        "saturation_time_s": result.saturation_time,
        "longest_saturation_s": result.longest_saturation,
        "reference_proposed": pl.PUBLISHED_PROPOSED,
        "reference_fopdg": pl.FOPDG_REFERENCE,
    }
    if decision is not None:
        out["retarget"] = {
            "feasible": decision.feasible,
            "s": [float(x) for x in decision.s],
            "s_projected": [float(x) for x in decision.s_projected],
            "target_shift_m": decision.target_shift,
        }
    return out


def _run_single(cfg, args, base, name, need_models):
    rs, initial = _initial(cfg, args, base)
    if rs.S <= 0 or rs.H <= 0 or rs.v <= 0:
        raise ConfigError("initial state must have positive range, altitude above target and horizontal speed")
    out = Path(cfg.out_dir)
    models = args.models if args.models is not None else (out if need_models else None)
    decision = None
    if args.tgo is not None:
        if not args.tgo > 0:
            raise ConfigError("--tgo must be positive (zero-duration runs are rejected)")
        t_go, source = args.tgo, "fixed"
        result = simulate(cfg, initial, t_go)
    elif models is not None:
        policy, boundary = pl.load_models(models)
        g = guided_descent(cfg, initial, policy, boundary, retarget=not args.no_retarget and cfg.retarget.enabled)
        result, t_go, decision, source = g.rollout, g.t_go, g.decision, "policy"
        if g.retarget_error:
            log.warning("retargeting failed: %s", g.retarget_error)
    else:
        t_go, source = optimal_tgo(cfg, rs), "feasibility-search"
        if t_go is None:
            log.warning("no feasible time-to-go in [%g, %g]; using the upper end", cfg.feasibility.tgo_min, cfg.feasibility.tgo_max)
            t_go = cfg.feasibility.tgo_max
        result = simulate(cfg, initial, t_go)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / f"{name}_trace.csv", result.trace)
    summary = _summary(result, t_go, source, decision)
    pl.dump_json(out / f"{name}_summary.json", summary)
    print(f"{name}: converged={result.converged} fuel={result.fuel_used:.2f} kg tof={result.time_of_flight:.1f} s t_go={t_go:.2f} s ({source})")
    if decision is not None and not decision.feasible:
        print(f"  retarget shift {decision.target_shift / 1000:.3f} km")
    return EXIT_OK if result.converged else EXIT_UNCONVERGED


def cmd_simulate(cfg, args):
    return _run_single(cfg, args, nominal_state(cfg), "simulate", need_models=False)


def cmd_retarget_demo(cfg, args):
    return _run_single(cfg, args, demo_state(cfg), "retarget_demo", need_models=True)


def cmd_pipeline(cfg, args):
    if args.smoke:
        cfg.dataset.n_states = 50
    if args.n_states is not None:
        cfg.dataset.n_states = args.n_states
    if args.seed is not None:
        cfg.dataset.seed = args.seed
    out = Path(cfg.out_dir)

    def progress(done, total):
        log.info("feasibility sets %d/%d", done, total)

    policy, boundary, report = pl.run_pipeline(cfg, out, progress=progress)
    dump_config(cfg, out / "config_used.yaml")
    print(
        f"pipeline: {report['n_controllable']} controllable / {report['n_uncontrollable']} uncontrollable; "
        f"policy terms {policy.sparsity}/15, margin {policy.margin:.2f} s; "
        f"Level-1 misclassified {boundary.stats['level1_misclassified']}"
    )
    return EXIT_OK


def cmd_montecarlo(cfg, args):
    out = Path(cfg.out_dir)
    policy, boundary = pl.load_models(args.models or out)
    n = cfg.montecarlo.n_runs if args.n is None else args.n
    if n < 0:
        raise ConfigError("--n must be >= 0")
    mode = args.mode or cfg.montecarlo.mode
    seed = cfg.montecarlo.seed if args.seed is None else args.seed
    retarget = not args.no_retarget and cfg.retarget.enabled
    runs, summary = pl.run_montecarlo(cfg, policy, boundary, n, mode=mode, seed=seed, retarget=retarget, workers=cfg.workers)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"montecarlo_{mode}_{'retarget' if retarget else 'base'}"
    pl.write_decision_log(out / f"{tag}_decisions.jsonl", runs)
    pl.dump_json(out / f"{tag}_report.json", summary)
    rate = summary["convergence_rate"]
    print(f"montecarlo: {n} runs, converged {summary['n_converged']}"
          + (f" ({100 * rate:.1f}%)" if rate is not None else "")
          + f", retargeted {summary['n_retargeted']}")
    return EXIT_OK


def cmd_boundary_export(cfg, args):
    out = Path(cfg.out_dir)
    models = args.models or out
    bf = Path(models) / pl.BOUNDARY_FILE
    if not bf.exists():
        raise MissingModels(f"no {pl.BOUNDARY_FILE} in {models}")
    boundary = bd.ConicBoundary.load(bf)
    ds = Path(models) / pl.DATASET_FILE
    if ds.exists():
        samples, _ = read_dataset_csv(ds)
        s = np.array([[x.state.S / x.state.v, x.state.H / x.state.w] for x in samples])
        lo, hi = s.min(axis=0), s.max(axis=0)
    else:
        c = nominal_state(cfg).ratios()
        lo, hi = 0.5 * c, 1.5 * c
    pad = 0.05 * (hi - lo)
    curves = [("level2", bd.boundary_polyline(boundary, (lo[0] - pad[0], hi[0] + pad[0]), (lo[1] - pad[1], hi[1] + pad[1]), args.points))]
    out.mkdir(parents=True, exist_ok=True)
    pl.write_curves(out / pl.CURVES_FILE, curves)
    print(f"boundary-export: wrote {out / pl.CURVES_FILE}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "retarget-demo": cmd_retarget_demo,
    "pipeline": cmd_pipeline,
    "montecarlo": cmd_montecarlo,
    "boundary-export": cmd_boundary_export,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingModels as exc:
        print(f"models missing: {exc}", file=sys.stderr)
        return EXIT_MODELS
    except GuidanceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
