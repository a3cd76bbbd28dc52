"""Run configuration: a versioned YAML tree mapped onto dataclasses.

Every section has defaults, so an empty file (or no file) yields the
reference configuration. Unknown keys are rejected.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .kernels import pack_params

SCHEMA_VERSION = 1


@dataclass
class Physics:
    g: list = field(default_factory=lambda: [0.0, 0.0, -1.68])
    m_wet: float = 1050.0
    alpha: float = 0.00035
    rho_min: float = 1480.0
    rho_max: float = 3120.0


@dataclass
class Limits:
    thrust_rate_max: float = 200.0
    theta_lim_deg: float = 60.0
    vh_max: float = 400.0
    m_terminal_min: float = 850.0
    # slack below the target altitude before a sub-surface violation is flagged
    subsurface_margin: float = 0.5


@dataclass
class Simulation:
    dt: float = 0.1
    n_substeps: int = 2
    tgo_floor: float = 2.0
    r_ref: float = 1737.4e3
    tol_pos: float = 10.0
    tol_vel: float = 0.5


@dataclass
class Scenario:
    """Boundary conditions; accelerations are propulsive (thrust/mass)."""

    target: list = field(default_factory=lambda: [0.0, 0.0, 1300.0])
    vf: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    a0: list = field(default_factory=lambda: [-2.26, 0.0, 1.91])
    af: list = field(default_factory=lambda: [0.0, 0.0, 3.2])
    # nominal phase-start state: absolute altitude, range to target, descent rate, horizontal speed
    altitude: float = 6800.0
    range: float = 28500.0
    descent_rate: float = 59.0
    horizontal_speed: float = 336.0
    sigma3: list = field(default_factory=lambda: [900.0, 750.0, 2.5, 1.75])
    dispersion: list = field(default_factory=lambda: [3000.0, 3000.0, 17.0, 17.0])
    # off-nominal retargeting demonstration state
    demo_altitude: float = 5300.0
    demo_range: float = 26000.0
    demo_descent_rate: float = 54.0
    demo_horizontal_speed: float = 344.0


@dataclass
class Feasibility:
    tgo_min: float = 100.0
    tgo_max: float = 300.0
    eps_t: float = 0.5
    delta_tgo: float = 2.0


@dataclass
class Dataset:
    n_states: int = 2000
    mode: str = "uniform"
    seed: int = 7


@dataclass
class Lasso:
    mu: float = None
    mu_grid: list = field(default_factory=lambda: [float(x) for x in np.logspace(-4, 1, 11)])
    cv_folds: int = 5
    tol: float = 1e-8
    max_sweeps: int = 100000
    # upward bias added to the fitted policy, in seconds; None = the
    # tgo_margin_quantile of training under-predictions
    tgo_margin: float = None
    tgo_margin_quantile: float = 0.95


@dataclass
class Svm:
    gamma: float = None
    gamma_grid: list = field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0, 1000.0])
    cv_folds: int = 5
    tol: float = 1e-6
    max_iter: int = 2000000


@dataclass
class Level2:
    eta: float = 0.01
    grid_points: int = 21
    tol: float = 1e-6
    # lever arm [s] charging rotations in the shift norm; None = centre-to-data distance
    theta_weight: float = None


@dataclass
class Retarget:
    enabled: bool = True
    inset: float = 0.0


@dataclass
class MonteCarlo:
    n_runs: int = 500
    mode: str = "uniform"
    seed: int = 11


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    physics: Physics = field(default_factory=Physics)
    limits: Limits = field(default_factory=Limits)
    simulation: Simulation = field(default_factory=Simulation)
    scenario: Scenario = field(default_factory=Scenario)
    feasibility: Feasibility = field(default_factory=Feasibility)
    dataset: Dataset = field(default_factory=Dataset)
    lasso: Lasso = field(default_factory=Lasso)
    svm: Svm = field(default_factory=Svm)
    level2: Level2 = field(default_factory=Level2)
    retarget: Retarget = field(default_factory=Retarget)
    montecarlo: MonteCarlo = field(default_factory=MonteCarlo)

    def validate(self):
        ph, lim, sim = self.physics, self.limits, self.simulation
        checks = [
            (len(ph.g) == 3, "physics.g must have 3 components"),
            (ph.m_wet > 0, "physics.m_wet must be positive"),
            (ph.alpha > 0, "physics.alpha must be positive"),
            (0 < ph.rho_min < ph.rho_max, "need 0 < rho_min < rho_max"),
            (lim.thrust_rate_max > 0, "limits.thrust_rate_max must be positive"),
            (0 < lim.theta_lim_deg < 90, "limits.theta_lim_deg must be in (0, 90)"),
            (lim.vh_max > 0, "limits.vh_max must be positive"),
            (sim.dt > 0, "simulation.dt must be positive"),
            (sim.n_substeps >= 1, "simulation.n_substeps must be >= 1"),
            (sim.tgo_floor >= 0, "simulation.tgo_floor must be >= 0"),
            (self.feasibility.tgo_min < self.feasibility.tgo_max, "need tgo_min < tgo_max"),
            (self.feasibility.eps_t > 0 and self.feasibility.delta_tgo > 0, "eps_t and delta_tgo must be positive"),
            (self.dataset.mode in ("uniform", "gaussian"), "dataset.mode must be uniform or gaussian"),
            (self.montecarlo.mode in ("uniform", "gaussian"), "montecarlo.mode must be uniform or gaussian"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.level2.eta >= 0, "level2.eta must be >= 0"),
            (0.0 <= self.lasso.tgo_margin_quantile <= 1.0, "lasso.tgo_margin_quantile must be in [0, 1]"),
            (self.dataset.n_states >= 0 and self.montecarlo.n_runs >= 0, "sample counts must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        return self

    # -- derived quantities -------------------------------------------------

    @property
    def g(self):
        return np.asarray(self.physics.g, dtype=float)

    @property
    def target(self):
        return np.asarray(self.scenario.target, dtype=float)

    @property
    def a0_net(self):
        return np.asarray(self.scenario.a0, dtype=float) + self.g

    @property
    def af_net(self):
        return np.asarray(self.scenario.af, dtype=float) + self.g

    def kernel_params(self, unclamped=False):
        ph, lim, sim = self.physics, self.limits, self.simulation
        return pack_params(
            g=self.g,
            alpha=ph.alpha,
            rho_min=ph.rho_min,
            rho_max=ph.rho_max,
            thrust_rate_max=lim.thrust_rate_max,
            theta_lim=math.radians(lim.theta_lim_deg),
            vh_max=lim.vh_max,
            dt=sim.dt,
            n_sub=sim.n_substeps,
            tgo_floor=sim.tgo_floor,
            r_ref=sim.r_ref,
            tol_pos=sim.tol_pos,
            tol_vel=sim.tol_vel,
            m_terminal_min=lim.m_terminal_min,
            vf=np.asarray(self.scenario.vf, dtype=float),
            af_net=self.af_net,
            subsurface_margin=lim.subsurface_margin,
            unclamped=unclamped,
        )

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data):
    try:
        return _build(RunConfig, data or {}, "").validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path=None):
    if path is None:
        return RunConfig().validate()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
