"""Experiment orchestration: config files, seeded multi-run execution, CSV
learning curves, sweeps and plots.

A config file is flat ``key = value`` text with ``#`` comments::

    env = cartpole
    algo = srvr-pg
    policy = mlp64
    gamma = 0.995
    eta = 0.005
    N = 25
    B = 5
    m = 3
    budget = 2500
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import make_env
from .optimizer import (
    DivergenceError,
    L2Ball,
    RunHistory,
    SrvrPgConfig,
    gpomdp_run,
    srvr_pg_run,
    svrpg_run,
)
from .pgpe import HyperParams, pgpe_run, srvr_pg_pe_run
from .policy import make_policy

log = logging.getLogger(__name__)

ALGOS = ("gpomdp", "svrpg", "srvr-pg", "pgpe", "srvr-pg-pe")
INNER_LOOP_ALGOS = ("svrpg", "srvr-pg", "srvr-pg-pe")
RAW_COLUMNS = ("algo", "env", "seed", "B", "epoch", "step", "trajectories", "avg_return", "update_norm")
AGG_COLUMNS = ("algo", "env", "B", "trajectories", "mean_return", "std_return", "n_seeds")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "cartpole"
    algo: str = "srvr-pg"
    policy: str = "linear"
    sigma: float = 1.0
    hyper_sigma: float = 1.0
    optimize_sigma: bool = False
    horizon: int | None = None
    gamma: float = 0.99
    eta: float = 0.01
    N: int = 10
    B: int = 1
    m: int = 1
    budget: int = 100
    n_seeds: int = 1
    master_seed: int = 0
    radius: float | None = None
    weight_cap: float | None = None
    output_rule: str = "last"
    out: str = "results"

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {', '.join(ALGOS)}")
        if min(self.N, self.B, self.m) < 1:
            raise ConfigError("N, B and m must be >= 1")
        if self.budget < self.N:
            raise ConfigError(f"budget {self.budget} is below one snapshot batch N={self.N}")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.algo in INNER_LOOP_ALGOS and self.m > 1 and self.B > self.budget / self.m:
            raise ConfigError(f"B={self.B} exceeds budget/m = {self.budget / self.m:g}")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.eta < 0 or self.sigma <= 0 or self.hyper_sigma <= 0:
            raise ConfigError("eta must be >= 0 and sigma, hyper_sigma > 0")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")

    @property
    def uses_inner_loop(self) -> bool:
        return self.algo in INNER_LOOP_ALGOS

    @property
    def trajectories_per_epoch(self) -> int:
        return self.N + (self.m - 1) * self.B if self.uses_inner_loop else self.N

    @property
    def epochs(self) -> int:
        """Epochs started within the budget; the last may be cut short."""
        return math.ceil(self.budget / self.trajectories_per_epoch)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_ALIASES = {"total_trajectories": "budget", "total_trajectory_budget": "budget", "step_size": "eta"}


def _convert(key, raw):
    kind = _TYPES[key]
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if kind.startswith("float"):
            return float(raw)
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a config file, or a shipped preset when ``path`` names one."""
    p = Path(path)
    if not p.exists() and str(path) in preset_names():
        return parse_config(preset_text(str(path)), **overrides)
    return parse_config(p.read_text(), **overrides)


def preset_names() -> list[str]:
    root = resources.files(__package__) / "presets"
    return sorted(f.name[:-4] for f in root.iterdir() if f.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    return (resources.files(__package__) / "presets" / f"{name}.cfg").read_text()


def load_preset(name: str, **overrides) -> ExperimentConfig:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}")
    return parse_config(preset_text(name), **overrides)


# -- single runs --------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    history: RunHistory
    truncated: str | None = None


def build(config: ExperimentConfig):
    env = make_env(config.env, config.horizon)
    tabular = dict(n_states=env.n_states, n_actions=env.n_actions) if hasattr(env, "n_states") else {}
    policy = make_policy(config.policy, env.obs_dim, config.sigma, **tabular)
    return env, policy


def optimizer_config(config: ExperimentConfig, env) -> SrvrPgConfig:
    inner = config.uses_inner_loop
    return SrvrPgConfig(
        epochs=config.epochs,
        epoch_len=config.m if inner else 1,
        step_size=config.eta,
        snapshot_batch=config.N,
        inner_batch=config.B if inner else 1,
        gamma=config.gamma,
        horizon=env.horizon,
        constraint=L2Ball(0.0, config.radius) if config.radius else SrvrPgConfig().constraint,
        output_rule=config.output_rule,
        weight_cap=config.weight_cap,
        max_trajectories=config.budget,
    )


def initial_params(config: ExperimentConfig, policy):
    # one initialization shared by every seed and algorithm
    return policy.init_params(np.random.default_rng(config.master_seed))


def seed_sequences(config: ExperimentConfig):
    return np.random.SeedSequence(config.master_seed).spawn(config.n_seeds)


def run_single(config: ExperimentConfig, seed_index: int, seed_seq=None) -> RunResult:
    env, policy = build(config)
    opt = optimizer_config(config, env)
    theta0 = initial_params(config, policy)
    seq = seed_seq if seed_seq is not None else seed_sequences(config)[seed_index]
    rng = np.random.default_rng(seq)
    try:
        if config.algo in ("pgpe", "srvr-pg-pe"):
            hyper = HyperParams.isotropic(theta0, config.hyper_sigma, config.optimize_sigma)
            fn = pgpe_run if config.algo == "pgpe" else srvr_pg_pe_run
            hist = fn(opt, env, policy, hyper, rng)
        else:
            fn = {"gpomdp": gpomdp_run, "svrpg": svrpg_run, "srvr-pg": srvr_pg_run}[config.algo]
            hist = fn(opt, env, policy, theta0, rng)
    except DivergenceError as exc:
        log.warning("seed %d truncated: %s", seed_index, exc)
        return RunResult(seed_index, exc.history, str(exc))
    return RunResult(seed_index, hist)


def _run_star(args):
    return run_single(*args)


def run_seeds(config: ExperimentConfig, jobs: int = 1) -> list[RunResult]:
    seqs = seed_sequences(config)
    tasks = [(config, i, s) for i, s in enumerate(seqs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_star, tasks))
    return [run_single(*t) for t in tasks]


# -- reports ------------------------------------------------------------------

@dataclass
class CsvReport:
    raw_path: Path | None
    aggregate_path: Path | None
    plot_path: Path | None
    raw_rows: list = field(default_factory=list)
    aggregate_rows: list = field(default_factory=list)
    truncated: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.truncated


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def raw_rows(config: ExperimentConfig, results) -> list[tuple]:
    b = config.B if config.uses_inner_loop else ""
    rows = []
    for r in results:
        for rec in r.history.records:
            rows.append(
                (config.algo, config.env, r.seed, b, rec.epoch, rec.step, rec.trajectories, rec.avg_return, rec.update_norm)
            )
    return rows


def aggregate_rows(config: ExperimentConfig, results) -> list[tuple]:
    """Mean and std of avg_return on the union of recorded trajectory counts.

    Each run is linearly interpolated onto the grid; a truncated run only
    contributes up to its last record, which ``n_seeds`` makes visible.
    """
    curves = []
    for r in results:
        xs = np.array([rec.trajectories for rec in r.history.records], dtype=float)
        ys = np.array([rec.avg_return for rec in r.history.records], dtype=float)
        if len(xs):
            curves.append((xs, ys))
    if not curves:
        return []
    grid = np.unique(np.concatenate([c[0] for c in curves]))
    b = config.B if config.uses_inner_loop else ""
    rows = []
    for x in grid:
        vals = [np.interp(x, xs, ys) for xs, ys in curves if xs[0] <= x <= xs[-1]]
        if vals:
            rows.append((config.algo, config.env, b, int(x), float(np.mean(vals)), float(np.std(vals)), len(vals)))
    return rows


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    path.write_text(buf.getvalue())


def plot_curves(curves, path: Path, title: str):
    """``curves``: list of (label, aggregate rows).  Mean with a +-std band."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in curves:
        if not rows:
            continue
        x = np.array([r[3] for r in rows], dtype=float)
        mu = np.array([r[4] for r in rows])
        sd = np.array([r[5] for r in rows])
        ax.plot(x, mu, label=label)
        ax.fill_between(x, mu - sd, mu + sd, alpha=0.2)
    ax.set_xlabel("trajectories")
    ax.set_ylabel("average return")
    ax.set_title(title)
    if ax.lines:
        ax.legend()
    fig.tight_layout()
    # fixed metadata keeps the PNG byte-stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _label(config: ExperimentConfig) -> str:
    return f"{config.algo} B={config.B}" if config.uses_inner_loop else config.algo


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1, plot: bool = True) -> CsvReport:
    """Run every seed and write ``raw.csv``, ``aggregate.csv`` and ``curve.png``.

    ``out_dir=None`` falls back to ``config.out``; an empty directory name writes nothing.
    """
    results = run_seeds(config, jobs)
    raw = raw_rows(config, results)
    agg = aggregate_rows(config, results)
    truncated = [(r.seed, r.truncated) for r in results if r.truncated]
    target = config.out if out_dir is None else out_dir
    out = Path(target) if target else None
    report = CsvReport(None, None, None, raw, agg, truncated)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report.raw_path, report.aggregate_path = out / "raw.csv", out / "aggregate.csv"
        _write_csv(report.raw_path, RAW_COLUMNS, raw)
        _write_csv(report.aggregate_path, AGG_COLUMNS, agg)
        (out / "config.cfg").write_text(config.dumps())
        if plot:
            report.plot_path = out / "curve.png"
            plot_curves([(_label(config), agg)], report.plot_path, f"{config.env}: {config.algo}")
    return report


SWEEPABLE = {"B": int, "eta": float, "N": int, "m": int}


def parse_values(param: str, text: str) -> list:
    if param not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEPABLE)}")
    try:
        return [SWEEPABLE[param](v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {text!r}") from exc


def sweep(config: ExperimentConfig, param: str, values, out_dir=None, jobs: int = 1, plot: bool = True):
    """One :func:`run_experiment` per value of ``param``, all else fixed.

    Every variant is validated before the first run starts.  Each variant
    writes into ``<out>/<param>=<value>/``; the B sweep also writes merged
    ``raw.csv``/``aggregate.csv`` keyed by the B column.  Returns
    ``{value: CsvReport}`` in the order given.
    """
    if param not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEPABLE)}")
    if not values:
        raise ConfigError("no sweep values")
    if param == "B" and min(values) < 1:
        raise ConfigError("all B values must be >= 1")
    variants = [replace(config, **{param: v}) for v in values]
    target = config.out if out_dir is None else out_dir
    out = Path(target) if target else None
    reports = {}
    for v, cfg in zip(values, variants):
        sub = None if out is None else out / f"{param}={v}"
        reports[v] = run_experiment(cfg, sub, jobs, plot=False)
    if out is not None:
        if param == "B":
            _write_csv(out / "raw.csv", RAW_COLUMNS, [r for rep in reports.values() for r in rep.raw_rows])
            _write_csv(out / "aggregate.csv", AGG_COLUMNS, [r for rep in reports.values() for r in rep.aggregate_rows])
        if plot:
            curves = [(f"{param}={v}", rep.aggregate_rows) for v, rep in reports.items()]
            plot_curves(curves, out / "sweep.png", f"{config.env}: {config.algo}, {param} sweep")
    return reports


def sweep_batch_size(config: ExperimentConfig, b_values, out_dir=None, jobs: int = 1):
    return sweep(config, "B", list(b_values), out_dir, jobs)


def _trailing_mean(returns, counts, window):
    need, total, got = window, 0.0, 0
    for r, c in zip(reversed(returns), reversed(counts)):
        take = min(int(c), need - got)
        total += r * take
        got += take
        if got == need:
            break
    return total, got


def trajectories_to_plateau(history: RunHistory, threshold: float, window: int = 50):
    """First cumulative trajectory count at which the mean undiscounted return
    of the last ``window`` episodes reaches ``threshold``; None if never.

    Episodes inside a batch are credited with the batch average.
    """
    returns, counts, prev = [], [], 0
    for rec in history.records:
        returns.append(rec.avg_return)
        counts.append(rec.trajectories - prev)
        prev = rec.trajectories
        total, got = _trailing_mean(returns, counts, window)
        if got == window and total / window >= threshold - 1e-12:
            return rec.trajectories
    return None


def final_window_mean(history: RunHistory, window: int = 50) -> float:
    """Mean undiscounted return over the last ``window`` episodes of a run."""
    returns = [rec.avg_return for rec in history.records]
    counts = np.diff([0] + [rec.trajectories for rec in history.records])
    total, got = _trailing_mean(returns, counts, window)
    return total / got if got else math.nan
