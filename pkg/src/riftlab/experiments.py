"""TOML-driven sweeps over (omega, B, seed) with CSV reports."""

from __future__ import annotations

import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .intervention import QGap
from .maxent import policy_from_q, soft_value_iteration
from .mdp import GridworldSpec, TabularMdp, build_gridworld
from .rift import (RiftConfig, RunMetrics, evaluate_policy, prior_from_demos, prior_from_intervention_rl,
                   random_prior, rift_loop)
from .rng import child_seed

PRIOR_KINDS = ("demos", "intervention_rl", "random")
METRIC_FIELDS = ("success_rate", "mean_return", "intervention_rate", "kl_to_prior", "dataset_size")
METRICS_HEADER = ("run_id", "seed", "omega", "B") + ("round",) + METRIC_FIELDS
BANDS = (("low", 0.0, 0.3), ("med", 0.3, 0.7), ("high", 0.7, 1.0))
PACKAGE_DATA = Path(__file__).resolve().parent / "data"


class ConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "demos"
    demos: int = 2
    smoothing: float = 0.1
    base_concentration: float | None = 1.0
    concentration: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    grid_file: str
    step_reward: float = -0.01
    goal_reward: float = 1.0
    hazard_reward: float = -1.0
    slip_prob: float = 0.1
    gamma: float = 0.95
    alpha_expert: float = 0.01
    omega_list: tuple[float, ...] = (0.001,)
    B_list: tuple[float, ...] = (0.1,)
    prior: PriorSpec = field(default_factory=PriorSpec)
    rounds: int = 20
    episodes_per_round: int = 30
    max_horizon: int = 60
    eval_episodes: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    bootstrap_mode: str = "truncation"
    fit_mode: str = "model"
    fresh_data_per_round: bool = False
    zero_residual: bool = False
    rlif_temperature: float = 0.01
    phi_default: float = 0.0
    success_threshold: float = 0.5
    omega: float = 0.001
    omega_large: float = 100.0

    def __post_init__(self):
        for name in ("omega_list", "B_list", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must be non-empty")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if any(w < 0 for w in self.omega_list):
            raise ConfigError("omega_list entries must be >= 0")
        if any(b <= 0 for b in self.B_list):
            raise ConfigError("B_list entries must be > 0")
        if self.prior.kind not in PRIOR_KINDS:
            raise ConfigError(f"prior.kind must be one of {PRIOR_KINDS}, got {self.prior.kind!r}")
        self.rift_config(0.0, 0)  # validates the training fields

    def rift_config(self, omega: float, seed: int) -> RiftConfig:
        try:
            return RiftConfig(omega=omega, rounds=self.rounds, episodes_per_round=self.episodes_per_round,
                              max_horizon=self.max_horizon, bootstrap_mode=self.bootstrap_mode,
                              fit_mode=self.fit_mode, rlif_temperature=self.rlif_temperature,
                              phi_default=self.phi_default, fresh_data_per_round=self.fresh_data_per_round,
                              zero_residual=self.zero_residual, eval_episodes=self.eval_episodes,
                              success_threshold=self.success_threshold, seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid_path(self) -> Path:
        p = Path(self.grid_file)
        if p.exists():
            return p
        packaged = PACKAGE_DATA / p.name
        if packaged.exists():
            return packaged
        raise ConfigError(f"grid file not found: {self.grid_file}")


_SECTIONS = {"env": ("step_reward", "goal_reward", "hazard_reward", "slip_prob", "gamma", "alpha_expert"),
             "sweep": ("omega_list", "B_list", "seeds", "omega", "omega_large"),
             "train": ("rounds", "episodes_per_round", "max_horizon", "eval_episodes", "bootstrap_mode",
                       "fit_mode", "fresh_data_per_round", "zero_residual", "rlif_temperature", "phi_default",
                       "success_threshold")}
_TUPLES = ("omega_list", "B_list", "seeds")


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    data = dict(data)
    kwargs = {}
    if "grid_file" not in data:
        raise ConfigError("missing key: grid_file")
    grid = Path(data.pop("grid_file"))
    if base_dir is not None and not grid.is_absolute() and (base_dir / grid).exists():
        grid = base_dir / grid
    kwargs["grid_file"] = str(grid)
    for section, keys in _SECTIONS.items():
        table = dict(data.pop(section, {}))
        for key in list(table):
            if key not in keys:
                raise ConfigError(f"unknown key [{section}].{key}")
            value = table.pop(key)
            kwargs[key] = tuple(value) if key in _TUPLES else value
    prior = dict(data.pop("prior", {}))
    unknown = set(prior) - set(PriorSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown key(s) in [prior]: {sorted(unknown)}")
    kwargs["prior"] = PriorSpec(**prior)
    data.pop("name", None)
    if data:
        raise ConfigError(f"unknown top-level key(s): {sorted(data)}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)


# ----------------------------------------------------------------------------
# Environment and priors


@dataclass(frozen=True)
class Environment:
    mdp: TabularMdp
    expert_q: object
    expert_policy: np.ndarray


@lru_cache(maxsize=8)
def build_environment(config: ExperimentConfig) -> Environment:
    spec = GridworldSpec.from_file(config.grid_path(), step_reward=config.step_reward,
                                   goal_reward=config.goal_reward, hazard_reward=config.hazard_reward,
                                   slip_prob=config.slip_prob, discount=config.gamma)
    mdp = build_gridworld(spec)
    q = soft_value_iteration(mdp, config.alpha_expert)
    return Environment(mdp, q, policy_from_q(q))


@lru_cache(maxsize=64)
def build_prior(config: ExperimentConfig, B: float) -> np.ndarray:
    """The configured prior; the intervention-RL prior is trained against threshold ``B``."""
    env = build_environment(config)
    spec = config.prior
    S, A = env.mdp.num_states, env.mdp.num_actions
    if spec.kind == "demos":
        return prior_from_demos(env.mdp, env.expert_policy, spec.demos, spec.smoothing, config.max_horizon,
                                spec.seed, spec.base_concentration)
    if spec.kind == "random":
        return random_prior(S, A, spec.concentration, spec.seed)
    cfg = config.rift_config(0.0, child_seed(spec.seed, 77))
    return prior_from_intervention_rl(env.mdp, QGap(env.expert_q, B), cfg)


# ----------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class MetricRow:
    run_id: str
    seed: int
    omega: float
    B: float
    round: int
    success_rate: float
    mean_return: float
    intervention_rate: float
    kl_to_prior: float
    dataset_size: int


@dataclass
class SweepResult:
    rows: list[MetricRow] = field(default_factory=list)

    def runs(self) -> dict[tuple[float, float, int], list[MetricRow]]:
        out: dict = {}
        for row in self.rows:
            out.setdefault((row.omega, row.B, row.seed), []).append(row)
        return out

    def final_rows(self) -> list[MetricRow]:
        return [rows[-1] for rows in self.runs().values()]

    def initial_rows(self) -> list[MetricRow]:
        return [rows[0] for rows in self.runs().values()]

    def final(self, omega: float, B: float, metric: str = "success_rate") -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.final_rows() if r.omega == omega and r.B == B])

    def initial(self, omega: float, B: float, metric: str = "success_rate") -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.initial_rows() if r.omega == omega and r.B == B])

    def mean_final(self, omega: float, B: float, metric: str = "success_rate") -> float:
        return float(np.mean(self.final(omega, B, metric)))


def run_id(omega: float, B: float, seed: int) -> str:
    return f"w{omega:g}-B{B:g}-s{seed}"


def _rows(metrics: RunMetrics, omega, B, seed) -> list[MetricRow]:
    rid = run_id(omega, B, seed)
    return [MetricRow(rid, seed, omega, B, m.round, m.success_rate, m.mean_return, m.intervention_rate,
                      m.kl_to_prior, m.dataset_size) for m in metrics.rounds]


def run_cell(config: ExperimentConfig, omega: float, B: float, seed: int) -> list[MetricRow]:
    """One training run; errors are re-raised tagged with the cell."""
    try:
        env = build_environment(config)
        prior = build_prior(config, B)
        _, metrics = rift_loop(env.mdp, prior, QGap(env.expert_q, B), config.rift_config(omega, seed))
    except ConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"cell (omega={omega:g}, B={B:g}, seed={seed}) failed: {exc}") from exc
    return _rows(metrics, omega, B, seed)


def _cell_task(args):
    return run_cell(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Every (omega, B, seed) cell, merged in config order regardless of ``jobs``."""
    cells = [(config, w, b, s) for w in config.omega_list for b in config.B_list for s in config.seeds]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_cell_task, cells))
    else:
        parts = [_cell_task(c) for c in cells]
    return SweepResult([row for part in parts for row in part])


# ----------------------------------------------------------------------------
# Threshold calibration


@dataclass
class Calibration:
    thresholds: dict[str, float]
    success: dict[str, float]

    @property
    def low(self) -> float:
        return self.thresholds["low"]

    @property
    def med(self) -> float:
        return self.thresholds["med"]

    @property
    def high(self) -> float:
        return self.thresholds["high"]


def rlif_success(config: ExperimentConfig, B: float) -> float:
    """Mean final greedy success of the unregularised learner over the configured seeds."""
    return float(np.mean([run_cell(config, 0.0, B, s)[-1].success_rate for s in config.seeds]))


def _band(success: float) -> str:
    for name, lo, hi in BANDS:
        if lo <= success < hi or (name == "high" and success == hi):
            return name
    raise ValueError(success)


def calibrate_thresholds(config: ExperimentConfig, steps: int = 10) -> Calibration:
    """Pick Q-gap thresholds whose unregularised success falls in the low/med/high bands.

    Success falls as ``B`` grows, so each band edge is located by bisection in
    ``log B`` between the smallest and largest positive expert Q-gap.  The
    representative threshold for each band is then taken strictly inside it.
    """
    env = build_environment(config)
    q = env.expert_q.q
    gaps = (q.max(axis=1, keepdims=True) - q).ravel()
    gaps = gaps[gaps > 1e-12]
    if gaps.size == 0:
        raise CalibrationError("expert has no action gaps; every band collapses")
    cache: dict[float, float] = {}

    def success(b):
        if b not in cache:
            cache[b] = rlif_success(config, b)
        return cache[b]

    lo, hi = float(gaps.min()) / 2.0, float(gaps.max())
    if success(lo) < 0.7:
        raise CalibrationError(f"no threshold reaches the high band (best {success(lo):.3f})")
    if success(hi) >= 0.3:
        raise CalibrationError(f"no threshold reaches the low band (worst {success(hi):.3f})")

    def edge(level):
        a, b = lo, hi  # success(a) >= level > success(b)
        for _ in range(steps):
            mid = math.sqrt(a * b)
            if success(mid) >= level:
                a = mid
            else:
                b = mid
        return a, b

    a70, b70 = edge(0.7)
    a30, b30 = edge(0.3)
    picks = {"high": [a70 / 2.0, a70], "med": [math.sqrt(b70 * a30), b70, a30], "low": [b30 * 2.0, b30]}
    thresholds, found = {}, {}
    for name, candidates in picks.items():
        for b in candidates:
            if lo <= b <= hi and _band(success(b)) == name:
                thresholds[name], found[name] = b, success(b)
                break
        else:
            raise CalibrationError(f"no threshold found for the {name} band")
    return Calibration(thresholds, found)


def calibrate_prior_demos(config: ExperimentConfig, band=(0.4, 0.6), max_demos: int = 50) -> tuple[int, float]:
    """Smallest demo count whose prior's greedy success lands in ``band``."""
    env = build_environment(config)
    for n in range(max_demos + 1):
        cfg = replace(config, prior=replace(config.prior, kind="demos", demos=n))
        prior = build_prior(cfg, config.B_list[0])
        sr = evaluate_policy(env.mdp, prior, episodes=config.eval_episodes, max_horizon=config.max_horizon,
                             success_threshold=config.success_threshold, seed=0).success_rate
        if band[0] <= sr <= band[1]:
            return n, sr
    raise CalibrationError(f"no demo count up to {max_demos} puts the prior in [{band[0]}, {band[1]}]")


# ----------------------------------------------------------------------------
# Reports


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def _stderr(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def default_out_dir() -> Path:
    return Path(os.environ.get("RIFT_LAB_OUT", "results"))


def report(result: SweepResult, out_dir) -> list[Path]:
    """Write ``metrics.csv``, ``learning_curves.csv`` and ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "metrics.csv", out / "learning_curves.csv", out / "summary.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in result.rows:
            w.writerow([r.run_id, r.seed, _fmt(r.omega), _fmt(r.B), r.round] +
                       [_fmt(getattr(r, f)) for f in METRIC_FIELDS])

    runs = result.runs()
    width = max((len(v) for v in runs.values()), default=0)
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "seed", "omega", "B", "metric"] + [f"round_{k}" for k in range(width)])
        for (omega, B, seed), rows in runs.items():
            for f in METRIC_FIELDS:
                vals = [_fmt(getattr(r, f)) for r in rows]
                w.writerow([rows[0].run_id, seed, _fmt(omega), _fmt(B), f] + vals + [""] * (width - len(vals)))

    keys = list(dict.fromkeys((r.omega, r.B) for r in result.rows))
    finals = result.final_rows()
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["omega", "B", "n_seeds"]
        for f in METRIC_FIELDS[:4]:
            header += [f"{f}_mean", f"{f}_stderr"]
        w.writerow(header)
        for omega, B in keys:
            sel = [r for r in finals if r.omega == omega and r.B == B]
            row = [_fmt(omega), _fmt(B), len(sel)]
            for f in METRIC_FIELDS[:4]:
                vals = [getattr(r, f) for r in sel]
                row += [_fmt(np.mean(vals)), _fmt(_stderr(vals))]
            w.writerow(row)
    return paths


# ----------------------------------------------------------------------------
# Prewired comparisons


@dataclass
class Comparison:
    name: str
    values: dict[str, float]
    verdict: str
    passed: bool

    def line(self) -> str:
        vals = " ".join(f"{k}={v:.3f}" for k, v in self.values.items())
        return f"{self.name:<22} {vals}  [{self.verdict}] {'PASS' if self.passed else 'FAIL'}"


def failure_cases(config: ExperimentConfig, B: float, jobs: int = 1) -> list[Comparison]:
    """Three settings where fine-tuning should not beat plain intervention RL.

    An intervention-trained prior and a random prior carry no task information
    beyond the interventions; a very large ``omega`` pins the policy to the prior.
    """
    omega = config.omega
    out = []
    rl_cfg = replace(config, omega_list=(0.0, omega), B_list=(B,), prior=replace(config.prior, kind="intervention_rl"))
    res = run_experiment(rl_cfg, jobs)
    rift, rlif = res.mean_final(omega, B), res.mean_final(0.0, B)
    out.append(Comparison("intervention-rl-prior", {"rift": rift, "rlif": rlif, "prior": float(np.mean(res.initial(omega, B)))},
                          "|rift - rlif| <= 0.05", abs(rift - rlif) <= 0.05))
    rnd_cfg = replace(config, omega_list=(0.0, omega), B_list=(B,), prior=replace(config.prior, kind="random"))
    res = run_experiment(rnd_cfg, jobs)
    rift, rlif = res.mean_final(omega, B), res.mean_final(0.0, B)
    out.append(Comparison("random-prior", {"rift": rift, "rlif": rlif}, "rift <= rlif + 0.02", rift <= rlif + 0.02))
    big_cfg = replace(config, omega_list=(config.omega_large,), B_list=(B,))
    res = run_experiment(big_cfg, jobs)
    w = config.omega_large
    succ, prior_succ = res.mean_final(w, B), float(np.mean(res.initial(w, B)))
    kl = res.mean_final(w, B, "kl_to_prior")
    out.append(Comparison("large-omega", {"success": succ, "prior": prior_succ, "kl": kl},
                          "kl <= 0.01 and |success - prior| <= 0.03", kl <= 0.01 and abs(succ - prior_succ) <= 0.03))
    return out


def config_summary(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["prior"] = asdict(config.prior)
    return d
