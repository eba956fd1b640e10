"""Seeded replication matrix over (env x algo x budget), aggregation and CSV output."""

import csv
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .envs import EnvSpec
from .errors import ConfigError, LdxError
from .lazygradient import ALGOS, run_agent
from .mdp import state_averaged_value, value_iteration
from .rate import PfsEstimate, Z90, format_interval

DEFAULT_REPS = 50
DEFAULT_SEED = 0
DEFAULT_OUT = "bench_out"
ROW_HEADER = ("env", "algo", "budget", "rep", "seed", "correct", "value", "wall_time")
SUMMARY_HEADER = ("env", "algo", "budget", "n", "correct", "errors", "pcs", "pcs_ci", "pcs_text",
                  "value_mean", "value_ci", "value_text", "degenerate")
CONFIG_NAME = "config.effective.json"
SEED_MASK = (1 << 63) - 1
_ENV_KEYS = {"kind", "seed", "num_states", "K", "L", "alpha", "gamma", "p", "path", "id"}


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class BenchConfig:
    env: dict
    algos: tuple
    budgets: tuple
    reps: int = DEFAULT_REPS
    base_seed: int = DEFAULT_SEED
    out: str = DEFAULT_OUT
    jobs: int = 1

    @property
    def env_id(self):
        return self.env.get("id") or self.env["kind"]

    def to_dict(self):
        return {"env": dict(self.env), "algos": list(self.algos), "budgets": list(self.budgets),
                "reps": self.reps, "seed": self.base_seed, "out": self.out, "jobs": self.jobs}

    def build_env(self):
        spec = {k: v for k, v in self.env.items() if k != "id"}
        return EnvSpec(**spec).build()


def _require(cond, key, constraint):
    if not cond:
        raise ConfigError(f"config key {key!r}: {constraint}")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def config_from_dict(d, base_dir=None):
    """Validate a parsed config and fill defaults."""
    _require(isinstance(d, dict), "<root>", "must be a JSON object")
    known = {"env", "algos", "budgets", "reps", "seed", "out", "jobs"}
    extra = sorted(set(d) - known)
    _require(not extra, extra[0] if extra else "", f"unknown key; allowed keys are {sorted(known)}")
    _require("env" in d, "env", "is required")
    env = d["env"]
    if isinstance(env, str):
        env = {"kind": env}
    _require(isinstance(env, dict) and "kind" in env, "env",
             "must be a builtin name or an object with 'kind'")
    bad = sorted(set(env) - _ENV_KEYS)
    _require(not bad, f"env.{bad[0]}" if bad else "env", f"unknown env parameter; allowed {sorted(_ENV_KEYS)}")
    _require(env["kind"] in ("gridworld", "launch", "hard_instance", "file"), "env.kind",
             "must be one of gridworld, launch, hard_instance, file")
    env = dict(env)
    if env["kind"] == "file":
        _require(isinstance(env.get("path"), str), "env.path", "required string for kind 'file'")
        if base_dir is not None and not os.path.isabs(env["path"]):
            env["path"] = str(Path(base_dir) / env["path"])
    _require("algos" in d, "algos", "is required")
    algos = d["algos"]
    _require(isinstance(algos, list) and len(algos) > 0, "algos", "must be a non-empty list")
    for a in algos:
        _require(a in ALGOS, "algos", f"unknown algo {a!r}; expected one of {list(ALGOS)}")
    _require(len(set(algos)) == len(algos), "algos", "must not repeat")
    _require("budgets" in d, "budgets", "is required")
    budgets = d["budgets"]
    _require(isinstance(budgets, list) and len(budgets) > 0 and all(_is_int(b) and b > 0 for b in budgets),
             "budgets", "must be a non-empty list of positive integers")
    _require(all(b0 < b1 for b0, b1 in zip(budgets, budgets[1:])), "budgets", "must be strictly increasing")
    reps = d.get("reps", DEFAULT_REPS)
    _require(_is_int(reps) and reps >= 1, "reps", "must be an integer >= 1")
    seed = d.get("seed", DEFAULT_SEED)
    _require(_is_int(seed) and seed >= 0, "seed", "must be a non-negative integer")
    out = d.get("out", DEFAULT_OUT)
    _require(isinstance(out, str) and out, "out", "must be a non-empty string")
    jobs = d.get("jobs", 1)
    _require(_is_int(jobs) and jobs >= 1, "jobs", "must be an integer >= 1")
    return BenchConfig(env=env, algos=tuple(algos), budgets=tuple(budgets), reps=reps,
                       base_seed=seed, out=out, jobs=jobs)


def write_effective_config(cfg, out_dir=None):
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / CONFIG_NAME
    path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return path


def load_config(path, echo=True):
    """Parse, validate and default a JSON config; echo the effective config into its output dir."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid JSON: {exc}") from None
    cfg = config_from_dict(data, base_dir=path.parent)
    if echo:
        write_effective_config(cfg)
    return cfg


# --------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class ResultRow:
    """One (algo, budget, rep) cell. ``wall_time`` and ``error`` are excluded from equality."""

    env: str
    algo: str
    budget: int
    rep: int
    seed: int
    correct: bool
    value: float
    wall_time: float = field(default=0.0, compare=False)
    error: str = field(default="", compare=False)

    def __eq__(self, other):
        if not isinstance(other, ResultRow):
            return NotImplemented
        a, b = self._key(), other._key()
        return a[:-1] == b[:-1] and (a[-1] == b[-1] or (math.isnan(a[-1]) and math.isnan(b[-1])))

    __hash__ = None

    def _key(self):
        return (self.env, self.algo, self.budget, self.rep, self.seed, self.correct, self.value)


def cell_seed(base_seed, env_id, algo, budget, rep):
    """base_seed XOR a stable hash of the cell; adding cells never shifts other seeds."""
    digest = hashlib.sha256(f"{env_id}|{algo}|{int(budget)}|{int(rep)}".encode()).digest()
    return (int(base_seed) ^ int.from_bytes(digest[:8], "little")) & SEED_MASK


def cells(cfg):
    return [(algo, T, rep) for algo in cfg.algos for T in cfg.budgets for rep in range(cfg.reps)]


_WORKER = {}


def _init_worker(env, pi_star):
    _WORKER["env"] = env
    _WORKER["pi_star"] = pi_star


def _run_cell(env_id, algo, T, rep, seed):
    env, pi_star = _WORKER["env"], _WORKER["pi_star"]
    t0 = time.perf_counter()
    try:
        res = run_agent(env, algo, T, seed=seed)
        pi_hat = np.asarray(res.pi_hat)
        correct = bool(np.array_equal(pi_hat, pi_star))
        value = float(state_averaged_value(env, pi_hat))
        err = ""
    except (LdxError, ArithmeticError, ValueError, RuntimeError) as exc:
        correct, value, err = False, float("nan"), f"{type(exc).__name__}: {exc}"
    return ResultRow(env_id, algo, int(T), int(rep), int(seed), correct, value,
                     time.perf_counter() - t0, err)


def run_benchmark(cfg, jobs=None):
    """Execute every cell; failures become error rows. Row order follows ``cells(cfg)``."""
    env = cfg.build_env()
    pi_star = value_iteration(env).pi_star
    jobs = cfg.jobs if jobs is None else int(jobs)
    args = [(cfg.env_id, a, T, r, cell_seed(cfg.base_seed, cfg.env_id, a, T, r)) for a, T, r in cells(cfg)]
    if jobs <= 1:
        _init_worker(env, pi_star)
        return [_run_cell(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(env, pi_star)) as pool:
        futures = [pool.submit(_run_cell, *a) for a in args]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class SummaryRow:
    env: str
    algo: str
    budget: int
    n: int
    correct: int
    errors: int
    pcs: float
    pcs_ci: float
    value_mean: float
    value_ci: float
    degenerate: bool

    @property
    def pcs_text(self):
        return format_interval(self.pcs, self.pcs_ci)

    @property
    def value_text(self):
        return format_interval(self.value_mean, self.value_ci, 3, 3)


def aggregate(rows):
    """Per (env, algo, budget): PCS with the Wald 90% CI and mean value with a normal 90% CI.

    Error rows count as incorrect and are excluded from the value mean. A
    single replication gives half-widths 0 and is flagged ``degenerate``.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.env, row.algo, row.budget), []).append(row)
    out = []
    for (env, algo, T), grp in groups.items():
        n = len(grp)
        k = sum(r.correct for r in grp)
        est = PfsEstimate(T, n, n - k)
        vals = np.array([r.value for r in grp if not r.error and np.isfinite(r.value)])
        if vals.size:
            mean = float(vals.mean())
            half = Z90 * float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else 0.0
        else:
            mean, half = float("nan"), float("nan")
        out.append(SummaryRow(env, algo, int(T), n, int(k), sum(bool(r.error) for r in grp),
                              est.pcs, est.ci_half, mean, half, n == 1))
    return out


# --------------------------------------------------------------------------
# output


def _g17(x):
    return format(float(x), ".17g")


def emit_results(rows, summary, path, cfg=None):
    """Write rows.csv, summary.csv and manifest.json under ``path``; returns the three paths."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows_path = out / "rows.csv"
        with open(rows_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ROW_HEADER)
            for r in rows:
                w.writerow([r.env, r.algo, r.budget, r.rep, r.seed, int(r.correct), _g17(r.value),
                            _g17(r.wall_time)])
        summary_path = out / "summary.csv"
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for s in summary:
                w.writerow([s.env, s.algo, s.budget, s.n, s.correct, s.errors, f"{s.pcs:.2f}",
                            f"{s.pcs_ci:.3f}", s.pcs_text, _g17(s.value_mean), _g17(s.value_ci),
                            s.value_text, int(s.degenerate)])
        manifest = {
            "config": cfg.to_dict() if cfg is not None else None,
            "versions": {"ldx": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "backend": backend()},
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "rows": len(rows),
            "errors": [{"algo": r.algo, "budget": r.budget, "rep": r.rep, "error": r.error}
                       for r in rows if r.error],
        }
        manifest_path = out / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results under {str(out)!r}: {exc}") from exc
    return rows_path, summary_path, manifest_path


def load_rows(path):
    """Parse rows.csv back into ResultRow objects."""
    p = Path(path)
    if p.is_dir():
        p = p / "rows.csv"
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_HEADER:
            raise ValueError(f"{str(p)!r} does not have the rows.csv header")
        return [ResultRow(d["env"], d["algo"], int(d["budget"]), int(d["rep"]), int(d["seed"]),
                          d["correct"] == "1", float(d["value"]), float(d["wall_time"]))
                for d in reader]


def summary_table(summary):
    """Plain-text table in the ``0.92 ± 0.063`` style."""
    lines = [f"{'algo':<14}{'T':>7}  {'PCS':<14}{'value':<18}"]
    for s in summary:
        flag = " (degenerate)" if s.degenerate else ""
        lines.append(f"{s.algo:<14}{s.budget:>7}  {s.pcs_text:<14}{s.value_text:<18}{flag}")
    return "\n".join(lines)
