"""Command-line entry point ``ldx``.

Subcommands emit JSON documents on stdout (or ``--out``). ``LDX_SEED``
overrides the base seed of ``bench`` and the default ``--seed`` elsewhere.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .allocation import solve_allocation
from .envs import EnvSpec
from .errors import LdxError
from .lazygradient import ALGOS, MODES, run_agent
from .mdp import gap_stats, value_iteration
from .rate import estimate_pfs, fit_decay_rate, generative_pfs
from .specfile import dumps, is_linear_spec, linear_from_dict, mdp_from_dict

BUILTIN_ENVS = ("gridworld", "launch", "hard_instance")


def _env_seed(default=0):
    raw = os.environ.get("LDX_SEED")
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise LdxError(f"LDX_SEED must be an integer, got {raw!r}") from None


def _emit(doc, out=None):
    text = json.dumps(doc, indent=1, default=_jsonable) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _load_env(ref, seed=0):
    """A builtin name (built with ``seed``) or a path to a tabular spec file."""
    if ref in BUILTIN_ENVS:
        return EnvSpec(ref, seed=seed).build()
    return EnvSpec("file", path=ref).build()


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_env(args):
    seed = _env_seed(0) if args.seed is None else args.seed
    spec = EnvSpec(args.kind, seed=seed, num_states=args.states, K=args.k, L=args.l,
                   alpha=args.alpha, gamma=args.gamma)
    _emit_text(dumps(spec.build()) + "\n", args.out)
    return 0


def _emit_text(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args):
    data = json.loads(Path(args.spec).read_text())
    t0 = time.perf_counter()
    if is_linear_spec(data):
        from .linear import linear_surrogate_objective, solve_linear_allocation

        lin = linear_from_dict(data)
        omega = solve_linear_allocation(lin, args.variant, args.epsilon, args.iters)
        doc = {"kind": "linear", "variant": args.variant, "allocation": omega,
               "objective": linear_surrogate_objective(lin, omega, args.variant)}
    else:
        mdp = mdp_from_dict(data)
        omega, F = solve_allocation(mdp, args.epsilon, args.iters)
        doc = {"kind": "tabular", "allocation": omega, "objective": F,
               "pi_star": gap_stats(mdp).pi_star}
    doc.update(iters=args.iters, epsilon=args.epsilon, seed=args.seed,
               wall_time=time.perf_counter() - t0)
    _emit(doc, args.out)
    return 0


def _schedule_options(args):
    opts = {}
    for key in ("c_tilde", "alpha", "n0", "t1", "epsilon"):
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    if args.init_policy is not None:
        opts["init_policy"] = args.init_policy
    return opts


def cmd_run(args):
    seed = _env_seed(0) if args.seed is None else args.seed
    env = _load_env(args.env, args.env_seed)
    opts = _schedule_options(args) if args.algo == "lazygradient" else {}
    t0 = time.perf_counter()
    res = run_agent(env, args.algo, args.budget, seed=seed, mode=args.mode, **opts)
    pi_star = value_iteration(env).pi_star
    doc = {
        "env": args.env, "algo": args.algo, "budget": res.budget, "seed": seed, "mode": args.mode,
        "pi_hat": res.pi_hat, "correct": bool(np.array_equal(res.pi_hat, pi_star)),
        "visit_counts": res.visit_counts, "objective_trace": list(res.objective_trace),
        "update_times": [int(t) for t, _ in res.behavior_snapshots],
        "final_allocation": res.allocation_trace[-1] if res.allocation_trace else None,
        "wall_time": time.perf_counter() - t0,
    }
    _emit(doc, args.out)
    return 0


def _parse_budgets(text):
    try:
        return [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise LdxError(f"--budgets must be comma-separated integers, got {text!r}") from None


def cmd_rate(args):
    seed = _env_seed(0) if args.seed is None else args.seed
    env = _load_env(args.env, args.env_seed)
    budgets = _parse_budgets(args.budgets)
    if args.agent != "fixed" and args.agent not in ALGOS:
        raise LdxError(f"unknown agent {args.agent!r}; expected one of {list(ALGOS)} or 'fixed'")
    points = []
    if args.agent == "fixed":
        omega = _fixed_allocation(env, args.allocation)
        for T in budgets:
            est = generative_pfs(env, omega, T, args.reps, seed=seed + T)
            points.append(est)
    else:
        for T in budgets:
            points.append(estimate_pfs(env, args.agent, T, args.reps, base_seed=seed))
    doc = {"env": args.env, "agent": args.agent, "reps": args.reps, "seed": seed,
           "points": [{"budget": p.budget, "failures": p.failures, "pfs": p.pfs,
                       "pcs": p.format_pcs()} for p in points]}
    try:
        fit = fit_decay_rate([(p.budget, p.pfs) for p in points], reps=args.reps)
        doc["fit"] = fit._asdict()
    except LdxError as exc:
        doc["fit"] = None
        doc["fit_error"] = str(exc)
    _emit(doc, args.out)
    return 0


def _fixed_allocation(env, path):
    if path:
        omega = np.array(json.loads(Path(path).read_text()), dtype=float)
        if omega.shape != env.shape:
            raise LdxError(f"allocation shape {omega.shape} does not match {env.shape}")
        return omega
    adm = env.admissible.astype(float)
    return adm / adm.sum()


def cmd_bench(args):
    from .bench import (aggregate, emit_results, load_config, run_benchmark, summary_table,
                        write_effective_config)

    cfg = load_config(args.config, echo=False)
    changes = {}
    if "LDX_SEED" in os.environ:
        changes["base_seed"] = _env_seed(cfg.base_seed)
    if args.out:
        changes["out"] = args.out
    if args.jobs:
        changes["jobs"] = args.jobs
    if changes:
        from dataclasses import replace

        cfg = replace(cfg, **changes)
    write_effective_config(cfg)
    rows = run_benchmark(cfg)
    summary = aggregate(rows)
    emit_results(rows, summary, cfg.out, cfg)
    sys.stdout.write(summary_table(summary) + "\n")
    n_err = sum(bool(r.error) for r in rows)
    if n_err:
        sys.stderr.write(f"{n_err} cell(s) failed; see {cfg.out}/manifest.json\n")
    return 0 if n_err == 0 else 1


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="ldx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-env", help="write a built-in environment as an MDP spec file")
    g.add_argument("--kind", choices=BUILTIN_ENVS, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--states", type=int, default=50, help="launch: number of contexts")
    g.add_argument("--k", type=int, default=1, help="hard_instance: K")
    g.add_argument("--l", type=int, default=2, help="hard_instance: L")
    g.add_argument("--alpha", type=float, default=0.02, help="hard_instance: alpha")
    g.add_argument("--gamma", type=float, default=0.9, help="hard_instance: discount")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_env)

    s = sub.add_parser("solve", help="minimise the surrogate for a known model")
    s.add_argument("spec", help="tabular or linear MDP spec file")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--iters", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0, help="recorded only; the solver is deterministic")
    s.add_argument("--variant", default="surrogate1", help="linear specs: theorem5 | surrogate1 | surrogate2")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", help="run one agent for one budget")
    r.add_argument("--env", required=True, help=f"builtin ({', '.join(BUILTIN_ENVS)}) or spec file")
    r.add_argument("--env-seed", type=int, default=0)
    r.add_argument("--algo", choices=ALGOS, default="lazygradient")
    r.add_argument("--budget", type=int, required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=MODES, default="trajectory")
    r.add_argument("--c-tilde", dest="c_tilde", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--n0", type=int)
    r.add_argument("--t1", type=int)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--init-policy", dest="init_policy", choices=("uniform", "max_coverage"))
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("rate", help="Monte Carlo PFS over budgets and a decay-slope fit")
    t.add_argument("--env", required=True)
    t.add_argument("--env-seed", type=int, default=0)
    t.add_argument("--agent", default="lazygradient", help=f"{', '.join(ALGOS)} or 'fixed'")
    t.add_argument("--allocation", help="fixed agent: JSON S x A allocation (default uniform)")
    t.add_argument("--budgets", required=True, help="comma-separated")
    t.add_argument("--reps", type=int, default=100)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_rate)

    b = sub.add_parser("bench", help="run a benchmark config")
    b.add_argument("--config", required=True)
    b.add_argument("--jobs", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LdxError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"ldx {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
