"""Command-line entry point: ``adaeq {bounds,toy,train,sweep,aggregate}``.

Exit codes: 0 on success, 2 for invalid arguments or config, 3 when a run
fails at runtime.
"""

from __future__ import annotations

import argparse
import csv
import glob
import itertools
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bounds import (TwoDistSpec, UniformErrorSpec, bounds_at, critical_points,
                     parse_m_range, UPPER_FORMS, THM1_LOWER_FORMS)
from .controller import AdaptationConfig
from .diagnostics import RunRecord, aggregate_runs, write_manifest
from .ensemble import SizePolicy, TrainConfig, run_training
from .mdp import make_chain_mdp, make_noisy_gridworld, make_random_mdp
from .oracle import mc_bias_oracle
from .svg import line_plot
from .toy import ToyConfig, bias_sweep, estimation_bias, iterated_error_drift

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def derive_seed(master: int, index: int, label: str) -> int:
    """Seed for run ``index`` of stream ``label``, independent of worker layout."""
    ss = np.random.SeedSequence([int(master), int(index), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list:
    try:
        return parse_m_range(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a..b' or comma-separated integers, got {text!r}")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

def cmd_bounds(args) -> int:
    if args.thm == 1:
        for flag in ("tau1", "tau2", "K"):
            if getattr(args, flag) is None:
                raise UsageError(f"--{flag} is required with --thm 1")
        try:
            spec = TwoDistSpec(args.tau1, args.tau2, args.K, max(args.K, min(args.M)), args.A, args.gamma)
        except ValueError as e:
            raise UsageError(f"--tau1/--tau2/--K/--A: {e}")
    else:
        if not args.taus:
            raise UsageError("--taus is required with --thm 2")
        try:
            spec = UniformErrorSpec(tuple(args.taus), args.A, args.gamma)
        except ValueError as e:
            raise UsageError(f"--taus/--A: {e}")

    rows = []
    for k, M in enumerate(args.M):
        b = bounds_at(spec, M, lower_form=args.lower_form, upper_form=args.form)
        mc_mean = mc_se = ""
        if args.mc_samples > 0 and (args.thm == 2 or M >= spec.K):
            res = mc_bias_oracle(spec, M, args.mc_samples, derive_seed(args.seed, k, "bounds"),
                                 workers=args.workers)
            mc_mean, mc_se = res.mean, res.std_error
        rows.append([M, "" if b.lower is None else b.lower, "" if b.upper is None else b.upper,
                     mc_mean, mc_se])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "bounds.csv", ["M", "lower", "upper", "mc_mean", "mc_stderr"], rows)
    cp = critical_points(spec, args.M, lower_form=args.lower_form, upper_form=args.form)
    fmt = lambda v: "none" if v is None else str(v)
    print(f"M_l={fmt(cp.m_lower)} M_u={fmt(cp.m_upper)} "
          f"(m_lower={fmt(cp.m_lower)}, m_upper={fmt(cp.m_upper)}; upper form {args.form})")
    return EXIT_OK


# --------------------------------------------------------------------------
# toy
# --------------------------------------------------------------------------

def cmd_toy(args) -> int:
    try:
        base = ToyConfig(tau=args.tau, n_actions=args.n_actions, seed=args.seed,
                         n_approximators=args.N)
    except ValueError as e:
        raise UsageError(f"--tau/--n-actions/--N: {e}")
    if any(not 1 <= M <= base.n_approximators for M in args.M):
        raise UsageError(f"--M values must lie in [1, {base.n_approximators}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.drift:
        drift = iterated_error_drift(base, n_iterations=args.iterations, fresh_noise=not args.no_fresh_noise)
        taus = (0.3, 0.5, 0.7)
        _write_rows(out / "toy_drift.csv", ["iteration", "tau0", "mean_error", "std_error"],
                    [[it, taus[j], drift[it, j, 0], drift[it, j, 1]]
                     for it in range(drift.shape[0]) for j in range(drift.shape[1])])
        return EXIT_OK

    if args.curve:
        grid = base.state_grid
        curves = {M: estimation_bias(base, M, args.trials) for M in args.M}
        _write_rows(out / "toy_curve.csv", ["state"] + [f"mean_error_M{M}" for M in args.M],
                    [[s] + [curves[M].curve[i] for M in args.M] for i, s in enumerate(grid)])
        for M, est in curves.items():
            print(f"M={M} bias={est.bias:.6g} stderr={est.std_error:.3g}")
        if args.svg:
            svg = line_plot({f"M={M}": (grid, curves[M].curve) for M in args.M},
                            title=f"tau={base.tau}", xlabel="state", ylabel="mean target error")
            (out / "toy_curve.svg").write_text(svg, encoding="utf-8")
        return EXIT_OK

    if args.sweep == "actions":
        sw = bias_sweep(base, args.M, n_actions=args.actions, n_trials=args.trials, adaptive=args.adaptive)
        axis = "n_actions"
    else:
        taus = args.taus if args.sweep == "tau" else [base.tau]
        sw = bias_sweep(base, args.M, taus=taus, n_trials=args.trials, adaptive=args.adaptive)
        axis = "tau"
    _write_rows(out / "toy_sweep.csv", [axis, "M", "label", "bias", "stderr"],
                [[r["value"], r["M"], r["label"], r["bias"], r["stderr"]] for r in sw.rows])
    if args.svg:
        labels = list(dict.fromkeys(r["label"] for r in sw.rows))
        series = {}
        for lab in labels:
            rows = sw.matrix(lab)
            series[lab if lab == "adaptive" else f"M={lab}"] = (
                [r["value"] for r in rows], [r["bias"] for r in rows])
        (out / "toy_sweep.svg").write_text(
            line_plot(series, xlabel=axis, ylabel="estimation bias"), encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# train / sweep
# --------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "env": "grid4", "width": 4, "height": 4, "noise": 1.0, "gamma": 0.95,
    "n_states": 10, "n_actions": 5, "branching": 2, "chain_length": 200,
    "policy": "adaeq", "M": 2, "c": 0.3, "N": 10, "M0": 4, "alpha": 0.1,
    "batch_size": 32, "buffer_capacity": 100_000, "warmup": 1000,
    "eps_start": 1.0, "eps_end": 0.05, "eps_decay_fraction": 0.5,
    "init": "zeros", "init_tau": 1.0, "max_episode_steps": 100,
    "steps": 50_000, "eval_every": 1000, "adapt_every": 1000, "H": 200,
    "eval_trajectories": 1, "adapt_trajectories": 1, "return_cap": 100,
    "shared_batch": False, "update_one_random": False,
    "seeds": 3, "master_seed": 0, "workers": 1,
}
SWEEP_LIST_KEYS = ("M0", "c", "policy", "N", "noise")


def _resolve_config(args, list_keys=()) -> dict:
    cfg = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise UsageError(f"--config: cannot read {args.config}: {e}")
        if not isinstance(loaded, dict):
            raise UsageError("--config: expected a key-value mapping")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in TRAIN_DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key in list_keys:
        v = cfg[key]
        cfg[key] = list(v) if isinstance(v, (list, tuple)) else [v]
    return cfg


def build_env(cfg: dict):
    env = cfg["env"]
    if env.startswith("grid"):
        if env != "grid":
            try:
                size = int(env[4:])
            except ValueError:
                raise UsageError(f"--env: unknown environment {env!r}")
            cfg["width"] = cfg["height"] = size
        return make_noisy_gridworld(cfg["width"], cfg["height"], cfg["noise"], cfg["gamma"], cfg["master_seed"])
    if env == "random":
        return make_random_mdp(cfg["n_states"], cfg["n_actions"], cfg["branching"], cfg["noise"],
                               cfg["gamma"], cfg["master_seed"])
    if env == "chain":
        return make_chain_mdp(cfg["chain_length"], gamma=cfg["gamma"], reward_noise_tau=cfg["noise"])
    raise UsageError(f"--env: unknown environment {env!r}")


def build_policy(cfg: dict) -> SizePolicy:
    kind = cfg["policy"]
    if kind == "fixed":
        return SizePolicy.fixed(cfg["M"])
    if kind == "maxmin":
        return SizePolicy.maxmin()
    if kind == "average":
        return SizePolicy.average()
    if kind == "adaeq":
        return SizePolicy.adaeq(AdaptationConfig(c=cfg["c"], n_max=cfg["N"],
                                                 adaptation_every=cfg["adapt_every"], H=cfg["H"],
                                                 n_trajectories=cfg["adapt_trajectories"],
                                                 rng_seed=cfg["master_seed"]))
    raise UsageError(f"--policy: unknown policy {kind!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(N=cfg["N"], M0=cfg["M0"], alpha=cfg["alpha"], batch_size=cfg["batch_size"],
                       buffer_capacity=cfg["buffer_capacity"], warmup_steps=cfg["warmup"],
                       eps_start=cfg["eps_start"], eps_end=cfg["eps_end"],
                       eps_decay_fraction=cfg["eps_decay_fraction"], init_scheme=cfg["init"],
                       init_tau=cfg["init_tau"], max_episode_steps=cfg["max_episode_steps"],
                       eval_H=cfg["H"], eval_trajectories=cfg["eval_trajectories"],
                       return_cap=cfg["return_cap"], shared_batch=cfg["shared_batch"],
                       update_one_random=cfg["update_one_random"])


def _validated(cfg: dict):
    try:
        mdp = build_env(cfg)
        policy = build_policy(cfg)
        tcfg = build_train_config(cfg)
        policy.initial_size(tcfg.N, tcfg.M0)
        if policy.kind == "adaeq" and not 2 <= tcfg.M0 <= tcfg.N:
            raise ValueError(f"M0 must lie in [2, {tcfg.N}]")
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid configuration: {e}")
    if cfg["seeds"] < 1:
        raise UsageError("--seeds must be >= 1")
    if cfg["steps"] < 1 or cfg["eval_every"] < 1:
        raise UsageError("--steps and --eval-every must be >= 1")
    return mdp, policy, tcfg


def _run_one(job):
    cfg, index = job
    mdp, policy, tcfg = _validated(cfg)
    seed = derive_seed(cfg["master_seed"], index, "train")
    return run_training(mdp, policy, cfg["steps"], cfg["eval_every"], tcfg, seed).record


def _run_cell(cfg: dict, out: Path, label: str) -> list:
    """Run every seed of one configuration; writes records, aggregate and manifest."""
    _validated(cfg)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, k) for k in range(cfg["seeds"])]
    try:
        if cfg["workers"] > 1:
            with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
                records = list(pool.map(_run_one, jobs))
        else:
            records = [_run_one(j) for j in jobs]
    except Exception:
        (out / "FAILED").write_text("run aborted; files in this directory are incomplete\n", encoding="utf-8")
        raise
    for k, rec in enumerate(records):
        rec.to_csv(out / f"run_{label}_seed{k}.csv")
        if rec.adaptations:
            rec.adaptations_to_csv(out / f"adapt_{label}_seed{k}.csv")
    aggregate_runs(records).to_csv(out / f"aggregate_{label}.csv")
    write_manifest(out / f"manifest_{label}.json", {
        "version": __version__, "config": cfg, "label": label,
        "seeds": [derive_seed(cfg["master_seed"], k, "train") for k in range(cfg["seeds"])],
        "command": sys.argv,
    })
    return records


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _validated(cfg)
    label = build_policy(cfg).label()
    records = _run_cell(cfg, Path(args.out), label)
    bias = [r.tail_mean("bias") for r in records]
    print(f"{label}: {len(records)} runs, tail bias mean={np.mean(bias):.4g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args, SWEEP_LIST_KEYS)
    out = Path(args.out)
    grid = list(itertools.product(*(cfg[k] for k in SWEEP_LIST_KEYS)))
    summary = []
    for values in grid:
        cell = dict(cfg, **dict(zip(SWEEP_LIST_KEYS, values)))
        label = "_".join(f"{k}{v}" for k, v in zip(SWEEP_LIST_KEYS, values))
        records = _run_cell(cell, out / label, label)
        bias = np.array([r.tail_mean("bias") for r in records])
        ret = np.array([r.tail_mean("return") for r in records])
        sd = lambda x: float(x.std(ddof=1)) if x.size > 1 else 0.0
        summary.append(list(values) + [bias.mean(), sd(bias), ret.mean(), sd(ret), len(records)])
    _write_rows(out / "sweep.csv", list(SWEEP_LIST_KEYS) +
                ["tail_bias_mean", "tail_bias_std", "tail_return_mean", "tail_return_std", "n_seeds"], summary)
    print(f"{len(grid)} cells written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    paths = sorted(p for pattern in args.inputs for p in glob.glob(pattern))
    if not paths:
        raise UsageError("--inputs matched no files")
    try:
        agg = aggregate_runs([RunRecord.from_csv(p) for p in paths])
    except (KeyError, ValueError) as e:
        raise UsageError(f"--inputs: {e}")
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    agg.to_csv(args.output)
    print(f"aggregated {agg.n_runs} records into {args.output}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    p.add_argument("--config", help="YAML file of configuration keys; flags override it")
    p.add_argument("--env", help="grid4 (default), gridN, random or chain")
    p.add_argument("--noise", type=_floats if sweep else float, help="reward noise half-width")
    p.add_argument("--gamma", type=float)
    p.add_argument("--policy", type=(lambda s: s.split(",")) if sweep else str,
                   help="fixed, maxmin, adaeq or average")
    p.add_argument("--M", type=int, help="ensemble size for --policy fixed")
    p.add_argument("--c", type=_floats if sweep else float, help="tolerance for adaeq")
    p.add_argument("--N", type=(lambda s: [int(x) for x in s.split(",")]) if sweep else int)
    p.add_argument("--M0", type=(lambda s: [int(x) for x in s.split(",")]) if sweep else int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--init", choices=("zeros", "uniform"))
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--adapt-every", dest="adapt_every", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--eval-trajectories", dest="eval_trajectories", type=int)
    p.add_argument("--shared-batch", dest="shared_batch", action="store_const", const=True)
    p.add_argument("--update-one-random", dest="update_one_random", action="store_const", const=True)
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaeq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="bias bounds, critical points and MC oracle per ensemble size")
    b.add_argument("--thm", type=int, choices=(1, 2), required=True)
    b.add_argument("--tau1", type=float)
    b.add_argument("--tau2", type=float)
    b.add_argument("--K", type=int)
    b.add_argument("--taus", type=_floats, help="comma-separated half-widths (last one repeats)")
    b.add_argument("--A", type=int, required=True, help="number of actions")
    b.add_argument("--M", type=_ints, required=True, help="ensemble sizes, e.g. 2..12")
    b.add_argument("--gamma", type=float, default=1.0)
    b.add_argument("--form", choices=UPPER_FORMS, default="figure", help="upper bound form")
    b.add_argument("--lower-form", dest="lower_form", choices=THM1_LOWER_FORMS, default="appendix")
    b.add_argument("--mc-samples", dest="mc_samples", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default=".")
    b.set_defaults(func=cmd_bounds)

    t = sub.add_parser("toy", help="polynomial-fit bias experiment")
    t.add_argument("--M", type=_ints, default=[2])
    t.add_argument("--tau", type=float, default=1.0)
    t.add_argument("--N", type=int, default=5)
    t.add_argument("--n-actions", dest="n_actions", type=int, default=2)
    t.add_argument("--sweep", choices=("tau", "actions"))
    t.add_argument("--taus", type=_floats, default=[0.5, 1.0, 1.5, 2.0])
    t.add_argument("--actions", type=_ints, default=[2, 4, 8])
    t.add_argument("--adaptive", action="store_true", help="add the adaptive-size row")
    t.add_argument("--curve", action="store_true", help="emit per-state error curves")
    t.add_argument("--drift", action="store_true", help="iterated refitting mode")
    t.add_argument("--iterations", type=int, default=20)
    t.add_argument("--no-fresh-noise", dest="no_fresh_noise", action="store_true")
    t.add_argument("--trials", type=int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--svg", action="store_true")
    t.add_argument("--out", default=".")
    t.set_defaults(func=cmd_toy)

    tr = sub.add_parser("train", help="train one configuration over several seeds")
    _add_train_flags(tr, sweep=False)
    tr.set_defaults(func=cmd_train)

    sw = sub.add_parser("sweep", help="train a grid of configurations (list-valued --M0, --c, ...)")
    _add_train_flags(sw, sweep=True)
    sw.set_defaults(func=cmd_sweep)

    ag = sub.add_parser("aggregate", help="mean/std across run-record CSVs")
    ag.add_argument("--inputs", nargs="+", required=True, help="CSV paths or glob patterns")
    ag.add_argument("--output", default="aggregate.csv")
    ag.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        parser.error("argument --trials: must be >= 1")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - top-level failure report
        print(f"{parser.prog}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
