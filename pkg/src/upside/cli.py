"""Command-line runner: pretrain, eval, render, theory, goals.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
``UPSIDE_OUT`` overrides ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path


from . import env as maze
from . import evaluate, plotting, theory
from .algo import ConfigError, run
from .config import ExperimentConfig, parse_seeds
from .model import TrainedModel, load_model, save_model
from .records import RunRecord, config_hash, write_csv

log = logging.getLogger("upside")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

COVERAGE_FIELDS = ("method", "seed", "policies", "buckets", "buckets_with_diffusing",
                   "room_buckets", "room_buckets_with_diffusing")
GOAL_FIELDS = ("method", "seed", "goal_x", "goal_y", "bucket", "value", "tau", "policy",
               "final_value", "selection_score", "zero_exploration", "env_steps")
MI_FIELDS = ("method", "seed", "policies", "mi_lower_bound", "base", "worst_policy", "clamped")
ROLLOUT_FIELDS = ("node", "depth", "length", "episodes")


class UsageError(Exception):
    pass


def experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "maze", None):
        cfg.maze = args.maze
    if getattr(args, "variant", None):
        cfg.algo["variant"] = args.variant
    if getattr(args, "budget", None) is not None:
        cfg.algo["t_max"] = args.budget
    if getattr(args, "seed", None):
        cfg.seeds = parse_seeds(args.seed)
    if getattr(args, "out", None):
        cfg.out = args.out
    if os.environ.get("UPSIDE_OUT"):
        cfg.out = os.environ["UPSIDE_OUT"]
    cfg.validate()
    return cfg


def run_dir(out, variant: str, seed: int) -> Path:
    return Path(out) / variant / f"seed{seed}"


def summary_line(name: str, values) -> str:
    m, se = evaluate.mean_stderr(values)
    return f"{name}: {m:.2f} (± {se:.2f}) over {len(list(values))}"


# -- subcommands -------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    exp = experiment(args)
    spec, cfg = exp.spec(), exp.upside_config()
    chash = config_hash({"maze": spec.to_dict(), "algo": cfg})
    models = []
    for seed in exp.seeds:
        d = run_dir(exp.out, cfg.variant, seed)
        model_path = d / "model.npz"
        if model_path.exists() and not args.fresh:
            log.info("seed %d already trained at %s; skipping (use --fresh to retrain)", seed, model_path)
            models.append(load_model(model_path))
            continue
        d.mkdir(parents=True, exist_ok=True)
        rec = RunRecord(chash, seed, stream_path=d / "events.partial.csv")

        def cov(learner):
            return evaluate.coverage(TrainedModel.from_learner(learner), exp.eval["buckets"]).with_diffusing

        learner = run(spec, cfg, seed, rec, coverage_fn=cov)
        rec.close()
        rec.write_events(d / "events.csv")
        (d / "events.partial.csv").unlink()
        write_csv(d / "rollouts.csv", ROLLOUT_FIELDS,
                  [dict(zip(ROLLOUT_FIELDS, r)) for r in rec.rollouts], chash)
        model = TrainedModel.from_learner(learner)
        model.metrics.update(env_steps=rec.env_steps, wall_clock=round(rec.wall_clock, 3))
        save_model(model, model_path)
        plotting.plot_run_curve(rec.events, d / "curve.svg", f"{cfg.variant}, seed {seed}")
        print(f"{cfg.variant} seed={seed} policies={len(model.policies())} "
              f"env_steps={rec.env_steps} wall={rec.wall_clock:.1f}s -> {model_path}")
        models.append(model)
    best = select_model_from(models)
    sel = Path(exp.out) / cfg.variant / "selected.txt"
    sel.write_text(f"seed={best.seed}\nconfig_hash={chash}\n")
    print(f"selected seed {best.seed}")
    return EXIT_OK


def select_model_from(models):
    """Same selection rules as :func:`algo.select_model`, on loaded models."""
    if not models[0].plan.adaptive:
        return max(models, key=lambda m: m.metrics.get("intrinsic_return", 0.0))
    return max(models, key=lambda m: len(m.tree.consolidated_ids()))


def find_models(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.rglob("model.npz"))
        elif p.exists():
            found.append(p)
        else:
            raise UsageError(f"model {p} not found")
    if not found:
        raise UsageError("no model files found")
    return found


def cmd_eval(args) -> int:
    exp = experiment(args)
    paths = find_models(args.model)
    out = Path(exp.out)
    modes = ("coverage", "mi", "downstream") if args.mode == "all" else (args.mode,)
    ev = exp.eval
    cov_rows, mi_rows, goal_rows = [], [], []
    chash = config_hash({"eval": ev, "models": [str(p) for p in paths]})
    for path in paths:
        model = load_model(path)
        method = model.cfg.variant
        tag = f"{method}_seed{model.seed}"
        if "coverage" in modes:
            c = evaluate.coverage(model, ev["buckets"], seed=model.seed)
            cov_rows.append({"method": method, "seed": model.seed, "policies": len(model.policies()),
                             "buckets": c.deterministic, "buckets_with_diffusing": c.with_diffusing,
                             "room_buckets": c.room_deterministic,
                             "room_buckets_with_diffusing": c.room_with_diffusing})
            plotting.plot_coverage(model.spec, c.grid_diffusing, out / f"coverage_{tag}.svg",
                                   f"{method} seed {model.seed}: {c.with_diffusing} buckets")
        if "mi" in modes:
            b = evaluate.model_mi_lower_bound(model)
            mi_rows.append({"method": method, "seed": model.seed, "policies": b.n_policies,
                            "mi_lower_bound": b.value, "base": b.base, "worst_policy": b.worst_policy,
                            "clamped": b.clamped})
        if "downstream" in modes:
            tasks = maze.sample_goals(model.spec, ev["goal_buckets"], ev["goals_per_bucket"], ev["goal_seed"])
            if ev["reach_depth"]:
                tasks = evaluate.within_reach(model.spec, tasks, ev["reach_depth"], model.cfg.T)
            results = evaluate.evaluate_goals(model, tasks, budget=ev["finetune_budget"], seed=model.seed,
                                              episodes=ev["explore_episodes"])
            for r in results:
                goal_rows.append({"method": method, "seed": model.seed, "goal_x": r.goal[0],
                                  "goal_y": r.goal[1], "bucket": r.bucket, "value": r.value, "tau": r.tau,
                                  "policy": r.policy, "final_value": r.final_value,
                                  "selection_score": r.selection_score,
                                  "zero_exploration": r.zero_exploration, "env_steps": r.env_steps})
            plotting.plot_goals(model.spec, results, out / f"goals_{tag}.svg", f"{method} seed {model.seed}")
    lines = []
    if cov_rows:
        write_csv(out / "coverage.csv", COVERAGE_FIELDS, cov_rows, chash)
        lines.append(summary_line("buckets", [r["buckets"] for r in cov_rows]))
        lines.append(summary_line("buckets_with_diffusing", [r["buckets_with_diffusing"] for r in cov_rows]))
    if mi_rows:
        write_csv(out / "mi.csv", MI_FIELDS, mi_rows, chash)
        lines.append(summary_line("mi_lower_bound_nats", [r["mi_lower_bound"] for r in mi_rows]))
    if goal_rows:
        write_csv(out / "goals.csv", GOAL_FIELDS, goal_rows, chash)
        lines.append(summary_line("goal_value", [r["value"] for r in goal_rows]))
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_render(args) -> int:
    exp = experiment(args)
    out = Path(exp.out)
    for path in find_models(args.model):
        model = load_model(path)
        tag = f"{model.cfg.variant}_seed{model.seed}"
        a = plotting.plot_policies(model, out / f"policies_{tag}.svg", seed=model.seed)
        b = plotting.plot_tree(model, out / f"tree_{tag}.svg")
        print(a)
        print(b)
    return EXIT_OK


def cmd_theory(args) -> int:
    out = Path(os.environ.get("UPSIDE_OUT") or args.out or "runs")
    rows = theory.removal_sweep(args.n_max, args.m_max)
    fields = ("N", "M", "mi", "mi_fewer", "eta", "delta", "bound", "bound_holds", "holds")
    write_csv(out / "theory.csv", fields, rows, config_hash({"n_max": args.n_max, "m_max": args.m_max}))
    v3, p3 = theory.brute_force_uniform_mi(3, 2)
    v2, _ = theory.brute_force_uniform_mi(2, 2)
    eta3 = theory.min_discriminability(p3)
    print("uniform-prior MI optimum, bits")
    print(f"  N=3, M=2: {v3:.3f}  (min discriminability {eta3:.2f})")
    print(f"  N=2, M=2: {v2:.3f}")
    print(f"  removing one skill: {v3:.3f} -> {v2:.3f} ({v2 - v3:+.3f})")
    print()
    print(f"{'N':>3} {'M':>3} {'I*(N)':>8} {'I*(N-1)':>8} {'eta*':>6} {'Delta':>8} {'bound':>8}")
    for r in rows:
        print(f"{r['N']:>3} {r['M']:>3} {r['mi']:>8.4f} {r['mi_fewer']:>8.4f} {r['eta']:>6.3f} "
              f"{r['delta']:>8.4f} {r['bound']:>8.4f}")
    print()
    print(f"{'N':>3} {'Delta(N, 1)':>12} {'Delta(N, 0.5)':>14} {'eta where Delta=0':>18}")
    for n in range(2, 6):
        print(f"{n:>3} {theory.delta_criterion(n, 1.0):>12.4f} {theory.delta_criterion(n, 0.5):>14.4f} "
              f"{theory.delta_threshold(n):>18.4f}")
    bad = [r for r in rows if not (r["holds"] and r["bound_holds"])]
    print(f"\ncounterexamples: {len(bad)}")
    return EXIT_OK if not bad else EXIT_RUNTIME


def cmd_goals(args) -> int:
    exp = experiment(args)
    spec = exp.spec()
    ev = exp.eval
    out = Path(exp.out)
    tasks = maze.sample_goals(spec, ev["goal_buckets"], ev["goals_per_bucket"], ev["goal_seed"])
    dist = maze.geodesic_distance(spec, [t.goal for t in tasks])
    rows = [{"goal_x": t.goal[0], "goal_y": t.goal[1], "bucket": t.bucket, "geodesic": float(d)}
            for t, d in zip(tasks, dist)]
    write_csv(out / f"goals_{spec.name}.csv", ("goal_x", "goal_y", "bucket", "geodesic"), rows,
              config_hash({"maze": spec.to_dict(), "eval": ev}))
    plotting.plot_goal_tasks(spec, tasks, out / f"goals_{spec.name}.svg")
    print(f"{len(tasks)} goals in {ev['goal_buckets']} regions -> {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="upside", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", help="key=value experiment file")
        sp.add_argument("--seed", help="seed or comma-separated seeds")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--variant", help="upside, flat_upside, diayn_n, diayn_curr, diayn_hier")
        sp.add_argument("--budget", type=int, help="unsupervised interaction budget (T_max)")
        sp.add_argument("--maze", help="bottleneck, umaze, wallfree or a JSON maze file")
        if model:
            sp.add_argument("model", nargs="+", help="model.npz files or directories holding them")

    sp = sub.add_parser("pretrain", help="unsupervised phase, one run per seed")
    common(sp)
    sp.add_argument("--fresh", action="store_true", help="retrain seeds that already have a model")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("eval", help="coverage, MI bound or downstream goals on saved models")
    common(sp, model=True)
    sp.add_argument("--mode", choices=("coverage", "downstream", "mi", "all"), default="coverage")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render", help="SVG of policies and tree for saved models")
    common(sp, model=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("theory", help="uniform-prior MI toy model and the removal criterion")
    sp.add_argument("--out")
    sp.add_argument("--n-max", type=int, default=5)
    sp.add_argument("--m-max", type=int, default=4)
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("goals", help="sample the downstream goal set of a maze")
    common(sp)
    sp.set_defaults(func=cmd_goals)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted; completed seeds are kept and skipped on rerun", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
