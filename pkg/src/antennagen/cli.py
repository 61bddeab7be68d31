"""Command-line entry point: dataset seeding, evolution runs, benchmarks.

Commands read a JSON config file (see README for the schema) and write
deterministic artifacts into the output directory.  Exit codes:
0 success, 2 config error, 3 evaluation budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, evolution, generative, nn, svc
from .geometry import ParameterRanges, build_layout, gallery_svg, sample_valid
from .simulator import (
    BROADBAND_GOAL, DUAL_RESONANCE_GOAL, DUAL_SUM_GOAL,
    BudgetExhausted, GoalSpec, make_evaluator,
)

CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3

GOAL_PROFILES = {
    "example1": DUAL_RESONANCE_GOAL,
    "example1_sum": DUAL_SUM_GOAL,
    "example2": BROADBAND_GOAL,
}

# example-2 style explicit per-band criterion schedule (dB); the first entry
# sits at the random-population median so the first training labels are
# roughly class-balanced
EXAMPLE2_THRESHOLDS = ((8.5, 8.5), (7, 7), (6, 6), (5, 5), (4, 4), (3, 3),
                       (2, 2), (1, 1))


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    if cfg.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError("unsupported config schema_version %r" % cfg.get("schema_version"))
    return cfg


def parse_goal(raw) -> GoalSpec:
    if isinstance(raw, str):
        if raw not in GOAL_PROFILES:
            raise ConfigError("unknown goal profile %r" % raw)
        return GOAL_PROFILES[raw]
    try:
        return GoalSpec(
            mode=raw["mode"],
            freqs=tuple(raw.get("freqs", ())),
            sum_threshold=raw.get("sum_threshold", -20.0),
            point_threshold=raw.get("point_threshold", -10.0),
            bands=tuple(tuple(b) for b in raw.get("bands", ())),
            level=raw.get("level", -10.0),
            required_valid_count=raw.get("required_valid_count", 1),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("bad goal spec: %s" % exc)


def parse_evolution_config(raw, master_seed, goal_profile=None) -> evolution.EvolutionConfig:
    kwargs = {}
    if goal_profile == "example2":
        kwargs["candidates_per_evolution"] = 50
        kwargs["max_evolutions"] = 8
        kwargs["threshold_schedule"] = EXAMPLE2_THRESHOLDS
    for key in ("initial_population", "candidates_per_evolution", "max_evolutions",
                "noise_dim", "gen_stop_threshold", "nonsaturating", "svc_C",
                "redraw_factor", "test_fraction"):
        if key in raw:
            kwargs[key] = raw[key]
    if "percentile_schedule" in raw:
        kwargs["percentile_schedule"] = tuple(raw["percentile_schedule"])
    if "threshold_schedule" in raw:
        kwargs["threshold_schedule"] = tuple(tuple(t) for t in raw["threshold_schedule"])
    if "disc_widths" in raw:
        kwargs["disc_widths"] = tuple(tuple(w) for w in raw["disc_widths"])
    if "disc_cfg" in raw:
        kwargs["disc_cfg"] = nn.TrainConfig(**raw["disc_cfg"])
    if "gen_cfg" in raw:
        kwargs["gen_cfg"] = nn.TrainConfig(**raw["gen_cfg"])
    kwargs["seed"] = master_seed
    try:
        return evolution.EvolutionConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad evolution config: %s" % exc)


def _setup(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.budget is not None:
        cfg["budget"] = args.budget
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.evaluator is not None:
        cfg["evaluator"] = args.evaluator
    cfg.setdefault("seed", 0)
    cfg.setdefault("evaluator", "surrogate")
    out_dir = cfg.get("out_dir", "out")
    os.makedirs(out_dir, exist_ok=True)
    goal_raw = cfg.get("goal", "example1")
    goal = parse_goal(goal_raw)
    profile = goal_raw if isinstance(goal_raw, str) else None
    evo_cfg = parse_evolution_config(cfg.get("evolution", {}), cfg["seed"], profile)
    try:
        evaluator = make_evaluator(cfg["evaluator"], budget=cfg.get("budget"))
    except ValueError as exc:
        raise ConfigError(str(exc))
    return cfg, goal, evo_cfg, evaluator, out_dir


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_seed(args) -> int:
    cfg, goal, evo_cfg, evaluator, out_dir = _setup(args)
    ranges = ParameterRanges.default()
    try:
        state = evolution.seed_population(evo_cfg, goal, ranges, evaluator)
    except BudgetExhausted:
        return EXIT_BUDGET
    _write(os.path.join(out_dir, "dataset.jsonl"), state.dataset_jsonl())
    _write(os.path.join(out_dir, "curves.csv"), state.curves_csv())
    layouts = [build_layout(p, evaluator.conn) for p in state.params]
    _write(os.path.join(out_dir, "gallery.svg"),
           "<!-- schema_version=%d -->\n" % CONFIG_SCHEMA_VERSION
           + gallery_svg(layouts))
    print("seeded %d designs into %s" % (state.size, out_dir))
    return EXIT_OK


def cmd_evolve(args) -> int:
    cfg, goal, evo_cfg, evaluator, out_dir = _setup(args)
    ranges = ParameterRanges.default()
    try:
        state = evolution.seed_population(evo_cfg, goal, ranges, evaluator)
    except BudgetExhausted:
        manifest = {
            "schema_version": evolution.SCHEMA_VERSION,
            "config": evo_cfg.to_dict(),
            "goal": goal.to_dict(),
            "criterion_history": [],
            "stats": [],
            "evolutions_done": 0,
            "budget_used": evaluator.ledger.count,
            "budget_exhausted": True,
            "goal_met": False,
        }
        _write(os.path.join(out_dir, "manifest.json"),
               json.dumps(manifest, indent=2, sort_keys=True))
        return EXIT_BUDGET
    manifest = evolution.run_evolution(state, evo_cfg, evaluator,
                                       n_workers=args.parallel)
    _write(os.path.join(out_dir, "manifest.json"),
           json.dumps(manifest, indent=2, sort_keys=True))
    _write(os.path.join(out_dir, "dataset.jsonl"), state.dataset_jsonl())
    _write(os.path.join(out_dir, "curves.csv"), state.curves_csv())
    _write(os.path.join(out_dir, "performance_space.csv"),
           evolution.performance_space_csv(state))
    if state.last_models:
        state.last_models["disc"].model.save(os.path.join(out_dir, "discriminator.json"))
        state.last_models["gen"].model.save(os.path.join(out_dir, "generator.json"))
        state.last_models["svc"].save(os.path.join(out_dir, "svc.json"))
    print("evolve: goal_met=%s evaluations=%d dataset=%d"
          % (manifest["goal_met"], manifest["budget_used"], manifest["dataset_size"]))
    if manifest["goal_met"]:
        return EXIT_OK
    return EXIT_BUDGET


def _proposed_record(goal, evo_cfg, budget, seed) -> baselines.RunRecord:
    evaluator = make_evaluator("surrogate", budget=budget)
    cfg = evolution.EvolutionConfig(**{**vars(evo_cfg), "seed": seed})
    try:
        state = evolution.seed_population(cfg, goal, ParameterRanges.default(), evaluator)
        evolution.run_evolution(state, cfg, evaluator)
        evals = state.evals_to_first_goal()
        best = float(np.min(state.scores())) if state.size else float("nan")
    except BudgetExhausted:
        evals, best = None, float("nan")
    return baselines.RunRecord(method="proposed", evals_used=evaluator.ledger.count,
                               evals_to_goal=evals, best_score=best)


def cmd_bench(args) -> int:
    cfg, goal, evo_cfg, evaluator, out_dir = _setup(args)
    budget = cfg.get("budget", 1000)
    methods = cfg.get("baselines",
                      ["nelder_mead", "cma_es", "pso", "ga", "trust_region"])
    for m in methods:
        if m not in baselines.METHODS:
            print("unknown baseline %r" % m, file=sys.stderr)
            return EXIT_CONFIG
    seeds = cfg.get("bench_seeds", [cfg["seed"]])
    ranges = ParameterRanges.default()
    goal_name = cfg.get("goal", "example1")
    goal_label = goal_name if isinstance(goal_name, str) else goal.mode

    lines = ["# schema_version=%d evaluator_digest=%s budget=%d"
             % (CONFIG_SCHEMA_VERSION, evaluator.digest(), budget),
             "method,goal,seed,evals_to_goal,best_score"]
    for seed in seeds:
        rec = _proposed_record(goal, evo_cfg, budget, seed)
        lines.append("%s,%s,%d,%s,%.6f" % (
            rec.method, goal_label, seed, rec.evals_to_goal_str(budget), rec.best_score))
        for m in methods:
            run_eval = make_evaluator("surrogate", budget=budget)
            obj = baselines.Objective(run_eval, goal, ranges)
            start = sample_valid(ranges, run_eval.conn, np.random.default_rng(seed))
            rec = baselines.METHODS[m](obj, budget, seed, start)
            lines.append("%s,%s,%d,%s,%.6f" % (
                rec.method, goal_label, seed, rec.evals_to_goal_str(budget),
                rec.best_score))
    _write(os.path.join(out_dir, "benchmark.csv"), "\n".join(lines) + "\n")
    print("benchmark written to %s" % os.path.join(out_dir, "benchmark.csv"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antennagen",
        description="Generative antenna design toolkit (connecting-nodes scheme)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("seed", cmd_seed), ("evolve", cmd_evolve), ("bench", cmd_bench)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--parallel", type=int, default=1, help="evaluation workers")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--evaluator", default=None, help="evaluator name override")
        p.add_argument("--budget", type=int, default=None, help="evaluation budget override")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
