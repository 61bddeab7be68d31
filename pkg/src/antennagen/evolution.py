"""Evolutionary criterion loop driving the generative sampler.

Seed with checker-passing random geometries, then iterate: label the
dataset under the current criterion, train the discriminator and the
generator, draw candidates, double-check them with an SVC, spend evaluator
budget on the survivors, merge, and tighten the criterion, until enough
designs meet the goal or the budget runs out.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import generative, nn, svc
from .criteria import CriterionSpec, label, percentile_threshold, weighted_score
from .geometry import DEFAULT_CONNECTIONS, ParameterRanges, check_geometry, sample_valid
from .simulator import (
    BudgetExhausted, Evaluator, GoalSpec, evaluate_metrics, goal_met, goal_score,
)

SCHEMA_VERSION = 1

DEFAULT_PERCENTILE_SCHEDULE = (50, 50, 30, 30, 20, 20, 20)


def _desk_disc_cfg() -> nn.TrainConfig:
    return nn.TrainConfig(optimizer="adam", lr=1e-3, weight_decay=1.0,
                          batch_size=32, max_epochs=800, seed=0)


def _desk_gen_cfg() -> nn.TrainConfig:
    return nn.TrainConfig(optimizer="adam", lr=1e-3, batch_size=128,
                          max_epochs=1500, seed=0)


def fullscale_disc_cfg() -> nn.TrainConfig:
    """Full-scale discriminator recipe (slow: batch size 1)."""
    return nn.TrainConfig(optimizer="adam", lr=1e-5, weight_decay=0.05,
                          batch_size=1, max_epochs=1000, seed=0)


def fullscale_gen_cfg() -> nn.TrainConfig:
    """Full-scale generator recipe (plain SGD)."""
    return nn.TrainConfig(optimizer="sgd", lr=1e-4, batch_size=500,
                          max_epochs=30000, seed=0)


@dataclass
class EvolutionConfig:
    initial_population: int = 100
    candidates_per_evolution: int = 100
    max_evolutions: int = 7
    percentile_schedule: tuple = DEFAULT_PERCENTILE_SCHEDULE
    threshold_schedule: tuple = ()   # per-metric criterion per evolution (band goals)
    disc_widths: tuple = ((64, 128, 256),)  # grid; best held-out accuracy wins
    disc_cfg: nn.TrainConfig = field(default_factory=_desk_disc_cfg)
    gen_cfg: nn.TrainConfig = field(default_factory=_desk_gen_cfg)
    noise_dim: int = generative.NOISE_DIM_DEFAULT
    gen_stop_threshold: float = 0.95
    nonsaturating: bool = True
    # soft-margin C: at 1.0 the late-evolution class imbalance (~25% positive)
    # lets the SVC collapse to the majority all-negative classifier
    svc_C: float = 10.0
    svc_gamma_scale: float = 1.0   # multiplies the variance-scaled RBF gamma
    redraw_factor: int = 10
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.initial_population < 1 or self.candidates_per_evolution < 1:
            raise ValueError("population counts must be >= 1")
        for q in self.percentile_schedule:
            if not 0 < q < 100:
                raise ValueError("schedule percentiles must lie in (0, 100)")

    def to_dict(self) -> dict:
        return {
            "initial_population": self.initial_population,
            "candidates_per_evolution": self.candidates_per_evolution,
            "max_evolutions": self.max_evolutions,
            "percentile_schedule": list(self.percentile_schedule),
            "threshold_schedule": [list(t) for t in self.threshold_schedule],
            "disc_widths": [list(w) for w in self.disc_widths],
            "disc_cfg": vars(self.disc_cfg),
            "gen_cfg": vars(self.gen_cfg),
            "noise_dim": self.noise_dim,
            "gen_stop_threshold": self.gen_stop_threshold,
            "nonsaturating": self.nonsaturating,
            "svc_C": self.svc_C,
            "svc_gamma_scale": self.svc_gamma_scale,
            "redraw_factor": self.redraw_factor,
            "test_fraction": self.test_fraction,
            "seed": self.seed,
        }


def _component_seed(master, component, evolution=0, retry=0) -> int:
    key = (component, evolution) if retry == 0 else (component, evolution, retry)
    ss = np.random.SeedSequence(entropy=master, spawn_key=key)
    return int(ss.generate_state(1)[0])


@dataclass
class EvolutionState:
    goal: GoalSpec
    ranges: ParameterRanges
    conn: object = DEFAULT_CONNECTIONS
    params: list = field(default_factory=list)       # evaluated designs
    metrics: list = field(default_factory=list)      # PerformanceVector per design
    curves: list = field(default_factory=list, repr=False)  # S11Curve per design
    evolution_of: list = field(default_factory=list)  # which evolution produced it
    criterion_history: list = field(default_factory=list)  # dicts per evolution
    stats: list = field(default_factory=list)        # per-evolution stat dicts
    evolutions_done: int = 0
    budget_exhausted: bool = False
    last_models: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.params)

    @property
    def criterion(self) -> CriterionSpec:
        entry = self.criterion_history[-1]
        return CriterionSpec(
            mode=entry["mode"],
            thresholds=tuple(entry["thresholds"]),
            weights=tuple(entry["weights"]),
            threshold=entry["threshold"],
        )

    def scores(self) -> np.ndarray:
        return np.array([goal_score(m, self.goal) for m in self.metrics])

    def goal_valid_count(self) -> int:
        return sum(goal_met(m, self.goal) for m in self.metrics)

    def labels(self) -> np.ndarray:
        crit = self.criterion
        return np.array([1.0 if label(m, crit) else 0.0 for m in self.metrics])

    def evals_to_first_goal(self):
        """1-based evaluation index of the first goal-meeting design, or None."""
        for i, m in enumerate(self.metrics):
            if goal_met(m, self.goal):
                return i + 1
        return None

    def digest(self) -> str:
        h = hashlib.sha256()
        for p, m in zip(self.params, self.metrics):
            h.update(np.asarray(p, dtype=float).tobytes())
            h.update(np.asarray(m, dtype=float).tobytes())
        return h.hexdigest()

    def dataset_jsonl(self) -> str:
        crit = self.criterion
        lines = [json.dumps({"schema_version": SCHEMA_VERSION, "kind": "dataset-header",
                             "size": self.size, "goal": self.goal.to_dict()},
                            sort_keys=True)]
        for i, (p, m, e) in enumerate(zip(self.params, self.metrics, self.evolution_of)):
            lines.append(json.dumps({
                "id": i,
                "evolution": e,
                "params": np.asarray(p).tolist(),
                "s11_ref": "curves.csv#%d" % i,
                "metrics": np.asarray(m).tolist(),
                "score": goal_score(m, self.goal),
                "valid": bool(label(m, crit)),
                "goal_met": bool(goal_met(m, self.goal)),
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def curves_csv(self) -> str:
        """All reflection curves in one long-format CSV, keyed by design id."""
        lines = ["# schema_version=%d" % SCHEMA_VERSION, "id,frequency_ghz,s11_db"]
        for i, curve in enumerate(self.curves):
            for f, s in zip(curve.freqs, curve.s11):
                lines.append("%d,%.9f,%.9f" % (i, f, s))
        return "\n".join(lines) + "\n"


def _percentile_criterion(state: "EvolutionState", q, prev=None, cap=True) -> dict:
    """Percentile-derived criterion in the mode implied by the goal.

    point_sum goals tighten a weighted-sum threshold (sum of the point
    values); other goals tighten one percentile threshold per metric, so a
    single saturated metric cannot stand in for the whole target.  With
    ``cap`` the thresholds never tighten past the goal itself — depth beyond
    the target wastes evaluations on one already-satisfied direction.  When a
    previous entry is given, each threshold is nudged strictly below it.
    """
    goal = state.goal
    if goal.mode == "point_sum":
        c = percentile_threshold(state.scores(), q)
        if cap:
            c = max(c, goal.sum_threshold)
        if prev is not None:
            c = min(c, prev["threshold"] - 1e-9)
        weights = tuple(1.0 for _ in range(goal.n_metrics))
        return CriterionSpec(mode="weighted_sum", weights=weights,
                             threshold=c).to_dict() | {"percentile": q}
    metric_matrix = np.array(state.metrics, dtype=float)
    target = goal.point_threshold if goal.mode == "per_point" else 0.0
    thresholds = [percentile_threshold(metric_matrix[:, i], q)
                  for i in range(goal.n_metrics)]
    if cap:
        thresholds = [max(c, target) for c in thresholds]
    if prev is not None:
        thresholds = [min(c, p - 1e-9)
                      for c, p in zip(thresholds, prev["thresholds"])]
    return CriterionSpec(mode="per_metric",
                         thresholds=tuple(thresholds)).to_dict() | {"percentile": q}


def _initial_criterion(cfg: EvolutionConfig, goal: GoalSpec,
                       state: "EvolutionState") -> dict:
    if cfg.threshold_schedule:
        thresholds = tuple(float(t) for t in cfg.threshold_schedule[0])
        return CriterionSpec(mode="per_metric", thresholds=thresholds).to_dict() | {
            "percentile": None}
    # the first criterion is the plain percentile of the seed population
    # (a dataset of one yields that sample's own score)
    return _percentile_criterion(state, cfg.percentile_schedule[0], cap=False)


def seed_population(cfg: EvolutionConfig, goal: GoalSpec, ranges: ParameterRanges,
                    evaluator: Evaluator) -> EvolutionState:
    """Evaluate checker-passing random geometries and set the initial criterion."""
    state = EvolutionState(goal=goal, ranges=ranges, conn=evaluator.conn)
    rng = np.random.default_rng(_component_seed(cfg.seed, component=1))
    for _ in range(cfg.initial_population):
        p = sample_valid(ranges, evaluator.conn, rng)
        curve = evaluator.evaluate(p)
        state.params.append(p)
        state.metrics.append(evaluate_metrics(curve, goal))
        state.curves.append(curve)
        state.evolution_of.append(0)
    state.criterion_history.append(_initial_criterion(cfg, goal, state))
    return state


def reuse_seed_population(state: EvolutionState, cfg: EvolutionConfig,
                          goal: GoalSpec) -> EvolutionState:
    """Start a fresh run against a new goal from an existing seed population.

    Metrics are recomputed from the stored reflection curves, so this costs
    zero evaluator calls.
    """
    seed_idx = [i for i, e in enumerate(state.evolution_of) if e == 0]
    if not seed_idx:
        raise ValueError("state has no seed population to reuse")
    fresh = EvolutionState(goal=goal, ranges=state.ranges, conn=state.conn)
    for i in seed_idx:
        curve = state.curves[i]
        fresh.params.append(state.params[i])
        fresh.metrics.append(evaluate_metrics(curve, goal))
        fresh.curves.append(curve)
        fresh.evolution_of.append(0)
    fresh.criterion_history.append(_initial_criterion(cfg, goal, fresh))
    return fresh


def _next_criterion(cfg: EvolutionConfig, state: EvolutionState, evolution: int) -> dict:
    """Criterion for the next evolution; strictly tighter than the current one."""
    prev = state.criterion_history[-1]
    if cfg.threshold_schedule:
        sched = cfg.threshold_schedule
        idx = min(evolution, len(sched) - 1)
        # explicit schedules may repeat a component while tightening another;
        # nudge below the previous entry to keep the history strictly decreasing
        thresholds = tuple(min(float(t), p - 1e-9)
                           for t, p in zip(sched[idx], prev["thresholds"]))
        return CriterionSpec(mode="per_metric", thresholds=thresholds).to_dict() | {
            "percentile": None}
    # growing dataset plus a non-increasing percentile normally tightens the
    # threshold on its own; _percentile_criterion nudges below the previous
    # value when it does not, keeping the recorded history strictly decreasing
    sched = cfg.percentile_schedule
    q = sched[min(evolution, len(sched) - 1)]
    return _percentile_criterion(state, q, prev=prev)


def _train_models(cfg: EvolutionConfig, state: EvolutionState, evolution: int):
    """Label, split, fit discriminator (width grid), generator and SVC."""
    X_unit = state.ranges.to_unit(np.array(state.params))
    y = state.labels()
    backoff = False
    if len(np.unique(y)) < 2:
        # degenerate labeling after tightening: fall back to the median
        # criterion of the current dataset and flag it
        backoff = True
        entry = _percentile_criterion(state, 50, cap=False)
        entry["backoff"] = True
        state.criterion_history[-1] = entry
        y = state.labels()
        if len(np.unique(y)) < 2:
            raise ValueError("labeling is degenerate even after criterion back-off")

    split = generative.split_dataset(
        X_unit, y, test_fraction=cfg.test_fraction,
        seed=_component_seed(cfg.seed, 2, evolution))

    best = None
    for widths in cfg.disc_widths:
        disc_cfg = nn.TrainConfig(**{**vars(cfg.disc_cfg),
                                     "seed": _component_seed(cfg.seed, 3, evolution)})
        disc, acc = generative.train_discriminator(split, widths, disc_cfg, state.ranges)
        if best is None or acc > best[1]:
            best = (disc, acc, widths)
    disc, disc_acc, widths = best

    gen_cfg = nn.TrainConfig(**{**vars(cfg.gen_cfg),
                                "seed": _component_seed(cfg.seed, 4, evolution)})
    gen = generative.train_generator(
        disc, gen_cfg, noise_dim=cfg.noise_dim,
        stop_threshold=cfg.gen_stop_threshold, nonsaturating=cfg.nonsaturating)

    X_train_unit = state.ranges.to_unit(split.X_train)
    kernel = svc.KernelSpec(
        kind="rbf", gamma=cfg.svc_gamma_scale * svc.scaled_gamma(X_train_unit))
    svc_model, svc_acc = svc.train_svc(
        X_train_unit, split.y_train,
        state.ranges.to_unit(split.X_test), split.y_test,
        kernel=kernel, C=cfg.svc_C, seed=_component_seed(cfg.seed, 5, evolution))
    return disc, disc_acc, widths, gen, svc_model, svc_acc, backoff


def _draw_candidates(cfg: EvolutionConfig, state: EvolutionState, gen, disc,
                     svc_model, evolution: int, retry: int = 0):
    """Generator draws filtered by the geometry checker and the SVC.

    Rejected draws are replaced by redrawing up to ``redraw_factor`` times the
    batch size; a short batch is conceded after that.
    """
    rng = np.random.default_rng(_component_seed(cfg.seed, 6, evolution, retry))
    k = cfg.candidates_per_evolution
    budget_draws = cfg.redraw_factor * k
    accepted = []
    draws = 0
    existing = [np.asarray(p) for p in state.params]
    while len(accepted) < k and draws < budget_draws:
        batch = min(k, budget_draws - draws)
        _, params = gen.sample_params(batch, rng)
        draws += batch
        unit = state.ranges.to_unit(params)
        svc_ok = set(svc.svc_filter(svc_model, unit))
        for row in range(batch):
            if row not in svc_ok:
                continue
            p = params[row]
            if not check_geometry(p, state.conn).ok:
                continue
            tol = 1e-6 * np.maximum(np.abs(p), 1.0)
            if any(np.all(np.abs(p - q) <= tol) for q in existing):
                continue
            existing.append(p)
            accepted.append(p)
            if len(accepted) >= k:
                break
    return accepted, len(accepted) < k


def run_evolution(state: EvolutionState, cfg: EvolutionConfig,
                  evaluator: Evaluator, n_workers: int = 1) -> dict:
    """Iterate the criterion evolution until the goal, the budget or the cap.

    Candidate evaluation may run on ``n_workers`` threads; results are
    merged by candidate index, so the outcome is worker-count independent.
    """
    goal = state.goal
    for evolution in range(1, cfg.max_evolutions + 1):
        if state.goal_valid_count() >= goal.required_valid_count:
            break
        if evaluator.ledger.remaining is not None and evaluator.ledger.remaining <= 0:
            state.budget_exhausted = True
            break

        disc, disc_acc, widths, gen, svc_model, svc_acc, backoff = _train_models(
            cfg, state, evolution)
        candidates, shortfall = _draw_candidates(
            cfg, state, gen, disc, svc_model, evolution)
        # a collapsed generator (mode stuck on checker-failing or
        # SVC-rejected geometry) can yield a nearly empty batch; retrain it
        # from a fresh deterministic seed rather than waste the whole evolution
        retries = 0
        floor = max(1, cfg.candidates_per_evolution // 10)
        while len(candidates) < floor and retries < 2:
            retries += 1
            gen_cfg = nn.TrainConfig(**{
                **vars(cfg.gen_cfg),
                "seed": _component_seed(cfg.seed, 4, evolution, retries)})
            gen = generative.train_generator(
                disc, gen_cfg, noise_dim=cfg.noise_dim,
                stop_threshold=cfg.gen_stop_threshold,
                nonsaturating=cfg.nonsaturating)
            candidates, shortfall = _draw_candidates(
                cfg, state, gen, disc, svc_model, evolution, retry=retries)
        state.last_models = {"disc": disc, "gen": gen, "svc": svc_model}

        remaining = evaluator.ledger.remaining
        allowed = len(candidates) if remaining is None else min(len(candidates),
                                                                max(remaining, 0))
        partial = allowed < len(candidates)
        to_eval = candidates[:allowed]
        if n_workers > 1 and to_eval:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                curves = list(pool.map(evaluator.evaluate, to_eval))
        else:
            curves = [evaluator.evaluate(p) for p in to_eval]
        batch_metrics = []
        for p, curve in zip(to_eval, curves):
            m = evaluate_metrics(curve, goal)
            state.params.append(p)
            state.metrics.append(m)
            state.curves.append(curve)
            state.evolution_of.append(evolution)
            batch_metrics.append(m)
        if partial:
            state.budget_exhausted = True

        crit = state.criterion
        batch_scores = [goal_score(m, goal) for m in batch_metrics]
        state.stats.append({
            "evolution": evolution,
            "disc_accuracy": disc_acc,
            "disc_widths": list(widths),
            "svc_accuracy": svc_acc,
            "generator_saturated": gen.saturated,
            "criterion_backoff": backoff,
            "candidates_drawn": len(candidates),
            "candidates_evaluated": len(batch_metrics),
            "candidate_shortfall": shortfall,
            "generator_retrains": retries,
            "batch_valid_count": sum(label(m, crit) for m in batch_metrics),
            "batch_median_score": float(np.median(batch_scores)) if batch_scores else None,
            "batch_goal_met": sum(goal_met(m, goal) for m in batch_metrics),
            "dataset_size": state.size,
            "goal_valid_total": state.goal_valid_count(),
            "budget_used": evaluator.ledger.count,
        })
        state.evolutions_done = evolution
        if partial:
            break
        state.criterion_history.append(_next_criterion(cfg, state, evolution))

    return build_manifest(state, cfg, evaluator)


def build_manifest(state: EvolutionState, cfg: EvolutionConfig,
                   evaluator: Evaluator) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "goal": state.goal.to_dict(),
        "evaluator": {"name": evaluator.name, "digest": evaluator.digest()},
        "criterion_history": state.criterion_history,
        "stats": state.stats,
        "evolutions_done": state.evolutions_done,
        "dataset_size": state.size,
        "budget_used": evaluator.ledger.count,
        "budget_limit": evaluator.ledger.limit,
        "budget_exhausted": state.budget_exhausted,
        "goal_valid_count": state.goal_valid_count(),
        "goal_met": state.goal_valid_count() >= state.goal.required_valid_count,
        "evals_to_first_goal": state.evals_to_first_goal(),
        "dataset_digest": state.digest(),
    }


def export_performance_space(state: EvolutionState):
    """Scatter rows plus per-evolution medians/valid counts for plotting."""
    if state.size == 0:
        raise ValueError("no evaluated designs to export")
    crit = state.criterion
    rows = []
    for i, (m, e) in enumerate(zip(state.metrics, state.evolution_of)):
        m = np.asarray(m, dtype=float)
        rows.append({
            "id": i,
            "evolution": e,
            "metric_1": float(m[0]),
            "metric_2": float(m[1]) if len(m) > 1 else float("nan"),
            "valid": bool(label(m, crit)),
            "goal_met": bool(goal_met(m, state.goal)),
        })
    summary = []
    for e in sorted(set(state.evolution_of)):
        idx = [i for i, ev in enumerate(state.evolution_of) if ev == e]
        scores = [goal_score(state.metrics[i], state.goal) for i in idx]
        summary.append({
            "evolution": e,
            "count": len(idx),
            "median_score": float(np.median(scores)),
            "valid_count": sum(label(state.metrics[i], crit) for i in idx),
            "goal_met_count": sum(goal_met(state.metrics[i], state.goal) for i in idx),
        })
    return rows, summary


def performance_space_csv(state: EvolutionState) -> str:
    rows, _ = export_performance_space(state)
    lines = ["# schema_version=%d" % SCHEMA_VERSION,
             "id,evolution,metric_1,metric_2,valid,goal_met"]
    for r in rows:
        lines.append("%d,%d,%.9f,%.9f,%d,%d" % (
            r["id"], r["evolution"], r["metric_1"], r["metric_2"],
            int(r["valid"]), int(r["goal_met"])))
    return "\n".join(lines) + "\n"
