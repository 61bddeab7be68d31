"""Top-level acceptance checks at the documented tolerances and budgets.

Each test here asserts one released contract of the toolkit: exact-oracle
agreement for gradients, geometry, and the SVC; model-quality floors and
progress guarantees for the evolution loop; end-to-end goal attainment under
fixed evaluation budgets; benchmark fairness; byte-level reproducibility; and
the scoring-function unit identities.  Expensive runs are shared through
module-scoped fixtures.
"""

import itertools
import json
import time

import numpy as np
import pytest

from antennagen import baselines, cli, evolution, nn
from antennagen.baselines import FunctionObjective, REFERENCE_BOUNDS
from antennagen.criteria import CriterionSpec, band_target, label
from antennagen.geometry import ParameterRanges, check_geometry, sample_random
from antennagen.nn import LayerSpec, bce_loss, forward, generator_loss, grad, init_model
from antennagen.simulator import GoalSpec, S11Curve, make_evaluator
from antennagen.svc import KernelSpec, fit_svm, kernel_matrix, scaled_gamma

import oracles


# ---------------------------------------------------------------------------
# shared profiles
# ---------------------------------------------------------------------------

# Analysis goal: dual-resonance frequencies with a valid-count high enough
# that every configured evolution executes.
ANALYSIS_GOAL = GoalSpec(mode="per_point", freqs=(2.4, 5.9),
                         point_threshold=-10.0, required_valid_count=20)

# Progress-study profile: five-point sum goal so scores stay informative
# across all seven evolutions, with an unreachable valid count.
PROGRESS_GOAL = GoalSpec(mode="point_sum", freqs=(2.0, 3.0, 4.5, 5.9, 7.0),
                         sum_threshold=-250.0, required_valid_count=10 ** 9)
PROGRESS_SCHEDULE = (60, 50, 45, 40, 35, 30, 25)

DISC_RUN_SEED = 5


def _progress_cfg(seed):
    return evolution.EvolutionConfig(seed=seed,
                                     percentile_schedule=PROGRESS_SCHEDULE)


def _run(cfg, goal, budget=None):
    evaluator = make_evaluator("surrogate", budget=budget)
    state = evolution.seed_population(cfg, goal, ParameterRanges.default(), evaluator)
    manifest = evolution.run_evolution(state, cfg, evaluator)
    return state, manifest, evaluator


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def _random_specs(rng):
    widths = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(2, 5)))]
    specs = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        last = i == len(widths) - 2
        act = "sigmoid" if last else rng.choice(["relu", "leaky_relu"])
        specs.append(LayerSpec(
            in_width=a, out_width=b, activation=str(act),
            batchnorm=bool(rng.integers(0, 2)) and not last,
            bias=bool(rng.integers(0, 2)),
        ))
    return specs


def test_gradient_correctness():
    """20 random mixed stacks: analytic vs central differences < 1e-4, < 10 s."""
    rng = np.random.default_rng(202)
    t0 = time.time()
    worst = 0.0
    for _ in range(20):
        specs = _random_specs(rng)
        model = init_model(specs, seed=int(rng.integers(1 << 30)))
        x = rng.normal(size=(6, specs[0].in_width))
        y = rng.integers(0, 2, size=(6, specs[-1].out_width)).astype(float)

        def loss_fn(m):
            return bce_loss(forward(m, x, train=True), y)[0]

        _, analytic, _ = grad(model, x, "bce", targets=y, train=True)
        numeric = oracles.finite_difference_grads(loss_fn, model)
        analytic = [{k: v for k, v in g.items() if v is not None} for g in analytic]
        worst = max(worst, oracles.max_relative_grad_error(analytic, numeric))
    assert worst < 1e-4
    assert time.time() - t0 < 10.0


# ---------------------------------------------------------------------------
# 2. geometry oracle equivalence
# ---------------------------------------------------------------------------

def test_geometry_oracle_equivalence(ranges, conn):
    """1000 random vectors: checker agrees with the brute-force oracle, < 5 s."""
    rng = np.random.default_rng(909)
    t0 = time.time()
    for _ in range(1000):
        p = sample_random(ranges, rng)
        assert check_geometry(p, conn).ok == oracles.geometry_verdict_oracle(p, conn)
    assert time.time() - t0 < 5.0


# ---------------------------------------------------------------------------
# 3. SVC correctness
# ---------------------------------------------------------------------------

def test_svc_correctness():
    """SMO matches a dense exact QP within 1e-3 on 10 random 20-point
    problems; separable data reaches 100% training accuracy; < 30 s."""
    rng = np.random.default_rng(31)
    t0 = time.time()
    for trial in range(10):
        X = rng.normal(size=(20, 20))
        w = rng.normal(size=20)
        y = np.sign(X @ w + 0.3 * rng.normal(size=20))
        y[y == 0] = 1.0
        kernel = KernelSpec(kind="rbf", gamma=scaled_gamma(X))
        model = fit_svm(X, y, kernel, C=1.0, tol=1e-4)

        def kfn(A, B):
            return kernel_matrix(kernel, A, B)

        alphas, b = oracles.svm_dual_qp(X, y, kfn, 1.0)
        probe = rng.normal(size=(30, 20))
        got = model.decision(probe)
        want = oracles.svm_decision_from_dual(X, y, alphas, b, kfn, probe)
        assert np.max(np.abs(got - want)) < 1e-3, "trial %d" % trial

    X = np.vstack([rng.normal(size=(20, 2)) + 4.0, rng.normal(size=(20, 2)) - 4.0])
    y = np.hstack([np.ones(20), -np.ones(20)])
    model = fit_svm(X, y, KernelSpec(kind="linear"), C=10.0)
    assert np.all(model.predict(X) == y)
    assert time.time() - t0 < 30.0


# ---------------------------------------------------------------------------
# 4. discriminator quality across a full analysis run
# ---------------------------------------------------------------------------

def test_discriminator_quality_every_evolution():
    """Held-out discriminator accuracy >= 75% in every evolution, < 5 min."""
    t0 = time.time()
    cfg = evolution.EvolutionConfig(seed=DISC_RUN_SEED)
    state, _, _ = _run(cfg, ANALYSIS_GOAL)
    assert state.stats, "run produced no evolutions"
    for stat in state.stats:
        assert stat["disc_accuracy"] >= 0.75, "evolution %d" % stat["evolution"]
    assert time.time() - t0 < 300.0


# ---------------------------------------------------------------------------
# 5. generator efficacy in the first evolution
# ---------------------------------------------------------------------------

def test_generator_efficacy_first_evolution():
    """>= 60% of SVC-passed candidates satisfy the current criterion
    (10-seed median), < 10 min.  The uniform random generator sits near 50%
    by construction: the initial criterion is the seed-population median."""
    t0 = time.time()
    fractions = []
    for seed in range(10):
        cfg = evolution.EvolutionConfig(seed=seed, max_evolutions=1)
        state, _, _ = _run(cfg, PROGRESS_GOAL)
        assert state.criterion_history[0]["percentile"] == 50
        stat = state.stats[0]
        assert stat["candidates_evaluated"] > 0
        fractions.append(stat["batch_valid_count"] / stat["candidates_evaluated"])
    assert float(np.median(fractions)) >= 0.60
    assert time.time() - t0 < 600.0


# ---------------------------------------------------------------------------
# 6. evolution progress over 7 evolutions, 10 seeds
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def progress_runs():
    runs = []
    for seed in range(10):
        state, manifest, _ = _run(_progress_cfg(seed), PROGRESS_GOAL)
        runs.append((seed, state, manifest))
    return runs


def test_progress_batch_medians_non_increasing(progress_runs):
    """The study-wide per-evolution batch median (median over the 10 runs'
    batch medians) is non-increasing in at least 5 of its 7 steps; the seed
    population median is the first comparison point.  Individual runs are
    noisier — every per-evolution model stack is retrained from scratch at
    this scale — so each run is only held to a weaker floor of 3."""
    seed_meds = []
    per_evo = {e: [] for e in range(1, 8)}
    for seed, state, _ in progress_runs:
        n_seed = sum(1 for e in state.evolution_of if e == 0)
        seed_med = float(np.median(state.scores()[:n_seed]))
        seed_meds.append(seed_med)
        meds = [s["batch_median_score"] for s in state.stats]
        for s in state.stats:
            if s["batch_median_score"] is not None:
                per_evo[s["evolution"]].append(s["batch_median_score"])
        prev, run_ni = seed_med, 0
        for m in meds:
            if m is not None and prev is not None and m <= prev:
                run_ni += 1
            prev = m
        assert run_ni >= 3, "seed %d medians %s" % (seed, meds)

    seq = [float(np.median(seed_meds))]
    for e in range(1, 8):
        assert per_evo[e], "no run produced a batch in evolution %d" % e
        seq.append(float(np.median(per_evo[e])))
    n_ni = sum(1 for a, b in zip(seq, seq[1:]) if b <= a)
    assert n_ni >= 5, "pooled medians %s" % seq


def test_progress_criterion_strictly_decreasing(progress_runs):
    for seed, state, _ in progress_runs:
        thresholds = [c["threshold"] for c in state.criterion_history]
        assert all(b < a for a, b in zip(thresholds, thresholds[1:])), "seed %d" % seed


# ---------------------------------------------------------------------------
# 7. end-to-end goal attainment through the CLI
# ---------------------------------------------------------------------------

def _evolve_via_cli(tmp_dir, goal_profile, seed, budget):
    config = {"schema_version": 1, "seed": seed, "goal": goal_profile,
              "budget": budget}
    cfg_path = tmp_dir / ("cfg_%s_%d.json" % (goal_profile, seed))
    cfg_path.write_text(json.dumps(config))
    out = tmp_dir / ("out_%s_%d" % (goal_profile, seed))
    cli.main(["evolve", "--config", str(cfg_path), "--out", str(out)])
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def end_to_end(tmp_path_factory):
    tmp_dir = tmp_path_factory.mktemp("end_to_end")
    t0 = time.time()
    dual = [_evolve_via_cli(tmp_dir, "example1", s, 1000) for s in range(10)]
    broad = [_evolve_via_cli(tmp_dir, "example2", s, 2000) for s in range(10)]
    return dual, broad, time.time() - t0


def test_end_to_end_dual_resonance(end_to_end):
    """>= 8/10 seeds reach a valid dual-resonance design within 1000 evals."""
    dual, _, _ = end_to_end
    hits = sum(m["goal_met"] for m in dual)
    assert all(m["budget_used"] <= 1000 for m in dual)
    assert hits >= 8, "hits=%d" % hits


def test_end_to_end_broadband(end_to_end):
    """>= 6/10 seeds drive the broadband deficit to 0 within 2000 evals."""
    _, broad, _ = end_to_end
    hits = sum(m["goal_met"] for m in broad)
    assert all(m["budget_used"] <= 2000 for m in broad)
    assert hits >= 6, "hits=%d" % hits


def test_end_to_end_wall_clock(end_to_end):
    _, _, elapsed = end_to_end
    assert elapsed < 1800.0


# ---------------------------------------------------------------------------
# 8. benchmark harness fairness + baseline convergence contract
# ---------------------------------------------------------------------------

def test_benchmark_budget_accounting(tmp_path):
    config = {
        "schema_version": 1, "seed": 0, "budget": 150,
        "goal": {"mode": "point_sum", "freqs": [2.4, 5.9],
                 "sum_threshold": -35.0, "required_valid_count": 1},
        "baselines": ["nelder_mead", "cma_es", "pso", "ga", "trust_region"],
        "bench_seeds": [0, 1],
        "evolution": {"initial_population": 25, "candidates_per_evolution": 10,
                      "max_evolutions": 1, "disc_widths": [[16, 32, 32]],
                      "disc_cfg": {"optimizer": "adam", "lr": 1e-3,
                                   "weight_decay": 1.0, "batch_size": 16,
                                   "max_epochs": 120, "seed": 0},
                      "gen_cfg": {"optimizer": "adam", "lr": 1e-3,
                                  "batch_size": 64, "max_epochs": 150,
                                  "seed": 0}},
    }
    cfg_path = tmp_path / "bench.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "bench_out"
    assert cli.main(["bench", "--config", str(cfg_path), "--out", str(out)]) == 0
    lines = (out / "benchmark.csv").read_text().strip().split("\n")
    assert lines[0].startswith("# schema_version=1 ")
    assert "budget=150" in lines[0]
    assert lines[1] == "method,goal,seed,evals_to_goal,best_score"
    rows = [l.split(",") for l in lines[2:]]
    assert len(rows) == 2 * 6               # 2 seeds x (proposed + 5 baselines)
    for r in rows:
        # every method ran against the same budget cap
        assert r[3] == ">150" or 0 < int(r[3]) <= 150


_REFERENCE_PROBLEMS = {
    "sphere_2d": lambda target: (
        FunctionObjective(lambda x: float(np.dot(x, x)), [-5.0] * 2, [5.0] * 2,
                          goal_threshold=target), [3.0, -4.0]),
    "sphere_20d": lambda target: (
        FunctionObjective(lambda x: float(np.dot(x, x)), [-5.0] * 20, [5.0] * 20,
                          goal_threshold=target), [1.0] * 20),
    "rosenbrock_5d": lambda target: (
        FunctionObjective(
            lambda x: float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2
                                   + (1.0 - x[:-1]) ** 2)),
            [-2.048] * 5, [2.048] * 5, goal_threshold=target), [0.0] * 5),
}
_REFERENCE_PROBLEMS["rosenbrock_5d_long"] = _REFERENCE_PROBLEMS["rosenbrock_5d"]


def test_baseline_convergence_contract():
    """Every bound documented in REFERENCE_BOUNDS holds when re-measured."""
    for method, problems in REFERENCE_BOUNDS.items():
        for problem, bound in problems.items():
            n_seeds = 10 if ("seeds_of_10" in bound or "median_target" in bound
                             or (method == "pso" and problem == "rosenbrock_5d")) else 1
            if problem.endswith("_long"):
                # long-horizon bound: the goal threshold must be reached
                obj, start = _REFERENCE_PROBLEMS[problem](bound["target"])
                rec = baselines.METHODS[method](obj, bound["budget"], 0, start)
                assert rec.evals_to_goal is not None, (method, problem)
                continue
            scores = []
            for seed in range(n_seeds):
                # no stop threshold: measure the full-budget best score
                obj, start = _REFERENCE_PROBLEMS[problem](None)
                rec = baselines.METHODS[method](obj, bound["budget"], seed, start)
                scores.append(rec.best_score)
            scores = np.sort(scores)
            if "seeds_of_10" in bound:
                assert scores[bound["seeds_of_10"] - 1] < bound["target"], method
            else:
                assert scores[-1] < bound["target"], (method, problem)
            if "median_target" in bound:
                assert float(np.median(scores)) < bound["median_target"], method


# ---------------------------------------------------------------------------
# 9. byte-identical reproducibility through the CLI
# ---------------------------------------------------------------------------

def test_reproducibility_byte_identical(tmp_path):
    config = {
        "schema_version": 1, "seed": 17,
        "goal": {"mode": "point_sum", "freqs": [2.4, 5.9],
                 "sum_threshold": -60.0, "required_valid_count": 1000},
        "evolution": {"initial_population": 30, "candidates_per_evolution": 15,
                      "max_evolutions": 2, "disc_widths": [[16, 32, 32]],
                      "disc_cfg": {"optimizer": "adam", "lr": 1e-3,
                                   "weight_decay": 1.0, "batch_size": 16,
                                   "max_epochs": 150, "seed": 0},
                      "gen_cfg": {"optimizer": "adam", "lr": 1e-3,
                                  "batch_size": 64, "max_epochs": 200,
                                  "seed": 0}},
    }
    cfg_path = tmp_path / "repro.json"
    cfg_path.write_text(json.dumps(config))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["evolve", "--config", str(cfg_path), "--out", str(out)])
        outs.append(out)
    a, b = outs
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()


# ---------------------------------------------------------------------------
# 10. scoring-function unit identities
# ---------------------------------------------------------------------------

def test_band_deficit_unit_identities():
    """0 for an all-passing curve; hand-computed 2.3333 three-sample case."""
    freqs = np.linspace(0.0, 8.0, 801)
    passing = S11Curve(freqs=freqs, s11=np.full(801, -12.0))
    assert band_target(passing, (2.3, 2.5)) == 0.0
    assert band_target(passing, (5.1, 7.2)) == 0.0
    hand = S11Curve(freqs=np.array([1.0, 2.0, 3.0]),
                    s11=np.array([-3.0, -12.0, -10.0]))
    assert round(band_target(hand, (1.0, 3.0), level=-10.0), 4) == 2.3333


def test_labeling_truth_tables_exhaustive():
    grid = np.arange(-12.0, -7.5, 0.5)
    per = CriterionSpec(mode="per_metric", thresholds=(-10.0, -9.0))
    summ = CriterionSpec(mode="weighted_sum", weights=(1.0, 2.0), threshold=-28.0)
    for p1, p2 in itertools.product(grid, grid):
        assert label((p1, p2), per) == (p1 <= -10.0 and p2 <= -9.0)
        assert label((p1, p2), summ) == (p1 + 2.0 * p2 <= -28.0)
