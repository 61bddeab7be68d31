"""Black-box performance evaluator boundary.

The real measurement would come from a full-wave EM solver; here a
deterministic physics-inspired surrogate stands in: each feed-to-leaf and
feed-to-ground path through the connection graph contributes a Lorentzian
notch to the reflection curve, with the notch frequency set by the path
length (quarter-wave with an effective velocity factor) and the depth and
width growing with the mean node radius along the path.
"""

from __future__ import annotations

import hashlib
import io
import threading
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .criteria import band_target

SCHEMA_VERSION = 1

# Surrogate constants (mm, GHz, dB). Fixed for the whole artifact.
VELOCITY_FACTOR = 75.0          # notch frequency f_k = 75 / L_k
DEPTH_BASE = 3.0                # A_k = min(30, 3 + 20 * mean_radius)
DEPTH_SLOPE = 20.0
DEPTH_CAP = 30.0
WIDTH_BASE = 0.15               # w_k = 0.15 + 0.5 * mean_radius
WIDTH_SLOPE = 0.5
S11_FLOOR = -60.0


class BudgetExhausted(RuntimeError):
    """The evaluation budget has run out."""


@dataclass(frozen=True)
class FrequencySweep:
    f_start: float = 0.0   # GHz
    f_stop: float = 8.0
    n_samples: int = 801

    def __post_init__(self):
        if not 0.0 <= self.f_start < self.f_stop:
            raise ValueError("need 0 <= f_start < f_stop")
        if self.n_samples < 2:
            raise ValueError("need at least 2 sweep samples")

    def grid(self) -> np.ndarray:
        return np.linspace(self.f_start, self.f_stop, self.n_samples)


DEFAULT_SWEEP = FrequencySweep()


@dataclass(frozen=True)
class S11Curve:
    freqs: np.ndarray   # GHz
    s11: np.ndarray     # dB, clamped to [-60, 0]

    def __post_init__(self):
        if len(self.freqs) != len(self.s11):
            raise ValueError("grid/value length mismatch")

    def at(self, freq) -> float:
        """Value at the nearest sweep sample."""
        idx = int(np.argmin(np.abs(self.freqs - freq)))
        return float(self.s11[idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("frequency_ghz,s11_db\n")
        for f, s in zip(self.freqs, self.s11):
            buf.write("%.6f,%.9f\n" % (f, s))
        return buf.getvalue()


def _feed_paths(params, conn: geometry.ConnectionMap):
    """Shortest node paths from the feed to every leaf node and to ground."""
    adj = conn.adjacency()
    feed = geometry.FEED_NODE
    targets = {n for n, nbrs in adj.items() if len(nbrs) == 1 and n != feed}
    targets.add(geometry.GROUND_NODE)
    # BFS parents from the feed
    parents = {feed: None}
    frontier = [feed]
    while frontier:
        nxt = []
        for node in frontier:
            for nbr in adj[node]:
                if nbr not in parents:
                    parents[nbr] = node
                    nxt.append(nbr)
        frontier = nxt
    paths = []
    for t in sorted(targets):
        if t not in parents:
            continue  # disconnected from the feed: no radiating path
        path = [t]
        while parents[path[-1]] is not None:
            path.append(parents[path[-1]])
        paths.append(list(reversed(path)))  # feed -> target
    return paths


def surrogate_notches(params, conn: geometry.ConnectionMap = geometry.DEFAULT_CONNECTIONS):
    """(f_k, A_k, w_k) per radiating path; deterministic in params."""
    nodes = geometry.nodes_from_params(params)
    notches = []
    for path in _feed_paths(params, conn):
        length = 0.0
        for a, b in zip(path, path[1:]):
            length += float(np.hypot(*(nodes[a - 1].center - nodes[b - 1].center)))
        if length < 1e-9:
            continue
        mean_r = float(np.mean([nodes[n - 1].r for n in path]))
        f_k = VELOCITY_FACTOR / length
        a_k = min(DEPTH_CAP, DEPTH_BASE + DEPTH_SLOPE * mean_r)
        w_k = WIDTH_BASE + WIDTH_SLOPE * mean_r
        notches.append((f_k, a_k, w_k))
    return notches


def surrogate_evaluate(params, sweep: FrequencySweep = DEFAULT_SWEEP,
                       conn: geometry.ConnectionMap = geometry.DEFAULT_CONNECTIONS) -> S11Curve:
    """Surrogate reflection curve; params must pass the geometric checker."""
    verdict = geometry.check_geometry(params, conn)
    if not verdict.ok:
        raise geometry.GeometryError("invalid geometry: %s" % verdict.reason)
    freqs = sweep.grid()
    total = np.zeros_like(freqs)
    for f_k, a_k, w_k in surrogate_notches(params, conn):
        total += a_k / (1.0 + ((freqs - f_k) / w_k) ** 2)
    s11 = np.clip(-total, S11_FLOOR, 0.0)
    return S11Curve(freqs=freqs, s11=s11)


# -- goals and metric extraction ----------------------------------------------

@dataclass(frozen=True)
class GoalSpec:
    """Design target driving labeling and the stop condition.

    point_sum: sum of s11 at ``freqs`` must reach ``sum_threshold``.
    per_point: s11 at every frequency must reach ``point_threshold``.
    band:      every band's mean excess above ``level`` must be zero.
    """

    mode: str                         # "point_sum" | "per_point" | "band"
    freqs: tuple = ()                 # GHz, point modes
    sum_threshold: float = -20.0      # dB, point_sum
    point_threshold: float = -10.0    # dB, per_point
    bands: tuple = ()                 # ((lo, hi), ...), band mode
    level: float = -10.0              # dB, band mode
    required_valid_count: int = 1

    def __post_init__(self):
        if self.mode not in ("point_sum", "per_point", "band"):
            raise ValueError("unknown goal mode %r" % self.mode)
        if self.mode in ("point_sum", "per_point") and not self.freqs:
            raise ValueError("point goals need frequencies")
        if self.mode == "band" and not self.bands:
            raise ValueError("band goals need bands")

    @property
    def n_metrics(self) -> int:
        return len(self.bands) if self.mode == "band" else len(self.freqs)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "freqs": list(self.freqs),
            "sum_threshold": self.sum_threshold,
            "point_threshold": self.point_threshold,
            "bands": [list(b) for b in self.bands],
            "level": self.level,
            "required_valid_count": self.required_valid_count,
        }


# Ready-made example targets on the default sweep.
DUAL_RESONANCE_GOAL = GoalSpec(mode="per_point", freqs=(2.4, 5.9), point_threshold=-10.0)
DUAL_SUM_GOAL = GoalSpec(mode="point_sum", freqs=(2.4, 5.9), sum_threshold=-20.0)
BROADBAND_GOAL = GoalSpec(mode="band", bands=((2.3, 2.5), (5.1, 7.2)), level=-10.0)


def evaluate_metrics(curve: S11Curve, goal: GoalSpec) -> np.ndarray:
    """Per-goal performance metrics from a reflection curve."""
    if goal.mode == "band":
        return np.array([band_target(curve, band, goal.level) for band in goal.bands])
    f_lo, f_hi = float(curve.freqs[0]), float(curve.freqs[-1])
    for f in goal.freqs:
        if not f_lo <= f <= f_hi:
            raise ValueError("goal frequency %g GHz outside sweep" % f)
    return np.array([curve.at(f) for f in goal.freqs])


def goal_met(metrics, goal: GoalSpec) -> bool:
    p = np.asarray(metrics, dtype=float)
    if goal.mode == "point_sum":
        return bool(p.sum() <= goal.sum_threshold)
    if goal.mode == "per_point":
        return bool(np.all(p <= goal.point_threshold))
    return bool(np.all(p <= 0.0))  # band targets are >= 0, zero means matched


def goal_score(metrics, goal: GoalSpec) -> float:
    """Scalar to minimize: metric sum (point modes) or total band target F."""
    return float(np.asarray(metrics, dtype=float).sum())


# -- budget-accounted evaluator -------------------------------------------------

class BudgetLedger:
    """Thread-safe evaluation counter with an optional hard limit."""

    def __init__(self, limit=None):
        self.limit = limit
        self.count = 0
        self._lock = threading.Lock()

    @property
    def remaining(self):
        return None if self.limit is None else self.limit - self.count

    def consume(self, n=1):
        with self._lock:
            if self.limit is not None and self.count + n > self.limit:
                raise BudgetExhausted(
                    "budget %d exhausted (used %d, requested %d)" % (self.limit, self.count, n)
                )
            self.count += n


class Evaluator:
    """EvaluatorContract: deterministic params -> S11Curve, budget-accounted."""

    def __init__(self, name="surrogate", sweep=DEFAULT_SWEEP,
                 conn=geometry.DEFAULT_CONNECTIONS, ledger=None, curve_fn=None):
        self.name = name
        self.sweep = sweep
        self.conn = conn
        self.ledger = ledger if ledger is not None else BudgetLedger()
        self._curve_fn = curve_fn if curve_fn is not None else surrogate_evaluate

    def evaluate(self, params) -> S11Curve:
        self.ledger.consume()
        return self._curve_fn(params, self.sweep, self.conn)

    def charge_penalty(self):
        """Spend one budget unit on an infeasible candidate without evaluating."""
        self.ledger.consume()

    def digest(self) -> str:
        payload = "%s|%g|%g|%d|%g|%g|%g|%g|%g|%g" % (
            self.name, self.sweep.f_start, self.sweep.f_stop, self.sweep.n_samples,
            VELOCITY_FACTOR, DEPTH_BASE, DEPTH_SLOPE, DEPTH_CAP, WIDTH_BASE, WIDTH_SLOPE,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def make_evaluator(name, budget=None, sweep=DEFAULT_SWEEP,
                   conn=geometry.DEFAULT_CONNECTIONS) -> Evaluator:
    """Evaluator factory by name; third-party adapters register here."""
    if name != "surrogate":
        raise ValueError("unknown evaluator %r" % name)
    return Evaluator(name=name, sweep=sweep, conn=conn, ledger=BudgetLedger(budget))
