"""Connecting-nodes planar antenna parameterization.

An antenna is described by 8 circular nodes on a plane.  Nodes 1..6 carry
free coordinates and radii, node 7 is the grounding point (Y fixed at 0,
X and R free) and node 8 is the feed point (fully fixed).  Connected node
pairs are joined by trapezoids whose parallel sides are the node diameters,
perpendicular to the segment between the centers.

Canonical parameter order (20 values, mm):
    X1..X7, Y1..Y6, R1..R7
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

N_PARAMS = 20

PARAM_NAMES = (
    ["X%d" % i for i in range(1, 8)]
    + ["Y%d" % i for i in range(1, 7)]
    + ["R%d" % i for i in range(1, 8)]
)

FEED_NODE = 8
GROUND_NODE = 7

# Fixed feed node: X8 = 0, Y8 = 1.5 mm, R8 = 0.5 mm
FEED_X = 0.0
FEED_Y = 1.5
FEED_R = 0.5


class GeometryError(ValueError):
    """Raised for malformed geometric inputs (degenerate segments etc.)."""


@dataclass(frozen=True)
class NodeSpec:
    """A node: center coordinates and radius, all in mm."""

    x: float
    y: float
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError("node coordinates must be finite")
        if not (math.isfinite(self.r) and self.r > 0):
            raise GeometryError("node radius must be positive and finite")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])


class ParameterRanges:
    """Closed interval [lo, hi] for each of the 20 free parameters."""

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != (N_PARAMS,) or hi.shape != (N_PARAMS,):
            raise ValueError("expected %d lower and upper bounds" % N_PARAMS)
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("bounds must be finite")
        if not np.all(lo < hi):
            bad = PARAM_NAMES[int(np.argmin(hi - lo))]
            raise ValueError("lo must be strictly below hi (parameter %s)" % bad)
        self.lo = lo
        self.hi = hi

    @classmethod
    def default(cls) -> "ParameterRanges":
        lo = [-30, -15, -5, 0, 5, 15, -30] + [3] * 6 + [0.1] * 7
        hi = [-15, -5, 0, 5, 15, 30, 0] + [10] * 6 + [1.5] * 7
        return cls(lo, hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, params) -> bool:
        params = np.asarray(params, dtype=float)
        return bool(np.all(params >= self.lo) and np.all(params <= self.hi))

    def to_unit(self, params) -> np.ndarray:
        """Affine map of a parameter vector (or batch) onto [0, 1]^20."""
        return (np.asarray(params, dtype=float) - self.lo) / self.width

    def from_unit(self, unit) -> np.ndarray:
        """Inverse of :meth:`to_unit`."""
        return self.lo + np.asarray(unit, dtype=float) * self.width


@dataclass(frozen=True)
class ConnectionMap:
    """Undirected node-index pairs (1-based) plus the fixed-node table."""

    pairs: tuple = ((1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (3, 7), (4, 8))
    n_nodes: int = 8

    def __post_init__(self):
        for a, b in self.pairs:
            if not (1 <= a <= self.n_nodes and 1 <= b <= self.n_nodes):
                raise GeometryError("connection index out of range: (%d,%d)" % (a, b))
            if a == b:
                raise GeometryError("self-connection (%d,%d)" % (a, b))

    def adjacency(self) -> dict:
        adj = {i: [] for i in range(1, self.n_nodes + 1)}
        for a, b in self.pairs:
            adj[a].append(b)
            adj[b].append(a)
        return adj


DEFAULT_CONNECTIONS = ConnectionMap()


def validate_params(params, ranges: ParameterRanges) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (N_PARAMS,):
        raise ValueError("parameter vector must have %d entries" % N_PARAMS)
    if not ranges.contains(params):
        raise ValueError("parameter vector outside declared ranges")
    return params


def nodes_from_params(params) -> list:
    """Expand a 20-vector into the 8 node specs (1-based order)."""
    params = np.asarray(params, dtype=float)
    xs, ys, rs = params[0:7], params[7:13], params[13:20]
    nodes = [NodeSpec(xs[i], ys[i], rs[i]) for i in range(6)]
    nodes.append(NodeSpec(xs[6], 0.0, rs[6]))      # node 7: ground contact
    nodes.append(NodeSpec(FEED_X, FEED_Y, FEED_R))  # node 8: feed
    return nodes


def sample_random(ranges: ParameterRanges, seed) -> np.ndarray:
    """One uniform draw per parameter within its interval, seed-deterministic."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(ranges.lo, ranges.hi)


def sample_valid(ranges, conn, seed, max_tries=1000) -> np.ndarray:
    """Rejection-sample until the geometric checker passes."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_tries):
        params = sample_random(ranges, rng)
        if check_geometry(params, conn).ok:
            return params
    raise GeometryError("no checker-passing sample within %d tries" % max_tries)


@dataclass(frozen=True)
class AntennaLayout:
    """Trapezoid polygons (one per connection) and the node discs."""

    trapezoids: tuple  # tuple of (4, 2) vertex arrays, pair order
    nodes: tuple       # tuple of NodeSpec


def _trapezoid(a: NodeSpec, b: NodeSpec) -> np.ndarray:
    d = b.center - a.center
    length = float(np.hypot(*d))
    if length < 1e-12:
        raise GeometryError("coincident node centers on a connected pair")
    n = np.array([-d[1], d[0]]) / length
    return np.array(
        [a.center + a.r * n, a.center - a.r * n, b.center - b.r * n, b.center + b.r * n]
    )


def build_layout(params, conn: ConnectionMap = DEFAULT_CONNECTIONS) -> AntennaLayout:
    """Construct the trapezoid polygons joining connected node pairs."""
    nodes = nodes_from_params(params)
    traps = tuple(_trapezoid(nodes[a - 1], nodes[b - 1]) for a, b in conn.pairs)
    return AntennaLayout(trapezoids=traps, nodes=tuple(nodes))


# --- segment intersection -------------------------------------------------

def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return (
        min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12
        and min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12
    )


def segments_intersect(p1, p2, p3, p4) -> bool:
    """True when closed segments p1p2 and p3p4 share any point."""
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if abs(d1) < 1e-12 and _on_segment(p3, p4, p1):
        return True
    if abs(d2) < 1e-12 and _on_segment(p3, p4, p2):
        return True
    if abs(d3) < 1e-12 and _on_segment(p1, p2, p3):
        return True
    if abs(d4) < 1e-12 and _on_segment(p1, p2, p4):
        return True
    return False


def _point_segment_dist(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-24:
        return float(np.hypot(*(p - a)))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.hypot(*(p - (a + t * ab))))


def _point_in_polygon(p, poly) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (a[1] > p[1]) != (b[1] > p[1]):
            xcross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if p[0] < xcross:
                inside = not inside
    return inside


def polygon_disc_overlap(poly, center, radius) -> bool:
    center = np.asarray(center, dtype=float)
    if _point_in_polygon(center, poly):
        return True
    n = len(poly)
    for i in range(n):
        if _point_segment_dist(center, poly[i], poly[(i + 1) % n]) <= radius:
            return True
    return False


@dataclass(frozen=True)
class GeometryCheck:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_geometry(params, conn: ConnectionMap = DEFAULT_CONNECTIONS) -> GeometryCheck:
    """Reject layouts with crossing connection lines or a shorted feed.

    Crossing: center segments of two connections that do not share a node
    intersect.  Short: a trapezoid other than the ground branch (the one
    incident to node 7) reaches the ground half-plane y <= 0, or a trapezoid
    not incident to the feed node overlaps the feed disc.
    """
    nodes = nodes_from_params(params)
    centers = [n.center for n in nodes]
    pairs = conn.pairs

    for i in range(len(pairs)):
        a1, b1 = pairs[i]
        for j in range(i + 1, len(pairs)):
            a2, b2 = pairs[j]
            if {a1, b1} & {a2, b2}:
                continue  # adjacent connections legitimately touch
            if segments_intersect(
                centers[a1 - 1], centers[b1 - 1], centers[a2 - 1], centers[b2 - 1]
            ):
                return GeometryCheck(False, "crossing")

    layout = build_layout(params, conn)
    feed_center = nodes[FEED_NODE - 1].center
    feed_r = nodes[FEED_NODE - 1].r
    for (a, b), trap in zip(pairs, layout.trapezoids):
        touches_ground_node = GROUND_NODE in (a, b)
        touches_feed = FEED_NODE in (a, b)
        if not touches_ground_node and float(np.min(trap[:, 1])) <= 0.0:
            return GeometryCheck(False, "short")
        if not touches_feed and polygon_disc_overlap(trap, feed_center, feed_r):
            return GeometryCheck(False, "short")
    return GeometryCheck(True)


# --- exports ----------------------------------------------------------------

def layout_to_json(layout: AntennaLayout) -> str:
    """Plain JSON array of trapezoid vertex coordinate lists (mm)."""
    return json.dumps([t.tolist() for t in layout.trapezoids])


def layout_to_svg_group(layout: AntennaLayout, offset=(0.0, 0.0), scale=2.0) -> str:
    """One <g> of polygons/circles; y axis flipped so +y points up."""
    ox, oy = offset
    parts = ["<g>"]
    for trap in layout.trapezoids:
        pts = " ".join(
            "%.3f,%.3f" % (ox + scale * x, oy - scale * y) for x, y in trap
        )
        parts.append('<polygon points="%s" fill="#c87533" stroke="none"/>' % pts)
    for node in layout.nodes:
        parts.append(
            '<circle cx="%.3f" cy="%.3f" r="%.3f" fill="#c87533"/>'
            % (ox + scale * node.x, oy - scale * node.y, scale * node.r)
        )
    parts.append("</g>")
    return "\n".join(parts)


def gallery_svg(layouts, columns=10, cell=(130.0, 60.0), scale=2.0) -> str:
    """SVG gallery of layouts arranged on a grid."""
    n = len(layouts)
    rows = (n + columns - 1) // columns if n else 1
    w, h = cell
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">'
        % (int(columns * w), int(rows * h))
    ]
    for k, layout in enumerate(layouts):
        col, row = k % columns, k // columns
        # center each cell on x=0, ground line near the cell bottom
        parts.append(
            layout_to_svg_group(layout, offset=(col * w + w / 2, row * h + h - 10), scale=scale)
        )
    parts.append("</svg>")
    return "\n".join(parts)
