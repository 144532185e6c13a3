"""Plane geometry, packing bounds and brute-force oracles over node sets.

Functions here accept any network-like object exposing ``ids`` (int array),
``pos`` (n x 2 float array) and ``params.epsilon``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

SEARCH_TOL = 1e-9


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ParameterError("point coordinates must be finite")

    def dist(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Ball:
    center: Point
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ParameterError("ball radius must be nonnegative")

    def contains(self, p):
        return self.center.dist(p) <= self.radius


@dataclass
class ClusterAssignment:
    """Node-ID -> cluster-ID map plus cluster-ID -> center node-ID map."""
    cluster_of: dict = field(default_factory=dict)
    center_of: dict = field(default_factory=dict)

    def members(self):
        out = {}
        for v, c in sorted(self.cluster_of.items()):
            out.setdefault(c, []).append(v)
        return out

    def restricted(self, ids):
        ids = set(ids)
        cl = {v: c for v, c in self.cluster_of.items() if v in ids}
        used = set(cl.values())
        return ClusterAssignment(cl, {c: z for c, z in self.center_of.items() if c in used})

    def to_json(self):
        return {
            "cluster_of": {str(k): int(v) for k, v in sorted(self.cluster_of.items())},
            "center_of": {str(k): int(v) for k, v in sorted(self.center_of.items())},
        }

    @classmethod
    def from_json(cls, obj):
        return cls({int(k): int(v) for k, v in obj["cluster_of"].items()},
                   {int(k): int(v) for k, v in obj["center_of"].items()})


@dataclass(frozen=True)
class ClosePair:
    u: int
    w: int
    distance: float
    zeta: float


def chi(r1, r2):
    """Area upper bound on how many points with pairwise distance >= r2 fit in B(x, r1)."""
    if r1 <= 0 or r2 <= 0:
        raise ParameterError("chi needs positive radii, got %r, %r" % (r1, r2))
    return int(math.floor((2.0 * r1 / r2 + 1.0) ** 2))


def d_gamma_r(gamma, r):
    """Threshold distance d with chi(r, d) >= gamma/2 and chi(r, d + tol) < gamma/2.

    The predicate holds on an interval (0, d]; d is found by bisection on
    (0, 2r].  When the predicate already holds at 2r (gamma <= 8) the upper
    endpoint 2r is returned.
    """
    if gamma < 2:
        raise ParameterError("gamma must be >= 2")
    if r <= 0:
        raise ParameterError("r must be positive")
    need = gamma / 2.0
    hi = 2.0 * r
    if chi(r, hi) >= need:
        return hi
    lo = hi
    while chi(r, lo) < need:
        lo /= 2.0
    # chi(r, lo) >= need > chi(r, hi)
    while hi - lo > SEARCH_TOL:
        mid = 0.5 * (lo + hi)
        if chi(r, mid) >= need:
            lo = mid
        else:
            hi = mid
    return lo


def pairwise_distances(pos):
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def _cluster_vector(network, clustering):
    if clustering is None:
        return np.ones(len(network.ids), dtype=np.int64)
    return np.array([clustering.cluster_of.get(int(v), -1) for v in network.ids], dtype=np.int64)


def find_close_pairs(network, clustering, gamma, r):
    """Every pair meeting the four close-pair conditions, by exhaustive scan.

    With ``clustering=None`` all nodes share cluster 1 and r is forced to 1.
    Nodes missing from a given clustering are ignored.
    """
    if clustering is None:
        r = 1.0
    eps = network.params.epsilon
    dg = d_gamma_r(gamma, r)
    ids = np.asarray(network.ids)
    pos = np.asarray(network.pos, dtype=float)
    cl = _cluster_vector(network, clustering)
    dist = pairwise_distances(pos)
    n = len(ids)
    same = (cl[:, None] == cl[None, :]) & (cl[:, None] >= 0)
    np.fill_diagonal(same, False)
    masked = np.where(same, dist, np.inf)
    nearest = masked.min(axis=1) if n else np.zeros(0)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            if not same[i, j]:
                continue
            d = dist[i, j]
            if d > dg or d > 1.0 - eps:
                continue
            # condition (c): mutually nearest inside the cluster (ties allowed)
            if d > nearest[i] or d > nearest[j]:
                continue
            zeta = d / dg
            # condition (d): no same-cluster pair in the two zeta-balls closer than d/2
            near = np.nonzero(((dist[i] <= zeta) | (dist[j] <= zeta)) & (cl == cl[i]))[0]
            sub = dist[np.ix_(near, near)]
            np.fill_diagonal(sub, np.inf)
            if sub.size and sub.min() < d / 2.0:
                continue
            u, w = sorted((int(ids[i]), int(ids[j])))
            out.append(ClosePair(u, w, float(d), float(zeta)))
    out.sort(key=lambda p: (p.u, p.w))
    return out


def unit_ball_counts(network, radius=1.0):
    """Per-node count of nodes inside the ball of given radius centred at that node."""
    pos = np.asarray(network.pos, dtype=float)
    if len(pos) == 0:
        return np.zeros(0, dtype=np.int64)
    return (pairwise_distances(pos) <= radius).sum(axis=1)


def density(network, clustering=None):
    """Max node-centred unit-ball count, or max cluster size when clustered."""
    if clustering is not None:
        ids = set(int(v) for v in network.ids)
        sizes = {}
        for v, c in clustering.cluster_of.items():
            if v in ids:
                sizes[c] = sizes.get(c, 0) + 1
        return max(sizes.values(), default=0)
    counts = unit_ball_counts(network)
    return int(counts.max()) if len(counts) else 0


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_r_clustering(network, clustering, r, epsilon, participants=None, tol=1e-9):
    """Check members lie within r of their centre and centres are >= 1-eps apart.

    If ``participants`` is given, every participant must also be assigned.
    Centres are looked up in ``network`` and may lie outside ``participants``.
    """
    index = {int(v): i for i, v in enumerate(network.ids)}
    pos = np.asarray(network.pos, dtype=float)
    rep = ValidationReport()
    if participants is not None:
        for v in sorted(participants):
            if v not in clustering.cluster_of:
                rep.violations.append(("unassigned", v))
    used = sorted(set(clustering.cluster_of.values()))
    for c in used:
        if c not in clustering.center_of or clustering.center_of[c] not in index:
            rep.violations.append(("no_center", c))
    for v, c in sorted(clustering.cluster_of.items()):
        z = clustering.center_of.get(c)
        if z is None or z not in index or v not in index:
            continue
        d = float(np.linalg.norm(pos[index[v]] - pos[index[z]]))
        if d > r + tol:
            rep.violations.append(("member_far", v, z, d))
    centers = sorted({clustering.center_of[c] for c in used
                      if c in clustering.center_of and clustering.center_of[c] in index})
    for a in range(len(centers)):
        for b in range(a + 1, len(centers)):
            d = float(np.linalg.norm(pos[index[centers[a]]] - pos[index[centers[b]]]))
            if d < 1.0 - epsilon - tol:
                rep.violations.append(("centers_close", centers[a], centers[b], d))
    return rep


def clusters_meeting_balls(network, clustering, radius=1.0, centers=None):
    """Max number of distinct clusters with a member inside one ball of the given
    radius; balls are node-centred unless ``centers`` (k x 2) is given."""
    pos = np.asarray(network.pos, dtype=float)
    cl = _cluster_vector(network, clustering)
    if len(pos) == 0:
        return 0
    if centers is None:
        near = pairwise_distances(pos) <= radius
    else:
        c = np.asarray(centers, dtype=float).reshape(-1, 2)
        near = np.linalg.norm(c[:, None, :] - pos[None, :, :], axis=-1) <= radius
    return max((len(set(cl[row].tolist()) - {-1}) for row in near), default=0)


def sample_centers(network, count=2000, radius=1.0, seed=0):
    """Ball centres worth probing: uniform points over the padded bounding box
    plus midpoints of node pairs closer than 2*radius."""
    pos = np.asarray(network.pos, dtype=float)
    if len(pos) == 0:
        return np.zeros((0, 2))
    rng = np.random.default_rng(seed)
    lo, hi = pos.min(axis=0) - radius, pos.max(axis=0) + radius
    pts = [rng.uniform(lo, hi, size=(count, 2))]
    d = pairwise_distances(pos)
    i, j = np.nonzero(np.triu(d <= 2 * radius, 1))
    if len(i) > count:
        pick = rng.choice(len(i), size=count, replace=False)
        i, j = i[pick], j[pick]
    pts.append((pos[i] + pos[j]) / 2)
    return np.vstack(pts)
