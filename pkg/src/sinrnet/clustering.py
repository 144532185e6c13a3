"""Proximity graphs, sparsification, imperfect labeling and 1-clustering.

Every routine runs inside a :class:`~sinrnet.engine.Session`.  Nodes act on
their own reception logs only; positions enter through the physical layer.
Sub-computations are deterministic functions of their inputs, so repeated
calls (and iterations that reached a fixed point) are replayed by charging
their rounds instead of simulating them again.
"""
import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from .engine import Session
from .errors import ConfigurationError, ContractViolation
from .geometry import ClusterAssignment, chi
from .selectors import Schedule


@dataclass(frozen=True)
class ProtocolConfig:
    """Schedule sizes used by the protocols.

    The interference-budget constants from ``derive_constants`` are far too
    large to simulate, so the selectors here are random families with a
    fixed per-round inclusion probability and a fixed length.
    """
    pgc_k: int = 8             # proximity-graph selector: inclusion prob 1/pgc_k
    pgc_l: int = 2             # cluster-aware selector: allowed-cluster prob 1/pgc_l
    pgc_length: int = 1000
    kappa_cap: int = 16        # candidates kept after filtering
    sns_k: int = 12            # sparse network schedule: inclusion prob 1/sns_k
    sns_length: int = 1000
    local_degree_bound: int = 64
    seed: int = 7

    def pgc_schedule(self, N, clustered):
        if clustered:
            return _schedule("wcss", N, self.pgc_k, self.pgc_l, self.seed, self.pgc_length)
        return _schedule("wss", N, self.pgc_k, 1, self.seed, self.pgc_length)

    def sns_schedule(self, N):
        return _schedule("ssf", N, self.sns_k, 1, self.seed + 1, self.sns_length)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


@lru_cache(maxsize=64)
def _schedule(kind, N, k, l, seed, length):
    return Schedule(kind, N, k, l, seed, length)


def new_session(network, config=None, **kw):
    return Session(network, config or ProtocolConfig(), **kw)


def _cfg(session):
    if session.config is None:
        raise ConfigurationError("no selector configuration attached to the session")
    return session.config


def _id_bound(session):
    return int(session.network.params.id_bound)


def _eps(session):
    return session.network.params.epsilon


def stage_count(gamma):
    """Smallest k with (4/3)^k >= gamma."""
    k, x = 0, 1.0
    while x < gamma - 1e-12:
        x *= 4.0 / 3.0
        k += 1
    return k


def shrink(lam):
    return max(1, math.ceil(0.75 * lam))


def grow(lam):
    return math.ceil(4.0 * lam / 3.0)


# ---------------------------------------------------------------------------
# MIS in the LOCAL model: Linial colour reduction, then a sweep over colours

def _is_prime(q):
    if q < 2:
        return False
    for p in range(2, int(q ** 0.5) + 1):
        if q % p == 0:
            return False
    return True


def _next_prime(q):
    q = max(q, 2)
    while not _is_prime(q):
        q += 1
    return q


def _reduction_field(M, delta):
    """Prime q and degree d with q^(d+1) >= M and q > delta*d, minimising q."""
    best = None
    for d in range(1, 64):
        q = _next_prime(max(delta * d + 1, int(math.ceil(M ** (1.0 / (d + 1))))))
        while q ** (d + 1) < M:
            q = _next_prime(q + 1)
        if best is None or q < best[0]:
            best = (q, d)
    return best


@lru_cache(maxsize=256)
def linial_plan(M, delta):
    """Sequence of (palette, q, d) reduction steps and the final palette size."""
    steps = []
    while True:
        q, d = _reduction_field(M, delta)
        if q * q >= M:
            return tuple(steps), M
        steps.append((M, q, d))
        M = q * q


def mis_round_budget(id_bound, degree_bound):
    """LOCAL rounds used by :func:`mis_constant_degree` for these bounds."""
    steps, palette = linial_plan(int(id_bound), int(degree_bound))
    return len(steps) + palette


def _poly_at(color, q, d, x):
    coeffs = []
    for _ in range(d + 1):
        coeffs.append(color % q)
        color //= q
    val = 0
    for a in reversed(coeffs):
        val = (val * x + a) % q
    return val


def mis_constant_degree(adjacency, degree_bound, id_bound):
    """Maximal independent set of a bounded-degree graph given as {node: set(neighbours)}.

    Colours start as ID - 1.  Each reduction step maps a colour to the point
    (x, f(x)) of its polynomial over GF(q) at the first x where it differs
    from every neighbour's polynomial.  Colour classes are then swept in
    order, one LOCAL round each.
    """
    nodes = sorted(adjacency)
    for v in nodes:
        if len(adjacency[v]) > degree_bound:
            raise ContractViolation("node %d has degree %d > bound %d"
                                    % (v, len(adjacency[v]), degree_bound))
    color = {v: v - 1 for v in nodes}
    steps, palette = linial_plan(int(id_bound), int(degree_bound))
    for _, q, d in steps:
        new = {}
        for v in nodes:
            others = [color[u] for u in adjacency[v]]
            for x in range(q):
                fx = _poly_at(color[v], q, d, x)
                if all(_poly_at(c, q, d, x) != fx for c in others):
                    new[v] = x * q + fx
                    break
            else:
                raise ContractViolation("colour reduction found no free point")
        color = new
    mis = set()
    for v in sorted(nodes, key=lambda u: (color[u], u)):
        if not (adjacency[v] & mis):
            mis.add(v)
    return mis


# ---------------------------------------------------------------------------
# proximity graph

@dataclass
class ProximityGraph:
    edges: set
    neighbors: dict
    schedule: Schedule
    heard: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)
    exchange: tuple = None          # session span of the exchange phase

    @property
    def max_degree(self):
        return max((len(n) for n in self.neighbors.values()), default=0)


def proximity_graph(session, participants, clustering=None):
    """Exchange, filtering and confirmation phases over a common selector."""
    cfg = _cfg(session)
    parts = sorted(int(v) for v in participants)
    clustered = clustering is not None
    sched = cfg.pgc_schedule(_id_bound(session), clustered)
    tags = {v: clustering.cluster_of[v] for v in parts} if clustered else None
    cap = cfg.kappa_cap
    m = len(sched)

    # exchange: every participant announces (ID, cluster)
    ex = session.mark()
    rec = session.execute(sched, parts, tags, receivers=parts)
    ex = session.span(ex)
    col = {int(v): j for j, v in enumerate(rec.participants.tolist())}
    logs = {}
    for r, s, u in zip(rec.rounds.tolist(), rec.senders.tolist(), rec.receivers.tolist()):
        if clustered and tags[s] != tags[u]:
            continue                      # foreign-cluster messages are ignored
        logs.setdefault(u, ([], []))
        logs[u][0].append(r)
        logs[u][1].append(s)

    # filtering: drop w if it was scheduled in a round where v heard someone else
    heard, cand = {}, {}
    for v in parts:
        rows, senders = logs.get(v, ([], []))
        U = sorted(set(senders))
        heard[v] = U
        keep = []
        if U:
            sub = rec.membership[np.ix_(rows, [col[w] for w in U])]
            sub &= np.asarray(senders)[:, None] != np.asarray(U)[None, :]
            keep = [w for w, bad in zip(U, sub.any(axis=0)) if not bad]
        cand[v] = keep if len(keep) <= cap else []

    # confirmation: in repetition j node v sends <v, C_v[j]>
    E = {v: set() for v in parts}
    prev_tx, prev_rec, prev_span = None, None, None
    for j in range(cap):
        tx = [v for v in parts if len(cand[v]) > j]
        if not tx:
            session.skip((cap - j) * m)
            break
        if tx == prev_tx:
            session.skip(m, repeat_of=prev_span)
            rj = prev_rec
        else:
            mk = session.mark()
            rj = session.execute(sched, tx, tags, receivers=parts)
            prev_tx, prev_rec, prev_span = tx, rj, session.span(mk)
        for s, u in zip(rj.senders.tolist(), rj.receivers.tolist()):
            if cand[s][j] == u and s in cand[u]:
                E[u].add(s)
    edges = set()
    for u in parts:
        for w in E[u]:
            if u in E[w]:
                edges.add((min(u, w), max(u, w)))
    nbrs = {v: set() for v in parts}
    for u, w in edges:
        nbrs[u].add(w)
        nbrs[w].add(u)
    return ProximityGraph(edges, nbrs, sched, heard, cand, ex)


def iteration_cost(session, clustered):
    """Rounds of one sparsification iteration: exchange, confirmation,
    independent set (LOCAL rounds for the unclustered variant) and parent notice."""
    cfg = _cfg(session)
    m = cfg.pgc_length
    local = 0 if clustered else mis_round_budget(_id_bound(session), cfg.kappa_cap)
    return (1 + cfg.kappa_cap + local + 1) * m


# ---------------------------------------------------------------------------
# sparsification

@dataclass
class IterationRecord:
    active: frozenset
    parent_of: dict


@dataclass
class SparsificationResult:
    retained: frozenset
    parent: dict
    children: dict
    iterations: list
    schedule: Schedule
    gamma: int
    clustered: bool
    participants: frozenset = frozenset()

    @property
    def removed(self):
        return self.participants - self.retained


def _key(clustering, ids):
    if clustering is None:
        return None
    return tuple((v, clustering.cluster_of[v]) for v in sorted(ids))


def sparsify(session, gamma, participants, clustering=None):
    """Iterated proximity graphs; independent-set nodes adopt their neighbours as children.

    Clustered inputs use the local-minima rule, unclustered inputs the
    simulated LOCAL MIS.  Returns the retained set with parent links.
    """
    X = frozenset(int(v) for v in participants)
    gamma = max(1, int(gamma))
    key = ("sparsify", gamma, X, _key(clustering, X))
    return session.memo(key, lambda: _sparsify(session, gamma, X, clustering))


def _sparsify(session, gamma, X, clustering):
    cfg = _cfg(session)
    clustered = clustering is not None
    sched = cfg.pgc_schedule(_id_bound(session), clustered)
    m = len(sched)
    active = set(X)
    prnts, globchl = set(), set()
    parent, children = {}, {}
    iters = []
    sub = clustering.restricted(X) if clustered else None
    for i in range(gamma):
        mark = session.mark()
        H = proximity_graph(session, active, sub)
        if clustered:
            Y = {v for v in active if all(v < u for u in H.neighbors[v])}
        else:
            Y = mis_constant_degree(H.neighbors, cfg.kappa_cap, _id_bound(session))
            # LOCAL rounds reuse the exchange pattern
            session.skip(mis_round_budget(_id_bound(session), cfg.kappa_cap) * m, repeat_of=H.exchange)
        session.skip(m, repeat_of=H.exchange)     # children announce their parent
        if not H.edges:
            # the next iteration would see the same active set: a fixed point
            session.skip((gamma - i - 1) * iteration_cost(session, clustered), repeat_of=mark)
            break
        newchl = {v for v in active if v not in Y and H.neighbors[v] & Y}
        formed = {}
        for v in sorted(newchl):
            p = min(H.neighbors[v] & Y)
            parent[v] = p
            children.setdefault(p, set()).add(v)
            formed[v] = p
        iters.append(IterationRecord(frozenset(active), formed))
        prnts |= {v for v in active if children.get(v)}
        globchl |= newchl
        active -= prnts | globchl
    return SparsificationResult(frozenset(active | prnts), parent, children, iters, sched,
                                gamma, clustered, X)


def _noop_sparsify_cost(session, lam, clustered):
    return max(1, int(lam)) * iteration_cost(session, clustered)


@dataclass
class StagedSparsification:
    """Nested retained sets sets[0] ⊇ sets[1] ⊇ ... and one result per stage."""
    sets: list
    stages: list
    gammas: list


def sparsify_unclustered(session, gamma, participants):
    """Chain of unclustered sparsifications, chi(5, 1-eps) long."""
    l = chi(5, 1 - _eps(session))
    X = frozenset(int(v) for v in participants)
    sets, stages = [X], []
    for i in range(l):
        t0 = session.clock
        mark = session.mark()
        res = sparsify(session, gamma, X, None)
        stages.append(res)
        sets.append(res.retained)
        if res.retained == X:
            left = l - i - 1
            session.skip(left * (session.clock - t0), repeat_of=mark)
            stages.extend([res] * left)
            sets.extend([X] * left)
            break
        X = res.retained
    return StagedSparsification(sets, stages, [max(1, int(gamma))] * l)


def full_sparsify(session, gamma, participants, clustering=None):
    """Stages of sparsification at densities gamma, 3/4 gamma, ... down to 1."""
    X = frozenset(int(v) for v in participants)
    k = stage_count(gamma)
    lam = max(1, int(math.ceil(gamma)))
    sets, stages, gammas = [X], [], []
    clustered = clustering is not None
    for i in range(k):
        mark = session.mark()
        res = sparsify(session, lam, X, clustering)
        stages.append(res)
        gammas.append(lam)
        sets.append(res.retained)
        if res.retained == X:
            # later stages start from the same edgeless proximity graph
            rest = []
            for _ in range(i + 1, k):
                lam = shrink(lam)
                rest.append(lam)
            session.skip(sum(_noop_sparsify_cost(session, g, clustered) for g in rest),
                         repeat_of=session.span(mark))
            for g in rest:
                stages.append(SparsificationResult(X, {}, {}, [], res.schedule, g, clustered, X))
                gammas.append(g)
                sets.append(X)
            break
        X = res.retained
        lam = shrink(lam)
    return StagedSparsification(sets, stages, gammas)


def full_sparsify_budget(session, gamma, clustered=True):
    total, lam = 0, max(1, int(math.ceil(gamma)))
    for _ in range(stage_count(gamma)):
        total += _noop_sparsify_cost(session, lam, clustered)
        lam = shrink(lam)
    return total


# ---------------------------------------------------------------------------
# replaying stage schedules along parent links

def _replay_up(session, stage, gamma, tags, payload):
    """Children send payload[child] to parents, iteration by iteration.

    Returns {parent: {child: value}}.  Transmitters are a subset of the
    iteration's active set, so every exchange heard then is heard again.
    """
    m = len(stage.schedule)
    got = {}
    for it in stage.iterations:
        tx = sorted(it.parent_of)
        rec = session.execute(stage.schedule, tx, tags, receivers=set(it.parent_of.values()))
        for s, u in zip(rec.senders.tolist(), rec.receivers.tolist()):
            if it.parent_of.get(s) == u:
                got.setdefault(u, {})[s] = payload[s]
        for c, p in it.parent_of.items():
            if c not in got.get(p, {}):
                raise ContractViolation("parent %d missed child %d on replay" % (p, c))
    session.skip((max(1, gamma) - len(stage.iterations)) * m)
    return got


def _replay_down(session, stage, gamma, tags, message_for, reps, broadcast=False):
    """Parents send a per-child message; repetition j carries the j-th child's message.
    With ``broadcast`` one repetition carries a message meant for all children.

    Returns {child: value received from its parent}.
    """
    m = len(stage.schedule)
    got = {}
    for it in stage.iterations:
        kids = {}
        for c, p in it.parent_of.items():
            kids.setdefault(p, []).append(c)
        for p in kids:
            kids[p].sort()
        used = 0
        for j in range(reps):
            tx = sorted(p for p in kids if len(kids[p]) > j)
            if not tx:
                break
            rec = session.execute(stage.schedule, tx, tags, receivers=set(it.parent_of))
            used += 1
            for s, u in zip(rec.senders.tolist(), rec.receivers.tolist()):
                if (broadcast and it.parent_of.get(u) == s) or kids[s][j] == u:
                    got[u] = message_for(s, u)
        session.skip((reps - used) * m)
        for c in it.parent_of:
            if c not in got:
                raise ContractViolation("child %d missed its parent's message on replay" % c)
    session.skip((max(1, gamma) - len(stage.iterations)) * reps * m)
    return got


# ---------------------------------------------------------------------------
# imperfect labeling

@dataclass
class Labeling:
    labels: dict
    multiplicity: int
    bound: int
    subtree_size: dict = field(default_factory=dict)
    parent: dict = field(default_factory=dict)

    def to_json(self):
        return {"labels": {str(k): int(v) for k, v in sorted(self.labels.items())},
                "multiplicity": self.multiplicity, "bound": self.bound}


def imperfect_labeling(session, gamma, participants, clustering, r=1.0):
    """Labels from subtree sizes of the sparsification forest.

    Sizes travel up the forest stage by stage, then label ranges travel
    down: a node with range starting at a takes label a and hands its
    children consecutive sub-ranges in ID order.
    """
    cfg = _cfg(session)
    X = frozenset(int(v) for v in participants)
    fs = full_sparsify(session, gamma, X, clustering)
    tags = {v: clustering.cluster_of[v] for v in X} if clustering is not None else None
    parent = {}
    for st in fs.stages:
        parent.update(st.parent)
    size = {v: 1 for v in X}
    for st, g in zip(fs.stages, fs.gammas):
        got = _replay_up(session, st, g, tags, size)
        for p, kids in got.items():
            size[p] += sum(kids.values())
    kids_of = {}
    for c, p in parent.items():
        kids_of.setdefault(p, []).append(c)
    start = {v: 1 for v in fs.sets[-1]}

    def child_range(p, c):
        a = start[p] + 1
        for x in sorted(kids_of[p]):
            if x == c:
                return a
            a += size[x]
        raise ContractViolation("unknown child")

    for st, g in reversed(list(zip(fs.stages, fs.gammas))):
        got = _replay_down(session, st, g, tags, child_range, cfg.kappa_cap)
        start.update(got)
    labels = {v: start[v] for v in X}
    per = {}
    for v, lab in labels.items():
        c = clustering.cluster_of[v] if clustering is not None else 1
        per[(c, lab)] = per.get((c, lab), 0) + 1
    mult = max(per.values(), default=0)
    return Labeling(labels, mult, chi(r, 1 - _eps(session)), size, parent)


# ---------------------------------------------------------------------------
# sparse network schedule, radius reduction and clustering

def sns(session, participants, receivers=None):
    """One pass of the sparse network schedule."""
    cfg = _cfg(session)
    return session.execute(cfg.sns_schedule(_id_bound(session)), participants, receivers=receivers)


def radius_reduction(session, gamma, participants, clustering, r=2):
    """Turn an r-clustering into a 1-clustering centred on independent-set nodes."""
    X = frozenset(int(v) for v in participants)
    key = ("rr", max(1, int(gamma)), r, X, _key(clustering, X))
    return session.memo(key, lambda: _radius_reduction(session, gamma, X, clustering, r))


def _radius_reduction(session, gamma, X, clustering, r):
    cfg = _cfg(session)
    N = _id_bound(session)
    m = cfg.sns_length
    local = mis_round_budget(N, cfg.local_degree_bound)
    X = set(X)
    everyone = frozenset(X)
    newc = {}
    iters = chi(r + 1, 1 - _eps(session))
    for i in range(iters):
        if not X:
            t0 = session.clock
            full_sparsify(session, gamma, X, clustering.restricted(X))
            once = session.clock - t0 + (2 + local) * m
            session.skip((2 + local) * m)
            session.skip(once * (iters - i - 1))
            break
        fs = full_sparsify(session, gamma, X, clustering.restricted(X))
        core = fs.sets[-1]
        mark = session.mark()
        rec = sns(session, core, receivers=X)
        heard = rec.senders_heard()
        G = {v: {u for u in heard.get(v, ()) if u in core and v in heard.get(u, ())} for v in core}
        D = mis_constant_degree(G, cfg.local_degree_bound, N)
        session.skip(local * m, repeat_of=mark)
        rec2 = sns(session, D, receivers=X)
        heard2 = rec2.senders_heard()
        assigned = set()
        for v in sorted(X - D):
            got = [u for u in heard2.get(v, ()) if u in D]
            if got:
                newc[v] = min(got)
                assigned.add(v)
        for d in D:
            newc[d] = d
        X -= D | assigned
    if X:
        session.flags.append(("unassigned_after_radius_reduction", sorted(X)))
    centers = sorted(set(newc.values()))
    return ClusterAssignment({v: newc[v] for v in sorted(everyone) if v in newc},
                             {c: c for c in centers})


@dataclass
class ClusteringRun:
    assignment: ClusterAssignment
    forward_sets: list
    stages: list


def clustering(session, gamma, participants):
    """1-clustering of an unclustered set of density at most gamma."""
    return clustering_run(session, gamma, participants).assignment


def clustering_run(session, gamma, participants):
    X = frozenset(int(v) for v in participants)
    gamma = max(1, int(math.ceil(gamma)))
    k = stage_count(gamma)
    l = chi(5, 1 - _eps(session))
    lam = gamma
    sets, stages = [X], []
    for i in range(k):
        mark = session.mark()
        us = sparsify_unclustered(session, lam, X)
        stages.extend(us.stages)
        sets.extend(us.sets[1:])
        lam_next = shrink(lam)
        if us.sets[-1] == X:
            span = session.span(mark)
            for _ in range(i + 1, k):
                session.skip(l * _noop_sparsify_cost(session, lam_next, False), repeat_of=span)
                stages.extend([SparsificationResult(X, {}, {}, [], us.stages[-1].schedule,
                                                    lam_next, False, X)] * l)
                sets.extend([X] * l)
                lam_next = shrink(lam_next)
            break
        X = us.sets[-1]
        lam = lam_next

    K = len(stages)
    cl = {v: v for v in sets[-1]}
    X = set(sets[-1])
    lam = 1
    for i in range(K + 1):
        j = K - i
        if j >= 1:
            st = stages[j - 1]
            joined = sets[j - 1] - sets[j]
            got = _replay_down(session, st, st.gamma, None, lambda p, c: cl.get(p), 1, broadcast=True)
            for c in joined:
                if got.get(c) is not None:
                    cl[c] = got[c]
            X |= joined
        X = {v for v in X if v in cl}
        cur = ClusterAssignment(dict(cl), {c: c for c in set(cl.values())})
        out = radius_reduction(session, lam, X, cur, 2)
        cl = dict(out.cluster_of)
        if i % l == 0:
            lam = grow(lam)
    centers = sorted(set(cl.values()))
    return ClusteringRun(ClusterAssignment(cl, {c: c for c in centers}), sets, stages)
