"""Local broadcast, multi-source broadcast, wake-up and leader election."""
import math
from dataclasses import dataclass, field

from . import envelopes
from .clustering import clustering, imperfect_labeling, new_session, radius_reduction, sns
from .errors import ParameterError
from .geometry import ClusterAssignment, density, validate_r_clustering
from .sinr_phy import communication_graph


@dataclass
class BroadcastOutcome:
    task: str
    rounds_used: int
    received: dict
    heard_by_neighbors: dict
    phases: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    timeout: bool = False
    leader: int = None
    extra: dict = field(default_factory=dict)

    @property
    def success(self):
        return (not self.timeout and all(self.received.values())
                and all(self.heard_by_neighbors.values()) and not self.failures)


class _Log:
    """Receptions of sparse-network-schedule passes, in absolute rounds."""

    def __init__(self):
        self.by_tx = {}          # (sender, round) -> set of receivers
        self.pairs = set()       # (sender, receiver)

    def add(self, rec):
        for r, s, u in zip(rec.rounds.tolist(), rec.senders.tolist(), rec.receivers.tolist()):
            self.by_tx.setdefault((s, rec.start + r), set()).add(u)
            self.pairs.add((s, u))

    def heard_in_one_round(self, adjacency):
        """Node -> some round of its transmissions reached all its graph neighbours."""
        best = {v: not adjacency[v] for v in adjacency}
        for (s, _), got in self.by_tx.items():
            if not best.get(s, True) and adjacency[s] <= got:
                best[s] = True
        return best


def _payload(sess, participants):
    """A sparse-network pass carrying the broadcast payload; traced as such."""
    prev, sess.phase = sess.phase, "payload"
    try:
        return sns(sess, participants)
    finally:
        sess.phase = prev


def _gamma(network, gamma):
    return max(1, int(gamma if gamma is not None else density(network)))


def local_broadcast(network, gamma=None, config=None, session=None, trace=None):
    """Clustering, labeling, then one sparse-network pass per label."""
    sess = session or new_session(network, config, trace=trace)
    gamma = _gamma(network, gamma)
    V = [int(v) for v in network.ids]
    t0 = sess.clock
    cl = clustering(sess, gamma, V)
    lab = imperfect_labeling(sess, gamma, V, cl)
    log = _Log()
    for l in range(1, gamma + 1):
        log.add(_payload(sess, [v for v in V if lab.labels.get(v) == l]))
    adj = communication_graph(network).adjacency
    failures = sorted((u, v) for u in adj for v in adj[u] if (u, v) not in log.pairs)
    ok = {v: True for v in V}
    for u, v in failures:
        ok[u] = False
    return BroadcastOutcome("local", sess.clock - t0, {v: True for v in V}, ok,
                            failures=failures,
                            extra={"label_multiplicity": lab.multiplicity,
                                   "clusters": len(cl.center_of), "flags": list(sess.flags)})


def _check_sources(network, sources):
    eps = network.params.epsilon
    src = sorted(set(int(v) for v in sources))
    if not src:
        raise ParameterError("at least one source is needed")
    for i, a in enumerate(src):
        for b in src[i + 1:]:
            if network.distance(a, b) <= 1 - eps:
                raise ParameterError("sources %d and %d are within 1-eps" % (a, b))
    return src


def _wake(rec, awake, inherit, woke_at, tag_of):
    """First payload reception wakes a node; it inherits the waker's cluster tag."""
    new = []
    for r, s, u in zip(rec.rounds.tolist(), rec.senders.tolist(), rec.receivers.tolist()):
        if u in awake:
            continue
        awake.add(u)
        inherit[u] = tag_of(s)
        woke_at[u] = rec.start + r
        new.append(u)
    return new


def sms_broadcast(network, sources, payload="m", gamma=None, config=None, session=None,
                  check=True, max_phases=None, trace=None):
    """Multi-source broadcast from sources pairwise more than 1-eps apart."""
    sess = session or new_session(network, config, trace=trace)
    src = _check_sources(network, sources)
    gamma = _gamma(network, gamma)
    V = [int(v) for v in network.ids]
    t0 = sess.clock
    awake = set(src)
    woke_at = {v: t0 for v in src}
    inherit = {}
    log = _Log()

    rec = _payload(sess, src)
    log.add(rec)
    L = _wake(rec, awake, inherit, woke_at, lambda s: s)
    cl = ClusterAssignment({v: inherit[v] for v in L}, {s: s for s in src})
    phases = [{"phase": 1, "start": t0, "end": sess.clock, "woken": sorted(L),
               "awake": len(awake)}]
    if check and L:
        phases[-1]["valid_r1"] = validate_r_clustering(network, cl, 1.0, network.params.epsilon).ok
    i = 1
    while L and (max_phases is None or i < max_phases):
        i += 1
        start = sess.clock
        lab = imperfect_labeling(sess, gamma, L, cl)
        new = []
        for l in range(1, gamma + 1):
            rec = _payload(sess, [v for v in L if lab.labels.get(v) == l])
            log.add(rec)
            new += _wake(rec, awake, inherit, woke_at, lambda s: cl.cluster_of[s])
        two = ClusterAssignment({v: inherit[v] for v in new},
                                {c: cl.center_of[c] for c in {inherit[v] for v in new}})
        entry = {"phase": i, "start": start, "woken": sorted(new), "awake": len(awake)}
        if check and new:
            entry["valid_r2"] = validate_r_clustering(network, two, 2.0, network.params.epsilon).ok
        if new:
            cl = radius_reduction(sess, gamma, new, two, 2)
            if check:
                entry["valid_r1"] = validate_r_clustering(network, cl, 1.0, network.params.epsilon,
                                                          participants=set(new)).ok
        entry["end"] = sess.clock
        phases.append(entry)
        L = new
    adj = communication_graph(network).adjacency
    heard = log.heard_in_one_round(adj)
    received = {v: v in awake for v in V}
    return BroadcastOutcome("sms", sess.clock - t0, received, heard, phases,
                            timeout=not all(received.values()),
                            extra={"woke_at": woke_at, "flags": list(sess.flags)})


def global_broadcast(network, source, **kw):
    out = sms_broadcast(network, [source], **kw)
    out.task = "global"
    return out


def wake_up(network, spontaneous, gamma=None, config=None, epoch=None, diameter=None,
            max_epochs=64, trace=None):
    """Epochs aligned to multiples of the epoch length; each clusters the nodes
    awake before it and broadcasts from the cluster centres."""
    if not spontaneous:
        raise ParameterError("at least one spontaneous wake-up is needed")
    gamma = _gamma(network, gamma)
    N = network.params.id_bound
    if epoch is None:
        if diameter is None:
            diameter = communication_graph(network).diameter
        epoch = envelopes.epoch_length(diameter, gamma, N)
    awake_at = {int(v): int(r) for v, r in spontaneous.items()}
    V = [int(v) for v in network.ids]
    first = min(awake_at.values())
    e = (first // epoch + 1) * epoch
    epochs = []
    for _ in range(max_epochs):
        if len(awake_at) == len(V) and max(awake_at.values()) <= e:
            break
        srcs = sorted(v for v, r in awake_at.items() if r < e)
        sess = new_session(network, config, trace=trace)
        sess.clock = e
        centers = sorted(clustering(sess, gamma, srcs).center_of.values())
        out = sms_broadcast(network, centers, gamma=gamma, session=sess, check=False)
        for v, r in out.extra["woke_at"].items():
            awake_at[v] = min(awake_at.get(v, r), r)
        epochs.append({"start": e, "sources": len(srcs), "centers": len(centers),
                       "end": sess.clock, "overrun": sess.clock - e > epoch})
        e = max(e + epoch, int(math.ceil(sess.clock / epoch)) * epoch)
    done = len(awake_at) == len(V)
    last = max(awake_at.values())
    return BroadcastOutcome("wakeup", last - first, {v: v in awake_at for v in V},
                            {v: True for v in V}, epochs, timeout=not done,
                            extra={"epoch": epoch, "first": first, "awake_at": awake_at})


def leader_election(network, gamma=None, config=None, trace=None):
    """Clustering centres are the candidates; a binary search over ID ranges
    probes each half with a broadcast from the candidates inside it."""
    if len(network) == 0:
        raise ParameterError("empty network")
    sess = new_session(network, config, trace=trace)
    gamma = _gamma(network, gamma)
    V = [int(v) for v in network.ids]
    N = network.params.id_bound
    cand = sorted(clustering(sess, gamma, V).center_of.values())
    view = {v: [1, N] for v in V}
    probes = []
    lo, hi = 1, N
    while lo < hi:
        mid = (lo + hi) // 2
        inside = [u for u in cand if lo <= u <= mid]
        if inside:
            out = sms_broadcast(network, inside, gamma=gamma, session=sess, check=False)
            got = out.received
        else:
            sess.skip(sess.config.sns_length)
            got = {v: False for v in V}
        for v in V:
            a, b = view[v]
            m = (a + b) // 2
            if got[v]:
                view[v] = [a, m]
            else:
                view[v] = [m + 1, b]
        probes.append({"range": [lo, mid], "nonempty": bool(inside)})
        if inside:
            hi = mid
        else:
            lo = mid + 1
    leaders = {v: view[v][0] for v in V}
    agreed = len(set(leaders.values())) == 1
    leader = leaders[V[0]]
    return BroadcastOutcome("leader", sess.clock, {v: True for v in V},
                            {v: leaders[v] == leader for v in V}, probes,
                            failures=[] if agreed and leader in cand else [("disagreement", leaders)],
                            leader=leader, extra={"candidates": cand, "views": leaders})
