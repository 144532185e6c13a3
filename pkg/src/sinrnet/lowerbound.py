"""Lower-bound gadgets, gadget chains, their interference audit and the
adversarial ID assignment against deterministic broadcast algorithms.

A gadget is a collinear group: a source ``s``, a core v_0..v_{Δ+1} packed
into less than 3ε with geometrically shrinking gaps, and a target ``t``
that only v_{Δ+1} can reach.  Two simultaneous core transmitters silence
everything to the right of the later one, so the core learns nothing
about positions until the adversary runs out of IDs to hand out.
"""
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import ProtocolConfig, new_session
from .engine import Protocol, run
from .errors import ConstructionError, ContractViolation, HorizonReached, ParameterError
from .geometry import Point, density
from .sinr_phy import Network, SinrParams, communication_graph

# Two core transmitters silence the right side only when beta >= 2^alpha; these are
# the defaults for every lower-bound run.
LB_PARAMS = SinrParams(alpha=3.0, beta=10.0, noise=1.0, epsilon=0.05, id_bound=256)
TOL = 1e-12
DEFAULT_HORIZON = 1_000_000


def lb_params(epsilon, id_bound=256, alpha=3.0, beta=10.0, noise=1.0):
    return SinrParams(alpha=alpha, beta=beta, noise=noise, epsilon=epsilon, id_bound=id_bound)


# ---------------------------------------------------------------------------
# gadget

@dataclass
class GadgetSpec:
    """Offsets along the x axis from ``origin`` (the position of v_0), in the
    order s, v_0, ..., v_{Δ+1}, t."""
    delta: int
    epsilon: float
    origin: Point
    offsets: np.ndarray

    @property
    def size(self):
        return self.delta + 4

    @property
    def roles(self):
        return ["s"] + ["v%d" % i for i in range(self.delta + 2)] + ["t"]

    @property
    def core(self):
        """Node-list indices of v_0..v_{Δ+1}."""
        return list(range(1, self.delta + 3))

    def index(self, role):
        return self.roles.index(role)

    def positions(self):
        pos = np.zeros((self.size, 2))
        pos[:, 0] = self.origin.x + self.offsets
        pos[:, 1] = self.origin.y
        return pos

    def distance(self, a, b):
        return abs(float(self.offsets[self.index(a)] - self.offsets[self.index(b)]))

    def network(self, params=None, ids=None, keep=None):
        """Network of the gadget; ``ids`` maps role -> ID (default 1..Δ+4 left to right),
        ``keep`` restricts to a subset of roles."""
        params = params or lb_params(self.epsilon)
        if abs(params.epsilon - self.epsilon) > TOL:
            params = dataclasses.replace(params, epsilon=self.epsilon)
        ids = ids or {r: i + 1 for i, r in enumerate(self.roles)}
        roles = [r for r in self.roles if keep is None or r in keep]
        pos = self.positions()
        return Network(params, [ids[r] for r in roles], [pos[self.index(r)] for r in roles])

    def to_json(self):
        return {"delta": self.delta, "epsilon": self.epsilon,
                "origin": [self.origin.x, self.origin.y],
                "positions": {r: [self.origin.x + float(o), self.origin.y]
                              for r, o in zip(self.roles, self.offsets)}}


def gadget_offsets(delta, epsilon):
    # v_i sits at eps * 2^-Δ * (2^i - 1): the gaps eps/2^(Δ-i) summed in closed form
    core = [math.ldexp(epsilon * ((1 << i) - 1), -delta) for i in range(delta + 1)]
    last = epsilon * (1 - math.ldexp(1.0, -delta)) + 1.5 * epsilon
    t = last + (1 - epsilon)
    s = -(1 - 4 * epsilon)
    return np.array([s] + core + [last, t])


def gadget_violations(spec):
    """Names of the geometric constraints the gadget breaks."""
    eps, D = spec.epsilon, spec.delta
    bad = []
    span = spec.distance("v0", "v%d" % (D + 1))
    if not 2 * eps < span < 3 * eps:
        bad.append("2eps < d(v0, v%d) < 3eps" % (D + 1))
    for r in spec.roles:
        if r not in ("t", "v%d" % (D + 1)) and not spec.distance(r, "t") > 1:
            bad.append("d(%s, t) > 1" % r)
    if not spec.distance("v%d" % (D + 1), "t") <= 1 - eps + TOL:
        bad.append("d(v%d, t) <= 1-eps" % (D + 1))
    for i in range(D + 2):
        if not spec.distance("s", "v%d" % i) <= 1 - eps + TOL:
            bad.append("d(s, v%d) <= 1-eps" % i)
    if np.any(np.diff(spec.offsets) <= 0):
        bad.append("distinct positions")
    return bad


def build_gadget(delta, epsilon, origin=None):
    if int(delta) != delta or delta < 1:
        raise ParameterError("delta must be a positive integer")
    if not 0 < epsilon < 0.25:
        raise ConstructionError("epsilon must lie in (0, 1/4) for s to sit left of the core")
    origin = origin or Point(0.0, 0.0)
    spec = GadgetSpec(int(delta), float(epsilon), origin, gadget_offsets(int(delta), float(epsilon)))
    bad = gadget_violations(spec)
    if bad:
        raise ConstructionError("gadget(delta=%d, eps=%g) violates %s" % (delta, epsilon, ", ".join(bad)))
    return spec


def nu(params, epsilon=None):
    """External interference at which a core transmission 4eps away is just decodable."""
    eps = params.epsilon if epsilon is None else epsilon
    return params.power / ((4 * eps) ** params.alpha * params.beta) - params.noise


# ---------------------------------------------------------------------------
# core facts

@dataclass
class CoreFactsReport:
    delta: int
    exhaustive: bool
    checked: int
    interference_levels: list
    counterexamples: list = field(default_factory=list)
    positive: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.counterexamples and all(self.positive.values())

    def to_json(self):
        return {"delta": self.delta, "exhaustive": self.exhaustive, "checked": self.checked,
                "interference_levels": self.interference_levels,
                "counterexamples": self.counterexamples[:20], "positive": self.positive}


def _gains_1d(x, params):
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    return params.power * d ** (-params.alpha)


def _receptions(B, G, params, ext):
    """recv[k, u]: some transmitter of row k is decoded at u.  Uses
    (1+beta) g_wu >= beta (N + I_total), which avoids subtracting the signal."""
    p = params
    total = B.astype(float) @ G[:B.shape[1]]
    lhs_base = p.beta * (p.noise + ext + total)
    recv = np.zeros(total.shape, dtype=bool)
    for w in range(B.shape[1]):
        recv |= B[:, w:w + 1] & ((1 + p.beta) * G[w][None, :] >= lhs_base)
    recv[:, :B.shape[1]] &= ~B
    return recv


def _check_batch(B, G, params, ext, delta):
    """Row indices and descriptions of fact violations in a batch of transmitter sets."""
    n_tx = B.shape[1]                      # s and the core
    recv = _receptions(B, G, params, ext)
    core = B[:, 1:]
    count = core.sum(axis=1)
    last = n_tx - 1                        # node index of v_{Δ+1}
    # highest transmitting core node, as a node index
    top = np.where(count > 0, n_tx - 1 - np.argmax(core[:, ::-1], axis=1), -1)
    bad = []
    cols = np.arange(recv.shape[1])
    right = (cols[None, :] > top[:, None]) & (cols[None, :] <= last)
    f1 = (count >= 2)[:, None] & right & recv
    for k in np.nonzero(f1.any(axis=1))[0]:
        bad.append((1, int(k), int(np.nonzero(f1[k])[0][0])))
    sole_last = (count == 1) & B[:, last]
    t = recv.shape[1] - 1
    f2 = ~sole_last & recv[:, t]
    for k in np.nonzero(f2)[0]:
        bad.append((2, int(k), t))
    return bad


def verify_core_facts(gadget, params=None, exhaustive_limit=20, samples=100_000, seed=0,
                      chunk=1 << 14):
    """Check both silencing facts over transmitter sets drawn from {s} and the core,
    at zero external interference and at nu (non-reception is monotone in
    interference, so the endpoints cover the range)."""
    params = params or lb_params(gadget.epsilon)
    x = gadget.origin.x + gadget.offsets
    G = _gains_1d(x, params)
    n_tx = gadget.delta + 3
    levels = [0.0, max(0.0, nu(params, gadget.epsilon))]
    roles = gadget.roles
    rep = CoreFactsReport(gadget.delta, gadget.delta <= exhaustive_limit, 0, levels)

    def batches():
        if rep.exhaustive:
            total = 1 << n_tx
            bits = np.arange(n_tx, dtype=np.int64)
            for a in range(0, total, chunk):
                codes = np.arange(a, min(total, a + chunk), dtype=np.int64)
                yield (codes[:, None] >> bits[None, :]) & 1 == 1
        else:
            rng = np.random.default_rng(seed)
            left = samples
            while left > 0:
                k = min(chunk, left)
                # log-uniform inclusion rate so small sets are well represented
                rate = np.exp(rng.uniform(np.log(1.0 / n_tx), 0.0, size=(k, 1)))
                yield rng.random((k, n_tx)) < rate
                left -= k

    for B in batches():
        rep.checked += len(B)
        for ext in levels:
            for fact, k, u in _check_batch(B, G, params, ext, gadget.delta):
                rep.counterexamples.append({"fact": fact, "interference": ext,
                                            "transmitters": [roles[j] for j in np.nonzero(B[k])[0]],
                                            "receiver": roles[u]})
                if len(rep.counterexamples) > 100:
                    return rep
    # the positive side: a lone v_{Δ+1} reaches t when t sees no outside noise,
    # and a lone core node is heard across the core under interference nu
    last = n_tx - 1
    B = np.zeros((1, n_tx), dtype=bool)
    B[0, last] = True
    rep.positive["sole_last_reaches_t"] = bool(_receptions(B, G, params, 0.0)[0, -1])
    ok = True
    for j in range(1, n_tx):
        B = np.zeros((1, n_tx), dtype=bool)
        B[0, j] = True
        r = _receptions(B, G, params, levels[1])[0]
        ok &= bool(all(r[i] for i in range(1, n_tx) if i != j))
    rep.positive["sole_core_heard_in_core"] = ok
    return rep


# ---------------------------------------------------------------------------
# chain

@dataclass
class ChainSpec:
    D: int
    delta: int
    epsilon: float
    kappa: int
    gadgets: list
    network: Network
    roles: list                      # per node: (gadget index, role) or ("path", gadget index, j)

    def core_ids(self, g):
        return [int(self.network.ids[i]) for i, r in enumerate(self.roles)
                if r[0] == g and r[1].startswith("v")]

    def role_id(self, g, role):
        return int(self.network.ids[self.roles.index((g, role))])

    def to_json(self):
        return {"D": self.D, "delta": self.delta, "epsilon": self.epsilon, "kappa": self.kappa,
                "gadgets": len(self.gadgets), "network": self.network.to_json()}


def separator_length(delta, epsilon, alpha):
    return int(math.ceil(delta ** (1.0 / alpha) / (1 - epsilon) - 1e-12))


def build_chain(D, delta, epsilon, params=None, ids=None):
    """floor(D/kappa) gadgets, each followed by a kappa-node path at spacing 1-eps;
    the node after a path is the next gadget's source.  IDs default to 1..n
    from left to right; ``ids`` may map (gadget, role) / ("path", g, j) keys."""
    params = params or lb_params(epsilon)
    kappa = separator_length(delta, epsilon, params.alpha)
    if D < kappa:
        raise ParameterError("D=%d is below the separator length %d" % (D, kappa))
    count = D // kappa
    step = 1 - epsilon
    xs, roles, gadgets = [], [], []
    cursor = 0.0                                     # position of the next source
    for g in range(count):
        gd = build_gadget(delta, epsilon, Point(cursor + (1 - 4 * epsilon), 0.0))
        gadgets.append(gd)
        for r, o in zip(gd.roles, gd.offsets):
            xs.append(gd.origin.x + float(o))
            roles.append((g, r))
        tx = xs[-1]
        for j in range(1, kappa + 1):
            xs.append(tx + j * step)
            roles.append(("path", g, j))
        cursor = xs[-1] + step
    n = len(xs)
    if ids is None:
        id_list = list(range(1, n + 1))
    else:
        id_list = [ids[r] for r in roles]
    if params.id_bound < max(id_list):
        params = dataclasses.replace(params, id_bound=int(max(id_list)))
    if abs(params.epsilon - epsilon) > TOL:
        params = dataclasses.replace(params, epsilon=epsilon)
    pos = np.zeros((n, 2))
    pos[:, 0] = xs
    net = Network(params, id_list, pos)
    return ChainSpec(D, delta, epsilon, kappa, gadgets, net, roles)


def chain_stats(chain):
    cg = communication_graph(chain.network)
    return {"diameter": cg.diameter, "connected": cg.connected, "density": density(chain.network),
            "max_degree": cg.max_degree, "nodes": len(chain.network)}


@dataclass
class ChainAudit:
    nu: float
    direct: list                  # per gadget: worst direct interference over its core
    two_group: float              # closed-form bound, same for every gadget
    kappa: int

    @property
    def ok(self):
        return max(self.direct, default=0.0) <= self.nu and self.two_group <= self.nu

    def to_json(self):
        return {"nu": self.nu, "direct": self.direct, "two_group": self.two_group,
                "kappa": self.kappa, "ok": self.ok}


def two_group_bound(chain, params):
    """Outside interference at a core node if everything outside the core transmits:
    the own source and target, the nearest separator nodes on both sides
    (i-th one at least i(1-eps) away) and whole blocks further out (the k-th
    at least k*kappa*(1-eps) away)."""
    P, a, eps = params.power, params.alpha, chain.epsilon
    step = 1 - eps
    block = chain.delta + 4 + chain.kappa
    t1 = sum(P / (step * i) ** a for i in range(1, chain.kappa + 1))
    t2 = sum(block * P / (k * chain.kappa * step) ** a for k in range(1, len(chain.gadgets) + 1))
    own = P / (1 - 4 * eps) ** a + P / step ** a
    return own + 2 * (t1 + t2)


def audit_chain(chain, params=None):
    params = params or chain.network.params
    x = chain.network.pos[:, 0]
    out = []
    for g in range(len(chain.gadgets)):
        core = np.array([i for i, r in enumerate(chain.roles) if r[0] == g and r[1].startswith("v")])
        outside = np.setdiff1d(np.arange(len(x)), core)
        d = np.abs(x[outside][:, None] - x[core][None, :])
        out.append(float((params.power * d ** (-params.alpha)).sum(axis=0).max()))
    return ChainAudit(nu(params, chain.epsilon), out, two_group_bound(chain, params), chain.kappa)


def feasible_epsilon(D, delta, params=None, lo=1e-4, hi=0.2499, iters=40):
    """Largest eps (by bisection) for which the chain audit passes; None if even lo fails."""
    params = params or LB_PARAMS

    def passes(eps):
        try:
            ch = build_chain(D, delta, eps, dataclasses.replace(params, epsilon=eps))
        except (ConstructionError, ParameterError):
            return False
        return audit_chain(ch).ok

    if not passes(lo):
        return None
    if passes(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# algorithms as black boxes

@dataclass
class Transcript:
    tx: dict           # node -> sorted absolute rounds it transmitted in
    first_rx: dict     # node -> first absolute round it received anything

    def same_as(self, other):
        return self.tx == other.tx and self.first_rx == other.first_rx


class NaiveProtocol(Protocol):
    """A node with ID i transmits once, i rounds after it wakes up."""

    def on_round_start(self, state, round_no):
        if round_no == state.woke_at + state.id:
            return "m"
        return None


class RoundRobinProtocol(Protocol):
    """Awake nodes transmit in every round congruent to their ID modulo N."""

    def __init__(self, N):
        self.N = N

    def on_round_start(self, state, round_no):
        if round_no % self.N == state.id % self.N:
            return "m"
        return None


class _StopWhenAwake(Protocol):
    def __init__(self, inner, node):
        self.inner, self.node = inner, node
        self.budget = inner.budget

    def on_wake(self, *a):
        return self.inner.on_wake(*a)

    def on_round_start(self, *a):
        return self.inner.on_round_start(*a)

    def on_receive(self, *a):
        return self.inner.on_receive(*a)

    def finished(self, states, round_no):
        return states[self.node].awake


class ProtocolAlgorithm:
    """Wraps a per-node protocol factory ``make(params)``."""

    def __init__(self, name, make):
        self.name = name
        self.make = make

    def transcript(self, network, source, horizon, stop_at=None):
        proto = self.make(network.params)
        if stop_at is not None:
            proto = _StopWhenAwake(proto, stop_at)
        res = run(network, proto, {source}, horizon or DEFAULT_HORIZON)
        tx, first = {}, {}
        for tr in res.traces:
            for v in tr.transmitters:
                tx.setdefault(v, []).append(tr.round)
            for e in tr.receptions:
                first.setdefault(e.receiver, tr.round)
        return Transcript(tx, first)


class SmsBroadcastAlgorithm:
    """The multi-source broadcast from a single source, observed through the
    session's transmission log.  ``gamma`` must be fixed by the caller since
    nodes know it as a global parameter."""

    name = "sms"

    def __init__(self, gamma, config=None):
        self.gamma = gamma
        self.config = config or ProtocolConfig()

    def transcript(self, network, source, horizon, stop_at=None):
        from .broadcast import sms_broadcast
        sess = new_session(network, self.config, horizon=horizon, log_tx=True)
        sess.all_receivers = True
        try:
            sms_broadcast(network, [source], gamma=self.gamma, session=sess, check=False)
        except HorizonReached:
            pass
        until = sess.clock if horizon is None else min(sess.clock, horizon + 1)
        tx = {}
        for v in network.ids.tolist():
            r = sess.transmissions_of(v, until)
            if r:
                tx[v] = r
        return Transcript(tx, sess.first_receptions(until))


def naive_algorithm():
    return ProtocolAlgorithm("naive", lambda params: NaiveProtocol())


def round_robin_algorithm():
    return ProtocolAlgorithm("round_robin", lambda params: RoundRobinProtocol(params.id_bound))


def sms_algorithm(gamma, config=None):
    return SmsBroadcastAlgorithm(gamma, config)


# ---------------------------------------------------------------------------
# adversary

@dataclass
class AdversaryResult:
    ids: dict                    # role -> ID
    certified: int               # delivery to t cannot happen before core wake + certified
    steps: list
    horizon_hit: bool = False

    def to_json(self):
        return {"ids": self.ids, "certified": self.certified, "steps": self.steps,
                "horizon_hit": self.horizon_hit}


def adversary_assign_ids(algorithm, gadget, allowed_ids, round_budget, params=None):
    """Hand out core IDs two at a time so that, up to the certified round, every
    round has either no core transmitter or at least two of them.

    ``round_budget`` bounds each simulation, in rounds after the core wakes up.
    Rounds are reported relative to that wake-up.
    """
    params = params or lb_params(gadget.epsilon, id_bound=max(allowed_ids))
    allowed = sorted(set(int(i) for i in allowed_ids))
    D = gadget.delta
    if len(allowed) < D + 4:
        raise ParameterError("need at least delta+4 IDs, got %d" % len(allowed))
    t_id, s_id = allowed[-1], allowed[-2]
    pool = allowed[:-2]
    assigned = []
    r = 0
    steps = []
    horizon_hit = False

    def network_with(cand):
        ids = {"s": s_id, "t": t_id}
        for k, v in enumerate(assigned):
            ids["v%d" % k] = v
        ids["v%d" % len(assigned)] = cand
        return gadget.network(params, ids, keep=set(ids))

    def simulate(cand):
        return algorithm.transcript(network_with(cand), s_id, wake + round_budget)

    # the core wakes when it first hears s, before any core node can speak
    probe = algorithm.transcript(network_with(pool[0]), s_id, None, stop_at=pool[0])
    wake = probe.first_rx.get(pool[0])
    if wake is None:
        raise ConstructionError("the core never woke up")
    checked_determinism = False
    while len(assigned) < D + 2:
        if not pool:
            raise ConstructionError("ID pool exhausted after %d core positions" % len(assigned))
        first = {}
        for cand in pool:
            tr = simulate(cand)
            if not checked_determinism:
                if not tr.same_as(simulate(cand)):
                    raise ContractViolation("algorithm %s is not deterministic" % algorithm.name)
                checked_determinism = True
            w = tr.first_rx.get(cand)
            if w != wake:
                raise ContractViolation("core wake-up round depends on the candidate ID")
            later = [x - w for x in tr.tx.get(cand, []) if x - w > r]
            first[cand] = later[0] if later else None
        seen = [v for v in first.values() if v is not None]
        if len(assigned) == D + 1 or not seen:
            # one slot left, or nobody speaks before the budget runs out
            if not seen:
                horizon_hit = True
                r = max(r, round_budget)
            fill = pool[:D + 2 - len(assigned)]
            assigned.extend(fill)
            steps.append({"round": r, "assigned": fill, "kind": "fill"})
            break
        rmin = min(seen)
        who = sorted(i for i, v in first.items() if v == rmin)
        if len(who) >= 2:
            pair, kind = who[:2], "collision"
        else:
            other = min(i for i in pool if i != who[0])
            pair, kind = [who[0], other], "single"
        assigned.extend(pair)
        pool = [i for i in pool if i not in pair]
        r = rmin
        steps.append({"round": r, "assigned": pair, "kind": kind})
    ids = {"s": s_id, "t": t_id}
    for k, v in enumerate(assigned):
        ids["v%d" % k] = v
    return AdversaryResult(ids, r + 1, steps, horizon_hit)


@dataclass
class DeliveryCheck:
    wake: int
    delivered: int               # relative to core wake-up; None if t never heard anything
    certified: int

    @property
    def sound(self):
        return self.delivered is None or self.delivered >= self.certified


def check_delivery(algorithm, gadget, result, horizon=None, params=None):
    """Run the algorithm on the fully assigned gadget and compare t's first
    reception with the certificate."""
    params = params or lb_params(gadget.epsilon, id_bound=max(result.ids.values()))
    net = gadget.network(params, result.ids)
    tr = algorithm.transcript(net, result.ids["s"], horizon, stop_at=result.ids["t"])
    w = tr.first_rx.get(result.ids["v0"])
    t = tr.first_rx.get(result.ids["t"])
    return DeliveryCheck(w, None if t is None or w is None else t - w, result.certified)


def chain_delivery(algorithm, chain, source=None, horizon=None):
    """Absolute round of the first reception at the last gadget's target."""
    net = chain.network
    last = len(chain.gadgets) - 1
    t = chain.role_id(last, "t")
    s = chain.role_id(0, "s") if source is None else source
    tr = algorithm.transcript(net, s, horizon, stop_at=t)
    return tr.first_rx.get(t)


def adversarial_chain(algorithm_for, D, delta, epsilon, round_budget, params=None):
    """Chain whose gadgets carry IDs from independent adversary runs on
    disjoint ID blocks; separator nodes take the IDs above all blocks.

    ``algorithm_for(gadget_network_params)`` returns the algorithm to attack.
    Returns (chain, per-gadget adversary results).
    """
    params = params or lb_params(epsilon)
    kappa = separator_length(delta, epsilon, params.alpha)
    count = D // kappa
    block = delta + 4
    n = count * (block + kappa)
    params = dataclasses.replace(params, epsilon=epsilon, id_bound=max(params.id_bound, n))
    results, ids = [], {}
    for g in range(count):
        allowed = range(g * block + 1, (g + 1) * block + 1)
        gd = build_gadget(delta, epsilon)
        res = adversary_assign_ids(algorithm_for(params), gd, allowed, round_budget, params)
        results.append(res)
        for role, v in res.ids.items():
            ids[(g, role)] = v
    nxt = count * block + 1
    for g in range(count):
        for j in range(1, kappa + 1):
            ids[("path", g, j)] = nxt
            nxt += 1
    chain = build_chain(D, delta, epsilon, params, ids)
    return chain, results
