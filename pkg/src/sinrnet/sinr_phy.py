"""Physical layer: SINR reception, round resolution, communication graph and
numeric constants derived from interference budgets."""
import json
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ConfigurationError, ContractViolation, ParameterError
from .geometry import chi, d_gamma_r, pairwise_distances


@dataclass(frozen=True)
class SinrParams:
    alpha: float = 4.0
    beta: float = 2.0
    noise: float = 1.0
    epsilon: float = 0.2
    id_bound: int = 1024

    def __post_init__(self):
        if not self.alpha > 2:
            raise ParameterError("alpha must exceed 2")
        if not self.beta > 1:
            raise ParameterError("beta must exceed 1")
        if not self.noise > 0:
            raise ParameterError("noise must be positive")
        if not 0 < self.epsilon < 1:
            raise ParameterError("epsilon must lie in (0, 1)")
        if int(self.id_bound) != self.id_bound or self.id_bound < 1:
            raise ParameterError("id_bound must be a positive integer")

    @property
    def power(self):
        # range-1 normalisation
        return self.noise * self.beta

    def to_json(self):
        return {"alpha": float(self.alpha), "beta": float(self.beta), "noise": float(self.noise),
                "epsilon": float(self.epsilon), "id_bound": int(self.id_bound)}

    @classmethod
    def from_json(cls, obj):
        return cls(alpha=float(obj["alpha"]), beta=float(obj["beta"]), noise=float(obj["noise"]),
                   epsilon=float(obj["epsilon"]), id_bound=int(obj["id_bound"]))


class Network:
    """Nodes with unique IDs in [1, id_bound] and distinct plane positions."""

    def __init__(self, params, ids, pos):
        self.params = params
        self.ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        self.pos = np.asarray(pos, dtype=float).reshape(-1, 2)
        if len(self.ids) != len(self.pos):
            raise ParameterError("ids and positions differ in length")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ParameterError("node IDs must be unique")
        if len(self.ids) > params.id_bound:
            raise ParameterError("more nodes than the ID space allows")
        if len(self.ids) and (self.ids.min() < 1 or self.ids.max() > params.id_bound):
            raise ParameterError("node IDs must lie in [1, id_bound]")
        if not np.all(np.isfinite(self.pos)):
            raise ParameterError("positions must be finite")
        if len(self.ids) > 1:
            d = pairwise_distances(self.pos)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0:
                raise ParameterError("coincident node positions")
        self.index = {int(v): i for i, v in enumerate(self.ids)}
        self._gain = None

    def __len__(self):
        return len(self.ids)

    @property
    def gain(self):
        """gain[i, j] = received power at node j from node i; zero on the diagonal."""
        if self._gain is None:
            d = pairwise_distances(self.pos)
            np.fill_diagonal(d, np.inf)
            self._gain = self.params.power * d ** (-self.params.alpha)
        return self._gain

    def position(self, v):
        return self.pos[self.index[int(v)]]

    def distance(self, u, w):
        return float(np.linalg.norm(self.position(u) - self.position(w)))

    def subnetwork(self, ids):
        idx = [self.index[int(v)] for v in sorted(ids)]
        return Network(self.params, self.ids[idx], self.pos[idx])

    def transformed(self, rotation=0.0, shift=(0.0, 0.0)):
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        return Network(self.params, self.ids.copy(), self.pos @ rot.T + np.asarray(shift))

    def to_json(self):
        return {"params": self.params.to_json(),
                "nodes": [{"id": int(v), "x": float(p[0]), "y": float(p[1])}
                          for v, p in zip(self.ids, self.pos)]}

    @classmethod
    def from_json(cls, obj):
        nodes = obj["nodes"]
        return cls(SinrParams.from_json(obj["params"]),
                   [int(n["id"]) for n in nodes],
                   [(float(n["x"]), float(n["y"])) for n in nodes])


def dumps_network(net):
    return json.dumps(net.to_json(), indent=1) + "\n"


def save_network(net, path):
    with open(path, "w") as fh:
        fh.write(dumps_network(net))


def load_network(path):
    with open(path) as fh:
        return Network.from_json(json.load(fh))


@dataclass(frozen=True)
class ReceptionEvent:
    receiver: int
    sender: int
    round: int
    sinr_value: float


def sinr(sender, receiver, transmitters, network):
    """Signal-to-interference-plus-noise ratio of ``sender`` at ``receiver``."""
    transmitters = set(int(t) for t in transmitters)
    if int(sender) not in transmitters:
        raise ContractViolation("sender must be among the transmitters")
    if int(sender) == int(receiver):
        raise ContractViolation("sender and receiver coincide")
    p = network.params
    u = network.position(receiver)
    sig = p.power * float(np.linalg.norm(network.position(sender) - u)) ** (-p.alpha)
    interf = 0.0
    for w in transmitters:
        if w != int(sender) and w != int(receiver):
            interf += p.power * float(np.linalg.norm(network.position(w) - u)) ** (-p.alpha)
    return sig / (p.noise + interf)


def resolve_indices(network, tx_idx, extra=None):
    """Vectorised single-round resolution over node indices.

    Returns (receiver_idx, sender_idx, sinr_values) for every non-transmitting
    node that decodes some transmitter.  ``extra`` is optional additional
    interference per node.
    """
    tx_idx = np.asarray(tx_idx, dtype=np.int64)
    n = len(network)
    if len(tx_idx) == 0 or n == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0)
    g = network.gain[tx_idx]                       # |T| x n
    total = g.sum(axis=0)
    best = g.argmax(axis=0)
    sig = g[best, np.arange(n)]
    rest = np.maximum(total - sig, 0.0)
    if extra is not None:
        rest = rest + extra
    val = sig / (network.params.noise + rest)
    ok = val >= network.params.beta
    ok[tx_idx] = False                             # half-duplex
    recv = np.nonzero(ok)[0]
    return recv, tx_idx[best[recv]], val[recv]


def resolve_round(transmitters, network, round_no=0, extra=None):
    """Reception events of one round; ``transmitters`` is an iterable of IDs or (ID, msg)."""
    ids = []
    for t in transmitters:
        ids.append(int(t[0]) if isinstance(t, tuple) else int(t))
    idx = [network.index[v] for v in ids]
    recv, send, val = resolve_indices(network, idx, extra)
    events = [ReceptionEvent(int(network.ids[r]), int(network.ids[s]), round_no, float(x))
              for r, s, x in zip(recv, send, val)]
    seen = set()
    for ev in events:
        assert ev.receiver not in seen, "two receptions at one receiver in one round"
        seen.add(ev.receiver)
    return events


@dataclass
class CommGraph:
    graph: nx.Graph
    connected: bool
    diameter: float
    max_degree: int

    @property
    def adjacency(self):
        return {v: set(self.graph.neighbors(v)) for v in self.graph.nodes}


def communication_graph(network):
    """Edges between nodes at distance at most 1 - epsilon."""
    g = nx.Graph()
    g.add_nodes_from(int(v) for v in network.ids)
    if len(network) > 1:
        d = pairwise_distances(network.pos)
        lim = 1.0 - network.params.epsilon
        ii, jj = np.nonzero(np.triu(d <= lim + 1e-12, k=1))
        g.add_edges_from((int(network.ids[i]), int(network.ids[j])) for i, j in zip(ii, jj))
    connected = len(network) > 0 and nx.is_connected(g)
    diam = nx.diameter(g) if connected else math.inf
    maxdeg = max((deg for _, deg in g.degree), default=0)
    return CommGraph(g, connected, diam, maxdeg)


# ---------------------------------------------------------------------------
# constants derived from the interference budgets

def ring_factor(i):
    """Unit-width annulus [i, i+1] covered by this many unit balls (chord step sqrt 3)."""
    return math.ceil(2 * math.pi * (i + 0.5) / math.sqrt(3))


def ring_sum(x, alpha, cutoff=20000):
    """Upper bound on sum_{i >= x} ring_factor(i) * i^-alpha (partial sum + integral tail)."""
    x = max(int(x), 1)
    top = max(cutoff, x + 1)
    i = np.arange(x, top, dtype=float)
    part = float(np.sum(np.ceil(2 * np.pi * (i + 0.5) / np.sqrt(3)) * i ** (-alpha)))
    c1 = 2 * math.pi / math.sqrt(3)
    c0 = c1 * 0.5 + 1.0
    tail = c1 * top ** (2 - alpha) / (alpha - 2) + c0 * top ** (1 - alpha) / (alpha - 1)
    return part + tail


@dataclass
class ConstantsBundle:
    kappa: int
    rho: int
    x_radius: int
    ssf_k_for_sns: int
    x_close: int
    large_gamma_regime: bool
    diagnostics: dict = field(default_factory=dict)


def _smallest_x(pred, limit=10 ** 7):
    if pred(1):
        return 1
    hi = 2
    while not pred(hi):
        hi *= 2
        if hi > limit:
            return None
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def close_budget_ok(x, params):
    # nodes at pairwise distance >= d/2 inside rings of width d: chi(d, d/2) per ball
    delta = chi(1.0, 0.5)
    return delta * ring_sum(x, params.alpha) <= 2.0 ** (-params.alpha) / (4 * params.beta)


def sns_budget_ok(x, params, gamma):
    budget = params.noise * ((1 - params.epsilon) ** (-params.alpha) - 1.0)
    return params.power * gamma * ring_sum(x, params.alpha) <= budget


def far_budget_ok(params, gamma, r):
    dg = d_gamma_r(max(gamma, 2), r)
    noise_ok = dg <= 2.0 ** (-1.0 / params.alpha)
    far_ok = gamma * ring_sum(1, params.alpha) <= (2 * dg) ** (-params.alpha) / (4 * params.beta)
    return noise_ok, far_ok


def derive_constants(params, gamma_cap, r=1.0):
    """Smallest integer radii meeting the interference budgets, and the counts they imply."""
    if gamma_cap < 1:
        raise ParameterError("gamma_cap must be positive")
    xc = _smallest_x(lambda x: close_budget_ok(x, params))
    if xc is None:
        raise ConfigurationError("no radius satisfies the close-pair interference budget")
    xs = _smallest_x(lambda x: sns_budget_ok(x, params, gamma_cap))
    if xs is None:
        raise ConfigurationError("no radius satisfies the sparse-network interference budget")
    noise_ok, far_ok = far_budget_ok(params, gamma_cap, r)
    kappa = chi(xc, 0.5)       # chi(x d, d/2) with d cancelled
    rho = chi(2 * r + 1, 1 - params.epsilon)
    k_sns = gamma_cap * chi(xs, 1.0)
    return ConstantsBundle(kappa=max(kappa, 2), rho=rho, x_radius=xs, ssf_k_for_sns=k_sns,
                           x_close=xc, large_gamma_regime=noise_ok and far_ok,
                           diagnostics={"noise_condition": noise_ok, "far_field_condition": far_ok})
