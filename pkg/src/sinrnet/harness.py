"""Network generators, experiment sweeps, metrics CSV and envelope fitting."""
import csv
import dataclasses
import io
import itertools
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import envelopes
from .broadcast import leader_election, local_broadcast, sms_broadcast, wake_up
from .clustering import ProtocolConfig, clustering, new_session
from .errors import ConstructionError, ParameterError
from .geometry import chi, clusters_meeting_balls, density, sample_centers, validate_r_clustering
from .sinr_phy import Network, SinrParams, communication_graph, derive_constants, load_network

TASKS = ("local", "global", "sms", "wakeup", "leader", "cluster", "lowerbound")
KINDS = ("uniform", "grid", "line", "blobs", "chain")
FIELDS = ["task", "n", "D", "delta", "gamma", "rounds_used", "success", "seed", "wall_time", "error"]
OUT_ENV = "SINRNET_OUTPUT_DIR"
# grid spacing a hair under 1-eps so that rounding never drops an edge
SHRINK = 1 - 1e-9


def output_path(path):
    """Relative output paths land in $SINRNET_OUTPUT_DIR when it is set."""
    base = os.environ.get(OUT_ENV)
    if base and path and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


# ---------------------------------------------------------------------------
# generators

def _params(params):
    if params is None:
        return SinrParams()
    if isinstance(params, dict):
        return SinrParams(**params)
    return params


def generate_network(spec, params=None, seed=0):
    """Build a network from a generator spec such as {"kind": "grid", "rows": 5, "cols": 5}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    p = _params(params)
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        return _uniform(p, rng, **spec)
    if kind == "grid":
        rows, cols = int(spec["rows"]), int(spec["cols"])
        step = spec.get("spacing") or (1 - p.epsilon) * SHRINK
        pos = [(c * step, r * step) for r in range(rows) for c in range(cols)]
        return Network(p, range(1, len(pos) + 1), pos)
    if kind == "line":
        n = int(spec["n"])
        step = spec.get("spacing") or (1 - p.epsilon) * SHRINK
        return Network(p, range(1, n + 1), [(i * step, 0.0) for i in range(n)])
    if kind == "blobs":
        return _blobs(p, rng, **spec)
    if kind == "chain":
        from .lowerbound import build_chain, lb_params
        eps = spec.get("epsilon", 0.05)
        lp = params if isinstance(params, SinrParams) else lb_params(eps)
        return build_chain(int(spec["D"]), int(spec["delta"]), eps, lp).network
    raise ParameterError("unknown generator kind %r" % kind)


def _uniform(p, rng, n=None, side=None, avg_degree=None, max_degree=None, retries=200,
             n_range=(40, 300), degree_range=(6.0, 14.0)):
    if n is None:
        # size and target degree drawn from the seed as well
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        avg_degree = avg_degree or float(rng.uniform(*degree_range))
    n = int(n)
    if side is None:
        # expected degree of a uniform deployment is about n * pi (1-eps)^2 / side^2
        avg = avg_degree or 8.0
        side = float(np.sqrt(n * np.pi * (1 - p.epsilon) ** 2 / avg))
    for _ in range(int(retries)):
        pos = rng.uniform(0.0, side, size=(n, 2))
        ids = rng.choice(np.arange(1, p.id_bound + 1), size=n, replace=False)
        net = Network(p, ids, pos)
        cg = communication_graph(net)
        if cg.connected and (max_degree is None or cg.max_degree <= max_degree):
            return net
    raise ConstructionError("no connected deployment of %d nodes in %d tries" % (n, retries))


def _blobs(p, rng, clusters, per, radius=0.5, gap=1.0, retries=200):
    clusters, per = int(clusters), int(per)
    cols = int(np.ceil(np.sqrt(clusters)))
    pos = []
    for c in range(clusters):
        cx, cy = (c % cols) * gap, (c // cols) * gap
        ang = rng.uniform(0, 2 * np.pi, per)
        rad = radius * np.sqrt(rng.uniform(0, 1, per))
        pos += list(zip(cx + rad * np.cos(ang), cy + rad * np.sin(ang)))
    ids = rng.choice(np.arange(1, p.id_bound + 1), size=len(pos), replace=False)
    return Network(p, ids, pos)


def network_report(net):
    cg = communication_graph(net)
    return {"n": len(net), "D": cg.diameter if cg.connected else None,
            "delta": cg.max_degree, "density": density(net), "connected": cg.connected}


# ---------------------------------------------------------------------------
# configuration and rows

@dataclass
class ExperimentConfig:
    task: str
    network: dict
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "metrics.csv"
    trace_dir: str = None
    protocol: dict = field(default_factory=dict)
    timing: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError("unknown task %r" % self.task)
        if not self.seeds:
            raise ParameterError("at least one seed is needed")
        for k, v in self.grid.items():
            if not isinstance(v, (list, tuple)) or not v:
                raise ParameterError("grid axis %r must be a nonempty list" % k)

    def cells(self):
        keys = sorted(self.grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.grid[k] for k in keys))]

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class MetricsRow:
    task: str
    n: int
    D: int
    delta: int
    gamma: int
    rounds_used: int
    success: bool
    seed: int
    wall_time: float = None
    error: str = ""

    def as_csv(self):
        out = dataclasses.asdict(self)
        out["success"] = int(bool(self.success))
        out["wall_time"] = "" if self.wall_time is None else "%.3f" % self.wall_time
        return out


def read_rows(path):
    rows = []
    with open(path) as fh:
        for r in csv.DictReader(fh):
            rows.append(MetricsRow(r["task"], int(r["n"]), int(r["D"] or -1), int(r["delta"]),
                                   int(r["gamma"]), int(r["rounds_used"] or -1), r["success"] == "1",
                                   int(r["seed"]), float(r["wall_time"]) if r["wall_time"] else None,
                                   r.get("error", "")))
    return rows


def write_rows(rows, path, append=False, fields=FIELDS):
    new = not append or not os.path.exists(path)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r.as_csv())


# ---------------------------------------------------------------------------
# running tasks

def spontaneous_pattern(net, seed, span):
    """A seed-determined set of spontaneous wake-ups spread over ``span`` rounds."""
    rng = np.random.default_rng(seed)
    ids = sorted(int(v) for v in net.ids)
    k = int(rng.integers(1, max(2, len(ids) // 5) + 1))
    chosen = rng.choice(ids, size=k, replace=False)
    return {int(v): int(rng.integers(0, max(1, span))) for v in chosen}


def spread_sources(net, seed, count):
    """Up to ``count`` sources pairwise farther than 1-eps apart, chosen greedily in seeded order."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(net))
    eps = net.params.epsilon
    picked = []
    for i in order:
        if all(np.linalg.norm(net.pos[i] - net.pos[j]) > 1 - eps for j in picked):
            picked.append(i)
        if len(picked) == count:
            break
    return sorted(int(net.ids[i]) for i in picked)


def _ball_count(net, cl, seed):
    return max(clusters_meeting_balls(net, cl),
               clusters_meeting_balls(net, cl, centers=sample_centers(net, seed=seed)))


def run_task(task, net, seed=0, config=None, trace=None, sources=None, gamma=None):
    """One execution; returns (rounds_used, success, outcome record)."""
    config = config or ProtocolConfig()
    V = [int(v) for v in net.ids]
    if task == "cluster":
        sess = new_session(net, config, trace=trace)
        g = gamma if gamma is not None else density(net)
        cl = clustering(sess, g, V)
        ok = validate_r_clustering(net, cl, 1.0, net.params.epsilon).ok
        ok = ok and _ball_count(net, cl, seed) <= chi(2, 1 - net.params.epsilon)
        return sess.clock, ok, {"assignment": cl.to_json()}
    if task == "local":
        out = local_broadcast(net, gamma=gamma, config=config, trace=trace)
        return out.rounds_used, out.success, {"failures": out.failures}
    if task in ("global", "sms"):
        if sources is None:
            sources = [min(V)] if task == "global" else spread_sources(net, seed, 3)
        out = sms_broadcast(net, sources, gamma=gamma, config=config, trace=trace)
        return out.rounds_used, out.success, {"sources": sources,
                                              "phases": [{k: ph.get(k) for k in ("phase", "woken")}
                                                         for ph in out.phases]}
    if task == "wakeup":
        D = communication_graph(net).diameter
        epoch = envelopes.epoch_length(D, density(net), net.params.id_bound)
        pattern = spontaneous_pattern(net, seed, 2 * epoch)
        out = wake_up(net, pattern, gamma=gamma, config=config, diameter=D, trace=trace)
        return out.rounds_used, out.success, {"spontaneous": pattern,
                                              "awake_at": out.extra["awake_at"]}
    if task == "leader":
        out = leader_election(net, gamma=gamma, config=config, trace=trace)
        return out.rounds_used, out.success, {"leader": out.leader, "views": out.extra["views"]}
    raise ParameterError("task %r does not run on a plain network" % task)


def _lowerbound_row(cell, seed):
    from .lowerbound import adversary_assign_ids, build_gadget, check_delivery, lb_params, \
        round_robin_algorithm
    delta = int(cell.get("delta", 8))
    eps = float(cell.get("epsilon", 0.05))
    g = build_gadget(delta, eps)
    p = lb_params(eps, id_bound=max(64, delta + 4))
    alg = round_robin_algorithm()
    res = adversary_assign_ids(alg, g, range(1, delta + 5), 4 * p.id_bound, p)
    chk = check_delivery(alg, g, res, params=p)
    return MetricsRow("lowerbound", delta + 4, 2, delta + 1, delta + 4, res.certified,
                      chk.sound and res.certified >= delta / 2, seed)


def _trace_name(task, cell_index, seed):
    return "%s_c%03d_s%d.jsonl" % (task, cell_index, seed)


def run_experiment(config, out=None, append=False):
    """Run every grid cell for every seed; returns the rows and writes the CSV."""
    rows = []
    proto = ProtocolConfig(**config.protocol) if config.protocol else ProtocolConfig()
    for ci, cell in enumerate(config.cells()):
        for seed in config.seeds:
            rows.append(run_cell(config, proto, ci, cell, seed))
    path = output_path(out or config.out)
    if path:
        write_rows(rows, path, append=append)
        if config.timing:
            with open(path + ".timing.json", "w") as fh:
                json.dump([r.wall_time for r in rows], fh)
    return rows


def run_cell(config, proto, ci, cell, seed):
    t0 = time.perf_counter()
    if config.task == "lowerbound":
        row = _lowerbound_row(cell, seed)
        row.wall_time = time.perf_counter() - t0 if config.timing else None
        return row
    pkeys = {f.name for f in dataclasses.fields(SinrParams)}
    params = dict(config.params)
    params.update({k: v for k, v in cell.items() if k in pkeys})
    spec = dict(config.network)
    spec.update({k: v for k, v in cell.items() if k not in pkeys})
    try:
        if "file" in spec:
            net = load_network(spec["file"])
        else:
            net = generate_network(spec, SinrParams(**params), seed)
    except Exception as exc:            # recorded, never dropped
        return MetricsRow(config.task, 0, -1, 0, 0, -1, False, seed, None, repr(exc))
    rep = network_report(net)
    trace_fh = None
    if config.trace_dir:
        tdir = output_path(config.trace_dir)
        os.makedirs(tdir, exist_ok=True)
        trace_fh = open(os.path.join(tdir, _trace_name(config.task, ci, seed)), "w")
        trace_fh.write(json.dumps({"meta": {"task": config.task, "seed": seed, "cell": cell,
                                            "network": net.to_json()}}) + "\n")
    try:
        rounds, ok, outcome = run_task(config.task, net, seed, proto, trace_fh)
        err = ""
    except Exception as exc:
        rounds, ok, outcome, err = -1, False, {}, repr(exc)
    if trace_fh is not None:
        trace_fh.write(json.dumps({"outcome": outcome, "rounds_used": rounds}, sort_keys=True) + "\n")
        trace_fh.close()
    wall = time.perf_counter() - t0 if config.timing else None
    return MetricsRow(config.task, rep["n"], rep["D"] if rep["D"] is not None else -1,
                      rep["delta"], rep["density"], rounds, ok, seed, wall, err)


# ---------------------------------------------------------------------------
# re-deriving success from a persisted trace

def success_from_trace(path):
    """Recompute a run's success flag from its trace file alone."""
    meta, outcome, payload = None, None, []
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            if "meta" in obj:
                meta = obj["meta"]
            elif "outcome" in obj:
                outcome = obj["outcome"]
            elif obj.get("phase") == "payload" and "round" in obj:
                payload.append(obj)
    if meta is None or outcome is None:
        raise ParameterError("trace lacks its meta or outcome record")
    net = Network.from_json(meta["network"])
    task = meta["task"]
    adj = communication_graph(net).adjacency
    if task == "local":
        pairs = {(s, u) for rec in payload for u, s, _ in rec["receptions"]}
        return all((u, v) in pairs for u in adj for v in adj[u])
    if task in ("global", "sms"):
        got = set(outcome["sources"])
        heard = {v: not adj[v] for v in adj}
        for rec in payload:
            by = {}
            for u, s, _ in rec["receptions"]:
                got.add(u)
                by.setdefault(s, set()).add(u)
            for s, us in by.items():
                if adj[s] <= us:
                    heard[s] = True
        return got == set(adj) and all(heard.values())
    if task == "cluster":
        from .geometry import ClusterAssignment
        cl = ClusterAssignment.from_json(outcome["assignment"])
        ok = validate_r_clustering(net, cl, 1.0, net.params.epsilon).ok
        return ok and _ball_count(net, cl, meta["seed"]) <= chi(2, 1 - net.params.epsilon)
    if task == "wakeup":
        return set(int(k) for k in outcome["awake_at"]) == set(adj)
    if task == "leader":
        views = set(outcome["views"].values())
        return len(views) == 1 and outcome["leader"] in views
    raise ParameterError("no trace rule for task %r" % task)


# ---------------------------------------------------------------------------
# envelope fitting

def fit(rows, out=None, derived_params=None):
    """Per task, the largest rounds/shape ratio over successful rows (the frozen C)
    and, for reference, the least-squares slope through the origin."""
    by = {}
    for r in rows:
        if r.success and r.task in ("cluster", "local", "global", "sms", "wakeup", "leader"):
            by.setdefault(r.task, []).append(r)
    consts = envelopes.load_constants(out) if out and os.path.exists(out) else {}
    C = dict(consts.get("C", {}))
    ls = dict(consts.get("least_squares", {}))
    count = dict(consts.get("rows", {}))
    N = (derived_params or SinrParams()).id_bound
    for task, rs in sorted(by.items()):
        x = np.array([envelopes.shape(task, r.D, r.delta, N) for r in rs])
        y = np.array([r.rounds_used for r in rs], dtype=float)
        C[task] = float(np.max(y / x))
        ls[task] = float((x @ y) / (x @ x))
        count[task] = len(rs)
    p = derived_params or SinrParams()
    b = derive_constants(p, 30)
    consts.update({"C": C, "least_squares": ls, "rows": count, "id_bound": N,
                   "derived": {"params": p.to_json(), "gamma_cap": 30, "kappa": b.kappa,
                               "rho": b.rho, "x_radius": b.x_radius, "x_close": b.x_close}})
    envelopes.save_constants(consts, out)
    return consts


FIT_SEEDS = list(range(1000, 1040))


def fit_configs(seeds=None):
    """Sweeps behind the frozen constants; seeds are disjoint from the test suites."""
    seeds = seeds or FIT_SEEDS
    uni = {"kind": "uniform", "max_degree": 30}
    small = {"kind": "uniform", "max_degree": 30, "n_range": [30, 80]}
    return [
        ExperimentConfig("cluster", uni, seeds=seeds, out=None),
        ExperimentConfig("local", uni, seeds=seeds, out=None),
        ExperimentConfig("global", uni, seeds=seeds, out=None),
        ExperimentConfig("global", {"kind": "line"}, grid={"n": [10, 30]}, out=None),
        ExperimentConfig("global", {"kind": "grid"}, grid={"rows": [4, 8], "cols": [8]}, out=None),
        ExperimentConfig("leader", small, seeds=seeds[:12], out=None),
    ]


def wakeup_fit_config(seeds=None):
    seeds = seeds or FIT_SEEDS
    return ExperimentConfig("wakeup", {"kind": "uniform", "max_degree": 30, "n_range": [30, 80]},
                            seeds=seeds[:12], out=None)


def run_fit(out=None, seeds=None, log=None):
    """Regenerate the frozen constants: broadcast and clustering first, then
    the wake-up sweep, whose epoch length depends on the former."""
    out = out or envelopes.DATA
    rows = []
    for cfg in fit_configs(seeds):
        rows += run_experiment(cfg, out=None)
        if log:
            log("fit %s: %d rows" % (cfg.task, len(rows)))
    bad = [r for r in rows if not r.success]
    # "sms" shares the form and the algorithm with "global"
    rows += [dataclasses.replace(r, task="sms") for r in rows if r.task == "global"]
    fit(rows, out)
    old = os.environ.get("SINRNET_ENVELOPES")
    os.environ["SINRNET_ENVELOPES"] = out
    try:
        wrows = run_experiment(wakeup_fit_config(seeds), out=None)
    finally:
        if old is None:
            os.environ.pop("SINRNET_ENVELOPES", None)
        else:
            os.environ["SINRNET_ENVELOPES"] = old
    bad += [r for r in wrows if not r.success]
    consts = fit(wrows, out)
    consts["fit_failures"] = len(bad)
    envelopes.save_constants(consts, out)
    return consts, rows + wrows


def rows_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()
