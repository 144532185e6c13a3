"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers next to the pinned tolerances, then asserts.
"""
import json
import time

import networkx as nx
import numpy as np
import pytest

from helpers import blob_instance
from sinrnet import envelopes
from sinrnet.broadcast import leader_election, local_broadcast, sms_broadcast, wake_up
from sinrnet.clustering import (ProtocolConfig, clustering, full_sparsify, new_session,
                                proximity_graph, sparsify, sparsify_unclustered)
from sinrnet.geometry import chi, density, find_close_pairs, validate_r_clustering
from sinrnet.harness import (_ball_count, generate_network, rows_csv, run_experiment,
                             spontaneous_pattern, spread_sources, ExperimentConfig)
from sinrnet.lowerbound import (adversarial_chain, adversary_assign_ids, audit_chain, build_chain,
                                build_gadget, chain_delivery, check_delivery, feasible_epsilon,
                                lb_params, round_robin_algorithm, sms_algorithm, verify_core_facts)
from sinrnet.selectors import (build_ssf, build_wcss, build_wss, dumps_schedule,
                               minimal_subfamily, pivotal_sets, verify_selector)
from sinrnet.sinr_phy import Network, SinrParams, communication_graph, derive_constants, \
    resolve_round, sinr

# pinned tolerances
SINR_INSTANCES, SINR_SECONDS = 1000, 5.0
SELECTOR_SECONDS = 120.0
CLUSTERED_INSTANCES, CLUSTERED_MAX_N = 100, 200
SPARSIFY_INSTANCES, SPARSIFY_MAX_N = 100, 300
BROADCAST_SEEDS = range(100)
UNIFORM = {"kind": "uniform", "max_degree": 30}
ENVELOPE_SLACK = 1.2
LEADER_SEEDS = range(50)
WAKE_SEEDS = range(20)
SMALL = {"kind": "uniform", "max_degree": 30, "n_range": [30, 80]}
EXHAUSTIVE_DELTAS = range(2, 21)
SAMPLED_DELTA, SAMPLED_SETS = 64, 100_000
ADVERSARY_DELTAS = (8, 16, 32)
SMS_BUDGET = 200_000
CHAIN_GADGETS = 4
N = SinrParams().id_bound


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print("\ncriterion %d: %s  %s" % (k, "PASS" if ok else "FAIL", detail))


# ---------------------------------------------------------------------------
# 1. SINR ground truth

def sinr_suite(seed):
    rng = np.random.default_rng(seed)
    mismatches = doubles = 0
    digest = []
    for _ in range(SINR_INSTANCES):
        n = int(rng.integers(2, 20))
        beta = float(rng.uniform(1.05, 4.0))
        net = Network(SinrParams(alpha=float(rng.uniform(2.1, 6)), beta=beta),
                      range(1, n + 1), rng.uniform(0, 2.5, (n, 2)))
        tx = [v for v in range(1, n + 1) if rng.random() < 0.35] or [1]
        ev = resolve_round(tx, net)
        got = {(e.receiver, e.sender) for e in ev}
        want = {(u, v) for v in tx for u in range(1, n + 1)
                if u not in tx and sinr(v, u, tx, net) >= beta}
        mismatches += got != want
        recv = [e.receiver for e in ev]
        doubles += len(recv) != len(set(recv))
        digest.append(sorted(got))
    return mismatches, doubles, digest


def test_criterion_1_sinr_ground_truth(capsys):
    t0 = time.perf_counter()
    mismatches, doubles, _ = sinr_suite(0)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and doubles == 0 and dt < SINR_SECONDS
    report(capsys, 1, ok, "%d instances, %d mismatches, %d double receptions, %.2fs (< %.0fs)"
           % (SINR_INSTANCES, mismatches, doubles, dt, SINR_SECONDS))
    assert ok


# ---------------------------------------------------------------------------
# 2. selectors

SELECTOR_CASES = [("ssf", 20, 4, 1), ("ssf", 10, 2, 1), ("wss", 12, 3, 1), ("wss", 8, 2, 1),
                  ("wcss", 8, 2, 2), ("wcss", 6, 2, 1)]


def build(kind, N_, k, l, seed=0):
    if kind == "ssf":
        return build_ssf(N_, k, seed)
    if kind == "wss":
        return build_wss(N_, k, seed)
    return build_wcss(N_, k, l, seed)


def test_criterion_2_selectors(capsys):
    t0 = time.perf_counter()
    failed, uncaught, parts = [], 0, []
    for kind, N_, k, l in SELECTOR_CASES:
        s = build(kind, N_, k, l)
        if not verify_selector(s, kind, N_, k, l).verified:
            failed.append((kind, N_, k, l))
            continue
        m = minimal_subfamily(s, kind, N_, k, l)
        piv = pivotal_sets(m, kind, N_, k, l)
        if not verify_selector(m, kind, N_, k, l).verified or len(piv) != len(m):
            failed.append((kind, N_, k, l, "minimal"))
        for i in piv:
            uncaught += verify_selector(m.without(i), kind, N_, k, l).verified
        parts.append("%s(%d,%d%s) %d->%d sets" % (kind, N_, k, ",%d" % l if kind == "wcss" else "",
                                                   len(s), len(m)))
    dt = time.perf_counter() - t0
    ok = not failed and uncaught == 0 and dt < SELECTOR_SECONDS
    report(capsys, 2, ok, "%s; failed=%s, uncaught mutations=%d, %.1fs (< %.0fs)"
           % ("; ".join(parts), failed, uncaught, dt, SELECTOR_SECONDS))
    assert ok


# ---------------------------------------------------------------------------
# 3. proximity graph

def clustered_instance(seed):
    rng = np.random.default_rng(10_000 + seed)
    clusters = int(rng.integers(2, 9))
    per = int(rng.integers(5, CLUSTERED_MAX_N // clusters + 1))
    return blob_instance(seed, clusters=clusters, per=per, radius=float(rng.uniform(0.2, 0.5)),
                         gap=float(rng.uniform(0.8, 1.6)))


def proximity_suite(seeds):
    cap = ProtocolConfig().kappa_cap
    kappa = derive_constants(SinrParams(), 30).kappa
    bad = {"missing_pair": 0, "degree": 0, "cross_cluster": 0}
    pairs = maxdeg = 0
    digest = []
    for seed in seeds:
        net, cl = clustered_instance(seed)
        assert len(net) <= CLUSTERED_MAX_N
        H = proximity_graph(new_session(net), net.ids.tolist(), cl)
        close = {(p.u, p.w) for p in find_close_pairs(net, cl, density(net, cl), 1.0)}
        pairs += len(close)
        bad["missing_pair"] += len(close - H.edges)
        bad["degree"] += H.max_degree > min(cap, kappa)
        bad["cross_cluster"] += sum(cl.cluster_of[u] != cl.cluster_of[w] for u, w in H.edges)
        maxdeg = max(maxdeg, H.max_degree)
        digest.append(sorted(H.edges))
    return bad, pairs, maxdeg, cap, kappa, digest


def test_criterion_3_proximity_graph(capsys):
    bad, pairs, maxdeg, cap, kappa, _ = proximity_suite(range(CLUSTERED_INSTANCES))
    ok = not any(bad.values())
    report(capsys, 3, ok, "%d instances, %d close pairs, violations %s, max degree %d "
           "(cap %d, derived kappa %d)" % (CLUSTERED_INSTANCES, pairs, bad, maxdeg, cap, kappa))
    assert ok


# ---------------------------------------------------------------------------
# 4. sparsification ratios

def sparsify_suite(seeds):
    viol = {"clustered": 0, "unclustered": 0, "staged": 0}
    dense = 0
    digest = []
    for seed in seeds:
        rng = np.random.default_rng(20_000 + seed)
        clusters = int(rng.integers(2, 7))
        per = int(rng.integers(20, SPARSIFY_MAX_N // clusters + 1))
        net, cl = blob_instance(seed, clusters=clusters, per=per,
                                radius=float(rng.uniform(0.2, 0.5)))
        assert len(net) <= SPARSIFY_MAX_N
        V = net.ids.tolist()
        gamma = density(net, cl)
        res = sparsify(new_session(net), gamma, V, cl)
        for c, vs in cl.members().items():
            if 2 * len(vs) >= gamma:
                dense += 1
                kept = sum(v in res.retained for v in vs)
                viol["clustered"] += kept > int(np.ceil(0.75 * gamma))
        fs = full_sparsify(new_session(net), gamma, V, cl)
        floor = chi(1.0, 1 - net.params.epsilon)
        for i, A in enumerate(fs.sets):
            viol["staged"] += density(net, cl.restricted(A)) > max(gamma * 0.75 ** i, floor)
        unet = generate_network({"kind": "uniform", "n": int(rng.integers(60, SPARSIFY_MAX_N + 1)),
                                 "avg_degree": float(rng.uniform(8, 20))}, seed=seed)
        ug = density(unet)
        us = sparsify_unclustered(new_session(unet), ug, unet.ids.tolist())
        viol["unclustered"] += density(unet.subnetwork(us.sets[-1])) > 0.75 * ug
        digest.append([sorted(res.retained), [sorted(A) for A in fs.sets], sorted(us.sets[-1])])
    return viol, dense, digest


def test_criterion_4_sparsification(capsys):
    viol, dense, _ = sparsify_suite(range(SPARSIFY_INSTANCES))
    ok = not any(viol.values())
    report(capsys, 4, ok, "%d instances, %d dense clusters, violations %s"
           % (SPARSIFY_INSTANCES, dense, viol))
    assert ok


# ---------------------------------------------------------------------------
# 5-7. clustering and broadcast on shared random networks

def bfs_ok(net, sources, phases):
    layers = nx.multi_source_dijkstra_path_length(communication_graph(net).graph, set(sources))
    woken = set(sources)
    for i, ph in enumerate(phases):
        woken |= set(ph["woken"])
        if not {v for v, d in layers.items() if d <= i + 1} <= woken:
            return False
    return True


def run_broadcast_row(net, seed, sources):
    cg = communication_graph(net)
    out = sms_broadcast(net, sources)
    return {"n": len(net), "D": cg.diameter, "delta": cg.max_degree, "rounds": out.rounds_used,
            "reached": all(out.received.values()), "heard": all(out.heard_by_neighbors.values()),
            "valid": all(ph.get("valid_r1", True) and ph.get("valid_r2", True) for ph in out.phases),
            "bfs": bfs_ok(net, sources, out.phases)}


@pytest.fixture(scope="module")
def uniform_runs():
    runs = []
    for seed in BROADCAST_SEEDS:
        net = generate_network(UNIFORM, seed=seed)
        cg = communication_graph(net)
        V = net.ids.tolist()
        sess = new_session(net)
        cl = clustering(sess, density(net), V)
        loc = local_broadcast(net)
        runs.append({
            "seed": seed, "n": len(net), "D": cg.diameter, "delta": cg.max_degree,
            "valid": validate_r_clustering(net, cl, 1.0, net.params.epsilon).ok,
            "balls": _ball_count(net, cl, seed), "chi2": chi(2, 1 - net.params.epsilon),
            "local_ok": loc.success, "local_rounds": loc.rounds_used,
            "global": run_broadcast_row(net, seed, [min(V)]),
            "sms": run_broadcast_row(net, seed, spread_sources(net, seed, 3)),
        })
    return runs


def test_criterion_5_clustering(capsys, uniform_runs):
    invalid = [r["seed"] for r in uniform_runs if not r["valid"]]
    crowded = [r["seed"] for r in uniform_runs if r["balls"] > r["chi2"]]
    ok = not invalid and not crowded
    report(capsys, 5, ok, "%d networks (n %d..%d, max degree %d), invalid %s, "
           "balls over chi(2,1-eps)=%d: %s, worst ball count %d"
           % (len(uniform_runs), min(r["n"] for r in uniform_runs),
              max(r["n"] for r in uniform_runs), max(r["delta"] for r in uniform_runs),
              invalid, uniform_runs[0]["chi2"], crowded, max(r["balls"] for r in uniform_runs)))
    assert ok


def test_criterion_6_local_broadcast(capsys, uniform_runs):
    failed = [r["seed"] for r in uniform_runs if not r["local_ok"]]
    ratio = [r["local_rounds"] / envelopes.bound("local", r["D"], r["delta"], N)
             for r in uniform_runs]
    over = [r["seed"] for r, x in zip(uniform_runs, ratio) if x > ENVELOPE_SLACK]
    ok = not failed and not over
    report(capsys, 6, ok, "%d networks, failures %s, worst rounds/envelope %.3f (<= %.2f), over %s"
           % (len(uniform_runs), failed, max(ratio), ENVELOPE_SLACK, over))
    assert ok


STRUCTURED = [{"kind": "line", "n": 20}, {"kind": "line", "n": 45},
              {"kind": "grid", "rows": 6, "cols": 6}, {"kind": "grid", "rows": 5, "cols": 10}]


def test_criterion_7_global_and_sms(capsys, uniform_runs):
    rows = []
    for r in uniform_runs:
        rows.append(("global", r["seed"], r["global"]))
        rows.append(("sms", r["seed"], r["sms"]))
    for spec in STRUCTURED:
        net = generate_network(spec)
        rows.append(("global", spec, run_broadcast_row(net, 0, [1])))
        rows.append(("sms", spec, run_broadcast_row(net, 0, spread_sources(net, 0, 3))))
    bad = {k: [(t, s) for t, s, x in rows if not x[k]] for k in ("reached", "heard", "valid", "bfs")}
    ratios = [(x["rounds"] / envelopes.bound(t, x["D"], x["delta"], N), t, s) for t, s, x in rows]
    over = [(t, s, round(q, 3)) for q, t, s in ratios if q > ENVELOPE_SLACK]
    worst = max(ratios, key=lambda z: z[0])
    ok = not any(bad.values()) and not over
    report(capsys, 7, ok, "%d runs incl. lines and grids, failures %s, worst rounds/envelope "
           "%.3f (%s %s; <= %.2f), over %s"
           % (len(rows), {k: len(v) for k, v in bad.items()}, worst[0], worst[1], worst[2],
              ENVELOPE_SLACK, over))
    assert ok


# ---------------------------------------------------------------------------
# 8. leader election and wake-up

def leader_suite(seeds):
    out = []
    for seed in seeds:
        net = generate_network(SMALL, seed=seed)
        cg = communication_graph(net)
        res = leader_election(net)
        out.append((seed, res.success, len(set(res.extra["views"].values())) == 1,
                    res.rounds_used / envelopes.bound("leader", cg.diameter, cg.max_degree, N),
                    res.leader))
    return out


def wake_suite(seeds):
    out = []
    for seed in seeds:
        net = generate_network(SMALL, seed=100 + seed)
        cg = communication_graph(net)
        epoch = envelopes.epoch_length(cg.diameter, density(net), N)
        pattern = spontaneous_pattern(net, seed, 2 * epoch)
        res = wake_up(net, pattern, diameter=cg.diameter)
        out.append((seed, res.success, res.rounds_used / envelopes.bound(
            "wakeup", cg.diameter, cg.max_degree, N), sorted(res.extra["awake_at"].items())))
    return out


def test_criterion_8_leader_and_wakeup(capsys):
    lead = leader_suite(LEADER_SEEDS)
    wake = wake_suite(WAKE_SEEDS)
    split = [s for s, ok, one, _, _ in lead if not (ok and one)]
    lead_over = [s for s, _, _, q, _ in lead if q > ENVELOPE_SLACK]
    asleep = [s for s, ok, _, _ in wake if not ok]
    wake_over = [s for s, _, q, _ in wake if q > ENVELOPE_SLACK]
    ok = not split and not lead_over and not asleep and not wake_over
    report(capsys, 8, ok, "leader: %d networks, disagreements %s, worst rounds/envelope %.3f; "
           "wake-up: %d patterns, incomplete %s, worst rounds/envelope %.3f (<= %.2f); over %s %s"
           % (len(lead), split, max(q for *_, q, _ in lead), len(wake), asleep,
              max(q for _, _, q, _ in wake), ENVELOPE_SLACK, lead_over, wake_over))
    assert ok


# ---------------------------------------------------------------------------
# 9. gadget facts and the chain audit

AUDIT_CASES = [(6, 8), (12, 8), (24, 8), (12, 16), (16, 27)]
AUDIT_FRACTIONS = (1.0, 0.9, 0.5, 0.2, 0.05)


def test_criterion_9_gadget_facts(capsys):
    bad = [d for d in EXHAUSTIVE_DELTAS
           if not (lambda r: r.exhaustive and r.ok)(verify_core_facts(build_gadget(d, 0.05)))]
    big = verify_core_facts(build_gadget(SAMPLED_DELTA, 0.05), samples=SAMPLED_SETS)
    audits = []
    for D, delta in AUDIT_CASES:
        f = feasible_epsilon(D, delta)
        for frac in AUDIT_FRACTIONS:
            a = audit_chain(build_chain(D, delta, f * frac))
            audits.append(((D, delta, round(f * frac, 5)), a.ok))
    failed_audits = [c for c, ok in audits if not ok]
    ok = not bad and big.ok and big.checked == SAMPLED_SETS and not failed_audits
    report(capsys, 9, ok, "exhaustive delta 2..20 failures %s; delta=%d sampled %d sets, "
           "%d counterexamples; %d chain audits at eps <= feasible, failures %s"
           % (bad, SAMPLED_DELTA, big.checked, len(big.counterexamples), len(audits),
              failed_audits))
    assert ok


# ---------------------------------------------------------------------------
# 10. lower-bound adversary

def adversary_suite():
    rows = []
    for delta in ADVERSARY_DELTAS:
        g = build_gadget(delta, 0.05)
        p = lb_params(0.05, id_bound=max(64, delta + 4))
        for name, alg, budget in (("round_robin", round_robin_algorithm(), 4 * p.id_bound),
                                  ("sms", sms_algorithm(density(g.network(p))), SMS_BUDGET)):
            res = adversary_assign_ids(alg, g, range(1, delta + 5), budget, p)
            chk = check_delivery(alg, g, res, params=p)
            rows.append((delta, name, res.certified, chk.delivered, chk.sound, res.to_json()))
    return rows


def chain_suite():
    delta, eps = 8, 0.05
    single = adversary_assign_ids(round_robin_algorithm(), build_gadget(delta, eps),
                                  range(1, delta + 5), 4 * 256, lb_params(eps))
    ch, res = adversarial_chain(lambda p: round_robin_algorithm(), 12, delta, eps, 4 * 256)
    got = chain_delivery(round_robin_algorithm(), ch, horizon=10 ** 6)
    return len(ch.gadgets), single.certified, [r.certified for r in res], got, audit_chain(ch).ok


def test_criterion_10_adversary(capsys):
    rows = adversary_suite()
    unsound = [(d, n) for d, n, _, _, sound, _ in rows if not sound]
    short = [(d, n) for d, n, c, _, _, _ in rows if c < d / 2]
    gadgets, single, per, got, audited = chain_suite()
    chain_ok = (gadgets == CHAIN_GADGETS and audited and got is not None
                and got >= CHAIN_GADGETS * max([single] + per))
    ok = not unsound and not short and chain_ok
    report(capsys, 10, ok, "certified/delivered %s; unsound %s, below delta/2 %s; "
           "%d-gadget chain delivered at %s vs %d x certificate %d"
           % (["%s@%d:%d/%s" % (n, d, c, t) for d, n, c, t, _, _ in rows], unsound, short,
              gadgets, got, CHAIN_GADGETS, max([single] + per)))
    assert ok


# ---------------------------------------------------------------------------
# 11. determinism

def test_criterion_11_determinism(capsys, tmp_path):
    def snap():
        cfg = ExperimentConfig("local", UNIFORM, seeds=[0, 1], trace_dir=str(tmp_path / "tr"),
                               out=None)
        rows = rows_csv(run_experiment(cfg)) + rows_csv(run_experiment(
            ExperimentConfig("global", {"kind": "grid", "rows": 4, "cols": 4}, out=None)))
        traces = {p.name: p.read_bytes() for p in sorted((tmp_path / "tr").iterdir())}
        return json.dumps({
            "1": sinr_suite(0)[2][:200],
            "2": [dumps_schedule(build(*c)) for c in SELECTOR_CASES[2:4]],
            "3": proximity_suite(range(5))[-1],
            "4": sparsify_suite(range(3))[-1],
            "5-7": rows, "traces": {k: v.decode() for k, v in traces.items()},
            "8": [leader_suite(range(3)), wake_suite(range(2))],
            "9": verify_core_facts(build_gadget(8, 0.05)).to_json(),
            "10": [r[-1] for r in adversary_suite()[:2]],
        }, sort_keys=True, default=str)

    a, b = snap(), snap()
    ok = a == b
    report(capsys, 11, ok, "two reruns of a slice of suites 1-10, %d bytes, identical=%s"
           % (len(a), ok))
    assert ok
