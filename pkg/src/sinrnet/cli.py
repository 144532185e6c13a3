"""Command line entry point: ``sinrnet <subcommand> ...``."""
import argparse
import json
import sys

from . import envelopes, harness, lowerbound, selectors
from .broadcast import global_broadcast, leader_election, local_broadcast, sms_broadcast, wake_up
from .clustering import ProtocolConfig, clustering_run, new_session
from .geometry import density
from .sinr_phy import SinrParams, communication_graph, load_network, save_network

BROADCAST_FIELDS = ["n", "D", "delta", "task", "rounds_used", "success"]


def _out(path):
    return harness.output_path(path)


def _dump(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        with open(_out(path), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _trace(path):
    return open(_out(path), "w") if path else None


def cmd_gen(a):
    spec = {"kind": a.kind}
    for k in ("n", "rows", "cols", "side", "avg_degree", "max_degree", "clusters", "per",
              "radius", "D", "delta"):
        v = getattr(a, k, None)
        if v is not None:
            spec[k] = v
    params = SinrParams(alpha=a.alpha, beta=a.beta, noise=a.noise, epsilon=a.epsilon,
                        id_bound=a.id_bound)
    if a.kind == "chain":
        spec["epsilon"] = a.epsilon
        params = lowerbound.lb_params(a.epsilon)
    net = harness.generate_network(spec, params, a.seed)
    save_network(net, _out(a.out))
    rep = harness.network_report(net)
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_run(a):
    cfg = harness.ExperimentConfig.load(a.config)
    rows = harness.run_experiment(cfg, out=a.out)
    bad = sum(not r.success for r in rows)
    print("%d rows, %d failed" % (len(rows), bad))
    return 0


def cmd_cluster(a):
    net = load_network(a.net)
    fh = _trace(a.trace)
    try:
        sess = new_session(net, ProtocolConfig(seed=a.seed), trace=fh)
        gamma = a.gamma if a.gamma is not None else density(net)
        res = clustering_run(sess, gamma, [int(v) for v in net.ids])
    finally:
        if fh:
            fh.close()
    out = res.assignment.to_json()
    out["rounds_used"] = sess.clock
    _dump(out, a.out)
    return 0


def cmd_broadcast(a):
    net = load_network(a.net)
    cfg = ProtocolConfig(seed=a.seed)
    fh = _trace(a.trace)
    srcs = [int(x) for x in a.sources.split(",")] if a.sources else None
    try:
        if a.task == "local":
            out = local_broadcast(net, config=cfg, trace=fh)
        elif a.task == "global":
            out = global_broadcast(net, srcs[0] if srcs else int(net.ids.min()), config=cfg, trace=fh)
        elif a.task == "sms":
            out = sms_broadcast(net, srcs or [int(net.ids.min())], config=cfg, trace=fh)
        elif a.task == "wakeup":
            pattern = {v: 0 for v in (srcs or [int(net.ids.min())])}
            out = wake_up(net, pattern, config=cfg, trace=fh)
        else:
            out = leader_election(net, config=cfg, trace=fh)
    finally:
        if fh:
            fh.close()
    cg = communication_graph(net)
    row = harness.MetricsRow(a.task, len(net), cg.diameter, cg.max_degree, density(net),
                             out.rounds_used, out.success, a.seed)
    if a.metrics:
        harness.write_rows([row], _out(a.metrics), append=a.append, fields=BROADCAST_FIELDS)
    print(json.dumps({"task": a.task, "rounds_used": out.rounds_used, "success": out.success,
                      "leader": out.leader}, sort_keys=True))
    return 0 if out.success else 1


def cmd_selectors(a):
    build = {"ssf": lambda: selectors.build_ssf(a.N, a.k, a.seed),
             "wss": lambda: selectors.build_wss(a.N, a.k, a.seed),
             "wcss": lambda: selectors.build_wcss(a.N, a.k, a.l, a.seed)}[a.kind]
    s = build()
    out = {"schedule": s.to_json()}
    if a.verify:
        cert = selectors.verify_selector(s, a.kind, a.N, a.k, a.l)
        out["certificate"] = {"verified": cert.verified, "status": cert.status,
                              "pairs_checked": cert.pairs_checked,
                              "counterexample": cert.counterexample}
    _dump(out, a.out)
    return 0


def cmd_lowerbound(a):
    if a.what == "gadget":
        g = lowerbound.build_gadget(a.delta, a.epsilon)
        rep = lowerbound.verify_core_facts(g, lowerbound.lb_params(a.epsilon))
        out = {"gadget": g.to_json(), "facts": rep.to_json(), "ok": rep.ok,
               "nu": lowerbound.nu(lowerbound.lb_params(a.epsilon))}
    elif a.what == "chain":
        ch = lowerbound.build_chain(a.D, a.delta, a.epsilon)
        out = {"chain": {k: v for k, v in ch.to_json().items() if k != "network"},
               "stats": lowerbound.chain_stats(ch), "audit": lowerbound.audit_chain(ch).to_json(),
               "feasible_epsilon": lowerbound.feasible_epsilon(a.D, a.delta)}
    else:
        g = lowerbound.build_gadget(a.delta, a.epsilon)
        p = lowerbound.lb_params(a.epsilon, id_bound=max(64, a.delta + 4))
        alg = _algorithm(a.alg, g, p)
        res = lowerbound.adversary_assign_ids(alg, g, range(1, a.delta + 5), a.budget, p)
        chk = lowerbound.check_delivery(alg, g, res, params=p)
        out = {"adversary": res.to_json(), "delivered": chk.delivered, "sound": chk.sound}
    _dump(out, a.report)
    return 0


def _algorithm(name, gadget, params):
    if name == "naive":
        return lowerbound.naive_algorithm()
    if name == "round_robin":
        return lowerbound.round_robin_algorithm()
    if name == "sms":
        return lowerbound.sms_algorithm(density(gadget.network(params)))
    raise SystemExit("unknown algorithm %r" % name)


def cmd_fit(a):
    out = _out(a.out)
    if a.csv:
        consts = harness.fit(harness.read_rows(a.csv), out)
    else:
        consts, _ = harness.run_fit(out, log=print)
    print(json.dumps(consts.get("C", {}), indent=1, sort_keys=True))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="sinrnet", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a network file")
    g.add_argument("kind", choices=harness.KINDS)
    g.add_argument("--n", type=int)
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--side", type=float)
    g.add_argument("--avg-degree", dest="avg_degree", type=float)
    g.add_argument("--max-degree", dest="max_degree", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--per", type=int)
    g.add_argument("--radius", type=float)
    g.add_argument("--D", type=int)
    g.add_argument("--delta", type=int)
    g.add_argument("--alpha", type=float, default=4.0)
    g.add_argument("--beta", type=float, default=2.0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--epsilon", type=float, default=0.2)
    g.add_argument("--id-bound", dest="id_bound", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("cluster", help="cluster a network")
    c.add_argument("--net", required=True)
    c.add_argument("--gamma", type=int)
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--trace")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cluster)

    b = sub.add_parser("broadcast", help="run a broadcast task")
    b.add_argument("task", choices=["local", "global", "sms", "wakeup", "leader"])
    b.add_argument("--net", required=True)
    b.add_argument("--sources")
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--trace")
    b.add_argument("--metrics")
    b.add_argument("--append", action="store_true")
    b.set_defaults(func=cmd_broadcast)

    s = sub.add_parser("selectors", help="build and verify a selector")
    s.add_argument("kind", choices=["ssf", "wss", "wcss"])
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--l", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--verify", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_selectors)

    lb = sub.add_parser("lowerbound", help="gadgets, chains and the ID adversary")
    lb.add_argument("what", choices=["gadget", "chain", "adversary"])
    lb.add_argument("--delta", type=int, default=8)
    lb.add_argument("--epsilon", type=float, default=0.05)
    lb.add_argument("--D", type=int, default=12)
    lb.add_argument("--alg", default="round_robin", choices=["naive", "round_robin", "sms"])
    lb.add_argument("--budget", type=int, default=4000)
    lb.add_argument("--report")
    lb.set_defaults(func=cmd_lowerbound)

    f = sub.add_parser("fit", help="fit and freeze envelope constants")
    f.add_argument("--csv", help="fit from an existing metrics CSV instead of sweeping")
    f.add_argument("--out", default=envelopes.DATA)
    f.set_defaults(func=cmd_fit)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
