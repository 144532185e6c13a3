import io
import json

import numpy as np
import pytest

from sinrnet.clustering import ProtocolConfig, new_session, sns
from sinrnet.engine import (Protocol, RoundTrace, Session, dump_traces, load_traces, run,
                            run_schedule)
from sinrnet.errors import ContractViolation, ParameterError
from sinrnet.geometry import density
from sinrnet.harness import generate_network
from sinrnet.selectors import Schedule
from sinrnet.sinr_phy import Network, SinrParams, resolve_round


class SourceOnce(Protocol):
    def on_round_start(self, state, r):
        return "m" if r == 0 else None


class Flood(Protocol):
    """Relay once, ID-dependent delay after waking; no positions involved."""

    def on_wake(self, state, r, message):
        state.scratch["at"] = r + 1 + state.id % 5

    def on_round_start(self, state, r):
        return "m" if r == state.scratch["at"] else None

    def finished(self, states, r):
        return all(s.awake and r > s.scratch["at"] for s in states.values())


def random_net(seed, n=40, side=4.0):
    rng = np.random.default_rng(seed)
    return Network(SinrParams(), range(1, n + 1), rng.uniform(0, side, (n, 2)))


def test_source_once_wakes_its_range():
    net = random_net(0)
    res = run(net, SourceOnce(), {1}, 5)
    d = np.linalg.norm(net.pos - net.position(1), axis=1)
    woke0 = {v for v, s in res.states.items() if s.awake and s.woke_at == 0 and v != 1}
    assert woke0 == {int(v) for v, x in zip(net.ids, d) if 0 < x <= 1}
    assert res.timeout


def test_empty_start_rejected():
    with pytest.raises(ParameterError):
        run(random_net(0), SourceOnce(), set(), 5)
    with pytest.raises(ParameterError):
        run(random_net(0), SourceOnce(), {1}, 0)


def test_woken_node_acts_from_next_round():
    net = Network(SinrParams(), [1, 2, 3], [(0, 0), (0.7, 0), (1.4, 0)])

    class Echo(Protocol):
        def on_wake(self, state, r, message):
            state.scratch["at"] = 0 if message is None else r + 1

        def on_round_start(self, state, r):
            return "m" if r == state.scratch["at"] else None

    res = run(net, Echo(), {1}, 4)
    assert [(t.round, t.transmitters) for t in res.traces] == [(0, [1]), (1, [2]), (2, [3])]
    assert res.states[2].woke_at == 0 and res.states[3].woke_at == 1


def test_flood_reaches_connected_network_and_terminates():
    net = generate_network({"kind": "uniform", "n": 40, "avg_degree": 8}, seed=2)
    res = run(net, Flood(), {int(net.ids[0])}, 10_000)
    assert not res.timeout
    assert all(s.awake for s in res.states.values())


def test_trace_replay_reproduces_receptions():
    net = generate_network({"kind": "uniform", "n": 40, "avg_degree": 8}, seed=3)
    res = run(net, Flood(), {int(net.ids[0])}, 10_000)
    buf = io.StringIO()
    dump_traces(res.traces, buf)
    buf.seek(0)
    for t in load_traces(buf):
        again = resolve_round(t.transmitters, net, t.round)
        assert [(e.receiver, e.sender) for e in again] == [(e.receiver, e.sender) for e in t.receptions]
        for a, b in zip(again, t.receptions):
            assert a.sinr_value == pytest.approx(b.sinr_value)


def test_position_blind_under_isometry():
    net = generate_network({"kind": "uniform", "n": 40, "avg_degree": 8}, seed=4)
    moved = net.transformed(rotation=0.7, shift=(13.0, -2.5))
    a = run(net, Flood(), {int(net.ids[0])}, 10_000)
    b = run(moved, Flood(), {int(net.ids[0])}, 10_000)
    assert [(t.round, t.transmitters) for t in a.traces] == [(t.round, t.transmitters) for t in b.traces]


def test_awake_set_is_monotone_and_runs_are_deterministic():
    net = generate_network({"kind": "uniform", "n": 40, "avg_degree": 8}, seed=5)
    a = run(net, Flood(), {int(net.ids[0])}, 10_000)
    b = run(net, Flood(), {int(net.ids[0])}, 10_000)
    woke = sorted(s.woke_at for s in a.states.values())
    seen = 0
    for t in a.traces:
        now = sum(1 for w in woke if w <= t.round)
        assert now >= seen
        seen = now
    sa, sb = io.StringIO(), io.StringIO()
    dump_traces(a.traces, sa)
    dump_traces(b.traces, sb)
    assert sa.getvalue() == sb.getvalue()


def test_round_trace_json():
    t = RoundTrace(3, [1, 2], [], "x")
    assert RoundTrace.from_json(json.loads(json.dumps(t.to_json()))) == t


# schedules ------------------------------------------------------------------

def test_singleton_schedule_participant_heard_in_range():
    net = random_net(1)
    s = Schedule("explicit", 1024, 1, explicit_sets=[[], [1], [2]])
    traces = run_schedule(net, s, [1])
    assert [t.transmitters for t in traces] == [[], [1], []]
    d = np.linalg.norm(net.pos - net.position(1), axis=1)
    want = sorted(int(v) for v, x in zip(net.ids, d) if 0 < x <= 1)
    assert sorted(e.receiver for e in traces[1].receptions) == want


def test_no_participants_means_silence():
    net = random_net(1)
    traces = run_schedule(net, Schedule("ssf", 1024, 4, length=50), [])
    assert len(traces) == 50
    assert all(not t.transmitters and not t.receptions for t in traces)


def test_wcss_needs_cluster_tags():
    with pytest.raises(ContractViolation):
        run_schedule(random_net(1), Schedule("wcss", 1024, 4, 2, length=10), [1, 2])


def test_sparse_network_schedule_delivers_on_sparse_sets():
    # participants pairwise >= 0.6 apart keep every unit ball at a handful of nodes
    for seed in range(5):
        net = random_net(seed, n=200, side=6.0)
        picked = []
        for i in range(len(net)):
            if all(np.linalg.norm(net.pos[i] - net.pos[j]) >= 0.6 for j in picked):
                picked.append(i)
        parts = [int(net.ids[i]) for i in picked]
        assert density(net.subnetwork(parts)) <= 9
        sess = new_session(net, ProtocolConfig())
        rec = sns(sess, parts)
        heard = rec.senders_heard()
        eps = net.params.epsilon
        for v in parts:
            d = np.linalg.norm(net.pos - net.position(v), axis=1)
            for u, x in zip(net.ids.tolist(), d):
                if 0 < x <= 1 - eps and u not in parts:
                    assert v in heard.get(u, set())


def test_session_skip_repeats_and_tx_log():
    net = Network(SinrParams(), [1, 2], [(0, 0), (0.5, 0)])
    s = Schedule("explicit", 1024, 1, explicit_sets=[[1], [], [2]])
    sess = Session(net, log_tx=True)
    m = sess.mark()
    sess.execute(s, [1, 2])
    sess.skip(6, repeat_of=m)
    sess.skip(2)
    assert sess.clock == 11
    assert sess.transmissions_of(1) == [0, 3, 6]
    assert sess.transmissions_of(2) == [2, 5, 8]
    assert sess.first_receptions() == {2: 0, 1: 2}


def test_session_memo_charges_rounds_again():
    net = Network(SinrParams(), [1, 2], [(0, 0), (0.5, 0)])
    s = Schedule("explicit", 1024, 1, explicit_sets=[[1], [2]])
    sess = Session(net)
    calls = []

    def work():
        calls.append(1)
        return sess.execute(s, [1, 2])

    sess.memo("k", work)
    sess.memo("k", work)
    assert calls == [1] and sess.clock == 4 and sess.simulated_rounds == 2
