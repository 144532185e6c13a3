"""Round-synchronous execution: generic per-node protocols and batched schedules."""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ContractViolation, HorizonReached, ParameterError
from .sinr_phy import ReceptionEvent, resolve_indices

CHUNK = 1 << 21


@dataclass
class NodeState:
    id: int
    cluster: int = None
    label: int = None
    parent: int = None
    children: set = field(default_factory=set)
    awake: bool = False
    woke_at: int = None
    done: bool = False
    log: list = field(default_factory=list)
    scratch: dict = field(default_factory=dict)


class Protocol:
    """Per-node behaviour.  Hooks see only the node's own state, the round
    number and received messages; positions are never passed in."""

    budget = None

    def on_wake(self, state, round_no, message):
        pass

    def on_round_start(self, state, round_no):
        return None

    def on_receive(self, state, round_no, sender, message):
        pass

    def finished(self, states, round_no):
        return False


@dataclass
class RoundTrace:
    round: int
    transmitters: list
    receptions: list
    phase: str = ""

    def to_json(self):
        return {"round": self.round, "phase": self.phase, "transmitters": self.transmitters,
                "receptions": [[e.receiver, e.sender, e.sinr_value] for e in self.receptions]}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["round"], obj["transmitters"],
                   [ReceptionEvent(r, s, obj["round"], v) for r, s, v in obj["receptions"]],
                   obj.get("phase", ""))


@dataclass
class ExecutionResult:
    traces: list
    states: dict
    rounds_used: int
    timeout: bool = False


def run(network, protocol, initial_awake, max_rounds, keep_traces=True, extra=None):
    """Simulate ``protocol`` until it reports termination, its budget, or max_rounds."""
    if not initial_awake:
        raise ParameterError("at least one node must start awake")
    if max_rounds <= 0:
        raise ParameterError("max_rounds must be positive")
    states = {int(v): NodeState(int(v)) for v in network.ids}
    for v in sorted(initial_awake):
        st = states[int(v)]
        st.awake, st.woke_at = True, 0
        protocol.on_wake(st, 0, None)
    limit = max_rounds if protocol.budget is None else min(max_rounds, protocol.budget)
    traces = []
    r = 0
    while r < limit:
        if protocol.finished(states, r):
            return ExecutionResult(traces, states, r, False)
        msgs = {}
        for v in network.ids:
            st = states[int(v)]
            if st.awake and st.woke_at < r or (st.awake and st.woke_at == 0 and r == 0
                                                and int(v) in initial_awake):
                m = protocol.on_round_start(st, r)
                if m is not None:
                    msgs[int(v)] = m
        tx = sorted(msgs)
        recv, send, val = resolve_indices(network, [network.index[v] for v in tx], extra)
        events = []
        for ri, si, x in zip(recv, send, val):
            u, s = int(network.ids[ri]), int(network.ids[si])
            events.append(ReceptionEvent(u, s, r, float(x)))
            st = states[u]
            if not st.awake:
                st.awake, st.woke_at = True, r
                protocol.on_wake(st, r, msgs[s])
            protocol.on_receive(st, r, s, msgs[s])
        if keep_traces and tx:
            traces.append(RoundTrace(r, tx, events))
        r += 1
    done = protocol.finished(states, r)
    timeout = not done and protocol.budget is None
    return ExecutionResult(traces, states, r, timeout)


# ---------------------------------------------------------------------------
# batched schedule execution

@dataclass
class Receptions:
    """Receptions of one schedule execution; rounds are offsets into the schedule."""
    rounds: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    start: int = 0
    length: int = 0
    participants: np.ndarray = None
    membership: np.ndarray = None

    def __len__(self):
        return len(self.rounds)

    def heard(self):
        """receiver -> sorted list of (round offset, sender)."""
        out = {}
        for r, s, u in zip(self.rounds.tolist(), self.senders.tolist(), self.receivers.tolist()):
            out.setdefault(u, []).append((r, s))
        return out

    def senders_heard(self):
        out = {}
        for s, u in zip(self.senders.tolist(), self.receivers.tolist()):
            out.setdefault(u, set()).add(s)
        return out


def execute_rounds(network, membership, part_idx, recv_idx=None, extra=None):
    """Resolve every round of a membership matrix [round, participant] at once."""
    part_idx = np.asarray(part_idx, dtype=np.int64)
    n = len(network)
    recv_idx = np.arange(n) if recv_idx is None else np.asarray(recv_idx, dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)
    rows, cols = np.nonzero(membership)
    if len(rows) == 0 or len(recv_idx) == 0:
        return empty, empty, empty
    p = network.params
    g = network.gain[np.ix_(part_idx, recv_idx)]                 # |P| x |R|
    ind = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=membership.shape)
    total = np.asarray(ind @ g)                                  # rounds x |R|
    # a receiver that transmits in a round hears nothing in it
    pos_in_part = {int(i): j for j, i in enumerate(part_idx)}
    rp = np.array([pos_in_part.get(int(i), -1) for i in recv_idx])
    out_r, out_s, out_u = [], [], []
    step = max(1, CHUNK // max(1, len(recv_idx)))
    for a in range(0, len(rows), step):
        rr, cc = rows[a:a + step], cols[a:a + step]
        sig = g[cc]                                              # K x |R|
        rest = np.maximum(total[rr] - sig, 0.0)
        if extra is not None:
            rest = rest + extra[recv_idx][None, :]
        ok = sig >= p.beta * (p.noise + rest)
        hit_k, hit_u = np.nonzero(ok)
        if len(hit_k) == 0:
            continue
        rnd = rr[hit_k]
        ru = rp[hit_u]
        busy = (ru >= 0) & membership[rnd, np.maximum(ru, 0)]
        keep = ~busy
        out_r.append(rnd[keep])
        out_s.append(part_idx[cc[hit_k[keep]]])
        out_u.append(recv_idx[hit_u[keep]])
    if not out_r:
        return empty, empty, empty
    r, s, u = np.concatenate(out_r), np.concatenate(out_s), np.concatenate(out_u)
    order = np.lexsort((u, r))
    return r[order], s[order], u[order]


class Session:
    """Binds a network to a global round clock, optional trace sink and
    optional transmission log.  Algorithms advance the clock by executing
    schedules or by skipping blocks whose outcome is already known.

    With ``all_receivers`` every node is resolved as a receiver regardless of
    what the caller asks for; used when listening bystanders matter.
    """

    def __init__(self, network, config=None, trace=None, horizon=None, log_tx=False,
                 all_receivers=False):
        self.network = network
        self.config = config
        self.clock = 0
        self.trace = trace
        self.horizon = horizon
        self.log_tx = log_tx
        self.all_receivers = all_receivers
        self.blocks = []
        self.cache = {}
        self.phase = ""
        self.simulated_rounds = 0
        self.flags = []

    def _advance(self, n):
        self.clock += int(n)
        if self.horizon is not None and self.clock > self.horizon:
            raise HorizonReached(self.clock)

    def execute(self, schedule, participants, clusters=None, receivers=None, extra=None):
        """Run ``schedule`` once with the given participant IDs transmitting per membership."""
        net = self.network
        participants = sorted(int(v) for v in participants)
        if schedule.kind == "wcss" and clusters is None and participants:
            raise ContractViolation("cluster-aware schedule needs cluster tags")
        wanted = None
        if self.all_receivers and receivers is not None:
            wanted, receivers = np.array(sorted(int(v) for v in receivers), dtype=np.int64), None
        start = self.clock
        m = len(schedule)
        if participants:
            tags = None if clusters is None else [clusters[v] for v in participants]
            memb = schedule.membership(participants, tags)
            pidx = np.array([net.index[v] for v in participants], dtype=np.int64)
            ridx = None if receivers is None else np.array(sorted(net.index[int(v)] for v in receivers),
                                                           dtype=np.int64)
            r, s, u = execute_rounds(net, memb, pidx, ridx, extra)
        else:
            memb = np.zeros((m, 0), dtype=bool)
            pidx = np.zeros(0, dtype=np.int64)
            r = s = u = np.zeros(0, dtype=np.int64)
        rec = Receptions(r, net.ids[s] if len(s) else s, net.ids[u] if len(u) else u, start, m,
                         np.asarray(participants, dtype=np.int64), memb)
        if self.log_tx:
            self.blocks.append(("sim", start, m, rec.participants, memb, rec))
        if wanted is not None:
            keep = np.isin(rec.receivers, wanted)
            rec = Receptions(rec.rounds[keep], rec.senders[keep], rec.receivers[keep], start, m,
                             rec.participants, memb)
        if self.trace is not None:
            self._write_trace(start, memb, participants, rec)
        self.simulated_rounds += m
        self._advance(m)
        return rec

    def skip(self, n, repeat_of=None):
        """Account ``n`` rounds whose receptions are already determined.

        ``repeat_of`` is a mark or a span; the skipped rounds then repeat the
        blocks recorded since the mark (or inside the span) cyclically.
        Without it the rounds are silent.
        """
        if n <= 0:
            return
        if self.log_tx and repeat_of is not None:
            self.blocks.append(("rep", self.clock, int(n), self._range(repeat_of)))
        elif self.log_tx:
            self.blocks.append(("idle", self.clock, int(n)))
        if self.trace is not None:
            self.trace.write(json.dumps({"skip": [self.clock, int(n)], "phase": self.phase}) + "\n")
        self._advance(n)

    def _range(self, ref):
        if ref[0] == "span":
            return ref[1], ref[2]
        return ref[0], len(self.blocks)

    def memo(self, key, compute):
        """Deterministic sub-computation cache: a repeat call replays the
        recorded round count instead of simulating it again."""
        hit = self.cache.get(key)
        if hit is not None:
            result, n, span = hit
            self.skip(n, repeat_of=span)
            return result
        mark = self.mark()
        t0 = self.clock
        result = compute()
        self.cache[key] = (result, self.clock - t0, self.span(mark))
        return result

    def mark(self):
        """Handle to the next block; used to declare later repeats of the same rounds."""
        return (len(self.blocks), self.clock)

    def span(self, mark, end=None):
        """Blocks from ``mark`` up to ``end`` (a later mark) or up to now."""
        b = len(self.blocks) if end is None else end[0]
        return ("span", mark[0], b)

    def _write_trace(self, start, memb, participants, rec):
        by_round = {}
        for r, s, u in zip(rec.rounds.tolist(), rec.senders.tolist(), rec.receivers.tolist()):
            by_round.setdefault(r, []).append((u, s))
        net = self.network
        for i in np.nonzero(memb.any(axis=1))[0] if memb.size else []:
            tx = [participants[j] for j in np.nonzero(memb[i])[0]]
            evs = []
            for u, s in by_round.get(int(i), []):
                # recompute the ratio for the record
                g = net.gain[[net.index[t] for t in tx], net.index[u]]
                sig = net.gain[net.index[s], net.index[u]]
                evs.append([u, s, float(sig / (net.params.noise + max(g.sum() - sig, 0.0)))])
            self.trace.write(json.dumps({"round": start + int(i), "phase": self.phase,
                                         "transmitters": tx, "receptions": evs}) + "\n")

    def transmissions_of(self, node, until=None):
        """Sorted absolute rounds before ``until`` in which ``node`` transmitted (needs log_tx)."""
        until = self.clock if until is None else until
        out = []
        for start, length, parts, memb in self._segments(0, len(self.blocks), 0, None, until):
            j = np.searchsorted(parts, node)
            if j < len(parts) and parts[j] == node:
                out.extend((start + np.nonzero(memb[:length, j])[0]).tolist())
        return sorted(out)

    def first_receptions(self, until=None):
        """Node -> first absolute round in which it received anything (needs log_tx).

        Repeated blocks only reproduce earlier receptions, so simulated
        blocks suffice.
        """
        until = self.clock if until is None else until
        first = {}
        for b in self.blocks:
            if b[0] != "sim" or b[1] >= until:
                continue
            rec = b[5]
            for r, u in zip(rec.rounds.tolist(), rec.receivers.tolist()):
                if b[1] + r < until and u not in first:
                    first[u] = b[1] + r
        return first

    def _segments(self, a, b, start, n, until):
        """Simulated segments (start, length, participants, membership) covering
        blocks[a:b] laid out from ``start``; cycled to fill ``n`` rounds if given."""
        blocks = self.blocks[a:b]
        if not blocks:
            return
        period = sum(blk[2] for blk in blocks)
        if period <= 0:
            return
        off = 0
        while (n is None and off < period) or (n is not None and off < n):
            for blk in blocks:
                at = start + off if n is not None else blk[1]
                left = blk[2] if n is None else min(blk[2], n - off)
                if left <= 0 or at >= until:
                    return
                if blk[0] == "sim":
                    yield at, min(left, until - at), blk[3], blk[4]
                elif blk[0] == "rep":
                    yield from self._segments(blk[3][0], blk[3][1], at, left, until)
                off += blk[2]
            if n is None:
                return


def run_schedule(network, schedule, participants, messages=None, clusters=None):
    """Execute a schedule; node v transmits messages[v] in round i iff selected by S_i."""
    ids = set(int(v) for v in network.ids)
    if not set(int(v) for v in participants) <= ids:
        raise ParameterError("participants must be network nodes")
    if schedule.kind == "wcss" and participants and clusters is None:
        raise ContractViolation("cluster-aware schedule needs cluster tags")
    sess = Session(network)
    rec = sess.execute(schedule, participants, clusters)
    messages = messages or {}
    parts = sorted(int(v) for v in participants)
    memb = schedule.membership(parts, None if clusters is None else [clusters[v] for v in parts]) \
        if parts else np.zeros((len(schedule), 0), dtype=bool)
    by_round = {}
    for r, s, u in zip(rec.rounds.tolist(), rec.senders.tolist(), rec.receivers.tolist()):
        by_round.setdefault(r, []).append(ReceptionEvent(u, s, r, 0.0))
    traces = []
    for i in range(len(schedule)):
        tx = [parts[j] for j in np.nonzero(memb[i])[0]] if parts else []
        traces.append(RoundTrace(i, tx, by_round.get(i, [])))
    return traces


def dump_traces(traces, fh):
    for t in traces:
        fh.write(json.dumps(t.to_json()) + "\n")


def load_traces(fh):
    out = []
    for line in fh:
        obj = json.loads(line)
        if "round" in obj:
            out.append(RoundTrace.from_json(obj))
    return out
