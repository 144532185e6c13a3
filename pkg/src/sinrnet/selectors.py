"""Strongly selective families and their witnessed / cluster-aware variants.

Randomised families are stored implicitly: membership of an element in the
i-th set is a keyed hash of (seed, i, element) compared against the inclusion
probability, so a schedule over a large ID space costs O(1) memory and any
slice of it can be evaluated on demand.
"""
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, Unverifiable

KINDS = ("ssf", "wss", "wcss", "explicit")
MAX_TUPLES = 10 ** 8
_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
TAG_ID, TAG_CLUSTER = 0x1D, 0xC1


def _mix(z):
    with np.errstate(over="ignore"):
        z = z + _M1
        z = (z ^ (z >> np.uint64(30))) * _M2
        z = (z ^ (z >> np.uint64(27))) * _M3
        return z ^ (z >> np.uint64(31))


def uniforms(seed, tag, rounds, a, b=None):
    """Uniform [0,1) values keyed by (seed, tag, round, a[, b]); shape len(rounds) x len(a)."""
    r = np.asarray(rounds, dtype=np.uint64)[:, None]
    a = np.asarray(a, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        z = _mix(np.full((1, 1), np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(tag)))
        z = _mix(z + r)
        z = _mix(z ^ a)
        if b is not None:
            z = _mix(z + np.asarray(b, dtype=np.uint64)[None, :] * _M2)
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass
class Schedule:
    """Sequence of transmitter sets over IDs (ssf, wss) or (ID, cluster) pairs (wcss)."""
    kind: str
    N: int
    k: int
    l: int = 1
    seed: int = 0
    length: int = 0
    explicit_sets: list = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError("unknown schedule kind %r" % self.kind)
        if self.explicit_sets is not None:
            self.length = len(self.explicit_sets)
        if self.length <= 0 and self.kind != "explicit":
            raise ParameterError("schedule length must be positive")
        self._cache = {}

    def __len__(self):
        return self.length

    @property
    def pairs(self):
        return self.kind == "wcss" or (self.kind == "explicit" and self.explicit_sets
                                       and any(isinstance(e, (list, tuple)) for s in self.explicit_sets for e in s))

    @property
    def id_prob(self):
        return 1.0 / self.k

    @property
    def cluster_prob(self):
        # 1/l collapses to "always allowed" at l = 1; use 1/(l+1) there
        return 1.0 / self.l if self.l >= 2 else 0.5

    def membership(self, ids, clusters=None, rounds=None):
        """Boolean matrix [round, node]: does node transmit in that round."""
        ids = np.asarray(ids, dtype=np.int64)
        rounds = np.arange(self.length) if rounds is None else np.asarray(rounds)
        if self.explicit_sets is not None:
            return self._explicit_membership(ids, clusters, rounds)
        if self.kind == "wcss":
            if clusters is None:
                raise ParameterError("wcss membership needs cluster tags")
            clusters = np.asarray(clusters, dtype=np.int64)
            allowed = uniforms(self.seed, TAG_CLUSTER, rounds, clusters) < self.cluster_prob
            picked = uniforms(self.seed, TAG_ID, rounds, ids, clusters) < self.id_prob
            return allowed & picked
        return uniforms(self.seed, TAG_ID, rounds, ids) < self.id_prob

    def _explicit_membership(self, ids, clusters, rounds):
        out = np.zeros((len(rounds), len(ids)), dtype=bool)
        for a, i in enumerate(rounds):
            s = self.explicit_sets[int(i)]
            if self.pairs:
                if clusters is None:
                    raise ParameterError("pair schedule membership needs cluster tags")
                ss = {tuple(e) for e in s}
                out[a] = [(int(v), int(c)) in ss for v, c in zip(ids, clusters)]
            else:
                ss = set(int(e) for e in s)
                out[a] = [int(v) in ss for v in ids]
        return out

    @property
    def sets(self):
        """Materialised transmitter sets (elements are IDs or [ID, cluster] pairs)."""
        if self.explicit_sets is not None:
            return self.explicit_sets
        if "sets" not in self._cache:
            ids = np.arange(1, self.N + 1)
            if self.kind == "wcss":
                vv, cc = np.meshgrid(ids, ids, indexing="ij")
                vv, cc = vv.ravel(), cc.ravel()
                m = self.membership(vv, cc)
                self._cache["sets"] = [[[int(vv[j]), int(cc[j])] for j in np.nonzero(row)[0]] for row in m]
            else:
                m = self.membership(ids)
                self._cache["sets"] = [[int(ids[j]) for j in np.nonzero(row)[0]] for row in m]
        return self._cache["sets"]

    def without(self, index):
        """Explicit copy with one set deleted (mutation testing)."""
        sets = [s for i, s in enumerate(self.sets) if i != index]
        return Schedule("explicit", self.N, self.k, self.l, self.seed, explicit_sets=sets)

    def with_kind_sets(self, kind):
        return Schedule(kind, self.N, self.k, self.l, self.seed, explicit_sets=self.sets)

    def to_json(self):
        return {"kind": self.kind, "N": self.N, "k": self.k, "l": self.l, "seed": self.seed,
                "sets": self.sets}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["kind"], int(obj["N"]), int(obj["k"]), int(obj.get("l", 1)),
                   int(obj.get("seed", 0)), explicit_sets=obj["sets"])


def dumps_schedule(s):
    return json.dumps(s.to_json(), separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# lengths from the union bound

def hit_probability(kind, k, l=1):
    """Chance that one random set serves one fixed requirement tuple."""
    pk = (1.0 / k) * (1 - 1.0 / k) ** (k - 1)
    if kind == "ssf":
        return pk
    if kind == "wss":
        return pk / k
    q = 1.0 / l if l >= 2 else 0.5
    return q * (1 - q) ** l * pk / k


def union_length(kind, N, k, l=1):
    """Twice the smallest m with m * p >= ln(#tuples) + ln 2."""
    p = hit_probability(kind, k, l)
    if kind == "ssf":
        log_tuples = math.log(math.comb(N, k) * k)
    elif kind == "wss":
        log_tuples = math.log(max(math.comb(N, k) * k * max(N - k, 1), 1))
    else:
        log_tuples = (k + l + 3) * math.log(max(N, 2))
    return max(1, 2 * math.ceil((log_tuples + math.log(2)) / p))


def _check(N, k, l):
    if not (1 <= k <= N):
        raise ParameterError("need 1 <= k <= N")
    if not (1 <= l <= N):
        raise ParameterError("need 1 <= l <= N")


CERT_LIMITS = {"ssf": (20, 4, 1), "wss": (12, 3, 1), "wcss": (8, 2, 2)}


def _build(kind, N, k, l, seed, length, certify, max_attempts=200):
    _check(N, k, l)
    length = length or union_length(kind, N, k, l)
    lim = CERT_LIMITS[kind]
    small = N <= lim[0] and k <= lim[1] and l <= lim[2]
    if certify is None:
        certify = small
    s = Schedule(kind, N, k, l, seed, length)
    if not certify:
        return s
    for attempt in range(max_attempts):
        s = Schedule(kind, N, k, l, seed + attempt, length)
        if verify_selector(s, kind, N, k, l).verified:
            return s
    raise ParameterError("no certified %s found after %d attempts" % (kind, max_attempts))


def build_ssf(N, k, seed=0, length=None, certify=None):
    """(N,k)-strongly selective family; certified exhaustively at small sizes."""
    return _build("ssf", N, k, 1, seed, length, certify)


def build_wss(N, k, seed=0, length=None, certify=None):
    """(N,k)-witnessed strong selector (the single-cluster case of the wcss sampler)."""
    return _build("wss", N, k, 1, seed, length, certify)


def build_wcss(N, k, l, seed=0, length=None, certify=None):
    """(N,k,l)-witnessed cluster-aware strong selector over (ID, cluster) pairs."""
    return _build("wcss", N, k, l, seed, length, certify)


# ---------------------------------------------------------------------------
# exhaustive verification

@dataclass
class SelectorCertificate:
    verified: bool
    counterexample: tuple = None
    pairs_checked: int = 0
    status: str = "verified"


def tuple_count(kind, N, k, l=1):
    if kind == "ssf":
        return math.comb(N, k) * k
    if kind == "wss":
        return math.comb(N, k) * k * (N - k)
    return N * math.comb(N - 1, l) * math.comb(N, k) * k * (N - k)


def _masks(schedule, kind, N):
    sets = schedule.sets
    if kind == "wcss":
        if N * N > 64:
            raise Unverifiable("pair universe too large for bitset verification")
        out = []
        for s in sets:
            m = 0
            for v, c in s:
                m |= 1 << ((v - 1) * N + (c - 1))
            out.append(m)
    else:
        if N > 64:
            raise Unverifiable("ID universe too large for bitset verification")
        out = []
        for s in sets:
            m = 0
            for v in s:
                m |= 1 << (v - 1)
            out.append(m)
    return np.array(out, dtype=np.uint64)


def _requirements(kind, N, k, l):
    """Yield (tuple, x_bit, witness_bit, X_mask, conflict_mask) for every requirement."""
    one = 1
    if kind in ("ssf", "wss"):
        for X in itertools.combinations(range(N), k):
            xmask = sum(one << i for i in X)
            for x in X:
                if kind == "ssf":
                    yield (tuple(i + 1 for i in X), x + 1), one << x, 0, xmask, 0
                    continue
                for y in range(N):
                    if y not in X:
                        yield (tuple(i + 1 for i in X), x + 1, y + 1), one << x, one << y, xmask, 0
        return
    for c in range(N):
        others = [z for z in range(N) if z != c]
        for C in itertools.combinations(others, l):
            cmask = 0
            for z in C:
                for v in range(N):
                    cmask |= one << (v * N + z)
            for X in itertools.combinations(range(N), k):
                xmask = sum(one << (v * N + c) for v in X)
                for x in X:
                    for y in range(N):
                        if y not in X:
                            yield ((tuple(v + 1 for v in X), c + 1, tuple(z + 1 for z in C), x + 1, y + 1),
                                   one << (x * N + c), one << (y * N + c), xmask, cmask)


def _served(masks, xbit, ybit, xmask, cmask):
    ok = (masks & np.uint64(xmask)) == np.uint64(xbit)
    if ybit:
        ok &= (masks & np.uint64(ybit)) != 0
    if cmask:
        ok &= (masks & np.uint64(cmask)) == 0
    return ok


def witness_table(schedule, kind, N, k, l=1):
    """For every requirement tuple, the indices of sets that serve it."""
    masks = _masks(schedule, kind, N)
    return [(tup, np.nonzero(_served(masks, *req))[0])
            for tup, *req in _requirements(kind, N, k, l)]


def verify_selector(schedule, kind, N, k, l=1):
    """Exhaustive check of the selection property; first failing tuple is reported."""
    _check(N, k, l)
    if kind not in ("ssf", "wss", "wcss"):
        raise ParameterError("cannot verify kind %r" % kind)
    size = math.comb(N, k) * N * N * (math.comb(N, l) if kind == "wcss" else 1)
    if size > MAX_TUPLES:
        return SelectorCertificate(False, None, 0, "unverifiable")
    try:
        masks = _masks(schedule, kind, N)
    except Unverifiable:
        return SelectorCertificate(False, None, 0, "unverifiable")
    checked = 0
    for tup, *req in _requirements(kind, N, k, l):
        checked += 1
        if not _served(masks, *req).any():
            return SelectorCertificate(False, tup, checked, "failed")
    return SelectorCertificate(True, None, checked, "verified")


def pivotal_sets(schedule, kind, N, k, l=1):
    """Map set index -> one tuple for which that set is the only witness."""
    out = {}
    for tup, wit in witness_table(schedule, kind, N, k, l):
        if len(wit) == 1 and int(wit[0]) not in out:
            out[int(wit[0])] = tup
    return out


def minimal_subfamily(schedule, kind, N, k, l=1):
    """Greedily drop sets whose every tuple has another witness.

    Witness counts only fall as sets go, so each kept set ends up the sole
    witness of some tuple: every set of the result is pivotal.
    """
    table = witness_table(schedule, kind, N, k, l)
    serves = [[] for _ in range(len(schedule))]
    left = []
    for t, (_, wit) in enumerate(table):
        left.append(len(wit))
        for i in wit.tolist():
            serves[i].append(t)
    keep = []
    for i in range(len(schedule)):
        if serves[i] and all(left[t] >= 2 for t in serves[i]):
            for t in serves[i]:
                left[t] -= 1
        elif serves[i]:
            keep.append(i)
    sets = [schedule.sets[i] for i in keep]
    return Schedule("explicit", N, k, l, schedule.seed, explicit_sets=sets)
