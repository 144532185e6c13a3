"""Round-count envelope shapes and the frozen constants fitted to them."""
import json
import math
import os

DATA = os.path.join(os.path.dirname(__file__), "data", "envelopes.json")


def log_star(x):
    """Iterated base-2 logarithm."""
    k = 0
    x = float(x)
    while x > 1.0:
        x = math.log2(x)
        k += 1
    return k


def shape(task, D, delta, N):
    lg = math.log2(max(N, 2))
    ls = max(log_star(N), 1)
    delta = max(delta, 1)
    D = max(D, 1)
    if task in ("cluster", "local"):
        return delta * lg * ls
    if task in ("sms", "global", "wakeup"):
        return D * (delta + ls) * lg
    if task == "leader":
        return D * (delta + ls) * lg * lg
    raise KeyError(task)


def load_constants(path=None):
    path = path or os.environ.get("SINRNET_ENVELOPES", DATA)
    if not os.path.exists(path):
        return {}
    with open(path) as fh:
        return json.load(fh)


def save_constants(obj, path=None):
    path = path or DATA
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def bound(task, D, delta, N, constants=None, slack=1.0):
    """C * shape for a task, or None when no constant has been fitted."""
    constants = load_constants() if constants is None else constants
    c = constants.get("C", {}).get(task)
    if c is None:
        return None
    return slack * c * shape(task, D, delta, N)


def epoch_length(D, delta, N, constants=None):
    """Length of one wake-up epoch: a clustering plus a broadcast, per the frozen fits."""
    constants = load_constants() if constants is None else constants
    a = bound("cluster", D, delta, N, constants)
    b = bound("sms", D, delta, N, constants)
    if a is None or b is None:
        raise KeyError("envelope constants for cluster/sms are not fitted")
    return int(math.ceil(a + b))
