"""Instance builders shared by the test modules."""
import numpy as np

from sinrnet.geometry import ClusterAssignment
from sinrnet.sinr_phy import Network, SinrParams


def blob_instance(seed, clusters=6, per=20, radius=0.5, gap=1.0, params=None):
    """Points in disks of the given radius on a grid of spacing ``gap``; the
    disk index defines a valid max(radius, ...)-clustering centred on the
    node closest to each disk centre."""
    p = params or SinrParams()
    rng = np.random.default_rng(seed)
    cols = int(np.ceil(np.sqrt(clusters)))
    pos, blob = [], []
    for c in range(clusters):
        cx, cy = (c % cols) * gap, (c // cols) * gap
        pos.append((cx, cy))
        blob.append(c)
        ang = rng.uniform(0, 2 * np.pi, per - 1)
        rad = radius * np.sqrt(rng.uniform(0.01, 1, per - 1))
        pos += list(zip(cx + rad * np.cos(ang), cy + rad * np.sin(ang)))
        blob += [c] * (per - 1)
    ids = rng.choice(np.arange(1, p.id_bound + 1), size=len(pos), replace=False)
    net = Network(p, ids, pos)
    center = {}
    for v, b in zip(ids.tolist(), blob):
        center.setdefault(b, v)        # the disk centre comes first
    cl = ClusterAssignment({v: center[b] for v, b in zip(ids.tolist(), blob)},
                           {c: c for c in center.values()})
    return net, cl
