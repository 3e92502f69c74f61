"""Pure Python/numpy implementations of the hot kernels.

Same signatures and bit-identical integer results as the compiled ``_core``
extension; used when the extension is unavailable or disabled.
"""

import numpy as np

M = 0xFFFF_FFFF_FFFF_FFFF
INV53 = 1.0 / (1 << 53)


def alias_draws(state, prob, alias, steps):
    """``steps`` alias-table draws from a xoshiro256** stream.

    Returns ``(choices, new_state)``; one 64-bit output per draw.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    prob = [float(p) for p in prob]
    alias = [int(a) for a in alias]
    n = len(prob)
    out = np.empty(steps, dtype=np.int64)
    for k in range(steps):
        x = (s1 * 5) & M
        x = ((((x << 7) | (x >> 57)) & M) * 9) & M
        t = (s1 << 17) & M
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & M
        scaled = (x >> 11) * INV53 * n
        col = int(scaled)
        out[k] = col if scaled - col < prob[col] else alias[col]
    return out, (s0, s1, s2, s3)


class _Stream:
    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, state):
        self.s0, self.s1, self.s2, self.s3 = (int(v) for v in state)

    def uniform(self):
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        x = (s1 * 5) & M
        x = ((((x << 7) | (x >> 57)) & M) * 9) & M
        t = (s1 << 17) & M
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & M
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return (x >> 11) * INV53

    def permutation(self, n):
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def assign_records(choices, counts, states):
    """Record index for every step.

    Dataset ``d`` walks a Fisher-Yates permutation of ``range(counts[d])``
    drawn from its own stream ``states[d]``; a fresh permutation is drawn
    each time one is exhausted.
    """
    k = len(counts)
    streams = [_Stream(states[d]) for d in range(k)]
    perms = [None] * k
    cursor = [0] * k
    out = np.empty(len(choices), dtype=np.int64)
    for step, d in enumerate(choices.tolist() if hasattr(choices, "tolist") else choices):
        perm = perms[d]
        if perm is None or cursor[d] == len(perm):
            perm = perms[d] = streams[d].permutation(int(counts[d]))
            cursor[d] = 0
        out[step] = perm[cursor[d]]
        cursor[d] += 1
    return out


def iou_pairs(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    out = np.zeros(len(a))
    ok = (union > 0) & (inter > 0)
    out[ok] = inter[ok] / union[ok]
    return out


def _axis_weights(src, target):
    if target == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(target) * (src - 1) / (target - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def bilinear_resize(grid, target):
    """Align-corners bilinear resize of an ``(s, s, d)`` grid to ``target``."""
    grid = np.asarray(grid, dtype=np.float64)
    s = grid.shape[0]
    lo, hi, f = _axis_weights(s, target)
    # rows first, then columns
    g0 = grid[lo]
    rows = g0 + f[:, None, None] * (grid[hi] - g0)
    c0 = rows[:, lo]
    return c0 + f[None, :, None] * (rows[:, hi] - c0)
