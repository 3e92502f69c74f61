"""Portable random streams: splitmix64 seeding, xoshiro256**, alias tables.

Everything here is defined bit-for-bit so schedules can be reproduced by
any other implementation of the same algorithms.
"""

MASK64 = 0xFFFF_FFFF_FFFF_FFFF
TWO_POW_MINUS_53 = 1.0 / (1 << 53)

_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


def splitmix64(state):
    """One splitmix64 step. Returns ``(output, next_state)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), state


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 with a splitmix64-expanded 64-bit seed."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, seed=0, state=None):
        if state is not None:
            s = [int(v) & MASK64 for v in state]
            if len(s) != 4 or not any(s):
                raise ValueError("xoshiro256** state must be four words, not all zero")
        else:
            if not 0 <= seed <= MASK64:
                raise ValueError(f"seed must fit in 64 bits, got {seed}")
            s = []
            sm = seed
            for _ in range(4):
                out, sm = splitmix64(sm)
                s.append(out)
        self.s0, self.s1, self.s2, self.s3 = s

    @property
    def state(self):
        return (self.s0, self.s1, self.s2, self.s3)

    def next_u64(self):
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def random(self):
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * TWO_POW_MINUS_53

    def below(self, n):
        """Integer in [0, n) as ``floor(random() * n)``; n must be < 2**53."""
        return int(self.random() * n)

    def jump(self):
        """Advance by 2**128 steps (reference xoshiro256 jump polynomial)."""
        a = b = c = d = 0
        for word in _JUMP:
            for bit in range(64):
                if word & (1 << bit):
                    a ^= self.s0
                    b ^= self.s1
                    c ^= self.s2
                    d ^= self.s3
                self.next_u64()
        self.s0, self.s1, self.s2, self.s3 = a, b, c, d

    def copy(self):
        return Xoshiro256(state=self.state)

    def shuffle(self, items):
        """In-place Fisher-Yates, high index first."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def build_alias_table(weights):
    """Vose alias table over non-negative ``weights``.

    Returns ``(prob, alias)`` lists. Worklists are stacks seeded in index
    order, which pins the table for a given weight vector.
    """
    n = len(weights)
    if n == 0:
        raise ValueError("alias table needs at least one weight")
    total = float(sum(weights))
    if not total > 0.0:
        raise ValueError("alias table needs a positive total weight")
    scaled = [w * n / total for w in weights]
    prob = [0.0] * n
    alias = list(range(n))
    small = [i for i, q in enumerate(scaled) if q < 1.0]
    large = [i for i, q in enumerate(scaled) if q >= 1.0]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        prob[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
        if scaled[hi] < 1.0:
            small.append(hi)
        else:
            large.append(hi)
    for i in large:
        prob[i] = 1.0
    for i in small:
        prob[i] = 1.0
    return prob, alias


def alias_pick(u, prob, alias):
    """Map one uniform ``u`` in [0,1) to a column via the alias table."""
    scaled = u * len(prob)
    col = int(scaled)
    return col if scaled - col < prob[col] else alias[col]
