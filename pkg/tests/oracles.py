"""Independent oracles used by the test suite.

These deliberately avoid the library's own code paths: the LFSR113
reference is a line-by-line transcription of the published combined
Tausworthe routine, the matvec oracle uses plain dense numpy, and the
analytic formulas are evaluated directly.
"""

import numpy as np

M32 = 0xFFFFFFFF


class Lfsr113Reference:
    """Straight transcription of the published four-component generator."""

    def __init__(self, z1, z2, z3, z4):
        # caller is responsible for legal seeds (> 1, 7, 15, 127)
        self.z1, self.z2, self.z3, self.z4 = z1, z2, z3, z4

    def next(self):
        b = (((self.z1 << 6) & M32) ^ self.z1) >> 13
        self.z1 = (((self.z1 & 4294967294) << 18) & M32) ^ b
        b = (((self.z2 << 2) & M32) ^ self.z2) >> 27
        self.z2 = (((self.z2 & 4294967288) << 2) & M32) ^ b
        b = (((self.z3 << 13) & M32) ^ self.z3) >> 21
        self.z3 = (((self.z3 & 4294967280) << 7) & M32) ^ b
        b = (((self.z4 << 3) & M32) ^ self.z4) >> 12
        self.z4 = (((self.z4 & 4294967168) << 13) & M32) ^ b
        return (self.z1 ^ self.z2 ^ self.z3 ^ self.z4) * 2.3283064365386963e-10


def dense_matvec(m, v):
    """Row-by-row dense matrix-vector product."""
    m = np.asarray(m, dtype=complex)
    v = np.asarray(v, dtype=complex)
    out = np.zeros(m.shape[0], dtype=complex)
    for i in range(m.shape[0]):
        acc = 0.0 + 0.0j
        for j in range(m.shape[1]):
            acc += m[i, j] * v[j]
        out[i] = acc
    return out


def poisson_amplitude(alpha, k):
    """Coherent-state amplitude exp(-|a|^2/2) a^k / sqrt(k!)."""
    from math import exp, factorial, sqrt
    return exp(-abs(alpha) ** 2 / 2) * alpha ** k / sqrt(factorial(k))


def random_dense(rng, n, fill=1.0):
    """Random complex matrix with the given fill fraction."""
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if fill < 1.0:
        m[rng.random((n, n)) >= fill] = 0.0
    return m


class ScriptedDraws:
    """Stand-in rng state that replays a fixed list of draws."""

    def __init__(self, draws, fallback=0.999999):
        self._draws = list(draws)
        self._fallback = fallback

    def next_u01(self):
        if self._draws:
            u = self._draws.pop(0)
        else:
            u = self._fallback
        return u, self
