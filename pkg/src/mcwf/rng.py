"""LFSR113 combined Tausworthe generator with per-worker stream derivation.

Four 32-bit words of state, period 2^113.  Seed components must exceed
1, 7, 15 and 127 respectively; :func:`seed` remaps offending components
instead of rejecting them so that seeding is total and deterministic.
Each worker rank gets its own stream via :func:`derive_stream`; a stream
is consumed sequentially across all trajectories computed by that worker.
"""

from __future__ import annotations

from dataclasses import dataclass

_M32 = 0xFFFFFFFF
_M64 = 0xFFFFFFFFFFFFFFFF

# lower bounds and the remap bits (bound + 1) for the four components
_BOUNDS = (1, 7, 15, 127)
_REMAP = (2, 8, 16, 128)

_INV_2_32 = 2.3283064365386963e-10  # 2**-32

__all__ = ["Lfsr113State", "seed", "next_u01", "derive_stream", "DEFAULT_SEED"]

DEFAULT_SEED = 987654321


@dataclass(frozen=True)
class Lfsr113State:
    """Generator state; invariants z1 > 1, z2 > 7, z3 > 15, z4 > 127."""

    z1: int
    z2: int
    z3: int
    z4: int

    def next_u01(self) -> tuple[float, "Lfsr113State"]:
        """Draw one value in [0, 1) and return it with the advanced state."""
        z1, z2, z3, z4 = self.z1, self.z2, self.z3, self.z4
        b = (((z1 << 6) & _M32) ^ z1) >> 13
        z1 = (((z1 & 4294967294) << 18) & _M32) ^ b
        b = (((z2 << 2) & _M32) ^ z2) >> 27
        z2 = (((z2 & 4294967288) << 2) & _M32) ^ b
        b = (((z3 << 13) & _M32) ^ z3) >> 21
        z3 = (((z3 & 4294967280) << 7) & _M32) ^ b
        b = (((z4 << 3) & _M32) ^ z4) >> 12
        z4 = (((z4 & 4294967168) << 13) & _M32) ^ b
        return (z1 ^ z2 ^ z3 ^ z4) * _INV_2_32, Lfsr113State(z1, z2, z3, z4)


def seed(s1: int, s2: int, s3: int, s4: int) -> Lfsr113State:
    """Build a state from four 32-bit words, remapping any component that
    violates its lower bound by OR-ing in (bound + 1)."""
    words = []
    for s, bound, bits in zip((s1, s2, s3, s4), _BOUNDS, _REMAP):
        w = int(s) & _M32
        if w <= bound:
            w |= bits
        words.append(w)
    return Lfsr113State(*words)


def next_u01(state) -> tuple[float, Lfsr113State]:
    """Functional form of :meth:`Lfsr113State.next_u01`."""
    return state.next_u01()


def _mix64(x: int) -> int:
    """SplitMix-style avalanche (multiply-xorshift) of a 64-bit word."""
    x &= _M64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _M64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _M64
    return x ^ (x >> 31)


def derive_stream(master_seed: int, rank: int) -> Lfsr113State:
    """Deterministic per-rank stream: avalanche-mix (master_seed, rank)
    into four words, remap them legal, then discard a 16-draw warm-up."""
    if rank < 0:
        raise ValueError("rank must be non-negative")
    x = (int(master_seed) & _M64) ^ ((rank + 1) * 0x9E3779B97F4A7C15 & _M64)
    words = []
    for _ in range(2):
        x = _mix64(x + 0x9E3779B97F4A7C15)
        words.append(x & _M32)
        words.append((x >> 32) & _M32)
    state = seed(*words)
    for _ in range(16):
        _, state = state.next_u01()
    return state
