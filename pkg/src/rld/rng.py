"""PCG32 generator with Box-Muller normals.

Every random decision in the package draws from an explicitly keyed PCG32
stream, so datasets, initializations and shuffles are pure functions of
their seeds and reproduce bit-for-bit. Stream keys are (initstate,
initseq) pairs; the purpose tags below keep streams for different jobs
disjoint even when the user passes the same seed everywhere.
"""

from __future__ import annotations

from math import cos, log, sin, sqrt, tau as TWO_PI

__all__ = ["Pcg32", "PURPOSE_DATA", "PURPOSE_INIT", "PURPOSE_SHUFFLE"]

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MASK32 = 0xFFFFFFFF
_MULT = 6364136223846793005

PURPOSE_DATA = 0 << 62
PURPOSE_INIT = 1 << 62
PURPOSE_SHUFFLE = 2 << 62


class Pcg32:
    """Minimal PCG-XSH-RR 64/32 generator (O'Neill's pcg32)."""

    def __init__(self, initstate: int, initseq: int = 0):
        self.state = 0
        self.inc = ((initseq << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + initstate) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def next_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def next_double(self) -> float:
        """Uniform in [0, 1) with 32 bits of resolution."""
        return self.next_u32() / 4294967296.0

    def next_normals(self, n: int) -> list[float]:
        """n standard normals via Box-Muller, consuming ceil(n/2) pairs.

        u1 is shifted into (0, 1] so the log never sees zero.
        """
        out: list[float] = []
        while len(out) < n:
            u1 = (self.next_u32() + 1) / 4294967296.0
            u2 = self.next_u32() / 4294967296.0
            r = sqrt(-2.0 * log(u1))
            out.append(r * cos(TWO_PI * u2))
            out.append(r * sin(TWO_PI * u2))
        return out[:n]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
