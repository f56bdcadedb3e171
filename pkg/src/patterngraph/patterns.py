"""Response patterns: fixed-width observation indicators.

A pattern ``r`` is a binary vector of length ``d``; ``r[j] == 1`` means the
j-th study variable is observed.  Patterns print as bit strings with the
first variable leftmost, so ``Pattern.parse("110")`` observes variables 0
and 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np


class PatternError(ValueError):
    """Malformed pattern or dimension mismatch."""


@dataclass(frozen=True)
class Pattern:
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) == 0:
            raise PatternError("pattern must have at least one coordinate")
        if any(b not in (0, 1) for b in self.bits):
            raise PatternError(f"pattern bits must be 0/1, got {self.bits}")

    @classmethod
    def parse(cls, text: str) -> "Pattern":
        text = text.strip()
        if not text or any(c not in "01" for c in text):
            raise PatternError(f"not a bit string: {text!r}")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def full(cls, d: int) -> "Pattern":
        return cls((1,) * d)

    @classmethod
    def from_mask(cls, mask: Iterable[bool]) -> "Pattern":
        return cls(tuple(int(bool(m)) for m in mask))

    @property
    def d(self) -> int:
        return len(self.bits)

    @property
    def size(self) -> int:
        """Number of observed coordinates, ``|r|``."""
        return sum(self.bits)

    @property
    def label(self) -> str:
        return "".join(str(b) for b in self.bits)

    @cached_property
    def observed(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.bits, dtype=bool))

    @cached_property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(~np.array(self.bits, dtype=bool))

    @cached_property
    def mask(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)

    @property
    def is_full(self) -> bool:
        return all(self.bits)

    def complement(self) -> "Pattern":
        return Pattern(tuple(1 - b for b in self.bits))

    def dominates(self, other: "Pattern") -> bool:
        """Strict dominance: every coordinate observed in ``other`` is
        observed here, and at least one more is."""
        if self.d != other.d:
            raise PatternError(f"dimension mismatch: {self.label} vs {other.label}")
        return self.bits != other.bits and all(a >= b for a, b in zip(self.bits, other.bits))

    def covers(self, other: "Pattern") -> bool:
        """Non-strict version of :meth:`dominates`."""
        return self == other or self.dominates(other)

    def __str__(self) -> str:
        return self.label

    def __repr__(self) -> str:
        return f"Pattern('{self.label}')"


def dominates(s: Pattern, r: Pattern) -> bool:
    return s.dominates(r)


def as_pattern(p) -> Pattern:
    if isinstance(p, Pattern):
        return p
    if isinstance(p, str):
        return Pattern.parse(p)
    return Pattern(tuple(int(b) for b in p))


def all_patterns(d: int) -> list[Pattern]:
    """Every pattern in ``{0,1}^d``, in canonical order (``1_d`` first)."""
    out = [Pattern(tuple((k >> (d - 1 - j)) & 1 for j in range(d))) for k in range(2 ** d)]
    return sorted(out, key=canonical_key)


def canonical_key(p: Pattern):
    # descending bit-string order puts 1_d first and 0_d last
    return tuple(-b for b in p.bits)
