"""Cyclic permutations of the CN alphabet Z_q = {0, ..., q-1}.

Two representations share one interface:

* :class:`IncrementPermutation` -- the arithmetic progression u -> (u + delta) mod q,
  stored as ``(q, delta)`` only, so it works for alphabets of any size.
* :class:`TablePermutation` -- an explicit image table, for small alphabets and
  arbitrary (searched) permutations.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

from .errors import DomainError, ValidationError

__all__ = [
    "FollowerSet",
    "IncrementPermutation",
    "Permutation",
    "TablePermutation",
    "apply",
    "apply_power",
    "follower_set",
    "is_cyclic",
    "permutation_from_json",
]


@dataclass(frozen=True)
class FollowerSet:
    """The ``l`` CNs that succeed ``origin``, in emission order."""

    origin: int
    members: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __contains__(self, v: object) -> bool:
        return v in self.members

    def as_set(self) -> frozenset[int]:
        return frozenset(self.members)


class Permutation(ABC):
    """A permutation of Z_q. Subclasses supply ``q`` and ``__call__``."""

    q: int

    @abstractmethod
    def __call__(self, u: int) -> int:
        ...

    @abstractmethod
    def is_cyclic(self) -> bool:
        ...

    @abstractmethod
    def to_json(self) -> Any:
        ...

    def _check(self, u: int) -> None:
        if not 0 <= u < self.q:
            raise DomainError(f"CN {u} outside Z_{self.q}")

    def apply(self, u: int) -> int:
        return self(u)

    def power(self, u: int, beta: int, allow_zero: bool = False) -> int:
        """Return sigma^beta[u]."""
        self._check(u)
        if beta < 0 or (beta == 0 and not allow_zero):
            raise DomainError(f"beta must be >= 1, got {beta}")
        for _ in range(beta):
            u = self(u)
        return u

    def follower_set(self, u: int, l: int) -> FollowerSet:
        if l < 1 or l >= self.q:
            raise DomainError(f"follower set needs 1 <= l < q, got l={l}, q={self.q}")
        self._check(u)
        members = []
        v = u
        for _ in range(l):
            v = self(v)
            members.append(v)
        return FollowerSet(u, tuple(members))

    def table(self) -> tuple[int, ...]:
        return tuple(self(u) for u in range(self.q))

    def orbit(self, start: int = 0) -> list[int]:
        """Elements visited from ``start`` until the walk returns to it."""
        self._check(start)
        out = [start]
        v = self(start)
        while v != start:
            out.append(v)
            v = self(v)
        return out

    def materialize(self) -> "TablePermutation":
        return TablePermutation(self.table())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        if self.q != other.q:
            return False
        return self.table() == other.table()

    def __hash__(self) -> int:
        # equal maps agree on their first images regardless of representation
        return hash((self.q, self(0), self(1 % self.q)))


class IncrementPermutation(Permutation):
    """omega_delta: u -> (u + delta) mod q."""

    __slots__ = ("q", "delta")

    def __init__(self, q: int, delta: int):
        if q < 1:
            raise DomainError(f"alphabet size must be >= 1, got {q}")
        self.q = int(q)
        self.delta = int(delta) % self.q

    def __call__(self, u: int) -> int:
        self._check(u)
        return (u + self.delta) % self.q

    def power(self, u: int, beta: int, allow_zero: bool = False) -> int:
        self._check(u)
        if beta < 0 or (beta == 0 and not allow_zero):
            raise DomainError(f"beta must be >= 1, got {beta}")
        return (u + beta * self.delta) % self.q

    def follower_set(self, u: int, l: int) -> FollowerSet:
        if l < 1 or l >= self.q:
            raise DomainError(f"follower set needs 1 <= l < q, got l={l}, q={self.q}")
        self._check(u)
        q, d = self.q, self.delta
        return FollowerSet(u, tuple((u + b * d) % q for b in range(1, l + 1)))

    def is_cyclic(self) -> bool:
        return math.gcd(self.delta, self.q) == 1

    def to_json(self) -> dict[str, int]:
        return {"q": self.q, "delta": self.delta}

    def __eq__(self, other: object) -> bool:
        if isinstance(other, IncrementPermutation):
            return (self.q, self.delta) == (other.q, other.delta)
        return super().__eq__(other)

    def __hash__(self) -> int:
        return super().__hash__()

    def __repr__(self) -> str:
        return f"IncrementPermutation(q={self.q}, delta={self.delta})"


class TablePermutation(Permutation):
    """Explicit image table ``u -> images[u]``; validated as a bijection."""

    __slots__ = ("q", "images")

    def __init__(self, images: Sequence[int]):
        images = tuple(int(v) for v in images)
        q = len(images)
        if q < 1:
            raise ValidationError("empty permutation table")
        if sorted(images) != list(range(q)):
            raise ValidationError(f"table is not a bijection on Z_{q}: {images!r}")
        self.q = q
        self.images = images

    @classmethod
    def from_cycles(cls, cycles: Iterable[Sequence[int]], q: int | None = None) -> "TablePermutation":
        """Build from disjoint cycles; elements not mentioned are fixed points."""
        cycles = [list(map(int, c)) for c in cycles]
        flat = [v for c in cycles for v in c]
        if q is None:
            q = max(flat) + 1 if flat else 0
        if len(set(flat)) != len(flat):
            raise ValidationError(f"cycles are not disjoint: {cycles!r}")
        if any(not 0 <= v < q for v in flat):
            raise ValidationError(f"cycle element outside Z_{q}: {cycles!r}")
        images = list(range(q))
        for c in cycles:
            for a, b in zip(c, c[1:] + c[:1]):
                images[a] = b
        return cls(images)

    @classmethod
    def from_cycle(cls, cycle: Sequence[int], q: int | None = None) -> "TablePermutation":
        return cls.from_cycles([cycle], len(cycle) if q is None else q)

    def __call__(self, u: int) -> int:
        self._check(u)
        return self.images[u]

    def table(self) -> tuple[int, ...]:
        return self.images

    def cycles(self) -> list[list[int]]:
        seen = [False] * self.q
        out = []
        for start in range(self.q):
            if seen[start]:
                continue
            c = []
            v = start
            while not seen[v]:
                seen[v] = True
                c.append(v)
                v = self.images[v]
            out.append(c)
        return out

    def is_cyclic(self) -> bool:
        return len(self.orbit(0)) == self.q

    def to_json(self) -> Any:
        if self.is_cyclic():
            return self.orbit(0)
        return {"q": self.q, "cycles": self.cycles()}

    def __hash__(self) -> int:
        return super().__hash__()

    def __repr__(self) -> str:
        if self.is_cyclic():
            return f"TablePermutation.from_cycle({self.orbit(0)!r})"
        return f"TablePermutation({list(self.images)!r})"


def permutation_from_json(obj: Any, q: int | None = None) -> Permutation:
    """Inverse of ``to_json``.

    Accepts ``{"q", "delta"}``, a flat cycle array, ``{"q", "cycles"}`` or
    ``{"table": [...]}``. ``q`` (from an enclosing set) pads short cycles with
    fixed points.
    """
    if isinstance(obj, dict):
        if "delta" in obj:
            return IncrementPermutation(int(obj.get("q", q)), int(obj["delta"]))
        if "cycles" in obj:
            return TablePermutation.from_cycles(obj["cycles"], int(obj.get("q", q)))
        if "table" in obj:
            return TablePermutation(obj["table"])
        raise ValidationError(f"unrecognised permutation object: {obj!r}")
    if isinstance(obj, list):
        if obj and all(isinstance(c, list) for c in obj):
            return TablePermutation.from_cycles(obj, q)
        return TablePermutation.from_cycle(obj, q)
    raise ValidationError(f"unrecognised permutation encoding: {obj!r}")


def apply(sigma: Permutation, u: int) -> int:
    return sigma(u)


def apply_power(sigma: Permutation, u: int, beta: int, allow_zero: bool = False) -> int:
    return sigma.power(u, beta, allow_zero=allow_zero)


def follower_set(sigma: Permutation, u: int, l: int) -> FollowerSet:
    return sigma.follower_set(u, l)


def is_cyclic(sigma: Permutation) -> bool:
    return sigma.is_cyclic()
