"""(q, l)-proper sets: verification, the size bound, classification and an
exhaustive search for small alphabets.

A set P of cyclic permutations is (q, l)-proper when every ordered pair
(u, sigma^beta[u]) with 1 <= beta <= l pins down sigma. Equivalently, for each
u the l-follower sets of distinct members are pairwise disjoint, which is what
:func:`verify_proper` checks.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from .errors import DomainError, ParameterError, StateError, ValidationError
from .perm import IncrementPermutation, Permutation, TablePermutation, permutation_from_json

logger = logging.getLogger(__name__)

__all__ = [
    "ImproperWitness",
    "ProperSet",
    "SEARCH_MAX_Q",
    "Verdict",
    "certificate",
    "classify",
    "exhaustive_max_search",
    "upper_bound",
    "verify_proper",
]

# Largest alphabet exhaustive_max_search accepts without force=True.
SEARCH_MAX_Q = 10


def _check_l(q: int, l: int) -> None:
    if l < 1 or l >= q:
        raise DomainError(f"need 1 <= l < q, got q={q}, l={l}")


@dataclass(frozen=True)
class ImproperWitness:
    """sigma^beta1[u] == v == pi^beta2[u] for members sigma != pi."""

    u: int
    v: int
    beta1: int
    beta2: int
    sigma_index: int
    pi_index: int

    def to_json(self) -> dict[str, int]:
        return {
            "u": self.u,
            "v": self.v,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "sigma_index": self.sigma_index,
            "pi_index": self.pi_index,
        }


@dataclass(frozen=True)
class Verdict:
    witness: ImproperWitness | None = None

    @property
    def proper(self) -> bool:
        return self.witness is None

    def __bool__(self) -> bool:
        return self.proper


@dataclass
class ProperSet:
    q: int
    l: int
    members: Sequence[Permutation]
    classification: str = "unverified"  # unverified | proper | improper
    witness: ImproperWitness | None = None
    construction: dict[str, int] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        _check_l(self.q, self.l)
        if self.classification not in ("unverified", "proper", "improper"):
            raise ValidationError(f"unknown classification {self.classification!r}")

    @property
    def m(self) -> int:
        return len(self.members)

    def verify(self) -> "ProperSet":
        verdict = verify_proper(self.members, self.q, self.l)
        return replace(
            self,
            classification="proper" if verdict.proper else "improper",
            witness=verdict.witness,
        )

    def to_json(self, member_limit: int | None = 100_000) -> dict[str, Any]:
        out: dict[str, Any] = {
            "q": self.q,
            "l": self.l,
            "m": self.m,
            "classification": self.classification,
        }
        if self.construction is not None:
            out["construction"] = dict(self.construction)
        if self.construction is None or member_limit is None or self.m <= member_limit:
            out["members"] = [p.to_json() for p in self.members]
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        if self.classification == "proper":
            out["grade"] = classify(self)
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any], l: int | None = None) -> "ProperSet":
        q = int(obj["q"])
        l = int(obj["l"]) if l is None else l
        construction = obj.get("construction")
        if "members" in obj:
            members = [permutation_from_json(m, q) for m in obj["members"]]
        elif construction is not None:
            from .construction import IncrementFamily

            members = IncrementFamily(int(construction["p"]), int(construction["l"]))
        else:
            raise ValidationError("set has neither members nor construction parameters")
        # a claim made for one l says nothing about another
        status = obj.get("classification", "unverified") if l == int(obj["l"]) else "unverified"
        return cls(q, l, members, classification=status, construction=construction)


def _first_collision(u: int, followers: Sequence[Sequence[int]]) -> ImproperWitness | None:
    """Smallest (sigma_index, pi_index, beta1, beta2) collision among follower lists of u."""
    seen: dict[int, list[tuple[int, int]]] = {}
    clashes: list[int] = []
    for idx, f in enumerate(followers):
        for beta, v in enumerate(f, start=1):
            hits = seen.setdefault(v, [])
            if hits and len(hits) == 1:
                clashes.append(v)
            hits.append((idx, beta))
    best = None
    for v in clashes:
        hits = seen[v]
        for (i, b1), (j, b2) in itertools.combinations(hits, 2):
            if i == j:
                continue
            key = (i, j, b1, b2)
            if best is None or key < best[0]:
                best = (key, v)
    if best is None:
        return None
    (i, j, b1, b2), v = best
    return ImproperWitness(u=u, v=v, beta1=b1, beta2=b2, sigma_index=i, pi_index=j)


def _validate_members(members: Sequence[Permutation], q: int) -> None:
    for idx, p in enumerate(members):
        if p.q != q:
            raise ValidationError(f"member {idx} acts on Z_{p.q}, expected Z_{q}")
        if not p.is_cyclic():
            raise ValidationError(f"member {idx} ({p!r}) is not a single cycle with orbit Z_{q}")


def verify_proper(candidates: Sequence[Permutation], q: int, l: int) -> Verdict:
    """Check that all l-follower sets of distinct members are disjoint, for every u.

    On failure the lexicographically smallest witness (u, member indices, betas)
    is returned. For sets made only of increment permutations the follower
    sets at u are the follower sets at 0 shifted by u, so only u = 0 is checked.
    """
    _check_l(q, l)
    candidates = list(candidates)
    _validate_members(candidates, q)
    if all(isinstance(p, IncrementPermutation) for p in candidates):
        offsets = [p.follower_set(0, l).members for p in candidates]
        return Verdict(_first_collision(0, offsets))
    tables = [p.table() for p in candidates]
    for u in range(q):
        followers = []
        for t in tables:
            f = []
            v = u
            for _ in range(l):
                v = t[v]
                f.append(v)
            followers.append(f)
        witness = _first_collision(u, followers)
        if witness is not None:
            return Verdict(witness)
    return Verdict()


def upper_bound(q: int, l: int) -> int:
    """Largest possible size of a (q, l)-proper set: floor((q - 1) / l)."""
    _check_l(q, l)
    return (q - 1) // l


def classify(ps: ProperSet) -> str:
    """'perfect', 'quasiperfect' or 'ordinary' for a verified proper set."""
    if ps.classification != "proper":
        raise StateError(f"set must be verified proper first (is {ps.classification})")
    if ps.m < upper_bound(ps.q, ps.l):
        return "ordinary"
    if (ps.q - 1) % ps.l == 0:
        return "perfect"
    return "quasiperfect"


def certificate(ps: ProperSet) -> list[list[int]]:
    """For each u, the sorted union of members' follower sets.

    A third party can re-check properness: each row must have exactly m*l
    entries (no overlaps) and must not contain u.
    """
    rows = []
    for u in range(ps.q):
        union: list[int] = []
        for p in ps.members:
            union.extend(p.follower_set(u, ps.l).members)
        rows.append(sorted(union))
    return rows


def _cyclic_tables(q: int) -> list[tuple[int, ...]]:
    tables = []
    for rest in itertools.permutations(range(1, q)):
        cycle = (0,) + rest
        images = [0] * q
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            images[a] = b
        tables.append(tuple(images))
    tables.sort()
    return tables


def _follower_mask(table: tuple[int, ...], q: int, l: int) -> int:
    mask = 0
    for u in range(q):
        v = u
        for _ in range(l):
            v = table[v]
            mask |= 1 << (u * q + v)
    return mask


def exhaustive_max_search(
    q: int,
    l: int,
    max_q: int | None = None,
    force: bool = False,
) -> tuple[int, ProperSet]:
    """Largest (q, l)-proper set over all cyclic permutations of Z_q.

    Two cyclic permutations are compatible when their follower relations
    {(u, v) : v in follower set of u} are disjoint, and a set is proper iff it
    is pairwise compatible, so this is a maximum-clique search. Relabelling
    Z_q by any bijection maps proper sets to proper sets and all q-cycles are
    conjugate, so some maximum set contains the incrementing permutation
    (0 1 ... q-1), which is also the smallest image table; the search fixes
    it as the first member and grows members in increasing table order.
    """
    limit = SEARCH_MAX_Q if max_q is None else max_q
    if q > limit and not force:
        raise ParameterError(
            f"exhaustive search over (q-1)! = {q - 1}! permutations refused for q={q} > {limit}; pass force=True"
        )
    _check_l(q, l)
    bound = upper_bound(q, l)
    tables = _cyclic_tables(q)
    masks = [_follower_mask(t, q, l) for t in tables]
    base = masks[0]
    candidates = [(i, masks[i]) for i in range(1, len(tables)) if masks[i] & base == 0]
    logger.debug("q=%d l=%d: %d cyclic permutations, %d compatible with the base", q, l, len(tables), len(candidates))

    best: list[int] = []

    def expand(clique: list[int], cands: list[tuple[int, int]]) -> bool:
        if len(clique) > len(best):
            best[:] = clique
            if len(best) == bound:
                return True
        for k, (i, m) in enumerate(cands):
            if len(clique) + len(cands) - k <= len(best):
                return False
            rest = [(j, mj) for j, mj in cands[k + 1:] if mj & m == 0]
            if expand(clique + [i], rest):
                return True
        return False

    expand([0], candidates)
    members = [TablePermutation(tables[i]) for i in best]
    result = ProperSet(q, l, members).verify()
    if result.classification != "proper" or result.m > bound:
        raise AssertionError(f"search produced an invalid set for q={q}, l={l}")
    return result.m, result
