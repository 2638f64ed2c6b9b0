"""Arithmetic-progression construction of quasiperfect proper sets, recovery of
the transmission count between two CNs, and CN field sizing."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Iterator, overload

from .errors import DomainError, NotFoundError, ParameterError
from .perm import IncrementPermutation
from .proper import ProperSet

__all__ = [
    "IncrementFamily",
    "MAX_Q",
    "PlanReport",
    "construct",
    "egcd",
    "increments",
    "is_prime",
    "mod_inverse",
    "plan_parameters",
    "recover_beta",
]

# CNs are carried as unsigned 64-bit values at most.
MAX_Q = 1 << 64

# Deterministic Miller-Rabin: these bases are exact for every n < 3.3e24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def egcd(a: int, b: int) -> tuple[int, int, int]:
    """Return (g, x, y) with a*x + b*y == g == gcd(a, b)."""
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        k, r = divmod(a, b)
        a, b = b, r
        x0, x1 = x1, x0 - k * x1
        y0, y1 = y1, y0 - k * y1
    if a < 0:
        return -a, -x0, -y0
    return a, x0, y0


def mod_inverse(a: int, n: int) -> int:
    g, x, _ = egcd(a % n, n)
    if g != 1:
        raise DomainError(f"{a} has no inverse modulo {n} (gcd {g})")
    return x % n


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _check_params(p: int, l: int) -> None:
    if not is_prime(p):
        raise ParameterError(f"p={p} is not prime")
    if l < 1:
        raise ParameterError(f"l must be >= 1, got {l}")
    if (p - 1) % l:
        raise ParameterError(f"l={l} does not divide p-1={p - 1}")
    if p * l > MAX_Q:
        raise ParameterError(f"q = p*l = {p * l} exceeds the 64-bit CN range")


class IncrementFamily(Sequence):
    """The p - 1 increments 1 + i*l (i = 0..p-1, skipping i = (p-1)/l) as
    lazily built increment permutations over q = p*l.

    Index k is device k's permutation, in natural order of i.
    """

    def __init__(self, p: int, l: int):
        _check_params(p, l)
        self.p = p
        self.l = l
        self.q = p * l
        self._skip = (p - 1) // l

    def __len__(self) -> int:
        return self.p - 1

    def delta(self, k: int) -> int:
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        i = k if k < self._skip else k + 1
        return 1 + i * self.l

    def index_of(self, delta: int) -> int:
        """Device index for an increment, or ValueError if not in the family."""
        i, r = divmod(delta - 1, self.l)
        if r or not 0 <= i < self.p or i == self._skip:
            raise ValueError(f"{delta} is not an increment of this family")
        return i if i < self._skip else i - 1

    @overload
    def __getitem__(self, k: int) -> IncrementPermutation: ...
    @overload
    def __getitem__(self, k: slice) -> list[IncrementPermutation]: ...

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[j] for j in range(*k.indices(len(self)))]
        return IncrementPermutation(self.q, self.delta(k))

    def __iter__(self) -> Iterator[IncrementPermutation]:
        for k in range(len(self)):
            yield self[k]

    def __repr__(self) -> str:
        return f"IncrementFamily(p={self.p}, l={self.l})"


def increments(p: int, l: int) -> list[int]:
    fam = IncrementFamily(p, l)
    return [fam.delta(k) for k in range(len(fam))]


def construct(p: int, l: int) -> ProperSet:
    """Quasiperfect (p*l, l)-proper set of p - 1 increment permutations.

    Members are generated on access, so huge p costs nothing up front.
    """
    fam = IncrementFamily(p, l)
    return ProperSet(fam.q, l, fam, classification="proper", construction={"p": p, "l": l})


def recover_beta(delta: int, q: int, u: int, v: int) -> int:
    """Number of transmissions from CN u to CN v under omega_delta, in [1, q].

    beta = delta^-1 * (v - u) mod q, with the zero residue (v == u) read as a
    full cycle of q transmissions.
    """
    if math.gcd(delta, q) != 1:
        raise DomainError(f"increment {delta} is not invertible modulo {q}")
    if not (0 <= u < q and 0 <= v < q):
        raise DomainError(f"CNs must lie in Z_{q}: u={u}, v={v}")
    beta = mod_inverse(delta, q) * (v - u) % q
    return beta or q


@dataclass(frozen=True)
class PlanReport:
    cn_bits: int
    p: int
    l: int
    q: int
    m: int
    baseline_sn_bits: int
    baseline_id_bits: int
    nonce_reuse_factor: float
    device_count_delta: float
    bits_saved: int
    frame_bits: int | None = None

    @property
    def energy_saving(self) -> float | None:
        """Fraction of frame bits saved, if a baseline frame length was given."""
        if self.frame_bits is None:
            return None
        return self.bits_saved / self.frame_bits

    def to_json(self) -> dict:
        out = asdict(self)
        out["energy_saving"] = self.energy_saving
        return out

    def table(self) -> str:
        rows = [
            ("CN field", f"{self.cn_bits} bit"),
            ("tolerated gap l", f"{self.l} (up to {self.l - 1} consecutive losses)"),
            ("prime p", f"{self.p:,}".replace(",", " ")),
            ("alphabet q = p*l", f"{self.q:,}".replace(",", " ")),
            ("devices m = p-1", f"{self.m:,}".replace(",", " ")),
            ("", ""),
            (
                "packet size",
                f"-{self.bits_saved} bit vs {self.baseline_id_bits}-bit ID + {self.baseline_sn_bits}-bit SN"
                + (f" ({self.energy_saving:.1%} of a {self.frame_bits}-bit frame)" if self.frame_bits else ""),
            ),
            ("nonce reuse cycle", f"x{self.nonce_reuse_factor:.4g} (q / 2^{self.baseline_sn_bits})"),
            ("identifiable devices", f"{self.device_count_delta:+.1%} vs 2^{self.baseline_id_bits}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" if k else "" for k, v in rows)


def plan_parameters(
    cn_bits: int,
    l: int,
    baseline_sn_bits: int = 12,
    baseline_id_bits: int = 32,
    frame_bits: int | None = None,
) -> PlanReport:
    """Pick the largest prime p with p*l <= 2^cn_bits and l | p-1."""
    if cn_bits < 2:
        raise ParameterError(f"cn_bits must be >= 2, got {cn_bits}")
    if l < 1:
        raise ParameterError(f"l must be >= 1, got {l}")
    top = (1 << cn_bits) // l
    # largest p <= top with p = 1 (mod l)
    p = top - (top - 1) % l
    while p >= 2 and not is_prime(p):
        p -= l
    if p < 2:
        raise NotFoundError(f"no prime p with p*{l} <= 2^{cn_bits} and {l} | p-1")
    q = p * l
    m = p - 1
    return PlanReport(
        cn_bits=cn_bits,
        p=p,
        l=l,
        q=q,
        m=m,
        baseline_sn_bits=baseline_sn_bits,
        baseline_id_bits=baseline_id_bits,
        nonce_reuse_factor=q / 2**baseline_sn_bits,
        device_count_delta=m / 2**baseline_id_bits - 1,
        bits_saved=baseline_id_bits + baseline_sn_bits - cn_bits,
        frame_bits=frame_bits,
    )
