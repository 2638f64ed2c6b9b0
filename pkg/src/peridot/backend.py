"""Backend identification of transmitters from received CNs.

Packets first go through the fast path. Every identified device is scored
by the number of transmissions beta its permutation needs to get from its
last CN to the received one, giving P_beta = (1 - eps) * eps^(beta - 1). If
one candidate clearly dominates and its MAC verifies, the packet is
attributed to it at once.

Everything else goes to a hidden Markov model whose hidden state is the
vector of last CNs of all devices that are not (or no longer) identified. It
is decoded online with a pruned Viterbi-style beam. Buffered packets are
delivered retroactively once one attribution dominates, or dropped when they
stay ambiguous past the horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .construction import mod_inverse
from .errors import BackpressureError, DomainError, ParameterError, ValidationError
from .sim import PacketEvent, RegionMap, TruthRecord, compute_mac

__all__ = [
    "Attribution",
    "Backend",
    "CandidateScore",
    "DeviceDB",
    "DeviceRecord",
    "EngineConfig",
    "HmmEngine",
    "HmmPath",
    "Outcome",
    "engine_metrics",
    "fast_path",
    "log_p_beta",
    "p_beta",
    "score_candidates",
    "viterbi_decode",
]

NEG_INF = float("-inf")

# (cn, region, ts) of a device's last CN on a path; None until first seen.
Coord = tuple


@dataclass
class EngineConfig:
    epsilon: float = 0.05
    l: int | None = None
    t_bits: int = 32
    dominance_ratio: float = 1e3
    probable_threshold: float = 0.0
    delivery_ratio: float = 1e3
    beam_ratio: float = 1e-12
    beam_width: int | None = 1024
    horizon: int | None = 32
    max_pending: int = 4096
    mac_weighting: bool = True
    region_hops_per_packet: int | None = 1
    new_device_prior: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ParameterError(f"epsilon estimate must be in [0, 1), got {self.epsilon}")
        if self.dominance_ratio < 1 or self.delivery_ratio < 1:
            raise ParameterError("dominance and delivery ratios must be >= 1")
        if not 0.0 <= self.beam_ratio < 1.0:
            raise ParameterError(f"beam_ratio must be in [0, 1), got {self.beam_ratio}")
        if self.beam_width is not None and self.beam_width < 1:
            raise ParameterError("beam_width must be positive")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def unpruned(self) -> "EngineConfig":
        return EngineConfig(**{**asdict(self), "beam_ratio": 0.0, "beam_width": None})


def p_beta(beta: int, epsilon: float) -> float:
    """Probability that the next delivered packet is the beta-th transmission."""
    if beta < 1:
        raise DomainError(f"beta must be >= 1, got {beta}")
    return (1.0 - epsilon) * epsilon ** (beta - 1)


def log_p_beta(beta: int, epsilon: float) -> float:
    if epsilon == 0.0:
        return 0.0 if beta == 1 else NEG_INF
    return math.log(1.0 - epsilon) + (beta - 1) * math.log(epsilon)


@dataclass
class DeviceRecord:
    device_id: str
    delta: int
    key: bytes
    status: str = "unidentified"  # identified | unidentified
    last_cn: int | None = None
    last_ts: int | None = None
    last_region: str | None = None
    delta_inv: int = 0

    def coord(self) -> Coord | None:
        if self.last_cn is None:
            return None
        return (self.last_cn, self.last_region, self.last_ts)


class DeviceDB:
    """Provisioned devices (increment and key) plus what the backend has learnt."""

    def __init__(self, q: int, l: int, records: Iterable[DeviceRecord], regions: RegionMap | None = None, t_bits: int = 32):
        self.q = q
        self.l = l
        self.t_bits = t_bits
        self.regions = regions or RegionMap()
        self.records: dict[str, DeviceRecord] = {}
        for rec in records:
            if math.gcd(rec.delta, q) != 1:
                raise ValidationError(f"device {rec.device_id}: increment {rec.delta} not coprime to q={q}")
            rec.delta_inv = mod_inverse(rec.delta, q)
            if rec.last_cn is not None:
                rec.status = "identified"
                if rec.last_region is None:
                    rec.last_region = self.regions.nodes[0]
            self.records[rec.device_id] = rec

    @classmethod
    def from_provisioning(cls, obj: dict[str, Any]) -> "DeviceDB":
        recs = [
            DeviceRecord(
                device_id=d["device_id"],
                delta=int(d["delta"]),
                key=bytes.fromhex(d["key"]),
                last_cn=d.get("last_cn"),
                last_ts=d.get("last_ts"),
                last_region=d.get("last_region"),
            )
            for d in obj["devices"]
        ]
        return cls(int(obj["q"]), int(obj["l"]), recs, RegionMap.from_json(obj.get("regions")), int(obj.get("t_bits", 32)))

    def __getitem__(self, device_id: str) -> DeviceRecord:
        return self.records[device_id]

    def identified(self) -> list[DeviceRecord]:
        return [r for r in self.records.values() if r.status == "identified"]

    def beta(self, rec: DeviceRecord, v: int) -> int:
        return rec.delta_inv * (v - rec.last_cn) % self.q or self.q

    def mac_ok(self, rec: DeviceRecord, packet: PacketEvent) -> bool:
        return compute_mac(rec.key, packet.cn, packet.payload, self.t_bits) == packet.mac

    def region_ok(self, last_region: str | None, region: str, beta: int, hops: int | None) -> bool:
        if hops is None or last_region is None or last_region == region:
            return True
        return self.regions.distance(last_region, region) <= beta * hops

    def update(self, device_id: str, packet: PacketEvent) -> None:
        rec = self.records[device_id]
        rec.status = "identified"
        rec.last_cn = packet.cn
        rec.last_ts = packet.ts
        rec.last_region = packet.region

    def snapshot(self) -> dict[str, dict[str, Any]]:
        return {
            k: {"status": r.status, "last_cn": r.last_cn, "last_ts": r.last_ts, "last_region": r.last_region}
            for k, r in self.records.items()
        }


@dataclass(slots=True)
class CandidateScore:
    device_id: str
    beta: int
    probability: float
    plausible: bool
    region_ok: bool = True


@dataclass(frozen=True)
class Attribution:
    seq: int
    ts: int
    cn: int
    device_id: str | None  # None: dropped
    delay_packets: int
    beta: int | None = None
    route: str = "fast"  # fast | hmm
    reason: str | None = None

    @property
    def dropped(self) -> bool:
        return self.device_id is None

    def to_json(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "cn": self.cn,
            "device_id": "dropped" if self.device_id is None else self.device_id,
            "delay_packets": self.delay_packets,
        }


@dataclass(frozen=True)
class Outcome:
    """What happened to one observed packet, plus anything resolved with it."""

    kind: str  # delivered | buffered | dropped
    attributions: tuple[Attribution, ...] = ()


def score_candidates(packet: PacketEvent, db: DeviceDB, config: EngineConfig) -> list[CandidateScore]:
    """Score every identified device as the sender of ``packet``, most probable first."""
    l = config.l or db.l
    q, v, eps = db.q, packet.cn, config.epsilon
    hops = config.region_hops_per_packet
    out = []
    for rec in db.identified():
        beta = rec.delta_inv * (v - rec.last_cn) % q or q
        region_ok = hops is None or db.region_ok(rec.last_region, packet.region, beta, hops)
        prob = (1.0 - eps) * eps ** (beta - 1) if region_ok else 0.0
        out.append(CandidateScore(rec.device_id, beta, prob, beta <= l and prob > 0.0, region_ok))
    out.sort(key=_score_key)
    return out


def _score_key(s: CandidateScore) -> tuple:
    return (-s.probability, s.beta, s.device_id)


def fast_path(
    packet: PacketEvent,
    scores: Sequence[CandidateScore],
    db: DeviceDB,
    config: EngineConfig,
    seq: int = 0,
) -> Outcome | None:
    """Attribute to a single dominant candidate with a valid MAC, else None (escalate)."""
    if not scores:
        return None
    top = scores[0]
    if not top.plausible or top.probability < config.probable_threshold:
        return None
    runner_up = scores[1].probability if len(scores) > 1 else 0.0
    if top.probability < config.dominance_ratio * runner_up:
        return None
    rec = db[top.device_id]
    if not db.mac_ok(rec, packet):
        return None
    db.update(top.device_id, packet)
    return Outcome("delivered", (Attribution(seq, packet.ts, packet.cn, top.device_id, 0, top.beta, "fast"),))


@dataclass(frozen=True)
class HmmPath:
    state: tuple[Coord | None, ...]
    log_probability: float
    pending: tuple[int, ...] = ()


# Log-probabilities closer than this are ties; path sums of the same factors
# in a different order differ by rounding only.
TIE_TOLERANCE = 1e-9


def _better(new: HmmPath, old: HmmPath) -> bool:
    """More probable, or tied and with the lexicographically smaller attribution."""
    diff = new.log_probability - old.log_probability
    if abs(diff) <= TIE_TOLERANCE:
        return new.pending < old.pending
    return diff > 0


def _best(paths: Sequence[HmmPath]) -> HmmPath:
    top = max(p.log_probability for p in paths)
    return min((p for p in paths if top - p.log_probability <= TIE_TOLERANCE), key=lambda p: p.pending)


def _order_key(path: HmmPath):
    state_key = tuple((-1,) if c is None else (c[0],) for c in path.state)
    return (-path.log_probability, path.pending, state_key)


WeightFn = Callable[[int, "Coord | None", PacketEvent], float]


def _extend(paths: Sequence[HmmPath], packet: PacketEvent, n: int, weight: WeightFn, merge_pending: bool) -> list[HmmPath]:
    """All single-coordinate successors of ``paths`` that explain ``packet``.

    Successors with the same state (and, if ``merge_pending``, the same
    pending attributions) are merged, keeping the more probable one and on
    ties the lexicographically smaller attribution sequence.
    """
    coord = (packet.cn, packet.region, packet.ts)
    best: dict[Any, HmmPath] = {}
    for path in paths:
        for k in range(n):
            w = weight(k, path.state[k], packet)
            if w == NEG_INF:
                continue
            state = path.state[:k] + (coord,) + path.state[k + 1:]
            new = HmmPath(state, path.log_probability + w, path.pending + (k,))
            key = (state, new.pending) if merge_pending else state
            old = best.get(key)
            if old is None or _better(new, old):
                best[key] = new
    return list(best.values())


def _prune(paths: list[HmmPath], beam_ratio: float, beam_width: int | None) -> list[HmmPath]:
    if not paths:
        return paths
    paths.sort(key=_order_key)
    if beam_ratio > 0.0:
        floor = paths[0].log_probability + math.log(beam_ratio)
        paths = [p for p in paths if p.log_probability >= floor]
    if beam_width is not None:
        paths = paths[:beam_width]
    return paths


class _Weights:
    """Transition log-weights for tracked devices, cached per packet."""

    def __init__(self, db: DeviceDB, config: EngineConfig, tracked: list[str]):
        self.db = db
        self.config = config
        self.tracked = tracked
        self.log_prior = math.log(config.new_device_prior if config.new_device_prior else 1.0 / db.q)
        self._packet: PacketEvent | None = None
        self._mac: dict[int, bool] = {}

    def __call__(self, k: int, coord: Coord | None, packet: PacketEvent) -> float:
        if packet is not self._packet:
            self._packet = packet
            self._mac = {}
        rec = self.db[self.tracked[k]]
        if self.config.mac_weighting:
            ok = self._mac.get(k)
            if ok is None:
                ok = self._mac[k] = self.db.mac_ok(rec, packet)
            if not ok:
                return NEG_INF
        if coord is None:
            return self.log_prior
        beta = rec.delta_inv * (packet.cn - coord[0]) % self.db.q or self.db.q
        if not self.db.region_ok(coord[1], packet.region, beta, self.config.region_hops_per_packet):
            return NEG_INF
        return log_p_beta(beta, self.config.epsilon)


def viterbi_decode(
    db: DeviceDB,
    packets: Sequence[PacketEvent],
    config: EngineConfig,
    tracked: Sequence[str] | None = None,
) -> tuple[list[str] | None, float]:
    """Most probable attribution of ``packets`` to the tracked devices.

    Offline decoder over the same transition model as the online engine:
    classic Viterbi merging on the state vector plus beam pruning. Ties go
    to the lexicographically smallest sequence of device positions.
    Returns ``(None, -inf)`` if no attribution has nonzero probability.
    """
    tracked = list(tracked) if tracked is not None else list(db.records)
    weight = _Weights(db, config, tracked)
    paths = [HmmPath(tuple(db[d].coord() for d in tracked), 0.0)]
    for packet in packets:
        paths = _prune(_extend(paths, packet, len(tracked), weight, merge_pending=False), config.beam_ratio, config.beam_width)
        if not paths:
            return None, NEG_INF
    best = _best(paths)
    return [tracked[k] for k in best.pending], best.log_probability


@dataclass
class _Pending:
    seq: int
    packet: PacketEvent


class HmmEngine:
    """Online decoder over the devices that are not currently identified."""

    def __init__(self, db: DeviceDB, config: EngineConfig):
        self.db = db
        self.config = config
        self.tracked: list[str] = []
        self.paths: list[HmmPath] = [HmmPath((), 0.0)]
        self.pending: list[_Pending] = []
        # last CN attributed by a committed packet, per tracked device
        self.committed: dict[str, Coord | None] = {}
        self._weights = _Weights(db, config, self.tracked)
        for rec in db.records.values():
            if rec.status != "identified":
                self.track(rec.device_id)

    def track(self, device_id: str) -> None:
        if device_id in self.committed:
            return
        rec = self.db[device_id]
        rec.status = "unidentified"
        coord = rec.coord()
        self.tracked.append(device_id)
        self.committed[device_id] = coord
        self.paths = [HmmPath(p.state + (coord,), p.log_probability, p.pending) for p in self.paths]

    def observe(self, seq: int, packet: PacketEvent) -> Outcome:
        if len(self.pending) >= self.config.max_pending:
            raise BackpressureError(f"{len(self.pending)} packets already buffered (max_pending)")
        extended = _extend(self.paths, packet, len(self.tracked), self._weights, merge_pending=True)
        extended = _prune(extended, self.config.beam_ratio, self.config.beam_width)
        if not extended:
            drop = Attribution(seq, packet.ts, packet.cn, None, 0, route="hmm", reason="unexplained")
            return Outcome("dropped", (drop,))
        self.paths = extended
        self.pending.append(_Pending(seq, packet))
        resolved = self._resolve(seq)
        resolved += self._expire(seq)
        if not self.pending:
            self._fold()
        kind = "buffered"
        for a in resolved:
            if a.seq == seq:
                kind = "dropped" if a.dropped else "delivered"
        return Outcome(kind, tuple(resolved))

    def finish(self, seq: int) -> list[Attribution]:
        """Drop whatever is still ambiguous at end of stream."""
        out = [
            Attribution(p.seq, p.packet.ts, p.packet.cn, None, seq - p.seq, route="hmm", reason="end of stream")
            for p in self.pending
        ]
        self.pending.clear()
        self.paths = [HmmPath(p.state, p.log_probability, ()) for p in self.paths]
        return out

    def _resolve(self, seq: int) -> list[Attribution]:
        out = []
        log_ratio = math.log(self.config.delivery_ratio)
        while self.pending:
            best: dict[int, float] = {}
            for p in self.paths:
                k = p.pending[0]
                if p.log_probability > best.get(k, NEG_INF):
                    best[k] = p.log_probability
            ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
            k, top = ranked[0]
            runner = ranked[1][1] if len(ranked) > 1 else NEG_INF
            if top - runner < log_ratio:
                break
            out.append(self._commit(k, seq))
        return out

    def _commit(self, k: int, seq: int) -> Attribution:
        head = self.pending.pop(0)
        self.paths = [HmmPath(p.state, p.log_probability, p.pending[1:]) for p in self.paths if p.pending[0] == k]
        device_id = self.tracked[k]
        rec = self.db[device_id]
        prev = self.committed[device_id]
        packet = head.packet
        self.committed[device_id] = (packet.cn, packet.region, packet.ts)
        beta = None if prev is None else rec.delta_inv * (packet.cn - prev[0]) % self.db.q or self.db.q
        if not self.db.mac_ok(rec, packet):
            return Attribution(head.seq, packet.ts, packet.cn, None, seq - head.seq, beta, "hmm", "mac")
        return Attribution(head.seq, packet.ts, packet.cn, device_id, seq - head.seq, beta, "hmm")

    def _expire(self, seq: int) -> list[Attribution]:
        out = []
        horizon = self.config.horizon
        while horizon is not None and self.pending and seq - self.pending[0].seq >= horizon:
            head = self.pending.pop(0)
            merged: dict[Any, HmmPath] = {}
            for p in self.paths:
                new = HmmPath(p.state, p.log_probability, p.pending[1:])
                key = (new.state, new.pending)
                if key not in merged or _better(new, merged[key]):
                    merged[key] = new
            self.paths = sorted(merged.values(), key=_order_key)
            out.append(
                Attribution(head.seq, head.packet.ts, head.packet.cn, None, seq - head.seq, route="hmm", reason="horizon")
            )
            out += self._resolve(seq)
        return out

    def _fold(self) -> None:
        """Hand devices whose last CN is certain back to the fast path."""
        keep = []
        for k, device_id in enumerate(self.tracked):
            coords = {p.state[k] for p in self.paths}
            if len(coords) == 1 and None not in coords:
                cn, region, ts = coords.pop()
                rec = self.db[device_id]
                rec.status = "identified"
                rec.last_cn, rec.last_region, rec.last_ts = cn, region, ts
                del self.committed[device_id]
            else:
                keep.append(k)
        if len(keep) == len(self.tracked):
            return
        self.tracked[:] = [self.tracked[k] for k in keep]
        merged: dict[Any, HmmPath] = {}
        for p in self.paths:
            new = HmmPath(tuple(p.state[k] for k in keep), p.log_probability, p.pending)
            if new.state not in merged or _better(new, merged[new.state]):
                merged[new.state] = new
        self.paths = sorted(merged.values(), key=_order_key)


class Backend:
    """Fast path plus HMM fallback, fed one packet at a time in arrival order."""

    def __init__(self, db: DeviceDB, config: EngineConfig | None = None):
        self.db = db
        self.config = config or EngineConfig()
        self.hmm = HmmEngine(db, self.config)
        self.seq = 0

    def process(self, packet: PacketEvent) -> Outcome:
        seq = self.seq
        self.seq += 1
        scores = score_candidates(packet, self.db, self.config)
        outcome = fast_path(packet, scores, self.db, self.config, seq)
        if outcome is not None:
            return outcome
        for s in scores:
            if s.plausible:
                self.hmm.track(s.device_id)
        return self.hmm.observe(seq, packet)

    def run(self, trace: Iterable[PacketEvent]) -> list[Attribution]:
        out: list[Attribution] = []
        for packet in trace:
            out.extend(self.process(packet).attributions)
        out.extend(self.hmm.finish(self.seq))
        out.sort(key=lambda a: a.seq)
        return out


def _case(rec: TruthRecord, l: int) -> str:
    return "A" if rec.beta is not None and rec.beta <= l else "B"


def engine_metrics(truth: Iterable[TruthRecord], attributions: Iterable[Attribution], l: int) -> dict[str, Any]:
    """Score attributions against the ground-truth log of one run.

    Case A packets follow a delivered packet of the same device within l
    transmissions; everything else (first reception, long loss bursts) is
    case B.
    """
    received = {r.seq: r for r in truth if not r.erased}
    by_seq = {a.seq: a for a in attributions}
    counts = {c: {"received": 0, "correct": 0, "wrong": 0, "dropped": 0, "unresolved": 0} for c in ("all", "A", "B")}
    delays = []
    for seq, rec in received.items():
        a = by_seq.get(seq)
        for c in ("all", _case(rec, l)):
            row = counts[c]
            row["received"] += 1
            if a is None:
                row["unresolved"] += 1
            elif a.dropped:
                row["dropped"] += 1
            elif a.device_id == rec.device_id:
                row["correct"] += 1
            else:
                row["wrong"] += 1
        if a is not None and not a.dropped:
            delays.append(a.delay_packets)

    def rates(row: dict[str, int]) -> dict[str, Any]:
        n = row["received"] or 1
        return {
            **row,
            "accuracy": row["correct"] / n,
            "misidentification_rate": row["wrong"] / n,
            "drop_rate": row["dropped"] / n,
        }

    d = np.asarray(delays, dtype=float)
    report = rates(counts["all"])
    report["delay_mean"] = float(d.mean()) if d.size else 0.0
    for pct in (50, 90, 99):
        report[f"delay_p{pct}"] = float(np.percentile(d, pct)) if d.size else 0.0
    report["delay_max"] = float(d.max()) if d.size else 0.0
    report["cases"] = {c: rates(counts[c]) for c in ("A", "B")}
    return report
