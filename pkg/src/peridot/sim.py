"""Discrete-event simulation of PERIDOT transmitters behind independent
packet erasure channels.

Each device emits CNs along its increment permutation, one packet per
transmission event; every packet crosses its own erasure channel and the
receiver never learns about losses. The delivered trace carries only what a
base station would see. Device identities live in a separate ground-truth
log that is used for scoring.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .construction import IncrementFamily
from .errors import ParameterError, ValidationError
from .perm import IncrementPermutation

logger = logging.getLogger(__name__)

__all__ = [
    "ChannelConfig",
    "PacketEvent",
    "RegionMap",
    "ScenarioConfig",
    "ScenarioResult",
    "TransmitterState",
    "TruthRecord",
    "compute_mac",
    "next_packet",
    "nonce_violations",
    "read_trace",
    "run_scenario",
    "transmit",
    "verify_mac",
    "write_jsonl",
]


def compute_mac(key: bytes, cn: int, payload: bytes, t_bits: int = 32) -> int:
    """Keyed PRF over (cn, payload), truncated to the low ``t_bits`` bits.

    Stand-in for a real MAC: only its 2^-t false-accept rate matters here.
    """
    if not 4 <= t_bits <= 64:
        raise ParameterError(f"t_bits must be in [4, 64], got {t_bits}")
    h = hashlib.blake2b(digest_size=8, key=key)
    h.update(cn.to_bytes(16, "big"))
    h.update(payload)
    return int.from_bytes(h.digest(), "big") & ((1 << t_bits) - 1)


@dataclass(frozen=True)
class PacketEvent:
    cn: int
    mac: int
    payload: bytes
    ts: int
    region: str

    def to_json(self) -> dict[str, Any]:
        return {
            "ts": self.ts,
            "region": self.region,
            "cn": self.cn,
            "mac": self.mac,
            "payload_b64": base64.b64encode(self.payload).decode("ascii"),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "PacketEvent":
        return cls(
            cn=int(obj["cn"]),
            mac=int(obj["mac"]),
            payload=base64.b64decode(obj.get("payload_b64", "")),
            ts=int(obj["ts"]),
            region=str(obj.get("region", "R0")),
        )


def verify_mac(key: bytes, packet: PacketEvent, t_bits: int = 32) -> bool:
    return compute_mac(key, packet.cn, packet.payload, t_bits) == packet.mac


@dataclass(frozen=True)
class TransmitterState:
    device_id: str
    permutation: IncrementPermutation
    current_cn: int
    key: bytes
    region: str = "R0"
    commissioned_at: int = 0


def next_packet(
    state: TransmitterState,
    payload: bytes,
    ts: int | None = None,
    t_bits: int = 32,
) -> tuple[PacketEvent, TransmitterState]:
    cn = state.permutation(state.current_cn)
    packet = PacketEvent(
        cn=cn,
        mac=compute_mac(state.key, cn, payload, t_bits),
        payload=payload,
        ts=state.commissioned_at if ts is None else ts,
        region=state.region,
    )
    return packet, replace(state, current_cn=cn)


@dataclass(frozen=True)
class ChannelConfig:
    epsilon: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ParameterError(f"erasure probability must be in [0, 1), got {self.epsilon}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def transmit(packet: PacketEvent, channel: ChannelConfig, rng: np.random.Generator) -> PacketEvent | None:
    """Erase with probability epsilon, otherwise deliver unchanged."""
    if rng.random() < channel.epsilon:
        return None
    return packet


class RegionMap:
    """Region labels with a symmetric adjacency relation."""

    def __init__(self, nodes: Sequence[str] = ("R0",), edges: Iterable[Sequence[str]] = ()):
        self.nodes = list(nodes)
        if not self.nodes:
            raise ValidationError("at least one region is required")
        self._adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for a, b in edges:
            if a not in self._adj or b not in self._adj:
                raise ValidationError(f"edge ({a}, {b}) references an unknown region")
            self._adj[a].add(b)
            self._adj[b].add(a)
        self._dist: dict[str, dict[str, int]] = {}

    @classmethod
    def ring(cls, n: int) -> "RegionMap":
        nodes = [f"R{i}" for i in range(n)]
        edges = [(nodes[i], nodes[(i + 1) % n]) for i in range(n)] if n > 1 else []
        return cls(nodes, edges)

    def neighbors(self, region: str) -> list[str]:
        return sorted(self._adj[region])

    def distance(self, a: str, b: str) -> float:
        if a not in self._dist:
            dist = {a: 0}
            todo = deque([a])
            while todo:
                x = todo.popleft()
                for y in self._adj.get(x, ()):
                    if y not in dist:
                        dist[y] = dist[x] + 1
                        todo.append(y)
            self._dist[a] = dist
        return self._dist[a].get(b, float("inf"))

    def within(self, region: str, hops: int) -> list[str]:
        """Regions at distance 1..hops from ``region``, sorted."""
        return sorted(n for n in self.nodes if 0 < self.distance(region, n) <= hops)

    def to_json(self) -> dict[str, Any]:
        edges = sorted({tuple(sorted((a, b))) for a in self._adj for b in self._adj[a]})
        return {"nodes": self.nodes, "edges": [list(e) for e in edges]}

    @classmethod
    def from_json(cls, obj: dict[str, Any] | None) -> "RegionMap":
        if not obj:
            return cls()
        return cls(obj["nodes"], obj.get("edges", ()))


@dataclass
class ScenarioConfig:
    """Everything needed to replay one simulation deterministically.

    Either ``p`` and ``l`` (the arithmetic-progression construction) or an
    explicit ``increments`` list with ``q`` and ``l`` select the permutations.
    A ``schedule`` of ``[device_index, erased]`` pairs replaces the random
    traffic, channel and mobility models with a scripted run.
    """

    name: str = "scenario"
    p: int | None = None
    l: int | None = None
    q: int | None = None
    increments: list[int] | None = None
    devices: int = 1
    assign: list[int] | None = None
    names: list[str] | None = None
    epsilon: float = 0.0
    device_epsilon: list[float] | None = None
    events: int = 100
    mean_interarrival: float = 100.0
    regions: dict[str, Any] | None = None
    mobility_prob: float = 0.0
    mobility_max_hops: int = 1
    commissioning: list[int] | None = None
    initial_cn: list[int] | None = None
    initial_region: list[str] | None = None
    pre_identified: bool = False
    t_bits: int = 32
    payload_bytes: int = 4
    schedule: list[list[Any]] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.increments is not None:
            if self.q is None or self.l is None:
                raise ParameterError("explicit increments need q and l")
        elif self.p is None or self.l is None:
            raise ParameterError("give either (p, l) or (q, l, increments)")
        m = len(self.permutations())
        if self.devices < 1 or self.devices > m:
            raise ParameterError(f"device count {self.devices} outside [1, m={m}]")
        ChannelConfig(self.epsilon)
        for eps in self.device_epsilon or ():
            ChannelConfig(eps)
        for attr in ("assign", "names", "device_epsilon", "commissioning", "initial_cn", "initial_region"):
            value = getattr(self, attr)
            if value is not None and len(value) != self.devices:
                raise ParameterError(f"{attr} must have one entry per device ({self.devices})")
        if not 0.0 <= self.mobility_prob <= 1.0:
            raise ParameterError(f"mobility_prob must be a probability, got {self.mobility_prob}")
        if self.schedule is not None:
            for dev, _ in self.schedule:
                if not 0 <= int(dev) < self.devices:
                    raise ParameterError(f"schedule references unknown device {dev}")

    @property
    def alphabet(self) -> int:
        return self.q if self.increments is not None else self.p * self.l

    def permutations(self) -> Sequence[IncrementPermutation]:
        if self.increments is not None:
            perms = [IncrementPermutation(self.q, d) for d in self.increments]
            for k, perm in enumerate(perms):
                if not perm.is_cyclic():
                    raise ParameterError(f"increment {self.increments[k]} is not coprime to q={self.q}")
            return perms
        return IncrementFamily(self.p, self.l)

    def device_ids(self) -> list[str]:
        if self.names is not None:
            return list(self.names)
        return [f"D{k:04d}" for k in range(self.devices)]

    def to_json(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            obj = tomllib.loads(path.read_text())
        else:
            obj = json.loads(path.read_text())
        return cls.from_json(obj)


@dataclass(frozen=True)
class TruthRecord:
    """One transmission, delivered or erased. ``seq`` indexes the delivered
    trace; ``beta`` counts transmissions since the device's previous
    delivered packet."""

    ts: int
    device_id: str
    cn: int
    region: str
    erased: bool
    beta: int | None
    seq: int | None

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TruthRecord":
        return cls(**obj)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    trace: list[PacketEvent]
    truth: list[TruthRecord]
    provisioning: dict[str, Any] = field(default_factory=dict)

    def __iter__(self):
        # allows ``trace, truth = run_scenario(cfg)``
        return iter((self.trace, self.truth))


def _interarrival(rng: np.random.Generator, mean: float) -> int:
    return max(1, int(round(rng.exponential(mean))))


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run the event loop and return the delivered trace plus ground truth.

    Events are ordered by (time, device index). Every device draws from its
    own child seed, so a device's behaviour does not depend on the others.
    """
    q = config.alphabet
    perms = config.permutations()
    assign = config.assign or list(range(config.devices))
    ids = config.device_ids()
    regions = RegionMap.from_json(config.regions)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.devices)]
    channels = [
        ChannelConfig(config.device_epsilon[k] if config.device_epsilon else config.epsilon)
        for k in range(config.devices)
    ]
    commissioning = config.commissioning or [0] * config.devices

    states = []
    for k in range(config.devices):
        rng = rngs[k]
        cn0 = int(rng.integers(0, q, dtype=np.uint64)) if config.initial_cn is None else config.initial_cn[k] % q
        key = rng.bytes(16)
        if config.initial_region is not None:
            region = config.initial_region[k]
        else:
            region = regions.nodes[int(rng.integers(0, len(regions.nodes)))]
        states.append(
            TransmitterState(
                device_id=ids[k],
                permutation=perms[assign[k]],
                current_cn=cn0,
                key=key,
                region=region,
                commissioned_at=commissioning[k],
            )
        )

    provisioning = {
        "q": q,
        "l": config.l,
        "t_bits": config.t_bits,
        "regions": regions.to_json(),
        "devices": [
            {"device_id": s.device_id, "delta": s.permutation.delta, "key": s.key.hex()}
            | (
                {"last_cn": s.current_cn, "last_ts": s.commissioned_at, "last_region": s.region}
                if config.pre_identified
                else {}
            )
            for s in states
        ],
    }

    trace: list[PacketEvent] = []
    truth: list[TruthRecord] = []
    since_delivery: list[int | None] = [0 if config.pre_identified else None] * config.devices

    def emit(k: int, ts: int, erased: bool | None) -> None:
        rng = rngs[k]
        state = states[k]
        if config.schedule is None and config.mobility_prob > 0 and rng.random() < config.mobility_prob:
            options = regions.within(state.region, config.mobility_max_hops)
            if options:
                state = replace(state, region=options[int(rng.integers(0, len(options)))])
        payload = rng.bytes(config.payload_bytes)
        packet, state = next_packet(state, payload, ts=ts, t_bits=config.t_bits)
        states[k] = state
        if erased is None:
            erased = transmit(packet, channels[k], rng) is None
        if since_delivery[k] is not None:
            since_delivery[k] += 1
        if erased:
            truth.append(TruthRecord(ts, state.device_id, packet.cn, state.region, True, None, None))
            return
        truth.append(
            TruthRecord(ts, state.device_id, packet.cn, state.region, False, since_delivery[k], len(trace))
        )
        since_delivery[k] = 0
        trace.append(packet)

    if config.schedule is not None:
        for ts, (k, erased) in enumerate(config.schedule):
            emit(int(k), ts, bool(erased))
    else:
        heap = [(commissioning[k] + _interarrival(rngs[k], config.mean_interarrival), k) for k in range(config.devices)]
        heapq.heapify(heap)
        for _ in range(config.events):
            ts, k = heapq.heappop(heap)
            emit(k, ts, None)
            heapq.heappush(heap, (ts + _interarrival(rngs[k], config.mean_interarrival), k))

    logger.info("%s: %d transmissions, %d delivered", config.name, len(truth), len(trace))
    return ScenarioResult(config, trace, truth, provisioning)


def nonce_violations(truth: Iterable[TruthRecord], q: int) -> list[tuple[str, int, int]]:
    """(device_id, first_index, second_index) for every CN that recurs after
    anything other than exactly q transmissions of the same device."""
    last_pos: dict[str, dict[int, int]] = {}
    counts: dict[str, int] = {}
    bad = []
    for rec in truth:
        pos = counts.get(rec.device_id, 0)
        counts[rec.device_id] = pos + 1
        seen = last_pos.setdefault(rec.device_id, {})
        if rec.cn in seen and pos - seen[rec.cn] != q:
            bad.append((rec.device_id, seen[rec.cn], pos))
        seen[rec.cn] = pos
    return bad


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            obj = row.to_json() if hasattr(row, "to_json") else row
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_trace(lines: Iterable[str]) -> list[PacketEvent]:
    return [PacketEvent.from_json(json.loads(line)) for line in lines if line.strip()]
