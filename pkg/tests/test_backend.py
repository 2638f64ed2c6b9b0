import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peridot import BackpressureError, ValidationError
from peridot.backend import (
    Backend,
    DeviceDB,
    DeviceRecord,
    EngineConfig,
    HmmEngine,
    HmmPath,
    _extend,
    _Weights,
    engine_metrics,
    fast_path,
    log_p_beta,
    p_beta,
    score_candidates,
    viterbi_decode,
)
from peridot.errors import DomainError, ParameterError
from peridot.scenarios import bundled
from peridot.sim import PacketEvent, RegionMap, ScenarioConfig, compute_mac, run_scenario

from . import instances

KEY = b"k" * 16
OTHER = b"o" * 16
CITIES = RegionMap(["Amsterdam", "Rotterdam", "Utrecht", "Groningen"],
                   [["Amsterdam", "Rotterdam"], ["Rotterdam", "Utrecht"], ["Amsterdam", "Utrecht"], ["Utrecht", "Groningen"]])


def packet(cn, key=KEY, ts=0, region="R0", payload=b"p"):
    return PacketEvent(cn, compute_mac(key, cn, payload), payload, ts, region)


def example4_db():
    recs = [DeviceRecord("T", 31, KEY, last_cn=12, last_ts=0, last_region="Rotterdam")]
    return DeviceDB(110, 10, recs, CITIES)


def test_p_beta():
    assert p_beta(1, 0.1) == pytest.approx(0.9)
    assert p_beta(3, 0.1) == pytest.approx(0.9 * 0.01)
    assert log_p_beta(2, 0.0) == -math.inf and log_p_beta(1, 0.0) == 0.0
    with pytest.raises(DomainError):
        p_beta(0, 0.1)


@given(st.floats(1e-6, 1 - 1e-6), st.integers(1, 500))
def test_p_beta_strictly_decreasing(eps, beta):
    assert log_p_beta(beta + 1, eps) < log_p_beta(beta, eps)


def test_example4_scoring_and_delivery():
    db, cfg = example4_db(), EngineConfig(epsilon=0.1)
    pkt = packet(43, ts=5, region="Amsterdam")
    scores = score_candidates(pkt, db, cfg)
    assert [(s.device_id, s.beta, s.plausible) for s in scores] == [("T", 1, True)]
    assert scores[0].probability == pytest.approx(0.9)
    out = fast_path(pkt, scores, db, cfg, seq=7)
    assert out.kind == "delivered" and out.attributions[0].device_id == "T"
    assert db["T"].last_cn == 43 and db["T"].last_region == "Amsterdam" and db["T"].last_ts == 5


def test_region_filter_zeroes_probability():
    db, cfg = example4_db(), EngineConfig(epsilon=0.1)
    far = score_candidates(packet(43, region="Groningen"), db, cfg)[0]
    assert far.probability == 0.0 and not far.plausible and not far.region_ok
    assert fast_path(packet(43, region="Groningen"), [far], db, cfg) is None
    # two hops are fine after two transmissions
    ok = score_candidates(packet((12 + 62) % 110, region="Groningen"), db, cfg)[0]
    assert ok.beta == 2 and ok.region_ok


def test_bad_mac_escalates():
    db, cfg = example4_db(), EngineConfig(epsilon=0.1)
    pkt = packet(43, key=OTHER)
    assert fast_path(pkt, score_candidates(pkt, db, cfg), db, cfg) is None
    assert db["T"].last_cn == 12


def test_equal_candidates_escalate():
    recs = [DeviceRecord("inc", 1, KEY, last_cn=5, last_ts=0), DeviceRecord("dec", 19, OTHER, last_cn=7, last_ts=0)]
    db, cfg = DeviceDB(20, 9, recs), EngineConfig(epsilon=0.1)
    pkt = packet(6)
    scores = score_candidates(pkt, db, cfg)
    assert [s.beta for s in scores] == [1, 1]
    assert fast_path(pkt, scores, db, cfg) is None


def test_same_cn_is_full_cycle():
    db, cfg = example4_db(), EngineConfig(epsilon=0.1)
    s = score_candidates(packet(12, region="Rotterdam"), db, cfg)[0]
    assert s.beta == 110 and not s.plausible and s.probability < 1e-100


def test_no_identified_devices_means_no_candidates():
    recs = [DeviceRecord(f"T{d}", d, KEY) for d in (1, 21, 91)]
    db = DeviceDB(110, 10, recs)
    assert score_candidates(packet(77), db, EngineConfig()) == []


def test_single_unidentified_device_identified_at_once():
    db = DeviceDB(110, 10, [DeviceRecord("T", 21, KEY)])
    backend = Backend(db, EngineConfig(epsilon=0.0))
    first = backend.process(packet(77))
    second = backend.process(packet(98, ts=1))
    assert first.kind == "delivered" and first.attributions[0].device_id == "T"
    assert second.kind == "delivered" and second.attributions[0].route == "fast"


def test_example5_retroactive_delivery():
    scenario, engine = bundled("example5")
    res = run_scenario(scenario)
    db = DeviceDB.from_provisioning(res.provisioning)
    backend = Backend(db, engine)
    first = backend.process(res.trace[0])
    assert first.kind == "buffered" and first.attributions == ()
    second = backend.process(res.trace[1])
    assert second.kind == "delivered"
    assert [(a.cn, a.device_id, a.delay_packets) for a in second.attributions] == [(77, "T21", 1), (9, "T21", 0)]
    assert second.attributions[1].beta == 2
    assert db["T21"].status == "identified" and db["T21"].last_cn == 9


def test_example6_attribution_and_delay():
    scenario, engine = bundled("example6")
    res = run_scenario(scenario)
    atts = Backend(DeviceDB.from_provisioning(res.provisioning), engine).run(res.trace)
    assert [(a.cn, a.device_id) for a in atts] == [
        (1, "inc"), (2, "inc"), (10, "dec"), (9, "dec"), (3, "inc"), (7, "dec"), (5, "dec"), (3, "dec"), (4, "inc"),
    ]
    assert next(a for a in atts if a.cn == 5).delay_packets >= 1


def test_example6_offline_decoder_agrees():
    scenario, engine = bundled("example6")
    res = run_scenario(scenario)
    ids, _ = viterbi_decode(DeviceDB.from_provisioning(res.provisioning), res.trace, engine.unpruned())
    assert ids == ["inc", "inc", "dec", "dec", "inc", "dec", "dec", "dec", "inc"]


def test_backpressure():
    recs = [DeviceRecord("a", 1, KEY), DeviceRecord("b", 19, KEY)]
    db = DeviceDB(20, 9, recs)
    cfg = EngineConfig(epsilon=0.1, delivery_ratio=1e300, max_pending=2, horizon=None, mac_weighting=False)
    engine = HmmEngine(db, cfg)
    engine.observe(0, packet(1))
    engine.observe(1, packet(2))
    with pytest.raises(BackpressureError):
        engine.observe(2, packet(3))


def test_horizon_drops_stale_packets():
    recs = [DeviceRecord("a", 1, KEY), DeviceRecord("b", 19, KEY)]
    db = DeviceDB(20, 9, recs)
    cfg = EngineConfig(epsilon=0.1, delivery_ratio=1e300, horizon=2, mac_weighting=False)
    atts = Backend(db, cfg).run([packet(cn, ts=i) for i, cn in enumerate([1, 2, 3, 4])])
    assert [a.seq for a in atts] == [0, 1, 2, 3]
    assert all(a.dropped for a in atts)
    assert {a.reason for a in atts} == {"horizon", "end of stream"}


def test_unexplained_packet_dropped():
    db = DeviceDB(20, 9, [DeviceRecord("a", 1, KEY)])
    backend = Backend(db, EngineConfig(epsilon=0.1))
    out = backend.process(packet(5, key=OTHER))
    assert out.kind == "dropped" and out.attributions[0].reason == "unexplained"


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_extensions_change_one_coordinate(rnd):
    inst = instances.random_instance(rnd)
    db = inst.db()
    cfg = inst.config()
    tracked = list(db.records)
    weight = _Weights(db, cfg, tracked)
    paths = [HmmPath(tuple(db[d].coord() for d in tracked), 0.0)]
    for pkt in inst.packets:
        new = _extend(paths, pkt, len(tracked), weight, merge_pending=True)
        parents = {p.pending: p for p in paths}
        for child in new:
            parent = parents[child.pending[:-1]]
            k = child.pending[-1]
            assert all(child.state[j] == parent.state[j] for j in range(len(tracked)) if j != k)
            assert child.state[k] == (pkt.cn, pkt.region, pkt.ts)
        paths = new or paths


def test_viterbi_matches_brute_force_sample():
    rng = random.Random(99)
    for _ in range(300):
        inst = instances.random_instance(rng)
        assert instances.compare(inst, inst.config().unpruned()) == (True, True)


def simulate_and_identify(cfg: ScenarioConfig, engine: EngineConfig):
    res = run_scenario(cfg)
    db = DeviceDB.from_provisioning(res.provisioning)
    atts = Backend(db, engine).run(res.trace)
    return res, db, atts


@pytest.mark.parametrize("seed", range(4))
def test_delivery_safety_and_retroactive_consistency(seed):
    cfg = ScenarioConfig(p=101, l=10, devices=20, epsilon=0.15, events=3000, mean_interarrival=20,
                         regions=RegionMap.ring(4).to_json(), mobility_prob=0.02, t_bits=16, seed=seed)
    res, db, atts = simulate_and_identify(cfg, EngineConfig(epsilon=0.15, t_bits=16))
    keys = {d["device_id"]: bytes.fromhex(d["key"]) for d in res.provisioning["devices"]}
    by_seq = {a.seq: a for a in atts}
    assert sorted(by_seq) == list(range(len(res.trace)))
    last_delivered: dict[str, int] = {}
    for a in atts:
        if a.dropped:
            continue
        pkt = res.trace[a.seq]
        assert compute_mac(keys[a.device_id], pkt.cn, pkt.payload, 16) == pkt.mac
        last_delivered[a.device_id] = pkt.cn
    if not any(a.dropped for a in atts):
        for dev, rec in db.records.items():
            if rec.status == "identified":
                assert rec.last_cn == last_delivered[dev]


def test_metrics_perfect_when_lossless_and_known():
    cfg = ScenarioConfig(p=101, l=10, devices=30, events=2000, mean_interarrival=10, pre_identified=True, seed=4)
    res, _, atts = simulate_and_identify(cfg, EngineConfig(epsilon=0.0))
    m = engine_metrics(res.truth, atts, 10)
    assert m["accuracy"] == 1.0 and m["dropped"] == 0 and m["wrong"] == 0
    assert m["cases"]["A"]["received"] == 2000 and m["delay_max"] == 0.0


def test_fast_path_beta_unique_for_shared_last_cn():
    # devices last seen at the same CN u: at most one can reach v within l steps
    rng = random.Random(5)
    fam = ScenarioConfig(p=101, l=10, devices=100).permutations()
    cfg = EngineConfig(epsilon=0.3, region_hops_per_packet=None)
    for _ in range(300):
        u = rng.randrange(1010)
        db = DeviceDB(1010, 10, [DeviceRecord(f"D{k}", p.delta, KEY, last_cn=u, last_ts=0) for k, p in enumerate(fam)])
        v = rng.randrange(1010)
        plausible = [s for s in score_candidates(packet(v), db, cfg) if s.beta <= 10]
        assert len(plausible) <= 1
        if v != u and any(((v - u) * pow(p.delta, -1, 1010)) % 1010 <= 10 for p in fam):
            assert len(plausible) == 1


def test_engine_config_validation(tmp_path):
    with pytest.raises(ParameterError):
        EngineConfig(epsilon=1.0)
    with pytest.raises(ParameterError):
        EngineConfig(delivery_ratio=0.5)
    with pytest.raises(ValidationError):
        EngineConfig.from_json({"epsilon": 0.1, "beam": 3})
    (tmp_path / "e.json").write_text('{"epsilon": 0.2, "horizon": 8}')
    assert EngineConfig.load(tmp_path / "e.json") == EngineConfig(epsilon=0.2, horizon=8)
    un = EngineConfig().unpruned()
    assert un.beam_ratio == 0.0 and un.beam_width is None


def test_device_db_rejects_bad_increment():
    with pytest.raises(ValidationError):
        DeviceDB(110, 10, [DeviceRecord("x", 11, KEY)])
