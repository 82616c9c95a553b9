from __future__ import annotations

import math
import random

import pytest

from ira.protocol import (
    AdaptivePolicy,
    BloomFilter,
    CompletenessError,
    DecodeError,
    GenericStore,
    HintEncoding,
    LinkModel,
    benefit_check,
    decode_hint,
    encode_hint,
    execute_direct,
    generic_generate,
    generic_replay,
    hint_from_wire,
    hint_wire_bytes,
    read_op,
    run_adaptive_scenario,
    simulate_transmission,
    write_op,
)


def random_batch(rng: random.Random, universe, n_ops=40, write_fraction=0.3):
    batch = []
    for _ in range(n_ops):
        key = universe[rng.randrange(len(universe))]
        if rng.random() < write_fraction:
            batch.append(write_op(key, bytes([rng.randrange(256)])))
        else:
            batch.append(read_op(key))
    return batch


# -- generate -----------------------------------------------------------------------


def test_generate_collects_reads_and_writes():
    store = GenericStore({b"x": b"0"})
    access, delta = generic_generate([read_op(b"x"), write_op(b"y", b"1")], store)
    assert access == {b"x", b"y"}
    assert delta == {b"y": b"1"}
    assert store.data[b"y"] == b"1"


def test_generate_empty_batch():
    access, delta = generic_generate([], GenericStore())
    assert access == set() and delta == {}


def test_generate_duplicate_reads_set_semantics():
    access, _ = generic_generate([read_op(b"x"), read_op(b"x")], GenericStore())
    assert access == {b"x"}


def test_op_validation():
    with pytest.raises(ValueError):
        read_op(b"")
    with pytest.raises(ValueError):
        write_op(b"k", None)  # type: ignore[arg-type]


# -- encodings ----------------------------------------------------------------------


def test_exact_round_trip():
    rng = random.Random(1)
    keys = {bytes(rng.getrandbits(8) for _ in range(rng.randrange(1, 30))) for _ in range(50)}
    hint = encode_hint(keys, "exact")
    assert decode_hint("exact", hint.payload).keys == keys


def test_prefix_round_trip_and_smaller_with_shared_prefixes():
    prefix = bytes(range(16))
    keys = {prefix + i.to_bytes(16, "big") for i in range(100)}
    exact = encode_hint(keys, "exact")
    pfx = encode_hint(keys, "prefix")
    assert decode_hint("prefix", pfx.payload).keys == keys
    assert pfx.size() < exact.size()


def test_bloom_no_false_negatives():
    rng = random.Random(2)
    keys = {bytes(rng.getrandbits(8) for _ in range(20)) for _ in range(500)}
    hint = encode_hint(keys, "bloom", target_fpr=0.01)
    view = decode_hint("bloom", hint.payload)
    assert all(view.member(k) for k in keys)


def test_bloom_measured_fpr_within_bound():
    rng = random.Random(3)
    keys = {b"member:%06d" % i for i in range(2000)}
    hint = encode_hint(keys, "bloom", target_fpr=0.01)
    view = decode_hint("bloom", hint.payload)
    held_out = [b"outsider:%06d" % i for i in range(20000)]
    fp = sum(1 for k in held_out if view.member(k))
    assert fp / len(held_out) <= 0.02


def test_bloom_sizing_formulas():
    bf = BloomFilter(1000, 0.01)
    expect_bits = math.ceil(-1000 * math.log(0.01) / math.log(2) ** 2)
    assert bf.m_bits == expect_bits
    assert bf.k_hashes == round(bf.m_bits / 1000 * math.log(2))


def test_range_membership_boundaries():
    k1, k2 = b"aaa", b"mmm"
    hint = encode_hint([], "range", intervals=[(k1, k2)])
    view = decode_hint("range", hint.payload)
    assert view.member(k1)
    assert view.member(b"ccc")
    assert view.member(k2)
    assert not view.member(k2 + b"\x00")  # successor of the interval end
    assert not view.member(b"a")


def test_decode_rejects_garbage():
    with pytest.raises(DecodeError):
        decode_hint("exact", b"\xff")
    with pytest.raises(DecodeError):
        decode_hint("bloom", b"\x00")
    with pytest.raises(DecodeError):
        hint_from_wire(b"\x99payload")


def test_wire_round_trip():
    hint = encode_hint({b"k1", b"k2"}, "prefix")
    wire = hint_wire_bytes(hint)
    back = hint_from_wire(wire)
    assert back.encoding == HintEncoding.PREFIX
    assert back.payload == hint.payload


# -- replay safety ---------------------------------------------------------------------


@pytest.mark.parametrize("encoding", ["exact", "prefix", "bloom", "range"])
def test_replay_matches_direct_execution_all_encodings(encoding):
    rng = random.Random(7)
    universe = [b"key:%04d" % i for i in range(120)]
    base = {k: b"v0" for k in universe}
    for trial in range(200):
        batch = random_batch(rng, universe)
        primary = GenericStore(dict(base))
        backup = GenericStore(dict(base))
        direct = GenericStore(dict(base))
        access, _ = generic_generate(batch, primary)
        if encoding == "range":
            hint = encode_hint(access, "range", intervals=[(min(access), max(access))])
        else:
            hint = encode_hint(access, encoding, target_fpr=0.01)
        stats = generic_replay(batch, hint, backup, candidates=universe)
        execute_direct(batch, direct)
        assert backup.state() == direct.state() == primary.state()
        assert stats.misses == 0
        assert stats.extra_prefetches >= 0


def test_exact_replay_zero_extra_prefetches():
    universe = [b"key:%02d" % i for i in range(10)]
    batch = [read_op(universe[0]), write_op(universe[1], b"x")]
    primary = GenericStore({k: b"0" for k in universe})
    backup = GenericStore({k: b"0" for k in universe})
    access, _ = generic_generate(batch, primary)
    stats = generic_replay(batch, encode_hint(access, "exact"), backup)
    assert stats.extra_prefetches == 0
    assert stats.prefetched == len(access)


def test_bloom_replay_prefetches_superset():
    rng = random.Random(9)
    universe = [b"key:%04d" % i for i in range(500)]
    batch = random_batch(rng, universe, n_ops=30)
    primary = GenericStore({k: b"0" for k in universe})
    backup = GenericStore({k: b"0" for k in universe})
    access, _ = generic_generate(batch, primary)
    hint = encode_hint(access, "bloom", target_fpr=0.05)
    stats = generic_replay(batch, hint, backup, candidates=universe)
    assert stats.prefetched >= len(access)


def test_incomplete_exact_hint_raises_completeness_error():
    batch = [read_op(b"a"), read_op(b"b")]
    backup = GenericStore({b"a": b"1", b"b": b"2"})
    bad_hint = encode_hint({b"a"}, "exact")
    with pytest.raises(CompletenessError):
        generic_replay(batch, bad_hint, backup)


# -- benefit check -----------------------------------------------------------------------


def test_benefit_zero_bytes_always_wins():
    assert benefit_check(0, 1.0, 1e-9, 1)


def test_benefit_boundary_is_strict():
    # cost exactly equals saving: not beneficial
    assert not benefit_check(100, 10.0, 10.0, 1)


def test_benefit_default_scenario():
    # 47 KB hint on a 1 Gbit/s link vs a 10 ms replay saving, one backup
    assert benefit_check(47_000, 125_000_000, 0.010, 1)


def test_benefit_requires_positive_bandwidth():
    with pytest.raises(ValueError):
        benefit_check(1, 0.0, 1.0, 1)


# -- transmission -----------------------------------------------------------------------


def test_inline_delivers_together():
    link = LinkModel(latency=0.001, bandwidth=1e6)
    t = simulate_transmission("inline", 1000, 9000, link)
    assert t.hint_ready == t.batch_ready == pytest.approx(0.001 + 10000 / 1e6)


def test_sideband_opens_prefetch_window():
    link = LinkModel(latency=0.001, bandwidth=1e6)
    t = simulate_transmission("sideband", 1000, 99000, link)
    assert t.hint_ready < t.batch_ready
    assert t.prefetch_window == pytest.approx((99000 - 1000) / 1e6)


def test_sideband_loss_drops_hint():
    link = LinkModel(latency=0.001, bandwidth=1e6, loss_probability=1.0, seed=4)
    t = simulate_transmission("sideband", 1000, 9000, link)
    assert t.hint_lost and t.hint_ready is None
    assert t.batch_ready > 0


def test_on_demand_below_threshold_never_ships():
    link = LinkModel()
    t = simulate_transmission("on_demand", 1000, 9000, link, miss_rate=0.01, miss_rate_threshold=0.05)
    assert t.hint_ready is None


def test_on_demand_above_threshold_pays_round_trip():
    link = LinkModel(latency=0.002, bandwidth=1e6)
    t = simulate_transmission("on_demand", 1000, 9000, link, miss_rate=0.5, miss_rate_threshold=0.05)
    assert t.hint_ready == pytest.approx(t.batch_ready + 0.002 + 0.002 + 1000 / 1e6)


# -- adaptive scenario --------------------------------------------------------------------


def test_adaptive_switching_preserves_state():
    rng = random.Random(11)
    universe = [b"key:%04d" % i for i in range(80)]
    state = {k: b"v0" for k in universe}
    batches = [random_batch(rng, universe, n_ops=25) for _ in range(30)]
    results, primary_state, backup_state = run_adaptive_scenario(
        batches, state, AdaptivePolicy(start=HintEncoding.BLOOM, target_fpr=0.2)
    )
    assert primary_state == backup_state
    # direct execution over the same batches agrees too
    direct = GenericStore(dict(state))
    for batch in batches:
        execute_direct(batch, direct)
    assert direct.state() == primary_state
    assert len({r.encoding for r in results}) >= 1
