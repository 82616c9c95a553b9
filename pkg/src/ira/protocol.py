"""Generalized hint protocol over an abstract byte-string key-value state.

This module strips the engine down to its portable core: a primary executes a
batch of reads/writes, records the touched key set, encodes it, and a backup
prefetches the encoded set before replaying the same batch. Four encodings
are provided:

* exact: length-prefixed sorted keys (lossless)
* prefix: shared-prefix/suffix runs over the sorted key list (lossless, never
  larger than exact when keys share prefixes)
* bloom: bit-array membership filter sized from a target false-positive rate;
  no false negatives, so prefetching every positive candidate always covers
  the true access set
* range: sorted (start, end) intervals; membership is interval containment

Encodings change which keys get prefetched, never the replay result: a miss
on an exactly-encoded key is a completeness violation, while approximate
encodings prefetch a superset of the candidates that truly get accessed.

Transmission strategies are simulated against a two-parameter link model
(latency + bandwidth, optional per-message Bernoulli loss): inline delivery
couples the hint to the batch, sideband sends it ahead on its own channel,
and on-demand only ships a hint after a miss-rate-triggered request
round-trip.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class DecodeError(Exception):
    """Encoded hint bytes are malformed."""


class CompletenessError(Exception):
    """Replay under an exact encoding touched a key outside the hint."""


class GenericOpKind(IntEnum):
    READ = 0
    WRITE = 1


@dataclass(frozen=True)
class GenericOp:
    kind: GenericOpKind
    key: bytes
    value: Optional[bytes] = None

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("key must be non-empty")
        if (self.kind == GenericOpKind.WRITE) != (self.value is not None):
            raise ValueError("value present iff op is a write")


def read_op(key: bytes) -> GenericOp:
    return GenericOp(GenericOpKind.READ, key)


def write_op(key: bytes, value: bytes) -> GenericOp:
    return GenericOp(GenericOpKind.WRITE, key, value)


class GenericStore:
    """Flat byte-string key-value state with fetch counting.

    ``fetches`` counts individual key reads served to a prefetcher, which is
    what approximate encodings inflate."""

    def __init__(self, data: Optional[Dict[bytes, bytes]] = None):
        self.data: Dict[bytes, bytes] = dict(data or {})
        self.fetches = 0

    def get(self, key: bytes) -> Optional[bytes]:
        self.fetches += 1
        return self.data.get(key)

    def put(self, key: bytes, value: bytes) -> None:
        self.data[key] = value

    def snapshot(self) -> "GenericStore":
        return GenericStore(dict(self.data))

    def state(self) -> Dict[bytes, bytes]:
        return dict(self.data)


class HintEncoding(Enum):
    EXACT = "exact"
    PREFIX = "prefix"
    BLOOM = "bloom"
    RANGE = "range"


_TAGS = {
    HintEncoding.EXACT: 0x01,
    HintEncoding.PREFIX: 0x02,
    HintEncoding.BLOOM: 0x03,
    HintEncoding.RANGE: 0x04,
}
_TAGS_REV = {v: k for k, v in _TAGS.items()}


# -- hint generation / replay -------------------------------------------------------


@dataclass
class GenericHint:
    """Access set of one batch plus how it is encoded on the wire."""

    encoding: HintEncoding
    payload: bytes
    key_count: int

    def size(self) -> int:
        return 1 + len(self.payload)  # tag byte + body


def generic_generate(batch: Sequence[GenericOp], store: GenericStore) -> Tuple[Set[bytes], Dict[bytes, bytes]]:
    """Execute a batch on the primary, collecting the touched key set.

    Both reads and writes enter the access set (a replayer needs the
    pre-state of written keys as much as read ones). Returns the access set
    and the applied write delta."""
    access: Set[bytes] = set()
    delta: Dict[bytes, bytes] = {}
    for op in batch:
        access.add(op.key)
        if op.kind == GenericOpKind.WRITE:
            delta[op.key] = op.value  # type: ignore[assignment]
            store.put(op.key, op.value)  # type: ignore[arg-type]
        else:
            store.get(op.key)
    return access, delta


@dataclass
class ReplayStats:
    prefetched: int
    extra_prefetches: int
    misses: int


def generic_replay(
    batch: Sequence[GenericOp],
    hint: GenericHint,
    store: GenericStore,
    candidates: Optional[Iterable[bytes]] = None,
) -> ReplayStats:
    """Prefetch per the hint, execute the batch from cache, persist dirty keys.

    For membership-only encodings (bloom, range) the prefetch set is every
    positive key among ``candidates`` (defaulting to the batch's own keys).
    The final store state is identical to direct execution for every
    encoding; only the amount of prefetch I/O differs.
    """
    view = decode_hint(hint.encoding.value, hint.payload)
    batch_keys = {op.key for op in batch}
    if view.keys is not None:
        to_fetch = sorted(view.keys)
    else:
        pool = set(candidates) if candidates is not None else set(batch_keys)
        pool.update(batch_keys)  # no false negatives: every true access tests positive
        to_fetch = sorted(k for k in pool if view.member(k))

    cache: Dict[bytes, Optional[bytes]] = {}
    for key in to_fetch:
        cache[key] = store.get(key)
    prefetched = len(to_fetch)
    extra = len([k for k in to_fetch if k not in batch_keys])

    dirty: Dict[bytes, bytes] = {}
    misses = 0
    for op in batch:
        key = op.key
        if op.kind == GenericOpKind.READ:
            if key not in cache:
                misses += 1
                if view.keys is not None:
                    raise CompletenessError(f"exact hint missed key {key.hex()}")
                raise AssertionError("membership encoding produced a false negative")
            _ = cache[key]
        else:
            if key not in cache:
                misses += 1
                if view.keys is not None:
                    raise CompletenessError(f"exact hint missed key {key.hex()}")
                raise AssertionError("membership encoding produced a false negative")
            cache[key] = op.value
            dirty[key] = op.value  # type: ignore[assignment]
    for key, value in dirty.items():
        store.put(key, value)
    return ReplayStats(prefetched=prefetched, extra_prefetches=extra, misses=misses)


def execute_direct(batch: Sequence[GenericOp], store: GenericStore) -> None:
    for op in batch:
        if op.kind == GenericOpKind.WRITE:
            store.put(op.key, op.value)  # type: ignore[arg-type]
        else:
            store.get(op.key)


# -- encodings ---------------------------------------------------------------------


@dataclass
class DecodedHint:
    """Decoded form: either a concrete key set or a membership test."""

    keys: Optional[Set[bytes]]
    _member: Optional[object] = None

    def member(self, key: bytes) -> bool:
        if self.keys is not None:
            return key in self.keys
        return self._member(key)  # type: ignore[operator]


def _encode_exact(keys: List[bytes]) -> bytes:
    out = bytearray(_U32.pack(len(keys)))
    for key in keys:
        out += _U16.pack(len(key))
        out += key
    return bytes(out)


def _decode_exact(payload: bytes) -> Set[bytes]:
    try:
        (count,) = _U32.unpack_from(payload, 0)
        off = 4
        keys: Set[bytes] = set()
        for _ in range(count):
            (klen,) = _U16.unpack_from(payload, off)
            off += 2
            if off + klen > len(payload):
                raise DecodeError("exact hint truncated")
            keys.add(bytes(payload[off : off + klen]))
            off += klen
        if off != len(payload):
            raise DecodeError("exact hint has trailing bytes")
        return keys
    except struct.error:
        raise DecodeError("exact hint truncated") from None


def _encode_prefix(keys: List[bytes]) -> bytes:
    out = bytearray(_U32.pack(len(keys)))
    prev = b""
    for key in keys:
        lcp = 0
        limit = min(len(prev), len(key))
        while lcp < limit and prev[lcp] == key[lcp]:
            lcp += 1
        suffix = key[lcp:]
        out += _U16.pack(lcp)
        out += _U16.pack(len(suffix))
        out += suffix
        prev = key
    return bytes(out)


def _decode_prefix(payload: bytes) -> Set[bytes]:
    try:
        (count,) = _U32.unpack_from(payload, 0)
        off = 4
        keys: Set[bytes] = set()
        prev = b""
        for _ in range(count):
            (lcp,) = _U16.unpack_from(payload, off)
            (slen,) = _U16.unpack_from(payload, off + 2)
            off += 4
            if lcp > len(prev) or off + slen > len(payload):
                raise DecodeError("prefix hint malformed")
            key = prev[:lcp] + payload[off : off + slen]
            off += slen
            keys.add(key)
            prev = key
        if off != len(payload):
            raise DecodeError("prefix hint has trailing bytes")
        return keys
    except struct.error:
        raise DecodeError("prefix hint truncated") from None


class BloomFilter:
    """Fixed-size bit-array membership filter with double hashing.

    Sized from the standard formulas: ``m = -n ln(p) / (ln 2)^2`` bits and
    ``k = round(m/n ln 2)`` probes. Adding a key can never be forgotten, so
    false negatives are impossible; false positives occur at roughly the
    target rate."""

    def __init__(self, n_keys: int, target_fpr: float):
        if not (0.0 < target_fpr < 1.0):
            raise ValueError("target_fpr must be in (0, 1)")
        n = max(1, n_keys)
        self.m_bits = max(8, int(math.ceil(-n * math.log(target_fpr) / (math.log(2) ** 2))))
        self.k_hashes = max(1, round(self.m_bits / n * math.log(2)))
        self.bits = bytearray((self.m_bits + 7) // 8)

    def _probes(self, key: bytes) -> Iterable[int]:
        digest = hashlib.sha256(key).digest()
        h1 = int.from_bytes(digest[:8], "big")
        h2 = int.from_bytes(digest[8:16], "big") | 1
        m = self.m_bits
        for i in range(self.k_hashes):
            yield (h1 + i * h2) % m

    def add(self, key: bytes) -> None:
        for idx in self._probes(key):
            self.bits[idx >> 3] |= 1 << (idx & 7)

    def __contains__(self, key: bytes) -> bool:
        for idx in self._probes(key):
            if not self.bits[idx >> 3] & (1 << (idx & 7)):
                return False
        return True

    def to_bytes(self) -> bytes:
        return _U64.pack(self.m_bits) + bytes((self.k_hashes,)) + bytes(self.bits)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "BloomFilter":
        if len(payload) < 9:
            raise DecodeError("bloom hint truncated")
        (m_bits,) = _U64.unpack_from(payload, 0)
        k = payload[8]
        bits = payload[9:]
        if len(bits) != (m_bits + 7) // 8 or k < 1:
            raise DecodeError("bloom hint malformed")
        bf = cls.__new__(cls)
        bf.m_bits = m_bits
        bf.k_hashes = k
        bf.bits = bytearray(bits)
        return bf


def _encode_range(intervals: Sequence[Tuple[bytes, bytes]]) -> bytes:
    out = bytearray(_U32.pack(len(intervals)))
    for start, end in intervals:
        if start > end:
            raise ValueError("range interval start must be <= end")
        out += _U16.pack(len(start))
        out += start
        out += _U16.pack(len(end))
        out += end
    return bytes(out)


class _RangeView:
    def __init__(self, intervals: List[Tuple[bytes, bytes]]):
        self.intervals = sorted(intervals)
        self._starts = [s for s, _ in self.intervals]

    def __call__(self, key: bytes) -> bool:
        i = bisect_right(self._starts, key) - 1
        return i >= 0 and key <= self.intervals[i][1]


def _decode_range(payload: bytes) -> _RangeView:
    try:
        (count,) = _U32.unpack_from(payload, 0)
        off = 4
        intervals: List[Tuple[bytes, bytes]] = []
        for _ in range(count):
            (slen,) = _U16.unpack_from(payload, off)
            off += 2
            start = bytes(payload[off : off + slen])
            off += slen
            (elen,) = _U16.unpack_from(payload, off)
            off += 2
            end = bytes(payload[off : off + elen])
            off += elen
            intervals.append((start, end))
        if off != len(payload):
            raise DecodeError("range hint has trailing bytes")
        return _RangeView(intervals)
    except struct.error:
        raise DecodeError("range hint truncated") from None


def encode_hint(
    keys: Iterable[bytes],
    encoding: HintEncoding | str = HintEncoding.EXACT,
    *,
    target_fpr: float = 0.01,
    intervals: Optional[Sequence[Tuple[bytes, bytes]]] = None,
) -> GenericHint:
    """Encode an access set. Range encoding takes explicit key intervals."""
    if isinstance(encoding, str):
        encoding = HintEncoding(encoding)
    sorted_keys = sorted(set(keys))
    if encoding == HintEncoding.EXACT:
        payload = _encode_exact(sorted_keys)
    elif encoding == HintEncoding.PREFIX:
        payload = _encode_prefix(sorted_keys)
    elif encoding == HintEncoding.BLOOM:
        bf = BloomFilter(len(sorted_keys), target_fpr)
        for key in sorted_keys:
            bf.add(key)
        payload = bf.to_bytes()
    else:
        if intervals is None:
            raise ValueError("range encoding requires explicit intervals")
        payload = _encode_range(intervals)
    return GenericHint(encoding=encoding, payload=payload, key_count=len(sorted_keys))


def decode_hint(encoding: str, payload: bytes) -> DecodedHint:
    enc = HintEncoding(encoding)
    if enc == HintEncoding.EXACT:
        return DecodedHint(keys=_decode_exact(payload))
    if enc == HintEncoding.PREFIX:
        return DecodedHint(keys=_decode_prefix(payload))
    if enc == HintEncoding.BLOOM:
        bf = BloomFilter.from_bytes(payload)
        return DecodedHint(keys=None, _member=bf.__contains__)
    return DecodedHint(keys=None, _member=_decode_range(payload))


def hint_wire_bytes(hint: GenericHint) -> bytes:
    return bytes((_TAGS[hint.encoding],)) + hint.payload


def hint_from_wire(data: bytes) -> GenericHint:
    if not data or data[0] not in _TAGS_REV:
        raise DecodeError("unknown hint tag")
    return GenericHint(encoding=_TAGS_REV[data[0]], payload=data[1:], key_count=-1)


# -- bandwidth / transmission --------------------------------------------------------


def benefit_check(hint_bytes: int, bandwidth: float, latency_reduction: float, n_backups: int) -> bool:
    """True when shipping the hint costs strictly less link time than the
    replay latency it saves, summed over all backups."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return hint_bytes / bandwidth < latency_reduction * n_backups


@dataclass(frozen=True)
class LinkModel:
    """Affine link: delivering n bytes takes latency + n / bandwidth."""

    latency: float = 0.001
    bandwidth: float = 125_000_000.0  # bytes per time unit (1 Gbit/s at seconds)
    loss_probability: float = 0.0
    seed: int = 0

    def transfer_time(self, n_bytes: int) -> float:
        return self.latency + n_bytes / self.bandwidth


class TransmissionStrategy(Enum):
    INLINE = "inline"
    SIDEBAND = "sideband"
    ON_DEMAND = "on_demand"


@dataclass
class DeliveryTimeline:
    """When each artifact becomes usable at the backup. ``hint_ready`` is None
    when the hint never arrives (lost, or never requested)."""

    hint_ready: Optional[float]
    batch_ready: float
    hint_lost: bool = False

    @property
    def prefetch_window(self) -> float:
        if self.hint_ready is None:
            return 0.0
        return max(0.0, self.batch_ready - self.hint_ready)


def simulate_transmission(
    strategy: TransmissionStrategy | str,
    hint_bytes: int,
    batch_bytes: int,
    link: LinkModel,
    *,
    miss_rate: float = 0.0,
    miss_rate_threshold: float = 0.05,
    rng: Optional[random.Random] = None,
) -> DeliveryTimeline:
    """Derive the delivery timeline of one (hint, batch) pair.

    Inline couples them into one message. Sideband sends the hint on its own
    channel starting at the same instant (subject to Bernoulli loss). On
    demand, the backup only requests a hint once its observed miss rate
    crosses the threshold, paying a request round trip after the batch lands.
    """
    if isinstance(strategy, str):
        strategy = TransmissionStrategy(strategy)
    if strategy == TransmissionStrategy.INLINE:
        t = link.transfer_time(hint_bytes + batch_bytes)
        return DeliveryTimeline(hint_ready=t, batch_ready=t)
    if strategy == TransmissionStrategy.SIDEBAND:
        batch_ready = link.transfer_time(batch_bytes)
        lost = False
        if link.loss_probability > 0.0:
            r = rng or random.Random(link.seed)
            lost = r.random() < link.loss_probability
        hint_ready = None if lost else link.transfer_time(hint_bytes)
        return DeliveryTimeline(hint_ready=hint_ready, batch_ready=batch_ready, hint_lost=lost)
    batch_ready = link.transfer_time(batch_bytes)
    if miss_rate < miss_rate_threshold:
        return DeliveryTimeline(hint_ready=None, batch_ready=batch_ready)
    hint_ready = batch_ready + link.latency + link.transfer_time(hint_bytes)
    return DeliveryTimeline(hint_ready=hint_ready, batch_ready=batch_ready)


# -- adaptive scenario runner ----------------------------------------------------------


@dataclass
class ScenarioBatchResult:
    batch_index: int
    encoding: str
    hint_bytes: int
    prefetched: int
    extra_prefetches: int
    beneficial: bool


@dataclass
class AdaptivePolicy:
    """Switch encodings from observed prefetch waste: lots of unnecessary
    prefetches suggests tightening to exact; none suggests the cheaper
    approximate form is fine."""

    start: HintEncoding = HintEncoding.BLOOM
    tighten_above_extra: int = 8
    loosen_below_extra: int = 1
    target_fpr: float = 0.01


def run_adaptive_scenario(
    batches: Sequence[Sequence[GenericOp]],
    initial_state: Dict[bytes, bytes],
    policy: Optional[AdaptivePolicy] = None,
    link: Optional[LinkModel] = None,
    n_backups: int = 1,
    latency_reduction: float = 0.01,
) -> Tuple[List[ScenarioBatchResult], Dict[bytes, bytes], Dict[bytes, bytes]]:
    """Run primary and backup over a batch sequence with encoding switching.

    Returns per-batch results plus the final primary and backup states, which
    must be identical no matter how the policy switched encodings.
    """
    policy = policy or AdaptivePolicy()
    link = link or LinkModel()
    primary = GenericStore(dict(initial_state))
    backup = GenericStore(dict(initial_state))
    encoding = policy.start
    results: List[ScenarioBatchResult] = []
    for i, batch in enumerate(batches):
        access, _delta = generic_generate(batch, primary)
        hint = encode_hint(access, encoding, target_fpr=policy.target_fpr)
        stats = generic_replay(batch, hint, backup)
        results.append(
            ScenarioBatchResult(
                batch_index=i,
                encoding=encoding.value,
                hint_bytes=hint.size(),
                prefetched=stats.prefetched,
                extra_prefetches=stats.extra_prefetches,
                beneficial=benefit_check(hint.size(), link.bandwidth, latency_reduction, n_backups),
            )
        )
        if stats.extra_prefetches >= policy.tighten_above_extra:
            encoding = HintEncoding.EXACT
        elif stats.extra_prefetches < policy.loosen_below_extra and encoding == HintEncoding.EXACT:
            encoding = policy.start
    return results, primary.state(), backup.state()
