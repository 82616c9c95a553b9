"""Primary-side engine: instrumented execution, source annotation, hint
serialization/compression, hint persistence and the state-change digest.

Hint wire format (little-endian), 16-byte header then fixed-width entries:

    magic u16 (0x4948, bytes "HI"), version u8, flags u8,
    block_number u32, storage_count u32, account_count u16, code_count u16
    storage entries: 20-byte address | 32-byte slot | 1 source byte   (53 B)
    account entries: 20-byte address                                  (20 B)
    code entries:    20-byte address                                  (20 B)

Entries are sorted and deduplicated (canonical form), so serialization is
injective and doubles as the backup's prefetch order. Raw size is exactly
``16 + 53*|storage| + 20*(|accounts| + |codes|)``.

Compression wraps zlib (window bits pinned to 15 so the first output byte is
always 0x78, which can never collide with the header magic byte 0x48): the
smaller of the zlib stream and the raw bytes is stored, so the compressed
form never exceeds the raw form. An identity codec is available for
byte-exact fixtures.

The hint database is a single append-only file of CRC-checked records indexed
by block number; rereads return exact bytes, absent blocks read as ``None``
(hints are advisory), and corruption raises so callers can fall back.
"""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .store import (
    ADDRESS_LEN,
    ArchivalStore,
    CostMeter,
    Effects,
    KEY_LEN,
    StorageKey,
    StoreView,
    pack_account,
)
from .workload import Block, ExecResult, execute_block

HINT_MAGIC = 0x4948
HINT_VERSION = 1
HINT_HEADER = struct.Struct("<HBBIIHH")
assert HINT_HEADER.size == 16

STORAGE_ENTRY_LEN = KEY_LEN + 1  # address + slot + source byte

_SERIALIZE_PAGE = 4096


class SerializationError(Exception):
    """Hint cannot be serialized (non-canonical input or count overflow)."""


class HintConflictError(Exception):
    """A hint was already written for this block number."""


class HintIntegrityError(Exception):
    """Stored hint bytes fail structural or checksum validation."""


class Source(IntEnum):
    """Where the backup should read a storage key's value."""

    PLAIN = 0      # current value in the plain state table
    ZERO = 1       # never written; value is the zero word, no I/O
    CHANGESET = 2  # must be read from historical change sets


@dataclass(frozen=True)
class AccessSets:
    """Unique keys touched by one block, split by domain."""

    storage: frozenset
    accounts: frozenset
    codes: frozenset


@dataclass
class Hint:
    """Canonical per-block access hint: sorted, deduplicated entry lists."""

    block_number: int
    storage_entries: List[Tuple[StorageKey, Source]]
    accounts: List[bytes]
    codes: List[bytes]

    def entry_count(self) -> int:
        return len(self.storage_entries) + len(self.accounts) + len(self.codes)


def annotate_sources(
    storage_keys: Iterable[StorageKey],
    store: ArchivalStore,
    block_number: int,
    meter: Optional[CostMeter] = None,
) -> List[Tuple[StorageKey, Source]]:
    """Classify each key by where its start-of-block value lives.

    A key modified at or after ``block_number`` reads from that modification's
    change set; otherwise a plain-table entry answers; a key with neither has
    never been written and reads as zero. One history-index seek is charged
    per key.
    """
    history = store.storage_history
    plain = store.plain_storage
    out: List[Tuple[StorageKey, Source]] = []
    for key in sorted(storage_keys):
        if meter is not None:
            meter.charge_seek()
        n = history.first_at_or_after(key, block_number)
        if n is not None:
            src = Source.CHANGESET
        elif key in plain:
            src = Source.PLAIN
        else:
            src = Source.ZERO
        out.append((key, src))
    return out


def serialize_hint(hint: Hint) -> bytes:
    """Encode a canonical hint; rejects unsorted/duplicate entries and counts
    that overflow their header fields."""
    s, a, c = hint.storage_entries, hint.accounts, hint.codes
    if len(s) > 0xFFFFFFFF or len(a) > 0xFFFF or len(c) > 0xFFFF:
        raise SerializationError("hint entry count overflows header field")
    if hint.block_number < 0 or hint.block_number > 0xFFFFFFFF:
        raise SerializationError("block number out of range")
    out = bytearray(HINT_HEADER.pack(HINT_MAGIC, HINT_VERSION, 0, hint.block_number, len(s), len(a), len(c)))
    prev_key: Optional[bytes] = None
    for key, src in s:
        if len(key) != KEY_LEN:
            raise SerializationError("bad storage key width")
        if prev_key is not None and key <= prev_key:
            raise SerializationError("storage entries must be strictly ascending")
        prev_key = key
        if not 0 <= int(src) <= 2:
            raise SerializationError(f"invalid source byte {src}")
        out += key
        out.append(int(src))
    for name, addrs in (("account", a), ("code", c)):
        prev: Optional[bytes] = None
        for addr in addrs:
            if len(addr) != ADDRESS_LEN:
                raise SerializationError(f"bad {name} address width")
            if prev is not None and addr <= prev:
                raise SerializationError(f"{name} entries must be strictly ascending")
            prev = addr
            out += addr
    return bytes(out)


def raw_hint_size(n_storage: int, n_accounts: int, n_codes: int) -> int:
    return HINT_HEADER.size + STORAGE_ENTRY_LEN * n_storage + ADDRESS_LEN * (n_accounts + n_codes)


def parse_hint(raw: bytes) -> Hint:
    """Decode and structurally validate hint bytes (exact length, canonical order)."""
    if len(raw) < HINT_HEADER.size:
        raise HintIntegrityError("hint shorter than header")
    magic, version, _flags, block_number, ns, na, nc = HINT_HEADER.unpack_from(raw, 0)
    if magic != HINT_MAGIC:
        raise HintIntegrityError(f"bad hint magic 0x{magic:04x}")
    if version != HINT_VERSION:
        raise HintIntegrityError(f"unsupported hint version {version}")
    expect = raw_hint_size(ns, na, nc)
    if len(raw) != expect:
        raise HintIntegrityError(f"hint length {len(raw)} != expected {expect}")
    off = HINT_HEADER.size
    storage: List[Tuple[StorageKey, Source]] = []
    prev: Optional[bytes] = None
    for _ in range(ns):
        key = StorageKey(raw[off : off + KEY_LEN])
        src = raw[off + KEY_LEN]
        off += STORAGE_ENTRY_LEN
        if src > 2:
            raise HintIntegrityError(f"invalid source byte {src}")
        if prev is not None and key <= prev:
            raise HintIntegrityError("storage entries not strictly ascending")
        prev = key
        storage.append((key, Source(src)))
    lists: List[List[bytes]] = []
    for count in (na, nc):
        addrs: List[bytes] = []
        aprev: Optional[bytes] = None
        for _ in range(count):
            addr = bytes(raw[off : off + ADDRESS_LEN])
            off += ADDRESS_LEN
            if aprev is not None and addr <= aprev:
                raise HintIntegrityError("address entries not strictly ascending")
            aprev = addr
            addrs.append(addr)
        lists.append(addrs)
    return Hint(block_number, storage, lists[0], lists[1])


def compress_hint(raw: bytes, codec: str = "zlib") -> bytes:
    """Byte-stream compression that never expands: stores whichever of the
    zlib stream or the raw bytes is shorter. Raw hints start with 0x48, zlib
    streams with 0x78, so decoding is unambiguous."""
    if codec == "identity":
        return raw
    if codec != "zlib":
        raise ValueError(f"unknown codec {codec!r}")
    comp = zlib.compressobj(level=6, wbits=15)
    z = comp.compress(raw) + comp.flush()
    return z if len(z) < len(raw) else raw


def decompress_hint(data: bytes) -> bytes:
    if not data:
        raise HintIntegrityError("empty hint record")
    if data[0] == 0x78:
        try:
            return zlib.decompress(data)
        except zlib.error as exc:
            raise HintIntegrityError(f"zlib decode failed: {exc}") from None
    if data[0] == HINT_MAGIC & 0xFF:
        return data
    raise HintIntegrityError(f"unrecognized hint envelope byte 0x{data[0]:02x}")


def hint_from_sets(
    block_number: int,
    storage_entries: Sequence[Tuple[StorageKey, Source]],
    accounts: Iterable[bytes],
    codes: Iterable[bytes],
) -> Hint:
    """Build a canonical hint (sorted, deduplicated) from raw collections."""
    dedup: Dict[StorageKey, Source] = {}
    for key, src in storage_entries:
        dedup[key] = src
    return Hint(
        block_number=block_number,
        storage_entries=[(k, dedup[k]) for k in sorted(dedup)],
        accounts=sorted(set(accounts)),
        codes=sorted(set(codes)),
    )


# -- state-change digest ---------------------------------------------------------


def state_change_hash(effects: Effects) -> bytes:
    """256-bit digest over effects, domain-tagged and sorted by key, so the
    result is independent of iteration order. Empty effects hash to the
    digest of the empty byte string."""
    h = hashlib.sha256()
    for addr in sorted(effects.accounts):
        h.update(b"A")
        h.update(addr)
        h.update(pack_account(effects.accounts[addr]))
    for key in sorted(effects.storage):
        h.update(b"S")
        h.update(key)
        h.update(effects.storage[key])
    for code_hash in sorted(effects.codes):
        code = effects.codes[code_hash]
        h.update(b"C")
        h.update(code_hash)
        h.update(len(code).to_bytes(4, "little"))
        h.update(code)
    return h.digest()


# -- primary block run -----------------------------------------------------------


@dataclass
class PrimaryBlockResult:
    block_number: int
    effects: Effects
    access_sets: AccessSets
    hint: Hint
    raw_bytes: bytes
    compressed_bytes: bytes
    digest: bytes
    exec_cost: int
    hint_construct_cost: int
    serialize_cost: int


def run_primary_block(
    block: Block,
    store: ArchivalStore,
    mode: str = "archival",
    codec: str = "zlib",
    collect_log: bool = False,
) -> PrimaryBlockResult:
    """Execute one block with access instrumentation and produce its hint.

    ``archival`` mode requires the store head to be at or past the block
    (replaying history); ``live`` mode requires head == block.number - 1
    (hints then never carry change-set sources, and are only valid for
    backups replaying in lock step at the same head).
    """
    if mode == "archival":
        if store.head_block < block.number:
            raise ValueError(f"archival mode needs head >= {block.number}, have {store.head_block}")
    elif mode == "live":
        if store.head_block != block.number - 1:
            raise ValueError(f"live mode needs head == {block.number - 1}, have {store.head_block}")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    model = store.cost_model
    exec_meter = CostMeter(model)
    result: ExecResult = execute_block(block, StoreView(store, block.number, exec_meter), exec_meter, collect_log)

    construct_meter = CostMeter(model)
    entries = annotate_sources(result.storage_keys, store, block.number, construct_meter)
    hint = hint_from_sets(block.number, entries, result.account_addrs, result.code_addrs)

    raw = serialize_hint(hint)
    compressed = compress_hint(raw, codec)
    serialize_cost = model.c_random_seek + math.ceil(len(raw) / _SERIALIZE_PAGE) * model.c_sequential_step

    return PrimaryBlockResult(
        block_number=block.number,
        effects=result.effects,
        access_sets=AccessSets(
            storage=frozenset(result.storage_keys),
            accounts=frozenset(result.account_addrs),
            codes=frozenset(result.code_addrs),
        ),
        hint=hint,
        raw_bytes=raw,
        compressed_bytes=compressed,
        digest=state_change_hash(result.effects),
        exec_cost=exec_meter.total,
        hint_construct_cost=construct_meter.total,
        serialize_cost=serialize_cost,
    )


# -- hint database ----------------------------------------------------------------

_HDB_MAGIC = b"HDB1"
_HDB_HEADER = _HDB_MAGIC + struct.pack("<HH", 1, 0)
_HDB_REC = struct.Struct("<QII")  # block, payload length, crc32


class HintDb:
    """Append-only block_number -> compressed-hint map in a single file.

    One hint per block; duplicate writes raise. Reads return the exact stored
    bytes, ``None`` for absent blocks, and raise on checksum failure.
    """

    def __init__(self, path: Path, create: bool = True):
        self.path = Path(path)
        self._index: Dict[int, Tuple[int, int]] = {}
        if not self.path.exists():
            if not create:
                raise FileNotFoundError(self.path)
            self.path.write_bytes(_HDB_HEADER)
        self._file = open(self.path, "r+b")
        self._scan()

    def _scan(self) -> None:
        f = self._file
        f.seek(0)
        header = f.read(len(_HDB_HEADER))
        if header != _HDB_HEADER:
            raise HintIntegrityError("bad hint database header")
        while True:
            pos = f.tell()
            rec = f.read(_HDB_REC.size)
            if not rec:
                break
            if len(rec) < _HDB_REC.size:
                raise HintIntegrityError("truncated hint record header")
            block, length, _crc = _HDB_REC.unpack(rec)
            payload_pos = f.tell()
            f.seek(length, 1)
            if f.tell() != payload_pos + length:
                raise HintIntegrityError("truncated hint record payload")
            if block in self._index:
                raise HintIntegrityError(f"duplicate record for block {block}")
            self._index[block] = (pos, length)

    def write_hint(self, block_number: int, data: bytes) -> None:
        if block_number in self._index:
            raise HintConflictError(f"hint for block {block_number} already written")
        f = self._file
        f.seek(0, 2)
        pos = f.tell()
        f.write(_HDB_REC.pack(block_number, len(data), zlib.crc32(data)))
        f.write(data)
        f.flush()
        self._index[block_number] = (pos, len(data))

    def read_hint(self, block_number: int) -> Optional[bytes]:
        entry = self._index.get(block_number)
        if entry is None:
            return None
        pos, length = entry
        f = self._file
        f.seek(pos)
        block, stored_len, crc = _HDB_REC.unpack(f.read(_HDB_REC.size))
        payload = f.read(stored_len)
        if block != block_number or stored_len != length or zlib.crc32(payload) != crc:
            raise HintIntegrityError(f"hint record for block {block_number} is corrupt")
        return payload

    def blocks(self) -> List[int]:
        return sorted(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, block_number: int) -> bool:
        return block_number in self._index

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "HintDb":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class DigestLog:
    """Append-only block_number -> 32-byte digest file (primary fingerprints)."""

    _REC = struct.Struct("<Q32s")

    def __init__(self, path: Path):
        self.path = Path(path)
        if not self.path.exists():
            self.path.write_bytes(b"")

    def write(self, block_number: int, digest: bytes) -> None:
        with open(self.path, "ab") as f:
            f.write(self._REC.pack(block_number, digest))

    def read_all(self) -> Dict[int, bytes]:
        out: Dict[int, bytes] = {}
        buf = self.path.read_bytes()
        for off in range(0, len(buf) - self._REC.size + 1, self._REC.size):
            block, digest = self._REC.unpack_from(buf, off)
            out[block] = digest
        return out
