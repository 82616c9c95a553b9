from __future__ import annotations

import gc
import random
from pathlib import Path

import pytest

from ira.backup import BaselineCacheConfig, PipelineConfig, pipeline_run, run_baseline
from ira.primary import HintDb, run_primary_block
from ira.store import StorageKey, word_from_int
from ira.workload import (
    GeneratorParams,
    build_store,
    derive_genesis,
    iter_trace,
    iter_trace_file,
    save_trace,
)

DEFAULT_SEED = 1


def mk_key(i: int, contract: int = 0) -> StorageKey:
    return StorageKey.make(bytes([contract]) * 20, i.to_bytes(32, "big"))


def mk_word(i: int) -> bytes:
    return word_from_int(i)


def mk_addr(i: int) -> bytes:
    return bytes([i % 251 + 1]) * 20


@pytest.fixture(scope="session")
def default_params() -> GeneratorParams:
    return GeneratorParams(blocks=1000, seed=DEFAULT_SEED)


@pytest.fixture(scope="session")
def default_trace_path(default_params, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("trace") / "default.trace"
    save_trace(path, default_params, iter_trace(default_params))
    return path


@pytest.fixture(scope="session")
def default_store(default_params, default_trace_path):
    genesis = derive_genesis(default_params)
    store = build_store(iter_trace_file(default_trace_path), genesis)
    # the store is a multi-million-object heap that lives for the whole
    # session; excluding it from gc keeps later collections cheap
    gc.collect()
    gc.freeze()
    return store


@pytest.fixture(scope="session")
def primary_run(default_trace_path, default_store, tmp_path_factory):
    """Primary pass over the whole default trace. Keeps only the hint database
    and the per-block digests; per-block results are too large to retain."""
    hint_path = tmp_path_factory.mktemp("hints") / "hints.db"
    hint_db = HintDb(hint_path)
    digests = {}
    for block in iter_trace_file(default_trace_path):
        r = run_primary_block(block, default_store)
        hint_db.write_hint(block.number, r.compressed_bytes)
        digests[block.number] = r.digest
    gc.collect()
    gc.freeze()
    yield {"hint_db": hint_db, "path": hint_path, "digests": digests}
    hint_db.close()


@pytest.fixture(scope="session")
def baseline_run(default_trace_path, default_store):
    return run_baseline(iter_trace_file(default_trace_path), default_store, BaselineCacheConfig())


@pytest.fixture(scope="session")
def backup_run(default_trace_path, default_store, primary_run):
    cfg = PipelineConfig(batch_size=32, channel_capacity=100, warmup_blocks=32, workers=1)
    return pipeline_run(iter_trace_file(default_trace_path), default_store, primary_run["hint_db"], cfg)


@pytest.fixture()
def rng():
    return random.Random(0xC0FFEE)
