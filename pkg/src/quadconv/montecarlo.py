"""Seeded random streams and the on-disk critical-value cache.

Replications are generated in fixed-size blocks.  Block ``b`` of a
simulation identified by ``key`` always draws from the stream
``SeedSequence([seed, *digest(key), b])``, so results do not depend on how
blocks are scheduled across workers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

log = logging.getLogger(__name__)

BLOCK_SIZE = 250
CACHE_ENV = "QUADCONV_CV_CACHE"
CACHE_VERSION = 1
LEVELS = (0.10, 0.05, 0.01)


def key_digest(key: Mapping[str, Any]) -> str:
    blob = json.dumps(key, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return hashlib.sha256(np.ascontiguousarray(obj, dtype=float).tobytes()).hexdigest()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)!r} into a cache key")


def block_rng(seed: int, key: Mapping[str, Any], block: int) -> np.random.Generator:
    words = [int(key_digest(key)[i : i + 8], 16) for i in range(0, 32, 8)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *words, block]))


def run_blocks(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    replications: int,
    seed: int,
    key: Mapping[str, Any],
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Evaluate ``fn(rng, n)`` block by block and concatenate along axis 0.

    ``fn`` must return one row per replication.
    """
    sizes = [block_size] * (replications // block_size)
    if replications % block_size:
        sizes.append(replications % block_size)

    def job(b: int) -> np.ndarray:
        return np.asarray(fn(block_rng(seed, key, b), sizes[b]))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    return np.concatenate(parts, axis=0)


def upper_quantiles(draws: np.ndarray, levels=LEVELS) -> tuple[float, ...]:
    """Right-tail critical values, e.g. the 90/95/99% quantiles for levels 10/5/1%."""
    draws = np.asarray(draws, dtype=float)
    return tuple(float(np.quantile(draws, 1.0 - a)) for a in levels)


def default_cache_dir() -> Path | None:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


class CvCache:
    """JSON files keyed by the SHA-256 of the simulation key.

    Writes go to a temporary file in the same directory followed by an
    atomic rename, so concurrent writers never leave a torn file behind.
    """

    def __init__(self, directory: str | Path | None) -> None:
        self.directory = Path(directory) if directory is not None else None
        self.hits = 0
        self.misses = 0

    def _path(self, key: Mapping[str, Any]) -> Path:
        assert self.directory is not None
        return self.directory / f"{key.get('test', 'cv')}-{key_digest(key)[:24]}.json"

    def get(self, key: Mapping[str, Any]) -> dict | None:
        if self.directory is None:
            return None
        path = self._path(key)
        try:
            with path.open(encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None
        if doc.get("version") != CACHE_VERSION:
            return None
        self.hits += 1
        return doc["value"]

    def put(self, key: Mapping[str, Any], value: dict) -> Path | None:
        if self.directory is None:
            return None
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(key)
        doc = {"version": CACHE_VERSION, "key": json.loads(json.dumps(key, default=_jsonable)), "value": value}
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, sort_keys=True, indent=1)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return path

    def get_or_compute(self, key: Mapping[str, Any], compute: Callable[[], dict]) -> dict:
        hit = self.get(key)
        if hit is not None:
            return hit
        self.misses += 1
        value = compute()
        self.put(key, value)
        return value
