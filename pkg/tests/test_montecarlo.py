from __future__ import annotations

import json
import threading

import numpy as np
import pytest

from quadconv import montecarlo as mc


def _normals(rng, n):
    return rng.standard_normal(n)


class TestStreams:
    def test_deterministic(self):
        a = mc.run_blocks(_normals, 1100, 5, {"test": "x"})
        b = mc.run_blocks(_normals, 1100, 5, {"test": "x"})
        assert a.shape == (1100,) and np.array_equal(a, b)

    def test_worker_invariance(self):
        a = mc.run_blocks(_normals, 1300, 5, {"test": "x"}, workers=1)
        b = mc.run_blocks(_normals, 1300, 5, {"test": "x"}, workers=4)
        assert np.array_equal(a, b)

    def test_prefix_stability(self):
        # more replications extend, never reshuffle, the earlier blocks
        a = mc.run_blocks(_normals, 500, 1, {"test": "x"})
        b = mc.run_blocks(_normals, 1000, 1, {"test": "x"})
        assert np.array_equal(a, b[:500])

    def test_key_and_seed_separate_streams(self):
        a = mc.run_blocks(_normals, 10, 1, {"test": "x"})
        assert not np.array_equal(a, mc.run_blocks(_normals, 10, 2, {"test": "x"}))
        assert not np.array_equal(a, mc.run_blocks(_normals, 10, 1, {"test": "y"}))

    def test_key_digest_order_free(self):
        assert mc.key_digest({"a": 1, "b": 2}) == mc.key_digest({"b": 2, "a": 1})

    def test_array_in_key(self):
        X = np.eye(3)
        assert mc.key_digest({"X": X}) == mc.key_digest({"X": X.copy()})
        assert mc.key_digest({"X": X}) != mc.key_digest({"X": 2 * X})

    def test_quantiles(self):
        q = mc.upper_quantiles(np.arange(1001.0))
        assert q == (900.0, 950.0, 990.0)


class TestCache:
    def test_roundtrip_and_hits(self, tmp_path):
        cache = mc.CvCache(tmp_path)
        calls = []

        def compute():
            calls.append(1)
            return {"cv": [1.0, 2.0, 3.0]}

        key = {"test": "t", "T": 10}
        assert cache.get_or_compute(key, compute) == {"cv": [1.0, 2.0, 3.0]}
        assert cache.get_or_compute(key, compute) == {"cv": [1.0, 2.0, 3.0]}
        assert len(calls) == 1 and cache.hits == 1 and cache.misses == 1
        files = list(tmp_path.iterdir())
        assert len(files) == 1 and files[0].name.startswith("t-")

    def test_version_mismatch_ignored(self, tmp_path):
        cache = mc.CvCache(tmp_path)
        key = {"test": "t"}
        path = cache.put(key, {"cv": [1]})
        doc = json.loads(path.read_text())
        doc["version"] = -1
        path.write_text(json.dumps(doc))
        assert cache.get(key) is None

    def test_corrupt_file_ignored(self, tmp_path):
        cache = mc.CvCache(tmp_path)
        key = {"test": "t"}
        cache.put(key, {"cv": [1]}).write_text("{not json")
        assert cache.get(key) is None

    def test_disabled(self):
        cache = mc.CvCache(None)
        assert cache.put({"test": "t"}, {}) is None and cache.get({"test": "t"}) is None

    def test_concurrent_writers_leave_valid_file(self, tmp_path):
        cache = mc.CvCache(tmp_path)
        key = {"test": "t"}
        threads = [threading.Thread(target=cache.put, args=(key, {"cv": [i] * 100})) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache.get(key)["cv"]) == 100
        assert not list(tmp_path.glob("*.tmp"))

    def test_env_default(self, monkeypatch, tmp_path):
        monkeypatch.setenv(mc.CACHE_ENV, str(tmp_path))
        assert mc.default_cache_dir() == tmp_path
        monkeypatch.delenv(mc.CACHE_ENV)
        assert mc.default_cache_dir() is None
