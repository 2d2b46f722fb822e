import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsim import _kernels_py, kernels

compiled = pytest.importorskip("farsim._kernels")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 50), max_size=400), st.integers(1, 20))
def test_fetch_count_backends_agree(lines, cap):
    arr = np.asarray(lines, dtype=np.int64)
    assert compiled.lru_fetch_count(arr, cap) == _kernels_py.lru_fetch_count(arr, cap)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_segment_sum_backends_bit_identical(degrees, seed):
    rng = np.random.default_rng(seed)
    n = len(degrees)
    offsets = np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)
    targets = rng.integers(0, n, offsets[-1]).astype(np.int64)
    values = (rng.random(n) * 10.0 ** rng.integers(-8, 8, n)).astype(np.float32)
    a = _kernels_py.segment_sum_f32(offsets, targets, values)
    b = compiled.segment_sum_f32(offsets, targets, values)
    assert a.dtype == b.dtype == np.float32
    assert a.tobytes() == np.asarray(b).tobytes()


def test_segment_sum_sequential_order():
    # (1e8 + 1) - 1e8 differs between left-to-right and pairwise float32 summation
    vals = np.array([1e8, 1.0, -1e8, 1.0], dtype=np.float32)
    out = _kernels_py.segment_sum_f32([0, 4], [0, 1, 2, 3], vals)
    want = np.float32(0)
    for v in vals:
        want = np.float32(want + v)
    assert out[0] == want


@pytest.mark.parametrize("mod", [_kernels_py, compiled])
def test_lru_rejects_bad_shape(mod):
    with pytest.raises(ValueError):
        mod.SetAssocLRU(0, 4)
    with pytest.raises(ValueError):
        mod.lru_fetch_count(np.zeros(1, dtype=np.int64), 0)


@pytest.mark.parametrize("mod", [_kernels_py, compiled])
def test_lru_remove_and_dirty(mod):
    c = mod.SetAssocLRU(2, 2)
    c.access(4, True)
    c.access(6, False)
    assert c.is_dirty(4) and not c.is_dirty(6)
    c.set_dirty(4, False)
    assert c.remove(4) == 0 and c.remove(4) == -1
    assert c.probe(6) and c.count == 1
    assert sorted(c.resident()) == [6]


def test_selection_prefers_compiled():
    assert kernels.BACKEND == "cython"


def test_env_forces_fallback():
    env = dict(os.environ, FARSIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from farsim import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
