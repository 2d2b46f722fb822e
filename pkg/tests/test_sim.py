import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from farsim import mcc as M
from farsim.sim import (BandwidthServer, DeadlockError, Engine, RngStream, RunStats, SimError,
                        rng_u64, server_request, splitmix64, stable_hash)
from farsim.workloads.common import make_system, run_to_end


def test_heap_order():
    e, fired = Engine(), []
    e.schedule(5, fired.append, 5)
    e.schedule(3, fired.append, 3)
    e.run_until()
    assert fired == [3, 5]


def test_equal_time_insertion_order():
    e, fired = Engine(), []

    def first():
        fired.append("a")
        e.schedule(0, fired.append, "c")

    e.schedule(0, first)
    e.schedule(0, fired.append, "b")
    e.run_until()
    assert fired == ["a", "b", "c"]


def test_empty_queue_quiescence():
    assert Engine().run_until() == RunStats(0, 0.0)


def test_limit_before_first_event():
    e = Engine()
    e.schedule(100, lambda: None)
    stats = e.run_until(50)
    assert stats.events_fired == 0
    assert e.pending() == 1


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
def test_bad_delay(bad):
    with pytest.raises(ValueError):
        Engine().schedule(bad, lambda: None)


def test_time_cap():
    with pytest.raises(SimError):
        Engine().at(float(1 << 63), lambda: None)


def _random_trace(seed, n):
    e = Engine(trace=True)
    rng = random.Random(seed)

    def tick(k):
        if k < n:
            e.schedule(rng.random() * 100, tick, k + 1)
            if k % 3 == 0:
                e.schedule(rng.choice([0.0, 1.0, 2.5]), lambda: None)

    for i in range(8):
        e.schedule(rng.random(), tick, i * n // 8)
    e.run_until()
    return e.trace


def test_replay_trace_identical():
    a, b = _random_trace(3, 40_000), _random_trace(3, 40_000)
    assert len(a) > 40_000
    assert a == b


def test_trace_sorted_by_time_then_seq():
    trace = _random_trace(9, 5000)
    times = [t for t, _ in trace]
    assert times == sorted(times)
    for (t0, s0), (t1, s1) in zip(trace, trace[1:]):
        if t0 == t1 and s1 < s0:
            # a later-scheduled event at the same instant may only precede if it was queued earlier
            pytest.fail("equal-time events fired out of insertion order")


def test_deadlock_names_blocked_cp():
    system = make_system()

    def cp(ctx):
        yield M.FifoRecv(1)
        return 0

    system.mccs[0].run_cp(M.FunctionProgram(cp, name="lonely"), at=0.0)
    with pytest.raises(DeadlockError) as info:
        run_to_end(system)
    assert "mcc0" in str(info.value) or "lonely" in str(info.value)


# -- bandwidth server ---------------------------------------------------------------------

def test_server_one_line_per_channel():
    s = BandwidthServer("ddr0", 17.5 / 2)
    assert server_request(s, 0.0, 128) == pytest.approx(128 / 8.75)
    assert s.request(0.0, 128) == pytest.approx(29.257, abs=1e-3)


def test_server_zero_bytes():
    s = BandwidthServer("x", 1.0)
    s.request(0.0, 10)
    assert s.request(3.0, 0) == 10.0
    assert s.request(20.0, 0) == 20.0


def test_server_rejects_bad_rate():
    with pytest.raises(ValueError):
        BandwidthServer("x", 0)
    with pytest.raises(ValueError):
        server_request(BandwidthServer("x", 1), 0, 1, rate=-1)


@given(st.lists(st.tuples(st.floats(0, 1e4), st.integers(0, 4096)), max_size=60))
def test_server_conservation(reqs):
    s = BandwidthServer("x", 3.0)
    done, prev_free = [], 0.0
    for arrival, n in sorted(reqs):
        d = s.request(arrival, n)
        assert d >= max(arrival, prev_free) - 1e-9
        assert s.next_free >= prev_free
        prev_free = s.next_free
        done.append(d)
    assert s.bytes_served == sum(n for _, n in reqs)
    assert done == sorted(done)


# -- rng ----------------------------------------------------------------------------------

def test_rng_pure_function_of_counter():
    a, b = RngStream(42, 3, counter=17), RngStream(42, 3, counter=17)
    assert rng_u64(a) == rng_u64(b)
    assert a.counter == 18


def test_rng_streams_distinct():
    a, b = RngStream(1, 0), RngStream(1, 1)
    assert [a.u64() for _ in range(16)] != [b.u64() for _ in range(16)]


def test_rng_named_stream_is_stable():
    assert RngStream(5, "gups").u64() == RngStream(5, stable_hash("gups")).u64()


def test_rng_uniformity_chi_square():
    s = RngStream(2024, 1)
    draws = np.fromiter((s.u64() >> 56 for _ in range(1 << 20)), dtype=np.int64, count=1 << 20)
    counts = np.bincount(draws, minlength=256)
    assert sps.chisquare(counts).pvalue > 0.001


def test_splitmix_reference_value():
    # first output of the reference splitmix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


@settings(max_examples=50)
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32), st.integers(0, 1000))
def test_rng_random_access(seed, stream, k):
    seq = RngStream(seed, stream)
    for _ in range(k % 20):
        seq.u64()
    assert seq.u64() == RngStream(seed, stream, counter=k % 20).u64()
