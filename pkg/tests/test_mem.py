import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsim import _kernels_py, host as H
from farsim.config import Config, MemParams
from farsim.mem import FAR_BASE, AddressFault, MemorySystem, PerfCounters
from farsim.workloads.common import make_system, run_to_end

try:
    from farsim import _kernels
    BACKENDS = [_kernels_py, _kernels]
except ImportError:  # pragma: no cover - pure-Python install
    BACKENDS = [_kernels_py]

LINE = 128


def memsys(**over):
    cfg = Config().replace(**over) if over else Config()
    return MemorySystem(MemParams.from_config(cfg), 1 << 20, 1 << 20, PerfCounters())


# -- far DRAM timing -------------------------------------------------------------------------

def test_idle_mcc_read_is_internal_latency():
    m = memsys()
    assert m.far_line_op("mcc", "read", FAR_BASE, 0.0) == 238.0


def test_idle_cpu_read_is_external_latency():
    m = memsys()
    assert m.far_line_op("cpu", "read", FAR_BASE, 0.0) == pytest.approx(715.0, abs=1e-9)
    assert m.counters.link_bytes == LINE


def test_same_channel_sustained_rate():
    m = memsys()
    n = 1000
    # even lines all map to channel 0
    done = [m.far_line_op("mcc", "read", FAR_BASE + 2 * i * LINE, 0.0) for i in range(n)]
    rate = (n - 1) * LINE / (done[-1] - done[0])
    assert rate == pytest.approx(8.75, rel=1e-3)


def test_two_interleaved_reads_within_one_service_slot():
    m = memsys()
    a = m.far_line_op("mcc", "read", FAR_BASE, 0.0)
    b = m.far_line_op("mcc", "read", FAR_BASE + 2 * LINE, 0.0)
    assert a == 238.0 and b == pytest.approx(238.0 + 128 / 8.75)


def test_unaligned_and_out_of_range():
    m = memsys()
    with pytest.raises(AddressFault):
        m.far_line_op("mcc", "read", FAR_BASE + 4, 0.0)
    with pytest.raises(AddressFault):
        m.far_line_op("mcc", "read", FAR_BASE + (1 << 20), 0.0)


def test_write_bumps_version_once():
    m = memsys()
    m.far_line_op("mcc", "write", FAR_BASE, 0.0, bytes(range(128)))
    assert m.far.line_version(FAR_BASE) == 1
    assert m.far.read_line(FAR_BASE) == bytes(range(128))


# -- LLC ------------------------------------------------------------------------------------

def toy():
    """4 lines, 2 ways, 2 sets."""
    return memsys(mem__llc_bytes=4 * LINE, mem__llc_ways=2)


def test_read_hit_moves_nothing():
    m = toy()
    m.llc.access("read", FAR_BASE, 0.0)
    before = m.counters.snapshot()
    hit, _ = m.llc.access("read", FAR_BASE, 1000.0)
    d = m.counters.diff(before)
    assert hit and d["ddr_bytes"] == 0 and d["link_bytes"] == 0


def test_read_miss_clean_victim_one_op():
    m = toy()
    for i in range(3):  # lines 0, 2, 4 share set 0
        m.llc.access("read", FAR_BASE + 2 * i * LINE, 0.0)
    assert m.counters.far_line_ops == 3


def test_write_miss_dirty_victim_two_ops():
    m = toy()
    m.llc.access("write", FAR_BASE, 0.0)
    m.llc.access("read", FAR_BASE + 2 * LINE, 0.0)
    ops = m.counters.far_line_ops
    m.llc.access("write", FAR_BASE + 4 * LINE, 0.0)  # evicts dirty line 0
    assert m.counters.far_line_ops - ops == 2
    assert m.counters.writebacks == 1
    assert not m.llc.contains(FAR_BASE)


def test_flush_clean_and_dirty():
    m = toy()
    m.llc.access("read", FAR_BASE, 0.0)
    assert m.llc.flush(FAR_BASE, 0.0) is None
    m.llc.access("write", FAR_BASE + LINE, 0.0)
    ops = m.counters.far_line_ops
    assert m.llc.flush(FAR_BASE + LINE, 0.0) is not None
    assert m.counters.far_line_ops == ops + 1
    assert not m.llc.is_dirty(FAR_BASE + LINE)


def test_invalidate_loses_update():
    m = toy()
    m.llc.access("write", FAR_BASE, 0.0)
    m.llc.data_of(FAR_BASE)[:4] = b"new!"
    m.llc.invalidate(FAR_BASE)
    m.llc.access("read", FAR_BASE, 0.0)
    assert bytes(m.llc.data_of(FAR_BASE)[:4]) == bytes(4)


def test_staleness_after_mcc_write():
    m = toy()
    m.llc.access("read", FAR_BASE, 0.0)
    assert m.llc.staleness_probe(FAR_BASE) == "fresh"
    m.far_line_op("mcc", "write", FAR_BASE, 0.0, b"\x01" * 128)
    assert m.llc.staleness_probe(FAR_BASE) == "stale"
    # non-coherent: the hit still returns the old bytes
    assert bytes(m.llc.data_of(FAR_BASE)[:1]) == b"\x00"


def test_staleness_shadow_fuzz():
    m = memsys(mem__llc_bytes=16 * LINE, mem__llc_ways=4)
    rng = random.Random(5)
    dram = {}    # line -> version
    cached = {}  # line -> version at fill
    lines = [FAR_BASE + i * LINE for i in range(48)]
    for _ in range(10_000):
        ln, op = rng.choice(lines), rng.random()
        if op < 0.5:
            hit, _ = m.llc.access("read", ln, 0.0)
            if not hit:
                cached[ln] = dram.get(ln, 0)
        elif op < 0.75:
            m.far_line_op("mcc", "write", ln, 0.0, bytes(128))
            dram[ln] = dram.get(ln, 0) + 1
        else:
            m.llc.invalidate(ln)
            cached.pop(ln, None)
        cached = {k: v for k, v in cached.items() if m.llc.contains(k)}
        for k, v in cached.items():
            want = "fresh" if v == dram.get(k, 0) else "stale"
            assert m.llc.staleness_probe(k) == want
    assert m.llc.occupancy <= 16


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 63), st.booleans()), max_size=300))
def test_llc_capacity_and_dirty_writebacks(trace):
    m = memsys(mem__llc_bytes=8 * LINE, mem__llc_ways=2)
    for line, write in trace:
        m.llc.access("write" if write else "read", FAR_BASE + line * LINE, 0.0)
        assert m.llc.occupancy <= 8
    c = m.counters
    assert c.ddr_bytes == LINE * c.far_line_ops
    assert c.link_bytes == LINE * c.far_line_ops
    assert c.llc_hits + c.llc_misses == len(trace)


# -- SetAssocLRU against a reference model --------------------------------------------------

class RefLRU:
    def __init__(self, n_sets, ways):
        self.sets = [OrderedDict() for _ in range(n_sets)]
        self.ways = ways

    def access(self, line, write):
        s = self.sets[line % len(self.sets)]
        if line in s:
            s[line] = s[line] or write
            s.move_to_end(line)
            return True, -1, False
        victim = (-1, False)
        if len(s) == self.ways:
            victim = s.popitem(last=False)
        s[line] = write
        return (False,) + victim


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=60, deadline=None)
@given(sets=st.integers(1, 8), ways=st.integers(1, 4),
       trace=st.lists(st.tuples(st.integers(0, 40), st.booleans()), max_size=200))
def test_set_assoc_lru_matches_reference(mod, sets, ways, trace):
    real, ref = mod.SetAssocLRU(sets, ways), RefLRU(sets, ways)
    for line, write in trace:
        assert tuple(real.access(line, write)) == ref.access(line, write)
    for i in range(sets):
        assert list(real.lru_order(i)) == list(ref.sets[i])


# -- host-side memory behaviour -------------------------------------------------------------

def _host_run(prog, **over):
    system = make_system(**over) if over else make_system()
    system.host(prog)
    run_to_end(system)
    return system


def test_host_cold_load_and_warm_hit():
    out = {}

    def prog(ctx):
        addr = ctx.system.mem.far.alloc(128)
        t0 = yield H.Now()
        yield H.Load(addr)
        t1 = yield H.Now()
        link = ctx.system.counters.link_bytes
        yield H.Load(addr)
        t2 = yield H.Now()
        out.update(cold=t1 - t0, warm=t2 - t1, extra_link=ctx.system.counters.link_bytes - link)

    _host_run(prog)
    assert out["cold"] == pytest.approx(715.0)
    assert out["warm"] == pytest.approx(30.0)
    assert out["extra_link"] == 0


def test_prefetch_then_read_hits():
    out = {}

    def prog(ctx):
        addr = ctx.system.mem.far.alloc(128)
        yield H.Prefetch(addr)
        yield H.Compute(2 * 715)  # 715 ns at 2 GHz
        hits = ctx.system.counters.llc_hits
        yield H.Load(addr)
        out["hit"] = ctx.system.counters.llc_hits == hits + 1

    _host_run(prog)
    assert out["hit"]


def _stream_stall(ahead):
    n = (1 << 20) // LINE

    def prog(ctx):
        base = ctx.system.mem.far.alloc(1 << 20)
        yield H.AccessBatch(range(base, base + n * LINE, LINE), prefetch_ahead=ahead)

    s = _host_run(prog)
    return s.counters.stall_ns["cpu0"]


def test_streaming_prefetch_halves_stalls():
    assert _stream_stall(64) * 2 <= _stream_stall(0)


def test_store_needs_flush_to_reach_far_memory():
    out = {}

    def prog(ctx):
        far = ctx.system.mem.far
        addr = far.alloc(128)
        yield H.Store(addr, b"\xab" * 8)
        out["before"] = far.read_line(addr)[:8]
        yield H.Flush(addr)
        yield H.Fence()
        out["after"] = far.read_line(addr)[:8]

    _host_run(prog)
    assert out["before"] == bytes(8)
    assert out["after"] == b"\xab" * 8


def test_flush_untouched_buffer_no_traffic():
    def prog(ctx):
        addr = ctx.system.mem.far.alloc(4096)
        yield H.Flush(addr, 4096)
        yield H.Fence()

    assert _host_run(prog).counters.link_bytes == 0


def test_memset_flush_readback():
    out = {}

    def prog(ctx):
        addr = ctx.system.mem.far.alloc(1024)
        for a in range(addr, addr + 1024, 8):
            yield H.Store(a, b"\x5a" * 8)
        yield H.Flush(addr, 1024)
        yield H.Invalidate(addr, 1024)
        back = []
        for a in range(addr, addr + 1024, 8):
            back.append((yield H.Load(a)))
        out["back"] = b"".join(back)

    _host_run(prog)
    assert out["back"] == b"\x5a" * 1024
