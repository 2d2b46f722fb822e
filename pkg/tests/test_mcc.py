import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsim import host as H
from farsim import mcc as M
from farsim.acceptance import fifo_fuzz, spawn_times
from farsim.mcc import GlobalCounter, LockStateError, OverlapError, Req, SpawnError, spawn_receive
from farsim.workloads.common import make_system, run_to_end


def run_cp(fn, *args, system=None, host=None):
    system = system or make_system()
    system.mccs[0].run_cp(M.FunctionProgram(fn, *args), at=0.0)
    if host is not None:
        system.host(host)
    run_to_end(system)
    return system


def test_one_line_copy_stamp_at_238ns():
    out = {}

    def cp(ctx):
        addr = ctx.mcc.mem.far.alloc(128)
        since = yield M.Stamp()
        t0 = yield M.Now()
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, addr, 5))
        out["issued"] = t0 + ctx.mcc.cost["copy_issue"]
        out["early"] = yield M.CopyDone(5, "read", since)
        yield M.AwaitTs(5, "read", since)
        out["stamp"] = yield M.ReadTs(5, "read")
        out["late"] = yield M.CopyDone(5, "read", since)

    run_cp(cp)
    assert out["early"] is False and out["late"] is True
    # stamps are picoseconds of the completion instant
    assert out["stamp"] / 1000 == pytest.approx(out["issued"] + 238.0)


def test_two_interleaved_reads_share_the_window():
    out = {}

    def cp(ctx):
        far = ctx.mcc.mem.far
        a, b = far.alloc(128), far.alloc(128)
        since = yield M.Stamp()
        t0 = yield M.Now()
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, a, 0))
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, b, 1))
        yield M.AwaitTs([0, 1], "read", since)
        out["ts"] = [(yield M.ReadTs(0, "read")) / 1000 - t0, (yield M.ReadTs(1, "read")) / 1000 - t0]

    run_cp(cp)
    assert max(out["ts"]) <= 238.0 + 128 / 8.75 + 2 * 10.0 + 1e-6


def test_copy_command_preconditions():
    with pytest.raises(ValueError):
        M.CopyCommand(M.FAR_TO_SPAD, 0, 0, line_count=0)
    with pytest.raises(ValueError):
        M.CopyCommand(M.FAR_TO_SPAD, 0, 510, line_count=3)
    with pytest.raises(ValueError):
        M.CopyCommand("sideways", 0, 0)


def test_overlapping_copies_rejected():
    def cp(ctx):
        addr = ctx.mcc.mem.far.alloc(256)
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, addr, 0, 2))
        yield M.CopyStart(M.CopyCommand(M.FAR_TO_SPAD, addr, 1))

    with pytest.raises(OverlapError):
        run_cp(cp)


def test_write_back_roundtrip():
    system = make_system()
    addr = system.mem.far.alloc(128)

    def cp(ctx):
        yield M.SpadWrite(3, 0, b"payload!")
        since = yield M.Stamp()
        yield M.CopyStart(M.CopyCommand(M.SPAD_TO_FAR, addr, 3))
        yield M.AwaitTs(3, "write", since)

    run_cp(cp, system=system)
    assert system.mem.far.read_line(addr)[:8] == b"payload!"


def test_compute_300_cycles_is_1us():
    out = {}

    def cp(ctx):
        t0 = yield M.Now()
        yield M.Compute(300)
        out["dt"] = (yield M.Now()) - t0

    run_cp(cp)
    assert out["dt"] == pytest.approx(1000.0)


def test_exit_first_costs_only_dispatch():
    def cp(ctx):
        yield M.Exit(7)

    system = run_cp(cp)
    m = system.mccs[0]
    assert m.exit_code == 7
    assert m.busy_cycles == pytest.approx(system.config["mcc.costs.dispatch"])


def test_double_lock_is_error():
    def cp(ctx):
        yield M.Lock(0, "read")
        yield M.Lock(0, "write")

    with pytest.raises(LockStateError):
        run_cp(cp)


# -- locks and notifications ------------------------------------------------------------------

def test_read_lock_cp_modifies_before_release():
    out = {}

    def cp(ctx):
        yield M.Lock(2, "read")
        ev = yield M.AwaitNotify()
        out["ev"] = (ev.line, ev.request)
        yield M.SpadWrite(2, 0, b"fresh")
        yield M.Unlock(2)

    def host(ctx):
        yield H.Compute(100)  # let the CP take the lock first
        h = yield H.SpadLineRead(0, 2)
        out["data"] = (yield H.Await(h))[:5]

    run_cp(cp, host=host)
    assert out["ev"] == (2, Req.CPU_READ)
    assert out["data"] == b"fresh"


def test_unlocked_read_needs_no_cp():
    out = {}

    def host(ctx):
        ctx.system.mccs[0].store_line(9, b"x" * 128)
        h = yield H.SpadLineRead(0, 9)
        out["data"] = yield H.Await(h)

    system = make_system()
    system.host(host)
    run_to_end(system)
    assert out["data"] == b"x" * 128


def test_write_lock_visible_immediately_ack_after_release():
    out = {}

    def cp(ctx):
        yield M.Lock(4, "write")
        ev = yield M.AwaitNotify()
        out["seen"] = (yield M.SpadRead(4, 0, 3))
        out["seen_at"] = yield M.Now()
        yield M.Compute(3000)  # 10 us holding the line
        out["release_at"] = yield M.Now()
        yield M.Unlock(4)

    def host(ctx):
        yield H.Compute(100)
        h = yield H.SpadLineWrite(0, 4, b"abc".ljust(128, b"\0"))
        yield H.Await(h)
        out["acked"] = yield H.Now()

    run_cp(cp, host=host)
    assert out["seen"] == b"abc"
    assert out["acked"] > out["release_at"] > out["seen_at"]


def test_notifier_preserves_arrival_order():
    order = []

    def cp(ctx):
        for ln in (1, 2, 3):
            yield M.Lock(ln, "write")
        for _ in range(3):
            ev = yield M.AwaitNotify()
            order.append(ev.line)
            yield M.Unlock(ev.line)

    def host(ctx):
        yield H.Compute(100)
        hs = []
        for ln in (3, 1, 2):
            hs.append((yield H.SpadLineWrite(0, ln, bytes(128))))
            yield H.Compute(200)
        for h in hs:
            yield H.Await(h)

    run_cp(cp, host=host)
    assert order == [3, 1, 2]


def test_pop_notify_empty():
    out = {}

    def cp(ctx):
        out["ev"] = yield M.PopNotify()

    run_cp(cp)
    assert out["ev"] is None


# -- FIFOs ------------------------------------------------------------------------------------

def test_fifo_send_recv():
    system = make_system()
    got = []

    def a(ctx):
        yield M.FifoSend(1, 0xDEADBEEF)

    def b(ctx):
        got.append((yield M.FifoRecv(0)))

    system.mccs[0].run_cp(M.FunctionProgram(a), at=0.0)
    system.mccs[1].run_cp(M.FunctionProgram(b), at=0.0)
    run_to_end(system)
    assert got == [0xDEADBEEF]
    assert system.counters.fifo_words == 1


def test_fifo_capacity_1024():
    out = {}

    def a(ctx):
        for i in range(1024):
            assert (yield M.FifoSend(1, i, block=False)) is True
        out["last"] = yield M.FifoSend(1, 1024, block=False)

    run_cp(a)
    assert out["last"] is False


def test_fifo_all_to_all_conservation():
    res = fifo_fuzz(20_000)
    assert res["recv"] == res["plan"]
    assert res["fifo_words"] == 20_000


# -- I/O registers and counter ------------------------------------------------------------

def test_register_write_read_back():
    out = {}

    def host(ctx):
        yield H.MmioWrite(0, 3, 0x1234)
        out["v"] = yield H.MmioRead(0, 3)

    system = make_system()
    system.host(host)
    run_to_end(system)
    assert out["v"] == 0x1234


def test_mcc_register_access_costs_9_cycles():
    out = {}

    def cp(ctx):
        t0 = yield M.Now()
        yield M.IoRegRead(0)
        out["dt"] = (yield M.Now()) - t0

    run_cp(cp)
    assert out["dt"] == pytest.approx(9 / 300e6 * 1e9)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50))
def test_global_counter_strictly_increasing(times):
    c = GlobalCounter()
    stamps = [c.stamp(t) for t in sorted(times)]
    assert all(b > a for a, b in zip(stamps, stamps[1:]))


# -- spawn ------------------------------------------------------------------------------------

def test_spawn_time_model():
    m = make_system().mccs[0]
    base = m.cfg["spawn.base_ns"]
    assert spawn_receive(m, 0, False) == base
    assert m.spawn_time_ns(16 << 10, True) == pytest.approx(1e6, rel=0.05)
    ver, plain = m.spawn_time_ns(32 << 10, True), m.spawn_time_ns(32 << 10, False)
    assert ver > plain and (ver - plain) > (plain - base)
    with pytest.raises(SpawnError):
        m.spawn_time_ns(64 << 10, True)


def test_spawn_end_to_end_about_1ms():
    times = spawn_times(5, 16 << 10, True)
    assert all(0.9e6 < t < 1.1e6 for t in times)


def test_spawn_1k_base_dominated():
    t = spawn_times(1, 1 << 10, True)[0]
    base = make_system().config["spawn.base_ns"]
    assert t < 1.25 * base


def test_spawn_to_busy_mcc_fails():
    def forever(ctx):
        yield M.AwaitNotify()

    system = make_system()
    system.mccs[0].run_cp(M.FunctionProgram(forever), at=0.0)
    out = {}

    def host(ctx):
        try:
            yield from H.spawn(ctx, 0, M.FunctionProgram(forever))
        except SpawnError:
            out["failed"] = True

    system.host(host)
    system.run()
    assert out.get("failed")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 32 << 10))
def test_verified_spawn_never_faster(size):
    m = make_system().mccs[0]
    assert m.spawn_time_ns(size, True) >= m.spawn_time_ns(size, False)
