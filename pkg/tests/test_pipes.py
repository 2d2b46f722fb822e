import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsim import host as H
from farsim import mcc as M
from farsim import pipes as P
from farsim.acceptance import pipe_fuzz
from farsim.workloads import CorrectnessError, pipe_rtt, run_pipe_bench
from farsim.config import Config
from farsim.workloads.common import make_system, run_to_end

# -- encoding ---------------------------------------------------------------------------------


def test_thirty_ids_one_line():
    assert len(P.pack_records([(7, range(30))])) == 1


def test_thirty_one_ids_two_lines_header_repeated():
    lines = P.pack_records([(7, range(31))])
    assert [c for c, _ in lines] == [30, 1]
    assert all(p[:4] == (7).to_bytes(4, "little") for _, p in lines)


def test_zero_ids_no_lines():
    assert P.pack_records([(7, [])]) == []


def test_record_id_width():
    with pytest.raises(P.EncodeError):
        P.pack_records([(1 << 32, [1])])


def test_message_size_limits():
    with pytest.raises(P.EncodeError):
        P.pack_messages([b"x" * 127], 127)
    with pytest.raises(P.EncodeError):
        P.pack_messages([b"abc"], 8)
    with pytest.raises(P.EncodeError):
        P.encode_line(1, 1, bytes(127))


@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 2**32 - 1), max_size=70)),
                max_size=10))
def test_records_roundtrip(records):
    got = {}
    for count, payload in P.pack_records(records):
        u, vs = P.decode_record(P.encode_line(1, count, payload))
        got.setdefault(u, []).extend(vs.tolist())
    want = {}
    for u, vs in records:
        if vs:
            want.setdefault(u, []).extend(vs)
    assert got == want


@given(st.integers(1, 126).flatmap(lambda size: st.tuples(
    st.just(size), st.lists(st.binary(min_size=size, max_size=size), max_size=40))))
def test_messages_roundtrip(case):
    size, msgs = case
    per = P.PAYLOAD // size
    out = []
    for i, payload in enumerate(P.pack_messages(msgs, size)):
        n = len(msgs[i * per:(i + 1) * per])
        out += P.decode_line(P.encode_line(1, n, payload), size)
    assert out == msgs
    assert all(len(p) <= P.PAYLOAD for p in P.pack_messages(msgs, size))


# -- protocol fuzzing -----------------------------------------------------------------------


def test_flagged_pipe_survives_torn_writes():
    res = pipe_fuzz(3000, torn_rate=0.1, flagged=True)
    assert res["error"] is None
    assert res["torn"] > 0 and res["ignored"] >= res["torn"]
    assert res["got"] == res["sent"]


def test_unflagged_pipe_is_caught_tearing():
    res = pipe_fuzz(3000, torn_rate=0.1, flagged=False)
    assert res["error"] is not None or res["got"] != res["sent"]


def _ring(k, bursts, seed):
    system = make_system()
    got = []

    def cp(ctx):
        rv = P.ClReceiver(0, k, 8)
        yield from rv.open()
        while not rv.closed:
            ev = yield M.AwaitNotify()
            yield from rv.handle(ev, lambda ms: got.extend(ms))

    def host(ctx):
        snd = P.ClSender(0, 0, k, 8, torn_rate=0.05, seed=seed)
        for b in bursts:
            yield from snd.send(b)
            yield H.Compute(len(b) * 37 % 500)
        yield from snd.close()

    system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
    system.host(host)
    run_to_end(system)
    return got


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 16), st.lists(st.lists(st.binary(min_size=8, max_size=8), max_size=60), max_size=12),
       st.integers(0, 1000))
def test_pipe_fifo_for_any_ring_size(k, bursts, seed):
    assert _ring(k, bursts, seed) == [m for b in bursts for m in b]


def test_closed_sender_rejects():
    snd = P.ClSender(0, 0, 1)
    snd.closed = True
    with pytest.raises(P.ClosedError):
        next(snd.send_lines([(1, b"x")]))


# -- calibrated figures -----------------------------------------------------------------------


def test_receive_line_costs_27_4_cycles():
    out = {}

    def cp(ctx):
        rv = P.ClReceiver(0, 1, 8)
        yield from rv.open()
        yield M.Compute(3000)  # the write lands while we are busy
        t0 = yield M.Now()
        ev = yield M.AwaitNotify()
        yield from rv.handle(ev, lambda ms: None)
        out["cycles"] = ((yield M.Now()) - t0) * 0.3

    def host(ctx):
        snd = P.ClSender(0, 0, 1)
        yield from snd.send([bytes(8)])

    system = make_system()
    system.mccs[0].run_cp(M.FunctionProgram(cp), at=0.0)
    system.host(host)
    system.run()
    assert out["cycles"] == pytest.approx(27.4)


def test_cl_rtt():
    assert 1185 <= pipe_rtt("cl") <= 1975


def test_reg_rtt_near_1200():
    assert 900 <= pipe_rtt("reg") <= 1500


def test_cl_single_line_about_126MBps():
    tp = run_pipe_bench("cl", 1, 400, lines=1).throughput
    assert tp == pytest.approx(126, rel=0.2)


def test_cl_throughput_monotone_in_ring_size():
    tps = [run_pipe_bench("cl", 1, 300, lines=k).throughput for k in (1, 2, 4, 8, 16)]
    assert all(b >= a for a, b in zip(tps, tps[1:]))
    assert tps[3] > 0.6 * tps[4]  # 8 lines already near the plateau


def test_reg_single_thread_about_19MBps():
    assert run_pipe_bench("reg", 1, 400).throughput == pytest.approx(19.0, rel=0.1)


def test_reg_multi_thread_ceiling():
    tp = run_pipe_bench("reg", 3, 300).throughput
    assert tp == pytest.approx(28.4, rel=0.1)


def test_pipe_bench_sums_checked():
    a = run_pipe_bench("cl", 2, 100, seed=3)
    b = run_pipe_bench("reg", 2, 100 * (P.PAYLOAD // 8), seed=3)
    assert a.checksum == b.checksum


def test_zero_messages():
    r = run_pipe_bench("reg", 1, 0)
    assert r.checksum == 0


def test_torn_fault_mode_raises():
    with pytest.raises(CorrectnessError):
        run_pipe_bench("cl", 1, 2000, config=Config({"pipe.torn_write_fault": True}))


@pytest.mark.parametrize("kw", [dict(variant="udp"), dict(variant="cl", threads=0),
                                dict(variant="cl", lines=17), dict(variant="reg", threads=4, regs=8)])
def test_pipe_bench_bad_params(kw):
    with pytest.raises(ValueError):
        run_pipe_bench(**kw)
