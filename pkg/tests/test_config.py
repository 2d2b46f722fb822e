import pytest
from hypothesis import given
from hypothesis import strategies as st

from farsim.config import DEFAULTS, Config, ConfigError, MemParams, load_config, parse_assignments


def test_defaults_valid():
    cfg = Config()
    assert cfg["mem.internal_latency_ns"] == 238.0
    assert cfg["mem.external_latency_ns"] == 715.0
    assert cfg.non_defaults() == {}


def test_unknown_key():
    with pytest.raises(ConfigError):
        Config({"mem.nope": 1})


@pytest.mark.parametrize("over", [
    {"mem.external_latency_ns": 200.0},
    {"mem.external_bw": 20e9},
    {"mem.line_bytes": 96},
    {"mem.llc_bytes": 128, "mem.llc_ways": 16},
])
def test_invariants_enforced(over):
    with pytest.raises(ConfigError):
        Config(over)


def test_replace_and_merged_agree():
    a = Config().replace(mem__llc_bytes=1 << 20, cpu__mlp=4)
    b = Config().merged({"mem.llc_bytes": 1 << 20, "cpu.mlp": 4})
    assert dict(a) == dict(b)
    assert a.non_defaults() == {"cpu.mlp": 4, "mem.llc_bytes": 1 << 20}


def test_parse_assignments_coerces_and_comments():
    out = parse_assignments(["# header", "cpu.mlp = 4  # fewer", "", "spawn.verify = false"])
    assert out == {"cpu.mlp": 4, "spawn.verify": False}


def test_parse_assignments_errors_carry_location():
    with pytest.raises(ConfigError, match="f.cfg:2"):
        parse_assignments(["cpu.mlp = 4", "oops"], "f.cfg")


def test_dumps_roundtrip(tmp_path):
    cfg = Config({"mem.llc_bytes": 1 << 20, "spawn.verify": False, "pipe.recv_cycles": 30.5})
    path = tmp_path / "x.cfg"
    path.write_text(cfg.dumps())
    assert dict(load_config(path)) == dict(cfg)


def test_env_var_and_override_precedence(tmp_path, monkeypatch):
    path = tmp_path / "env.cfg"
    path.write_text("cpu.mlp = 2\ncpu.cores = 3\n")
    monkeypatch.setenv("FARSIM_CONFIG", str(path))
    cfg = load_config(None, {"cpu.mlp": 6})
    assert cfg["cpu.mlp"] == 6 and cfg["cpu.cores"] == 3


def test_link_decomposition_sums_to_external_latency():
    p = MemParams.from_config(Config())
    assert p.internal_latency_ns + 2 * p.link_oneway_ns == pytest.approx(715.0)


@given(st.sampled_from(sorted(k for k, v in DEFAULTS.items() if isinstance(v, int) and not isinstance(v, bool))))
def test_int_keys_roundtrip_through_text(key):
    cfg = Config()
    assert parse_assignments([f"{key} = {cfg[key]}"])[key] == cfg[key]
