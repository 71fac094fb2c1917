import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safepg import io as sio
from safepg.navenv import default_world
from safepg.policy import LatticeSpec
from safepg.trainer import RunConfig


def test_empty_config_gives_experiment_defaults():
    cfg = sio.parse_config("")
    assert cfg.lam == 6.0 and cfg.step_size == 0.002 and cfg.episodes == 40000
    assert cfg.world.obstacles == default_world().obstacles
    assert cfg.policy == LatticeSpec()
    assert sio.parse_config("[world]\n[policy]\n[train]\n") == cfg


def test_config_roundtrip_is_byte_identical():
    text = sio.format_config(RunConfig())
    assert sio.format_config(sio.parse_config(text)) == text


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(1e-6, 1.0), st.integers(1, 10**6), st.integers(0, 2**31),
       st.sampled_from(["none", "running"]))
def test_config_roundtrip_property(lam, eta, episodes, seed, baseline):
    cfg = RunConfig(lam=lam, step_size=eta, episodes=episodes, seed=seed, baseline=baseline)
    text = sio.format_config(cfg)
    back = sio.parse_config(text)
    assert (back.lam, back.step_size, back.episodes, back.seed, back.baseline) == (lam, eta, episodes, seed, baseline)
    assert sio.format_config(back) == text


def test_config_fig1_file_parses():
    cfg = sio.load_config("configs/fig1.ini")
    assert (cfg.lam, cfg.step_size, cfg.episodes) == (6.0, 0.002, 40000)


@pytest.mark.parametrize("text, pattern", [
    ("[train]\nlambda = abc\n", r"line 2: \[train\] lambda"),
    ("[train]\nepisodes = 1.5\n", r"line 2: \[train\] episodes"),
    ("[train]\n\nfoo = 1\n", r"line 3: \[train\] unknown key 'foo'"),
    ("[nope]\n", r"unknown section \[nope\]"),
    ("[world]\nstart = 1\n", r"\[world\] start: expected two numbers"),
    ("[world]\nobstacles = 1 2\n", r"obstacle needs"),
    ("[world]\nstart = 7 7\n", r"\[world\]"),
    ("[train]\nstep_size = -1\n", r"\[train\]"),
    ("lambda = 3\n", r"<config>"),
])
def test_config_diagnostics(text, pattern):
    with pytest.raises(sio.ConfigError, match=pattern):
        sio.parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(sio.ConfigError, match="cannot read config"):
        sio.load_config(tmp_path / "absent.ini")


def _ckpt(seed=0, n=41):
    rng = np.random.default_rng(seed)
    spec = LatticeSpec(n=n)
    return sio.Checkpoint(spec, rng.normal(size=2 * n * n), episode=1234, seed=seed)


def test_checkpoint_roundtrip_is_byte_identical(tmp_path):
    ck = _ckpt()
    data = sio.encode_checkpoint(ck)
    back = sio.decode_checkpoint(data)
    np.testing.assert_array_equal(back.coefficients, ck.coefficients)
    assert (back.episode, back.seed, back.lattice) == (1234, 0, ck.lattice)
    assert sio.encode_checkpoint(back) == data
    sio.save_checkpoint(tmp_path / "a.ckpt", ck)
    assert (tmp_path / "a.ckpt").read_bytes() == data
    assert not list(tmp_path.glob("*.tmp"))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 6))
def test_checkpoint_roundtrip_property(seed, n):
    data = sio.encode_checkpoint(_ckpt(seed, n))
    assert sio.encode_checkpoint(sio.decode_checkpoint(data)) == data


def test_checkpoint_params_rebuild_policy():
    ck = _ckpt(n=3)
    params = sio.decode_checkpoint(sio.encode_checkpoint(ck)).params()
    assert params.n_params == 18
    np.testing.assert_array_equal(params.flat, ck.coefficients)


def test_checkpoint_version_mismatch_names_both_versions():
    data = bytearray(sio.encode_checkpoint(_ckpt(n=2)))
    struct.pack_into("<I", data, 8, 7)
    with pytest.raises(sio.CheckpointError, match="expected 1, found 7"):
        sio.decode_checkpoint(bytes(data))


@pytest.mark.parametrize("mutate, pattern", [
    (lambda d: d[:5], "truncated"),
    (lambda d: b"XXXXXXXX" + d[8:], "magic"),
    (lambda d: d[:-8], "expected 8 coefficients"),
    (lambda d: d + b"\0" * 8, "expected 8 coefficients"),
    (lambda d: d[:17] + b"!" + d[18:], "metadata"),
    (lambda d: d[:-8] + struct.pack("<d", float("nan")), "non-finite"),
])
def test_corrupted_checkpoints_rejected(mutate, pattern):
    data = sio.encode_checkpoint(_ckpt(n=2))
    with pytest.raises(sio.CheckpointError, match=pattern):
        sio.decode_checkpoint(mutate(data))


def test_checkpoint_wrong_length_rejected_on_encode():
    with pytest.raises(sio.CheckpointError):
        sio.encode_checkpoint(sio.Checkpoint(LatticeSpec(n=2), np.zeros(3)))


def test_csv_format(tmp_path):
    assert sio.csv_line(["a", 1, 0.1, -2376.065613136754]) == "a,1,0.1,-2376.065613136754\n"
    assert sio.csv_line(["lambda=6", ""]) == "lambda=6,\n"
    sio.write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 2.5), (3, 1e-300)])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,2.5\n3,1e-300\n"


def test_csv_floats_roundtrip_exactly():
    rng = np.random.default_rng(0)
    for v in rng.normal(size=100) * 10.0 ** rng.integers(-20, 20, size=100):
        assert float(sio.csv_line([float(v)]).strip()) == v
