import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ademi import tensorio as tio
from ademi.config import ExperimentConfig, apply_overrides, dump_config, from_dict, load_config, to_dict
from ademi.errors import ConfigError, DomainError


def test_record_layout():
    buf = tio.encode_tensor(np.arange(6, dtype=np.int64).reshape(2, 3))
    assert buf[:4] == b"AMIT"
    assert buf[4:7] == bytes([1, 2, 2])
    assert struct.unpack("<2Q", buf[7:23]) == (2, 3)
    assert np.frombuffer(buf[23:], "<i8").tolist() == list(range(6))


@given(hnp.arrays(st.sampled_from([np.float64, np.complex128, np.int64]),
                  hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)))
def test_roundtrip_bitwise(arr):
    out = tio.decode_tensors(tio.encode_tensor(arr))[0]
    assert out.dtype == arr.dtype and out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()


def test_multi_record_and_errors(tmp_path):
    blob = tio.encode_tensor(np.ones(3)) + tio.encode_tensor(np.zeros((2, 2), complex))
    a, b = tio.decode_tensors(blob)
    assert a.shape == (3,) and b.dtype == np.complex128
    with pytest.raises(DomainError):
        tio.decode_tensors(b"XXXX" + blob[4:])
    with pytest.raises(DomainError):
        tio.decode_tensors(blob[:-1])
    with pytest.raises(DomainError):
        tio.encode_tensor(np.ones(2, dtype=np.float32))
    tio.save_tensor(tmp_path / "x.bin", np.arange(4))
    assert tio.load_tensor(tmp_path / "x.bin").tolist() == [0, 1, 2, 3]


def test_manifest_roundtrip(tmp_path):
    p = tmp_path / "m.manifest"
    tio.write_manifest(p, {"a": 1, "b.c": "x y", "z": 2.5})
    assert dict(tio.read_manifest(p)) == {"a": "1", "b.c": "x y", "z": "2.5"}
    with pytest.raises(DomainError):
        tio.write_manifest(p, {"bad=key": 1})


def test_checkpoint_roundtrip_and_tamper(tmp_path):
    p = tmp_path / "ck.bin"
    tensors = {"w": np.random.default_rng(0).normal(size=(3, 4)), "b": np.zeros(4)}
    tio.save_checkpoint(p, tensors, {"seed": 3})
    back, man = tio.load_checkpoint(p)
    assert list(back) == ["w", "b"] and np.array_equal(back["w"], tensors["w"])
    assert man["seed"] == "3" and man["tensor.0.shape"] == "3x4"
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 1
    p.write_bytes(bytes(raw))
    with pytest.raises(DomainError):
        tio.load_checkpoint(p)


# ---- config

def test_default_config_values():
    cfg = ExperimentConfig()
    assert cfg.n_events == 600 and cfg.split_ratio == 0.9
    assert cfg.train_device.epochs == 50 and cfg.train_device.batch_size == 64
    assert cfg.train_device.learning_rate == 1e-3
    assert cfg.spectro_shape == (109, 121)
    assert cfg.scene.num_paths == 2


def test_yaml_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert "duration_s" in p.read_text() and "total_bandwidth_hz" in p.read_text()


def test_overrides():
    cfg = load_config(None, ["train_device.epochs=5", "channel.snr_db=20", "baselines=[multi_view]"])
    assert cfg.train_device.epochs == 5 and cfg.channel.snr_db == 20
    assert cfg.baselines == ("multi_view",)
    assert load_config(None, ["train_server.learning_rate=5e-4"]).train_server.learning_rate == 5e-4


@pytest.mark.parametrize("item", ["nokey", "train_device.bogus=1", "bogus.x=1", "=3"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        load_config(None, [item])


@pytest.mark.parametrize("override", [
    "split_ratio=1.0", "n_events=601", "scene.sample_interval_s=0.01", "pipeline.band_high_hz=600",
    "pipeline.stft.window_len=4000", "channel.num_devices=2", "baselines=[foo]", "scene.num_antennas=1",
    "train_device.learning_rate=0", "pipeline.stft.max_freq_hz=600",
])
def test_invalid_config_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_unknown_top_level_key():
    d = to_dict(ExperimentConfig())
    d["extra"] = 1
    with pytest.raises(ConfigError):
        from_dict(d)


def test_seed_derivation():
    cfg = ExperimentConfig(base_seed=11)
    assert [cfg.device_train_config(k).seed for k in range(3)] == [11, 12, 13]
    assert cfg.server_train_config().seed == 1011


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.yaml")


def test_apply_overrides_does_not_mutate():
    d = to_dict(ExperimentConfig())
    apply_overrides(d, ["n_events=12"])
    assert d["n_events"] == 600
