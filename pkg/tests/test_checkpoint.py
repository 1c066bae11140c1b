import numpy as np
import pytest

from qaface.cli.checkpoint import (
    ConfigMismatch,
    CorruptFile,
    IoError,
    VersionMismatch,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from qaface.simulator.data import SyntheticDatasetSpec, generate_dataset
from qaface.simulator.train import TrainConfig, train

SPEC = SyntheticDatasetSpec(num_classes=5, samples_per_class=30, input_dim=6, embedding_dim=6)


def _trained(**kw):
    cfg = TrainConfig(epochs=2, batch_size=32, hidden_dim=8, **kw)
    ds = generate_dataset(SPEC)
    return cfg, ds, train(cfg, ds.training_view(), embedding_dim=6,
                          stop_at_iteration=5).state


def _assert_same(a, b):
    for name in ("centers", "velocity_params", "velocity_centers"):
        x, y = getattr(a, name), getattr(b, name)
        assert x.dtype == y.dtype and np.array_equal(x, y)
    assert np.array_equal(a.backbone.params, b.backbone.params)
    assert np.array_equal(a.encoder.parameters, b.encoder.parameters)
    assert np.array_equal(a.memory.entries, b.memory.entries)
    assert np.array_equal(a.memory.last_write, b.memory.last_write)
    assert a.memory.last_write.dtype == np.int64
    assert a.stats == b.stats
    assert (a.iteration, a.epoch, a.step_in_epoch) == (b.iteration, b.epoch, b.step_in_epoch)


def test_round_trip_is_bit_exact(tmp_path):
    from qaface.injection import InjectionParams

    _, _, st = _trained(injection=InjectionParams(start_epoch=0))
    assert (st.memory.last_write >= 0).any()
    path = tmp_path / "c.qck"
    save_checkpoint(st, str(path), "abc")
    _assert_same(st, load_checkpoint(str(path), "abc"))


def test_identity_backbone_round_trip():
    _, _, st = _trained(backbone="identity")
    _assert_same(st, decode_checkpoint(encode_checkpoint(st, "h")))


def test_resume_from_file_continues_bitwise(tmp_path):
    cfg, ds, _ = _trained()
    full = train(cfg, ds.training_view(), embedding_dim=6)
    part = train(cfg, ds.training_view(), embedding_dim=6, stop_at_iteration=3)
    save_checkpoint(part.state, str(tmp_path / "c"), "h")
    rest = train(cfg, ds.training_view(), state=load_checkpoint(str(tmp_path / "c"), "h"))
    assert part.history + rest.history == full.history


def test_truncated_and_corrupted_files():
    _, _, st = _trained()
    blob = encode_checkpoint(st, "h")
    with pytest.raises(CorruptFile):
        decode_checkpoint(blob[:-1])
    with pytest.raises(CorruptFile):
        decode_checkpoint(blob[:10])
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 1
    with pytest.raises(CorruptFile):
        decode_checkpoint(bytes(flipped))


def test_version_and_config_checks():
    import hashlib

    _, _, st = _trained()
    blob = encode_checkpoint(st, "h")
    with pytest.raises(ConfigMismatch):
        decode_checkpoint(blob, "other")
    body = blob[:-32].replace(b"version = 1\n", b"version = 7\n")
    with pytest.raises(VersionMismatch):
        decode_checkpoint(body + hashlib.sha256(body).digest())


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_checkpoint(str(tmp_path / "nope"))
