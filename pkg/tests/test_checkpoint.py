import numpy as np
import pytest

from mmfusion import checkpoint as C
from mmfusion.image_net import ImageNetConfig, VGGNet
from mmfusion.rng import Streams
from mmfusion.text_net import TextCNN, TextNetConfig

CFG = TextNetConfig(num_classes=5, vocab_size=30, embed_dim=8, filters_per_width=4)


def test_save_load_save_is_byte_identical(tmp_path):
    model = TextCNN(CFG, Streams(0))
    fp = C.fingerprint(CFG.fingerprint_fields())
    first = C.save(tmp_path / "a.ckpt", model.params, fp)
    arrays, got_fp = C.load(tmp_path / "a.ckpt", fp)
    assert got_fp == fp and list(arrays) == list(model.params)
    assert C.save(tmp_path / "b.ckpt", arrays, fp) == first
    other = TextCNN(CFG, Streams(9))
    C.load_into(other, tmp_path / "a.ckpt", fp)
    assert all(np.array_equal(other.params[k].data, model.params[k].data) for k in model.params)


def test_image_tower_round_trip(tmp_path):
    cfg = ImageNetConfig(num_classes=3, input_size=8, conv_blocks=((1, 4),), fc_dims=(6,))
    model = VGGNet(cfg, Streams(1))
    fp = C.fingerprint(cfg.fingerprint_fields())
    data = C.save(tmp_path / "i.ckpt", model.params, fp)
    assert C.to_bytes(C.from_bytes(data)[0], fp) == data


def test_fingerprint_is_order_free_and_sensitive():
    assert C.fingerprint({"a": 1, "b": [2, 3]}) == C.fingerprint({"b": [2, 3], "a": 1})
    wide = TextNetConfig(num_classes=5, vocab_size=30, embed_dim=8, filters_per_width=5)
    assert C.fingerprint(CFG.fingerprint_fields()) != C.fingerprint(wide.fingerprint_fields())


def test_mismatches_are_refused(tmp_path):
    model = TextCNN(CFG, Streams(0))
    C.save(tmp_path / "a.ckpt", model.params, C.fingerprint(CFG.fingerprint_fields()))
    wide = TextNetConfig(num_classes=5, vocab_size=30, embed_dim=8, filters_per_width=5)
    with pytest.raises(C.FingerprintMismatch):
        C.load_into(TextCNN(wide, Streams(0)), tmp_path / "a.ckpt", C.fingerprint(wide.fingerprint_fields()))
    # Without a fingerprint the shape check still catches it.
    with pytest.raises(C.FingerprintMismatch):
        C.load_into(TextCNN(wide, Streams(0)), tmp_path / "a.ckpt")
    with pytest.raises(FileNotFoundError):
        C.load(tmp_path / "missing.ckpt")


def test_corrupt_files(tmp_path):
    data = C.to_bytes({"w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.zeros(3)}, "abc")
    with pytest.raises(C.CheckpointError, match="magic"):
        C.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(C.CheckpointError, match="truncated"):
        C.from_bytes(data[:-5])
    with pytest.raises(C.CheckpointError, match="trailing"):
        C.from_bytes(data + b"\0")
    arrays, fp = C.from_bytes(data)
    assert fp == "abc" and arrays["w"].tolist() == [[0, 1, 2], [3, 4, 5]] and arrays["w"].dtype == np.float32


def test_scalar_and_empty_parameters():
    data = C.to_bytes({"s": np.float32(2.5), "e": np.zeros((0, 4))}, "")
    arrays, _ = C.from_bytes(data)
    assert arrays["s"].shape == () and arrays["s"] == 2.5 and arrays["e"].shape == (0, 4)
