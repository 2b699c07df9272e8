import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icc.calibration import plain_svd_calib
from icc.container import (
    ContainerError, calib_to_tensors, decode, encode, load_weights, model_to_tensors, save_weights,
    tensors_to_calib, tensors_to_model,
)
from icc.rng import Rng


def test_round_trip_byte_exact(small_weights):
    blob = encode(model_to_tensors(small_weights))
    back = decode(blob)
    assert encode(back) == blob
    w = tensors_to_model(back)
    assert w.config == small_weights.config
    for layer in w.config.layer_ids():
        assert np.array_equal(w.linear(layer).weight, small_weights.linear(layer).weight)


def test_layout_of_a_single_tensor():
    blob = encode({"ab": np.arange(6, dtype=np.float64).reshape(2, 3)})
    assert blob[:4] == b"ICW1" and struct.unpack("<II", blob[4:12]) == (1, 1)
    assert struct.unpack("<H", blob[12:14]) == (2,) and blob[14:16] == b"ab"
    assert blob[16:18] == bytes([1, 2]) and struct.unpack("<QQ", blob[18:34]) == (2, 3)
    assert np.array_equal(np.frombuffer(blob[34:], "<f8"), np.arange(6.0))


def test_truncation_reports_field_offset():
    blob = encode({"ab": np.zeros((2, 3))})
    # field starts: header 4/8, name_len 12, name 14, dtype 16, dims 18, data 34
    expected = {3: 0, 10: 4, 13: 12, 15: 14, 17: 16, 30: 18, 40: 34}
    for cut, offset in expected.items():
        with pytest.raises(ContainerError) as info:
            decode(blob[:cut])
        assert info.value.offset == offset, cut


def test_bad_magic_version_and_trailing_bytes():
    blob = encode({"x": np.ones(2)})
    with pytest.raises(ContainerError, match="magic"):
        decode(b"ICW2" + blob[4:])
    with pytest.raises(ContainerError, match="version"):
        decode(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(ContainerError, match="trailing"):
        decode(blob + b"\0")
    bad_dtype = bytearray(blob)
    bad_dtype[15] = 7
    with pytest.raises(ContainerError, match="dtype"):
        decode(bytes(bad_dtype))


def test_duplicate_names_rejected():
    one = encode({"x": np.ones(1)})
    two = one[:4] + struct.pack("<II", 1, 2) + one[12:] + one[12:]
    with pytest.raises(ContainerError, match="duplicate"):
        decode(two)


def test_f32_storage(tmp_path, small_weights):
    path = tmp_path / "w.icw"
    save_weights(path, model_to_tensors(small_weights), "f32")
    back = load_weights(path)
    assert back["blocks.0.qkv.weight"].dtype == np.float32
    w = tensors_to_model(back)
    diff = np.abs(w.linear(small_weights.config.layer_ids()[0]).weight
                  - small_weights.linear(small_weights.config.layer_ids()[0]).weight)
    assert diff.max() < 1e-6


def test_calibration_round_trip(small_weights):
    params = plain_svd_calib(small_weights, 5)
    back = tensors_to_calib(decode(encode(calib_to_tensors(params))))
    assert back.rank == 5 and back.method == "svd"
    for l, f in params.layers.items():
        assert np.array_equal(back.layers[l].wa, f.wa) and np.array_equal(back.layers[l].wb, f.wb)


def test_missing_tensor_reports_name(small_weights):
    t = model_to_tensors(small_weights)
    del t["head.bias"]
    with pytest.raises(ValueError, match="head.bias"):
        tensors_to_model(t)


_names = st.text(st.characters(min_codepoint=33, max_codepoint=0x2FF), min_size=1, max_size=12)


@settings(max_examples=40, deadline=None)
@given(shapes=st.dictionaries(_names, st.lists(st.integers(0, 4), max_size=3), max_size=4),
       seed=st.integers(0, 2**32))
def test_round_trip_property(shapes, seed):
    rng = Rng(seed)
    tensors = {k: rng.normal(tuple(v)) if v else np.array(rng.normal()) for k, v in shapes.items()}
    back = decode(encode(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape and np.array_equal(back[k], tensors[k])
