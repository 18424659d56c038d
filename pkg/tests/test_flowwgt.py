import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrom import flowwgt
from flowrom.flowwgt import FormatError


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def test_round_trip_is_bit_exact_for_float32_values(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "scalar": _f32(np.array(1.5)),
        "vec": _f32(rng.normal(size=7)),
        "mat": _f32(rng.normal(size=(3, 4))),
        "cube": _f32(rng.normal(size=(2, 0, 3))),
        "ünï": _f32(np.arange(4.0)),
    }
    path = tmp_path / "w.flowwgt"
    flowwgt.save(tensors, path)
    back = flowwgt.load(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == np.float64 and back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    assert flowwgt.dumps(back) == path.read_bytes()


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), st.lists(st.floats(-1e6, 1e6, width=32), max_size=9), max_size=5))
def test_round_trip_property(d):
    tensors = {k: np.array(v, dtype=np.float64) for k, v in d.items()}
    back = flowwgt.loads(flowwgt.dumps(tensors))
    assert set(back) == set(tensors)
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)


def test_float64_values_are_rounded_to_float32():
    back = flowwgt.loads(flowwgt.dumps({"x": np.array([0.1])}))
    assert back["x"][0] == np.float32(0.1)


def test_layout_header_fields():
    buf = flowwgt.dumps({"ab": np.zeros((2, 3))})
    assert buf[:8] == b"FLOWWGT1"
    count, nlen = struct.unpack_from("<QQ", buf, 8)
    assert (count, nlen) == (1, 2) and buf[24:26] == b"ab"
    rank, d0, d1 = struct.unpack_from("<QQQ", buf, 26)
    assert (rank, d0, d1) == (2, 2, 3) and len(buf) == 50 + 24


def test_rejections():
    good = flowwgt.dumps({"a": np.ones(3), "b": np.zeros(2)})
    with pytest.raises(FormatError, match="FLOWWGT1"):
        flowwgt.loads(b"NOTMAGIC" + good[8:])
    with pytest.raises(FormatError, match=r"offset \d+"):
        flowwgt.loads(good[:-3])
    with pytest.raises(FormatError, match="trailing"):
        flowwgt.loads(good + b"\0")
    dup = flowwgt.dumps({"a": np.ones(1)})
    dup = dup[:8] + struct.pack("<Q", 2) + dup[16:] + dup[16:]
    with pytest.raises(FormatError, match="duplicate"):
        flowwgt.loads(dup)
    huge_rank = b"FLOWWGT1" + struct.pack("<QQ", 1, 1) + b"x" + struct.pack("<Q", 99)
    with pytest.raises(FormatError, match="rank"):
        flowwgt.loads(huge_rank)


def test_require_checks_presence_and_shape():
    t = {"a": np.zeros((2, 2))}
    assert flowwgt.require(t, "a", (2, 2)) is t["a"]
    with pytest.raises(FormatError, match="missing tensor 'b'"):
        flowwgt.require(t, "b")
    with pytest.raises(FormatError, match=r"expected \(3,\)"):
        flowwgt.require(t, "a", (3,))
