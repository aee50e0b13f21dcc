import json

import numpy as np
import pytest

from binarray import binapprox, containers
from binarray.containers import ContainerError


def test_tensor_roundtrip_f64(tmp_path, rng):
    path = tmp_path / "t.tns"
    arr = rng.normal(size=(3, 4, 5))
    containers.save_tensor(path, arr)
    back = containers.load_tensor(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


@pytest.mark.parametrize("dtype,lo,hi", [("i4", -1000, 1000), ("i1", -128, 128),
                                         ("u1", 0, 256)])
def test_tensor_roundtrip_ints(tmp_path, rng, dtype, lo, hi):
    path = tmp_path / "t.tns"
    arr = rng.integers(lo, hi, size=(2, 6)).astype(dtype)
    containers.save_tensor(path, arr)
    assert np.array_equal(containers.load_tensor(path), arr)


def test_tensor_header_is_json_then_payload(tmp_path):
    path = tmp_path / "t.tns"
    containers.save_tensor(path, np.arange(4, dtype=np.int32))
    blob = path.read_bytes()
    header = json.loads(blob[:blob.find(b"\n")])
    assert header["dtype"] == "i32"
    assert header["shape"] == [4]
    assert header["order"] == "row-major"
    payload = blob[header["data_offset"]:]
    assert np.frombuffer(payload, dtype="<i4").tolist() == [0, 1, 2, 3]


def test_tensor_truncation_reports_file_and_offset(tmp_path):
    path = tmp_path / "t.tns"
    containers.save_tensor(path, np.arange(10, dtype=np.int32))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(ContainerError) as exc:
        containers.load_tensor(path)
    assert "t.tns" in str(exc.value) and "offset" in str(exc.value)


def test_tensor_sibling_data_file(tmp_path):
    arr = np.arange(6, dtype=np.int32)
    (tmp_path / "t.bin").write_bytes(arr.astype("<i4").tobytes())
    header = {"dtype": "i32", "shape": [6], "order": "row-major",
              "data_file": "t.bin"}
    (tmp_path / "t.tns").write_bytes((json.dumps(header) + "\n").encode())
    assert np.array_equal(containers.load_tensor(tmp_path / "t.tns"), arr)


def test_bitplane_packing_is_lsb_first():
    planes = np.array([[1, -1, 1, 1]], dtype=np.int8)
    packed = containers.pack_bitplanes(planes)
    assert len(packed) == 8  # one 64-bit word
    assert packed[0] == 0b1101
    assert packed[1:] == bytes(7)
    assert np.array_equal(containers.unpack_bitplanes(packed, 1, 4), planes)


def test_bitplane_packing_roundtrip_long(rng):
    planes = np.where(rng.random((3, 147)) < 0.5, 1, -1).astype(np.int8)
    packed = containers.pack_bitplanes(planes)
    assert len(packed) == 3 * 3 * 8  # ceil(147/64)=3 words per plane
    assert np.array_equal(containers.unpack_bitplanes(packed, 3, 147), planes)


def test_binary_approx_roundtrip(tmp_path, rng):
    w = rng.normal(size=29)
    a = binapprox.approximate_alg2(w, 3, bias=0.125)
    path = tmp_path / "f.ba"
    containers.save_binary_approx(path, a)
    back = containers.load_binary_approx(path)
    assert np.array_equal(back.bitplanes, a.bitplanes)
    assert back.alphas.tolist() == a.alphas.tolist()
    assert back.bias == a.bias
    assert back.residual == a.residual
    back.check_residual(w)


def test_binary_approx_corrupt_payload(tmp_path, rng):
    a = binapprox.approximate_alg1(rng.normal(size=100), 2)
    path = tmp_path / "f.ba"
    containers.save_binary_approx(path, a)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(ContainerError) as exc:
        containers.load_binary_approx(path)
    assert "f.ba" in str(exc.value) and "offset" in str(exc.value)
