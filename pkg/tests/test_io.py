import json

import numpy as np
import pytest

from vfaqmri.data import AcqParams, EchoStack, KSpaceSet, QuantMaps
from vfaqmri.io import BundleError, read_bundle, read_header, write_bundle


def test_mask_payload_bytes(tmp_path):
    write_bundle(np.array([[1, 0], [0, 1]], dtype=bool), tmp_path / "m", role="mask")
    assert (tmp_path / "m.bin").read_bytes() == bytes([1, 0, 0, 1])
    hdr = read_header(tmp_path / "m")
    assert hdr["shape"] == [2, 2] and hdr["dtype"] == "u8"
    assert hdr["order"] == "row-major" and hdr["endian"] == "little" and hdr["role"] == "mask"


def test_complex_scalar_layout(tmp_path):
    write_bundle(np.array(1 + 2j), tmp_path / "c")
    assert (tmp_path / "c.bin").read_bytes() == np.array([1.0, 2.0], dtype="<f4").tobytes()


@pytest.mark.parametrize("dtype", [np.complex64, np.float32, np.uint8])
def test_round_trip_bit_identical(tmp_path, rng, dtype):
    if dtype is np.complex64:
        x = (rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))).astype(dtype)
    elif dtype is np.float32:
        x = rng.standard_normal((3, 4, 8)).astype(dtype)
    else:
        x = rng.integers(0, 2, size=(5, 7)).astype(dtype)
    write_bundle(x, tmp_path / "x", role="test")
    y, role = read_bundle(tmp_path / "x")
    assert role == "test" and y.dtype == x.dtype
    assert y.tobytes() == x.tobytes()


def test_float64_is_stored_as_float32(tmp_path):
    x = np.array([1.0, 1.0 / 3.0])
    write_bundle(x, tmp_path / "f")
    y, _ = read_bundle(tmp_path / "f")
    assert y.dtype == np.float32 and np.array_equal(y, x.astype(np.float32))


def test_u8_header_with_four_bytes(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"shape": [2, 2], "dtype": "u8"}))
    (tmp_path / "a.bin").write_bytes(bytes([0, 1, 1, 0]))
    a, _ = read_bundle(tmp_path / "a")
    assert a.shape == (2, 2) and a.tolist() == [[0, 1], [1, 0]]


def test_size_mismatch_rejected(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"shape": [2, 2], "dtype": "c64"}))
    (tmp_path / "a.bin").write_bytes(bytes(4))
    with pytest.raises(BundleError):
        read_bundle(tmp_path / "a")


def test_unknown_dtype_and_missing_files(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"shape": [1], "dtype": "f16"}))
    (tmp_path / "a.bin").write_bytes(bytes(2))
    with pytest.raises(BundleError):
        read_bundle(tmp_path / "a")
    with pytest.raises(FileNotFoundError):
        read_bundle(tmp_path / "nothing")


def test_non_finite_rejected(tmp_path):
    with pytest.raises(BundleError):
        write_bundle(np.array([1.0, np.nan]), tmp_path / "n")
    assert not (tmp_path / "n.bin").exists()


def test_acq_params_validation():
    with pytest.raises(ValueError):
        AcqParams([0.0, 10.0], [7.0], 36.0)
    with pytest.raises(ValueError):
        AcqParams([10.0], [7.0, 7.0], 36.0)
    with pytest.raises(ValueError):
        AcqParams([10.0], [7.0, 31.0], 31.0)
    with pytest.raises(ValueError):
        AcqParams([10.0], [7.0], 36.0, flip_scale=np.full((2, 2), 2.0))


def test_quant_maps_invariants():
    m = np.array([[True, False]])
    QuantMaps(np.ones((1, 2)), np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), m)
    with pytest.raises(ValueError):
        QuantMaps(np.ones((1, 2)), np.array([[0.0, 1.0]]), np.ones((1, 2)), m)
    with pytest.raises(ValueError):
        QuantMaps(np.ones((2, 2)), np.ones((1, 2)), np.ones((1, 2)), m)


def test_kspace_set_requires_zero_off_mask():
    masks = np.zeros((1, 1, 2, 2), dtype=bool)
    masks[0, 0, 0, 0] = True
    y = np.zeros((1, 1, 2, 2), complex)
    y[0, 0, 0, 0] = 1
    assert KSpaceSet(y, masks).shape == (2, 2)
    y[0, 0, 1, 1] = 1
    with pytest.raises(ValueError):
        KSpaceSet(y, masks)


def test_echo_stack_shape():
    s = EchoStack(np.zeros((3, 4, 8, 8), complex))
    assert (s.I, s.J, s.shape) == (3, 4, (8, 8))
