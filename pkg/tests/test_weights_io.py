import json

import numpy as np
import pytest

from litepath.config.constants import Constants
from litepath.data.weights_io import load_weights, save_weights
from litepath.utils.utils import WeightsFormatError


def test_round_trip_preserves_order_dtype_and_config(tmp_path):
    tensors = {
        "b": np.arange(6, dtype=np.float64).reshape(2, 3),
        "a": np.linspace(0, 1, 4).astype(np.float32),
        "counts": np.array([3, 1, 2], dtype=np.int64),
        "mask": np.array([True, False]),
        "scalar": np.array(2.5),
    }
    config = {"encoder": {"depth": 3}, "name": "tiny"}
    path = save_weights(str(tmp_path / "w.lpw"), tensors, config)

    loaded, loaded_config = load_weights(path)
    assert list(loaded) == list(tensors)
    assert loaded_config == config
    for name, array in tensors.items():
        assert loaded[name].dtype == array.dtype
        assert loaded[name].shape == array.shape
        np.testing.assert_array_equal(loaded[name], array)


def test_big_endian_input_is_stored_little_endian(tmp_path):
    array = np.arange(4, dtype=">f8")
    path = save_weights(str(tmp_path / "be.lpw"), {"x": array}, {})
    loaded, _ = load_weights(path)
    assert loaded["x"].dtype.str == "<f8"
    np.testing.assert_array_equal(loaded["x"], [0.0, 1.0, 2.0, 3.0])


def test_loaded_arrays_are_writable(tmp_path):
    path = save_weights(str(tmp_path / "w.lpw"), {"x": np.zeros(3)}, {})
    loaded, _ = load_weights(path)
    loaded["x"][0] = 1.0
    assert loaded["x"][0] == 1.0


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.lpw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(WeightsFormatError):
        load_weights(str(path))
    short = tmp_path / "short.lpw"
    short.write_bytes(b"LP")
    with pytest.raises(WeightsFormatError):
        load_weights(str(short))


def test_truncated_payload_rejected(tmp_path):
    path = save_weights(str(tmp_path / "w.lpw"), {"x": np.ones((4, 4))}, {"k": 1})
    blob = (tmp_path / "w.lpw").read_bytes()
    (tmp_path / "w.lpw").write_bytes(blob[:-8])
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_corrupt_header_rejected(tmp_path):
    path = save_weights(str(tmp_path / "w.lpw"), {"x": np.ones(2)}, {})
    blob = bytearray((tmp_path / "w.lpw").read_bytes())
    blob[8] = 0xFF
    (tmp_path / "w.lpw").write_bytes(bytes(blob))
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(WeightsFormatError):
        save_weights(str(tmp_path / "c.lpw"), {"z": np.ones(2, dtype=np.complex128)}, {})


def write_raw(path, header, payload):
    encoded = json.dumps(header).encode("utf-8")
    path.write_bytes(Constants.WEIGHTS_MAGIC + np.array([len(encoded)], dtype="<u4").tobytes() + encoded + payload)
    return str(path)


@pytest.mark.parametrize("entry", [
    {"name": "x", "dtype": "<f8", "shape": [3, 3], "offset": 0, "nbytes": 16},
    {"name": "x", "dtype": "<f8", "shape": [2], "offset": 0, "nbytes": 12},
    {"name": "x", "dtype": "<f8", "shape": "two", "offset": 0, "nbytes": 16},
    {"name": "x", "dtype": "<f8", "offset": 0, "nbytes": 16},
])
def test_inconsistent_tensor_entry_rejected(tmp_path, entry):
    path = write_raw(tmp_path / "odd.lpw", {"config": {}, "tensors": [entry]}, np.ones(2).tobytes())
    with pytest.raises(WeightsFormatError):
        load_weights(path)
