import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays


@settings(max_examples=30, deadline=None)
@given(
    arrays(
        np.float64,
        array_shapes(min_dims=0, max_dims=4, max_side=4),
        elements=st.floats(allow_nan=False, allow_infinity=False, width=64),
    )
)
def test_write_then_read_is_bit_exact(tmp_path_factory, tensor):
    from scwm_reid.core.clients.tensor_io import tensor_read, tensor_write

    path = tmp_path_factory.mktemp("tensors") / "t.scwm"
    tensor_write(path, tensor)
    restored = tensor_read(path)
    assert restored.shape == tensor.shape
    assert restored.tobytes() == tensor.tobytes()


def test_header_layout(tmp_path):
    from scwm_reid.core.clients.tensor_io import FORMAT_VERSION, MAGIC, tensor_write

    path = tmp_path / "t.scwm"
    tensor_write(path, np.arange(6, dtype=np.float64).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<IIQQ", raw, 4) == (FORMAT_VERSION, 2, 2, 3)
    assert len(raw) == 4 + 4 + 4 + 2 * 8 + 6 * 8
    assert struct.unpack_from("<d", raw, len(raw) - 8)[0] == 5.0


def _valid_bytes():
    return b"SCWM" + struct.pack("<II", 1, 1) + struct.pack("<Q", 2) + struct.pack("<2d", 1, 2)


@pytest.mark.parametrize(
    "raw, error, code",
    [
        pytest.param(b"NOPE" + _valid_bytes()[4:], "TensorMagicError", 2, id="bad_magic"),
        pytest.param(
            b"SCWM" + struct.pack("<II", 2, 1) + _valid_bytes()[12:],
            "TensorVersionError",
            3,
            id="bad_version",
        ),
        pytest.param(
            b"SCWM" + struct.pack("<II", 1, 5) + b"\x00" * 48,
            "TensorRankError",
            4,
            id="rank_too_high",
        ),
        pytest.param(_valid_bytes()[:-4], "TensorTruncatedError", 5, id="short_payload"),
        pytest.param(_valid_bytes()[:8], "TensorTruncatedError", 5, id="short_header"),
        pytest.param(b"SC", "TensorMagicError", 2, id="shorter_than_magic"),
        pytest.param(
            _valid_bytes() + b"\x00" * 8, "TensorTrailingBytesError", 7, id="trailing_bytes"
        ),
    ],
)
def test_read_errors(tmp_path, raw, error, code):
    from scwm_reid.core import exceptions
    from scwm_reid.core.clients.tensor_io import tensor_read

    path = tmp_path / "broken.scwm"
    path.write_bytes(raw)
    with pytest.raises(getattr(exceptions, error)) as excinfo:
        tensor_read(path)
    assert excinfo.value.error_code == code
    assert isinstance(excinfo.value, exceptions.TensorFormatError)


@pytest.mark.parametrize(
    "tensor, error",
    [
        pytest.param(np.array([1.0, np.inf]), "NonFiniteTensorError", id="non_finite"),
        pytest.param(np.zeros((1, 1, 1, 1, 1)), "TensorRankError", id="rank_5"),
    ],
)
def test_write_errors(tmp_path, tensor, error):
    from scwm_reid.core import exceptions
    from scwm_reid.core.clients.tensor_io import tensor_write

    with pytest.raises(getattr(exceptions, error)):
        tensor_write(tmp_path / "t.scwm", tensor)
    assert not (tmp_path / "t.scwm").exists()


def test_read_missing_file(tmp_path):
    from scwm_reid.core.clients.tensor_io import tensor_read

    with pytest.raises(FileNotFoundError):
        tensor_read(tmp_path / "missing.scwm")


def test_error_codes_are_distinct():
    from scwm_reid.core import exceptions

    codes = [
        cls.error_code
        for cls in (
            exceptions.TensorFormatError,
            exceptions.TensorMagicError,
            exceptions.TensorVersionError,
            exceptions.TensorRankError,
            exceptions.TensorTruncatedError,
            exceptions.NonFiniteTensorError,
            exceptions.TensorTrailingBytesError,
        )
    ]
    assert len(set(codes)) == len(codes)
