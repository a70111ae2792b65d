"""Reads and writes tensors in the `SCWM` binary format.

Layout: magic b"SCWM", u32 format version (1), u32 rank, rank x u64 extents, then the
row-major payload as 64-bit little-endian floats. Everything is little-endian, nothing is
compressed, and a write followed by a read gives back the same bits.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np

from scwm_reid.core.exceptions import (
    NonFiniteTensorError,
    TensorMagicError,
    TensorRankError,
    TensorTrailingBytesError,
    TensorTruncatedError,
    TensorVersionError,
)
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.numerics import MAX_TENSOR_RANK

MAGIC = b"SCWM"
FORMAT_VERSION = 1
TENSOR_SUFFIX = ".scwm"
_HEADER = struct.Struct("<4sII")
_EXTENT = struct.Struct("<Q")
_PAYLOAD_DTYPE = np.dtype("<f8")


def tensor_write(path: Union[str, Path], tensor: np.ndarray) -> None:
    """Writes `tensor` to `path`, creating parent folders if needed.

    Args:
        path (Union[str, Path]): destination file.
        tensor (np.ndarray): array with at most 4 dims and finite entries.
    """
    array = np.asarray(tensor, dtype=np.float64)
    if array.ndim > MAX_TENSOR_RANK:
        raise TensorRankError(
            f"The tensor format supports up to {MAX_TENSOR_RANK} dims, got {array.ndim}."
        )
    if not np.all(np.isfinite(array)):
        raise NonFiniteTensorError(f"Refusing to write non-finite values to {path}.")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, array.ndim)
    extents = b"".join(_EXTENT.pack(extent) for extent in array.shape)
    payload = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE).tobytes(order="C")
    with open(path, "wb") as stream:
        stream.write(header + extents + payload)
    logger.debug(f"Wrote tensor {array.shape} to {path}")


def tensor_read(path: Union[str, Path]) -> np.ndarray:
    """Reads a tensor written by `tensor_write`.

    Raises:
        TensorMagicError: the file does not start with b"SCWM".
        TensorVersionError: unknown format version.
        TensorRankError: the header announces more than 4 dims.
        TensorTruncatedError: the header or the payload is cut short.
        TensorTrailingBytesError: bytes left over after the payload.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"File {path.resolve()} was not found.")
    raw = path.read_bytes()

    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise TensorMagicError(f"{path} is not a tensor file (bad magic bytes).")
    if len(raw) < _HEADER.size:
        raise TensorTruncatedError(f"{path} ends inside its header.")
    _, version, rank = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise TensorVersionError(
            f"{path} uses format version {version}, expected {FORMAT_VERSION}."
        )
    if rank > MAX_TENSOR_RANK:
        raise TensorRankError(f"{path} announces rank {rank}, at most {MAX_TENSOR_RANK} allowed.")

    offset = _HEADER.size
    if len(raw) < offset + rank * _EXTENT.size:
        raise TensorTruncatedError(f"{path} ends inside its extents.")
    shape = tuple(_EXTENT.unpack_from(raw, offset + i * _EXTENT.size)[0] for i in range(rank))
    offset += rank * _EXTENT.size

    expected_bytes = int(np.prod(shape, dtype=np.int64)) * _PAYLOAD_DTYPE.itemsize
    payload = raw[offset:]
    if len(payload) < expected_bytes:
        raise TensorTruncatedError(
            f"{path} holds {len(payload)} payload bytes, {expected_bytes} expected."
        )
    if len(payload) > expected_bytes:
        raise TensorTrailingBytesError(
            f"{path} holds {len(payload)} payload bytes, only {expected_bytes} expected."
        )
    return np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(shape).copy()
