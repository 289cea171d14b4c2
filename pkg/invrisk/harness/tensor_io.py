"""
IVT1 tensor files: magic "IVT1", little-endian u32 ndim, ndim x u64 dims,
then row-major little-endian float64 values
"""
import logging
import struct
from pathlib import Path

import numpy as np

from invrisk.errors import BadMagicError, DimensionOverflowError, TruncatedPayloadError
from invrisk.model.tensor_model import Tensor

log = logging.getLogger("invrisk")

MAGIC = b"IVT1"
# values are addressed with signed 64-bit byte offsets
MAX_ELEMENTS = (2 ** 63 - 1) // 8


def write_tensor(path: str | Path, tensor: Tensor):
    header = MAGIC + struct.pack("<I", tensor.ndim) + struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
    Path(path).write_bytes(header + tensor.data.astype('<f8').tobytes())
    log.debug("wrote tensor %s to %s", tensor.shape, path)


def read_tensor(path: str | Path) -> Tensor:
    """
    Reads an IVT1 file

    :raises BadMagicError, TruncatedPayloadError, DimensionOverflowError:
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedPayloadError(f"{path}: missing magic", len(raw))
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}", 0)
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: missing dimension count", len(raw))
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims_end = 8 + 8 * ndim
    if len(raw) < dims_end:
        raise TruncatedPayloadError(f"{path}: {ndim} dimensions announced", len(raw))
    shape = list(struct.unpack_from(f"<{ndim}Q", raw, 8))
    count = 1
    for idx, dim in enumerate(shape):
        count *= dim
        if dim == 0 or count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"{path}: invalid dimension {dim}", 8 + 8 * idx)
    expected = dims_end + 8 * count
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: payload of {count} values cut short", len(raw))
    data = np.frombuffer(raw, dtype='<f8', count=count, offset=dims_end).astype(np.float64)
    return Tensor(shape, data)


def io_tensor(path: str | Path, mode: str, tensor: Tensor | None = None) -> Tensor:
    """
    Reads or writes a tensor file

    :param path:
    :param mode: read or write
    :param tensor: the tensor to write
    :return: the tensor read or written
    """
    match mode:
        case "read":
            return read_tensor(path)
        case "write":
            if tensor is None:
                raise ValueError("nothing to write")
            write_tensor(path, tensor)
            return tensor
        case _:
            raise ValueError(f"invalid mode {mode}")

