"""
Dense tensor helpers shared by every other module.

Tensors are plain row-major (C order) numpy arrays; features are always laid
out as ``[batch, time, channels]``. This module holds the handful of
elementwise and matrix primitives the layers need, the seeded random
generator used by all initializers, and the DYT1 binary container used by the
command line tools.
"""

import io
import math
import struct
from typing import BinaryIO, NamedTuple, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, TensorFormatError

Tensor = np.ndarray
Shape = Tuple[int, ...]

DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

MAGIC = b"DYT1"
_HEADER = struct.Struct("<4sBB")
_EXTENT = struct.Struct("<Q")

LAYER_NORM_EPS = 1e-5

MAX_SEED = 2 ** 64 - 1


class Rng(object):
    """Seeded pseudorandom source.

    Draws come from numpy's PCG64 bit generator; normal draws use numpy's
    ziggurat sampler and uniform draws its 53-bit double construction, so an
    identical seed gives a bit-identical sequence on every platform numpy
    supports.
    """
    algorithm = "PCG64"

    def __init__(self, seed: int):
        if seed < 0 or seed > MAX_SEED:
            raise ValueError("Seed must be a 64-bit unsigned integer, got {}".format(seed))
        self.seed = seed
        self._generator = np.random.Generator(np.random.PCG64(seed))

    def normal(self, shape: Sequence[int], std: float = 1.0, dtype=np.float64) -> Tensor:
        return (self._generator.standard_normal(tuple(shape)) * std).astype(dtype)

    def uniform(self, shape: Sequence[int], low: float = 0.0, high: float = 1.0, dtype=np.float64) -> Tensor:
        return self._generator.uniform(low, high, tuple(shape)).astype(dtype)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)``."""
        return int(self._generator.integers(low, high))

    def __repr__(self):
        return '<{0.__class__.__name__}: seed={0.seed}>'.format(self)


def check_shape(x: Tensor, rank: int, name: str = "input") -> None:
    if x.ndim != rank:
        raise DimensionError("{} must have rank {}, got shape {}".format(name, rank, list(x.shape)))
    if any(extent < 1 for extent in x.shape):
        raise DimensionError("{} has an empty extent: {}".format(name, list(x.shape)))


def flatten_index(index: Sequence[int], shape: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def unflatten_index(flat: int, shape: Sequence[int]) -> Tuple[int, ...]:
    return tuple(int(i) for i in np.unravel_index(flat, tuple(shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("Cannot multiply shapes {} and {}".format(list(a.shape), list(b.shape)))
    return a @ b


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Apply ``x·W + b`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError("Cannot apply weight {} to input {}".format(list(weight.shape), list(x.shape)))
    return x @ weight + bias


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glu(x: Tensor) -> Tensor:
    """Gated linear unit: first half gated by the sigmoid of the second half."""
    if x.shape[-1] % 2:
        raise DimensionError("GLU needs an even last extent, got shape {}".format(list(x.shape)))
    m = x.shape[-1] // 2
    return x[..., :m] * sigmoid(x[..., m:])


def glu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    m = x.shape[-1] // 2
    a, gate = x[..., :m], sigmoid(x[..., m:])
    return np.concatenate([grad_out * gate, grad_out * a * gate * (1.0 - gate)], axis=-1)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(x: Tensor, grad_out: Tensor, slope: float) -> Tensor:
    return np.where(x >= 0, grad_out, slope * grad_out)


class LayerNormCache(NamedTuple):
    normalized: Tensor
    inv_std: Tensor
    gain: Tensor


def layer_norm_forward(x: Tensor, gain: Tensor, bias: Tensor,
                       eps: float = LAYER_NORM_EPS) -> Tuple[Tensor, LayerNormCache]:
    if eps <= 0:
        raise ValueError("eps must be positive, got {}".format(eps))
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError("Layer norm parameters {} / {} do not match input {}".format(
            list(gain.shape), list(bias.shape), list(x.shape)))
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    return normalized * gain + bias, LayerNormCache(normalized, inv_std, gain)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_backward(cache: LayerNormCache, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Return gradients w.r.t. input, gain and bias."""
    axes = tuple(range(grad_out.ndim - 1))
    grad_gain = (grad_out * cache.normalized).sum(axis=axes)
    grad_bias = grad_out.sum(axis=axes)
    g = grad_out * cache.gain
    grad_x = cache.inv_std * (
        g - g.mean(axis=-1, keepdims=True)
        - cache.normalized * (g * cache.normalized).mean(axis=-1, keepdims=True)
    )
    return grad_x, grad_gain, grad_bias


# DYT1 container: "DYT1", u8 dtype tag, u8 rank, rank x u64 extents, payload.
# Everything little-endian.

def encode_tensor(x: Tensor) -> bytes:
    buffer = io.BytesIO()
    write_tensor(buffer, x)
    return buffer.getvalue()


def write_tensor(stream: BinaryIO, x: Tensor) -> int:
    try:
        tag = DTYPE_TAGS[np.dtype(x.dtype)]
    except KeyError:
        raise TensorFormatError("DYT1 stores float32 or float64, not {}".format(x.dtype))
    if x.ndim > 255:
        raise TensorFormatError("Rank {} does not fit in a DYT1 header".format(x.ndim))
    if 0 in x.shape:
        raise TensorFormatError("Tensor extents must be at least 1, got {}".format(list(x.shape)))
    header = _HEADER.pack(MAGIC, tag, x.ndim) + b"".join(_EXTENT.pack(n) for n in x.shape)
    payload = np.ascontiguousarray(x, dtype=DTYPES[tag]).tobytes()
    stream.write(header)
    stream.write(payload)
    return len(header) + len(payload)


def decode_tensor(data: Union[bytes, memoryview], offset: int = 0) -> Tuple[Tensor, int]:
    """Decode one DYT1 block starting at ``offset``; return it and the offset past its end."""
    if len(data) - offset < _HEADER.size:
        raise TensorFormatError("Truncated DYT1 header at offset {}".format(offset))
    magic, tag, rank = _HEADER.unpack_from(data, offset)
    if magic != MAGIC:
        raise TensorFormatError("Bad magic {!r} at offset {}".format(magic, offset))
    if tag not in DTYPES:
        raise TensorFormatError("Unknown dtype tag {}".format(tag))
    offset += _HEADER.size
    if len(data) - offset < rank * _EXTENT.size:
        raise TensorFormatError("Truncated DYT1 extents")
    shape = tuple(_EXTENT.unpack_from(data, offset + i * _EXTENT.size)[0] for i in range(rank))
    offset += rank * _EXTENT.size
    if 0 in shape:
        raise TensorFormatError("Tensor extents must be at least 1, got {}".format(list(shape)))
    dtype = DTYPES[tag]
    count = math.prod(shape)
    end = offset + count * dtype.itemsize
    if end > len(data):
        raise TensorFormatError("Truncated DYT1 payload: need {} bytes, have {}".format(
            end - offset, len(data) - offset))
    x = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
    return x.astype(dtype.newbyteorder("="), copy=True), end


def save_tensor(path: str, x: Tensor) -> None:
    with open(path, "wb") as f:
        write_tensor(f, x)


def load_tensor(path: str) -> Tensor:
    with open(path, "rb") as f:
        data = f.read()
    x, end = decode_tensor(data)
    if end != len(data):
        raise TensorFormatError("{} has {} trailing bytes".format(path, len(data) - end))
    return x
