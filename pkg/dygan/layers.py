"""
Layer primitives with hand-written backward passes.

Every layer keeps its trainable tensors in an ordered ``params`` mapping and
exposes ``forward(...) -> (output, cache)`` and ``backward(cache, grad_out)``.
Backward returns the gradient w.r.t. the layer input(s) followed by a mapping
of parameter gradients keyed like ``params``.

Sequence features are ``[batch, time, channels]``; 2d features (discriminator)
are ``[batch, height, width, channels]``. All convolutions are
cross-correlations (no kernel flip) with zero padding.
"""

import math
from collections import OrderedDict
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractViolationError, DimensionError
from .tensor import (
    LAYER_NORM_EPS, LayerNormCache, Rng, Tensor, check_shape, glu, glu_backward, layer_norm_forward,
    layer_norm_backward, linear,
)

ADAIN_EPS = 1e-5

Grads = Dict[str, Tensor]


def attention_param_count(c: int) -> int:
    """Parameters of the four ``c x c`` projections of a self-attention block."""
    return 4 * c * c


def init_weight(rng: Rng, shape, fan_in: int, dtype=np.float64) -> Tensor:
    return rng.normal(shape, std=1.0 / math.sqrt(fan_in), dtype=dtype)


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


class Layer(object):
    kind = "layer"

    def __init__(self):
        self.params: Dict[str, Tensor] = OrderedDict()

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def expected_param_count(self) -> int:
        """Closed-form parameter count for this layer's hyperparameters."""
        raise NotImplementedError

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def backward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def astype(self, dtype) -> "Layer":
        for name, value in self.params.items():
            self.params[name] = value.astype(dtype)
        return self

    def _check_cache(self, cache, grad_out: Tensor) -> None:
        if getattr(cache, "layer_id", None) != id(self):
            raise ContractViolationError("{} received a cache it did not produce".format(self.kind))
        if grad_out.shape != cache.out_shape:
            raise ContractViolationError("{} upstream gradient has shape {}, forward output was {}".format(
                self.kind, list(grad_out.shape), list(cache.out_shape)))

    def __repr__(self):
        return '<{0.__class__.__name__}: params={1}>'.format(
            self, {name: list(value.shape) for name, value in self.params.items()})


def _heads(c: int, h: int) -> int:
    if h < 1 or c % h:
        raise ConfigurationError("head count h={} must divide channel count c={}".format(h, c))
    return c // h


def _time_windows(x: Tensor, k: int) -> Tensor:
    """``[b, t, c] -> [b, t, c, k]`` windows; window ``q`` reads ``x[j + q - (k - 1) // 2]``."""
    left = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (left, k - 1 - left), (0, 0)))
    return sliding_window_view(padded, k, axis=1)


def _fold_time_windows(grad_windows: Tensor) -> Tensor:
    b, t, c, k = grad_windows.shape
    left = (k - 1) // 2
    padded = np.zeros((b, t + k - 1, c), dtype=grad_windows.dtype)
    for q in range(k):
        padded[:, q:q + t, :] += grad_windows[..., q]
    return padded[:, left:left + t, :]


def _im2col_1d(x: Tensor, k: int) -> Tensor:
    b, t, c = x.shape
    windows = _time_windows(x, k).transpose(0, 1, 3, 2)
    return np.ascontiguousarray(windows).reshape(b, t, k * c)


def _col2im_1d(grad_cols: Tensor, k: int) -> Tensor:
    b, t, n = grad_cols.shape
    return _fold_time_windows(grad_cols.reshape(b, t, k, n // k).transpose(0, 1, 3, 2))


def _conv1d_cols(cols: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    # weights are [k*c_in, c_out] (shared) or [b, k*c_in, c_out] (per sample);
    # both go through the same per-sample product so results agree bit-for-bit.
    b, t, _ = cols.shape
    out = np.empty((b, t, weights.shape[-1]), dtype=np.result_type(cols, weights))
    for i in range(b):
        w = weights if weights.ndim == 2 else weights[i]
        out[i] = cols[i] @ w + bias
    return out


class LayerNorm(Layer):
    kind = "layer_norm"

    def __init__(self, c: int, eps: float = LAYER_NORM_EPS, dtype=np.float64):
        super().__init__()
        self.c = c
        self.eps = eps
        self.params["gain"] = np.ones(c, dtype=dtype)
        self.params["bias"] = np.zeros(c, dtype=dtype)

    def expected_param_count(self):
        return 2 * self.c

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        norm: LayerNormCache

    def forward(self, x: Tensor):
        out, norm = layer_norm_forward(x, self.params["gain"], self.params["bias"], self.eps)
        return out, self.Cache(id(self), out.shape, norm)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        grad_x, grad_gain, grad_bias = layer_norm_backward(cache.norm, grad_out)
        return grad_x, OrderedDict([("gain", grad_gain), ("bias", grad_bias)])


class LconvLayer(Layer):
    """Lightweight convolution: depthwise kernels shared by contiguous channel groups (heads)."""
    kind = "lconv"

    def __init__(self, k: int, h: int, dtype=np.float64):
        super().__init__()
        if k < 1 or k % 2 == 0:
            raise ConfigurationError("kernel width k must be odd, got {}".format(k))
        if h < 1:
            raise ConfigurationError("head count h must be positive, got {}".format(h))
        self.k = k
        self.h = h
        kernel = np.zeros((k, h), dtype=dtype)
        kernel[k // 2, :] = 1.0
        self.params["kernel"] = kernel

    def expected_param_count(self):
        return self.k * self.h

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        windows: Tensor
        channel_kernel: Tensor

    def forward(self, x: Tensor):
        check_shape(x, 3)
        group = _heads(x.shape[2], self.h)
        channel_kernel = np.repeat(self.params["kernel"].T, group, axis=0)  # [c, k]
        windows = _time_windows(x, self.k)
        out = np.einsum("btck,ck->btc", windows, channel_kernel)
        return out, self.Cache(id(self), out.shape, windows, channel_kernel)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        grad_x = _fold_time_windows(grad_out[..., None] * cache.channel_kernel)
        grad_channel = np.einsum("btc,btck->ck", grad_out, cache.windows)
        c = grad_channel.shape[0]
        grad_kernel = grad_channel.reshape(self.h, c // self.h, self.k).sum(axis=1).T
        return grad_x, OrderedDict([("kernel", grad_kernel)])


class DynConvLayer(Layer):
    """Dynamic convolution: per-position kernels generated from the input.

    ``X' = GLU(x W1 + b1)`` and ``K' = X' W2 + b2``; the ``k*h`` generated
    values of a position are laid out tap-major (index ``q*h + head``).
    """
    kind = "dynconv"

    def __init__(self, c: int, k: int, h: int, rng: Rng, softmax_kernel: bool = False, dtype=np.float64):
        super().__init__()
        if k < 1 or k % 2 == 0:
            raise ConfigurationError("kernel width k must be odd, got {}".format(k))
        _heads(c, h)
        self.c, self.k, self.h = c, k, h
        self.softmax_kernel = softmax_kernel
        self.params["w1"] = init_weight(rng, (c, 2 * c), c, dtype)
        self.params["b1"] = np.zeros(2 * c, dtype=dtype)
        self.params["w2"] = init_weight(rng, (c, k * h), c, dtype)
        b2 = np.zeros((k, h), dtype=dtype)
        b2[k // 2, :] = 1.0
        self.params["b2"] = b2.reshape(k * h)

    def expected_param_count(self):
        c, k, h = self.c, self.k, self.h
        return c * 2 * c + 2 * c + c * k * h + k * h

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        x: Tensor
        hidden: Tensor
        gated: Tensor
        kernel: Tensor
        windows: Tensor

    def generate_kernel(self, x: Tensor) -> Tensor:
        """The ``[b, t, k, h]`` kernel the layer would apply to ``x``."""
        return self._kernel(x)[2]

    def _kernel(self, x: Tensor):
        b, t, _ = x.shape
        hidden = linear(x, self.params["w1"], self.params["b1"])
        gated = glu(hidden)
        kernel = linear(gated, self.params["w2"], self.params["b2"]).reshape(b, t, self.k, self.h)
        if self.softmax_kernel:
            kernel = softmax(kernel, axis=2)
        return hidden, gated, kernel

    def forward(self, x: Tensor):
        check_shape(x, 3)
        if x.shape[2] != self.c:
            raise DimensionError("dynconv expects {} channels, got shape {}".format(self.c, list(x.shape)))
        group = self.c // self.h
        hidden, gated, kernel = self._kernel(x)
        windows = _time_windows(x, self.k)
        out = np.einsum("btck,btkc->btc", windows, np.repeat(kernel, group, axis=3))
        return out, self.Cache(id(self), out.shape, x, hidden, gated, kernel, windows)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        b, t, c = grad_out.shape
        k, h = self.k, self.h
        group = c // h
        expanded = np.repeat(cache.kernel, group, axis=3)
        grad_x = _fold_time_windows(np.einsum("btc,btkc->btck", grad_out, expanded))
        grad_kernel = np.einsum("btc,btck->btkc", grad_out, cache.windows).reshape(b, t, k, h, group).sum(axis=4)
        if self.softmax_kernel:
            grad_kernel = cache.kernel * (grad_kernel - (grad_kernel * cache.kernel).sum(axis=2, keepdims=True))
        grad_logits = grad_kernel.reshape(b, t, k * h)

        grad_gated = grad_logits @ self.params["w2"].T
        grad_hidden = glu_backward(cache.hidden, grad_gated)
        grad_x = grad_x + grad_hidden @ self.params["w1"].T

        return grad_x, OrderedDict([
            ("w1", np.einsum("btc,btn->cn", cache.x, grad_hidden)),
            ("b1", grad_hidden.sum(axis=(0, 1))),
            ("w2", np.einsum("btc,btn->cn", cache.gated, grad_logits)),
            ("b2", grad_logits.sum(axis=(0, 1))),
        ])


class AdaIN(Layer):
    """Adaptive instance normalization over time with speaker-projected affine parameters."""
    kind = "adain"

    def __init__(self, c: int, spk_dim: int, rng: Rng, eps: float = ADAIN_EPS, dtype=np.float64):
        super().__init__()
        self.c, self.spk_dim, self.eps = c, spk_dim, eps
        self.params["w_gamma"] = init_weight(rng, (spk_dim, c), spk_dim, dtype)
        self.params["b_gamma"] = np.ones(c, dtype=dtype)
        self.params["w_beta"] = init_weight(rng, (spk_dim, c), spk_dim, dtype)
        self.params["b_beta"] = np.zeros(c, dtype=dtype)

    def expected_param_count(self):
        return 2 * (self.spk_dim * self.c + self.c)

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        s: Tensor
        normalized: Tensor
        inv_std: Tensor
        gamma: Tensor

    def forward(self, x: Tensor, s: Tensor):
        check_shape(x, 3)
        check_shape(s, 2, "speaker embedding")
        if x.shape[2] != self.c or s.shape != (x.shape[0], self.spk_dim):
            raise DimensionError("AdaIN expects [b, t, {}] and [b, {}], got {} and {}".format(
                self.c, self.spk_dim, list(x.shape), list(s.shape)))
        gamma = linear(s, self.params["w_gamma"], self.params["b_gamma"])
        beta = linear(s, self.params["w_beta"], self.params["b_beta"])
        centered = x - x.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + self.eps)
        normalized = centered * inv_std
        out = gamma[:, None, :] * normalized + beta[:, None, :]
        return out, self.Cache(id(self), out.shape, s, normalized, inv_std, gamma)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Tensor, Grads]:
        self._check_cache(cache, grad_out)
        grad_gamma = (grad_out * cache.normalized).sum(axis=1)
        grad_beta = grad_out.sum(axis=1)
        grad_s = grad_gamma @ self.params["w_gamma"].T + grad_beta @ self.params["w_beta"].T

        g = grad_out * cache.gamma[:, None, :]
        grad_x = cache.inv_std * (
            g - g.mean(axis=1, keepdims=True)
            - cache.normalized * (g * cache.normalized).mean(axis=1, keepdims=True)
        )
        return grad_x, grad_s, OrderedDict([
            ("w_gamma", cache.s.T @ grad_gamma),
            ("b_gamma", grad_gamma.sum(axis=0)),
            ("w_beta", cache.s.T @ grad_beta),
            ("b_beta", grad_beta.sum(axis=0)),
        ])


class Conv1d(Layer):
    """Stride-1 "same" 1d convolution with kernel ``[k_w, c_in, c_out]``."""
    kind = "conv1d"

    def __init__(self, c_in: int, c_out: int, k_w: int, rng: Rng, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.c_in, self.c_out, self.k_w = c_in, c_out, k_w
        self.has_bias = bias
        self.params["weight"] = init_weight(rng, (k_w, c_in, c_out), k_w * c_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def expected_param_count(self):
        return self.k_w * self.c_in * self.c_out + (self.c_out if self.has_bias else 0)

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        cols: Tensor

    def _bias(self, dtype):
        return self.params["bias"] if self.has_bias else np.zeros(self.c_out, dtype=dtype)

    def forward(self, x: Tensor):
        check_shape(x, 3)
        if x.shape[2] != self.c_in:
            raise DimensionError("conv1d expects {} input channels, got shape {}".format(self.c_in, list(x.shape)))
        cols = _im2col_1d(x, self.k_w)
        weight = self.params["weight"].reshape(self.k_w * self.c_in, self.c_out)
        out = _conv1d_cols(cols, weight, self._bias(x.dtype))
        return out, self.Cache(id(self), out.shape, cols)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        weight = self.params["weight"].reshape(self.k_w * self.c_in, self.c_out)
        grads = OrderedDict([
            ("weight", np.einsum("btn,bto->no", cache.cols, grad_out).reshape(self.params["weight"].shape)),
        ])
        if self.has_bias:
            grads["bias"] = grad_out.sum(axis=(0, 1))
        return _col2im_1d(grad_out @ weight.T, self.k_w), grads


class WadaINConv(Layer):
    """1d convolution whose kernel input channels are scaled per sample by a speaker-derived gamma."""
    kind = "wadain"

    def __init__(self, c_in: int, c_out: int, k_w: int, spk_dim: int, rng: Rng, dtype=np.float64):
        super().__init__()
        self.c_in, self.c_out, self.k_w, self.spk_dim = c_in, c_out, k_w, spk_dim
        self.params["weight"] = init_weight(rng, (k_w, c_in, c_out), k_w * c_in, dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.params["w_gamma"] = init_weight(rng, (spk_dim, c_in), spk_dim, dtype)
        self.params["b_gamma"] = np.ones(c_in, dtype=dtype)

    def expected_param_count(self):
        return self.k_w * self.c_in * self.c_out + self.c_out + self.spk_dim * self.c_in + self.c_in

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        s: Tensor
        cols: Tensor
        gamma: Tensor
        adapted: Tensor

    def gamma(self, s: Tensor) -> Tensor:
        return linear(s, self.params["w_gamma"], self.params["b_gamma"])

    def adapted_weight(self, s: Tensor) -> Tensor:
        """Per-sample kernels ``W'[i] = gamma[i] * W`` over the input-channel axis, ``[b, k_w, c_in, c_out]``."""
        return self.gamma(s)[:, None, :, None] * self.params["weight"][None]

    def forward(self, x: Tensor, s: Tensor):
        check_shape(x, 3)
        check_shape(s, 2, "speaker embedding")
        if x.shape[2] != self.c_in or s.shape != (x.shape[0], self.spk_dim):
            raise DimensionError("WadaIN conv expects [b, t, {}] and [b, {}], got {} and {}".format(
                self.c_in, self.spk_dim, list(x.shape), list(s.shape)))
        gamma = self.gamma(s)
        adapted = (gamma[:, None, :, None] * self.params["weight"][None]).reshape(
            x.shape[0], self.k_w * self.c_in, self.c_out)
        cols = _im2col_1d(x, self.k_w)
        out = _conv1d_cols(cols, adapted, self.params["bias"])
        return out, self.Cache(id(self), out.shape, s, cols, gamma, adapted)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Tensor, Grads]:
        self._check_cache(cache, grad_out)
        b = grad_out.shape[0]
        weight = self.params["weight"]
        grad_adapted = np.einsum("btn,bto->bno", cache.cols, grad_out).reshape((b,) + weight.shape)
        grad_gamma = (grad_adapted * weight[None]).sum(axis=(1, 3))
        grad_x = _col2im_1d(np.einsum("bto,bno->btn", grad_out, cache.adapted), self.k_w)
        grad_s = grad_gamma @ self.params["w_gamma"].T
        return grad_x, grad_s, OrderedDict([
            ("weight", (grad_adapted * cache.gamma[:, None, :, None]).sum(axis=0)),
            ("bias", grad_out.sum(axis=(0, 1))),
            ("w_gamma", cache.s.T @ grad_gamma),
            ("b_gamma", grad_gamma.sum(axis=0)),
        ])


def _pair(value: Union[int, Tuple[int, int]]) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    return tuple(value)  # type: ignore


class Conv2d(Layer):
    """2d convolution over ``[b, H, W, c]`` with kernel ``[k_h, k_w, c_in, c_out]``.

    Padding is ``(k - 1) // 2`` before and ``k // 2`` after each spatial axis,
    so the output extent is ``ceil(H / stride)``.
    """
    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, kernel, rng: Rng, stride: int = 1, bias: bool = True,
                 dtype=np.float64):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.k_h, self.k_w = _pair(kernel)
        self.stride = stride
        self.has_bias = bias
        self.params["weight"] = init_weight(
            rng, (self.k_h, self.k_w, c_in, c_out), self.k_h * self.k_w * c_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def expected_param_count(self):
        return self.k_h * self.k_w * self.c_in * self.c_out + (self.c_out if self.has_bias else 0)

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        in_shape: Tuple[int, ...]
        cols: Tensor

    def _padding(self):
        return (self.k_h - 1) // 2, (self.k_w - 1) // 2

    def forward(self, x: Tensor):
        check_shape(x, 4)
        if x.shape[3] != self.c_in:
            raise DimensionError("conv2d expects {} input channels, got shape {}".format(self.c_in, list(x.shape)))
        b, height, width, c = x.shape
        top, left = self._padding()
        s = self.stride
        padded = np.pad(x, ((0, 0), (top, self.k_h - 1 - top), (left, self.k_w - 1 - left), (0, 0)))
        windows = sliding_window_view(padded, (self.k_h, self.k_w), axis=(1, 2))[:, ::s, ::s]
        out_h, out_w = windows.shape[1], windows.shape[2]
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(
            b * out_h * out_w, self.k_h * self.k_w * c)
        out = cols @ self.params["weight"].reshape(-1, self.c_out)
        if self.has_bias:
            out = out + self.params["bias"]
        out = out.reshape(b, out_h, out_w, self.c_out)
        return out, self.Cache(id(self), out.shape, x.shape, cols)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        b, height, width, c = cache.in_shape
        _, out_h, out_w, _ = grad_out.shape
        top, left = self._padding()
        s = self.stride
        flat = grad_out.reshape(-1, self.c_out)
        grads = OrderedDict([("weight", (cache.cols.T @ flat).reshape(self.params["weight"].shape))])
        if self.has_bias:
            grads["bias"] = flat.sum(axis=0)

        grad_cols = (flat @ self.params["weight"].reshape(-1, self.c_out).T).reshape(
            b, out_h, out_w, self.k_h, self.k_w, c)
        grad_padded = np.zeros((b, height + self.k_h - 1, width + self.k_w - 1, c), dtype=grad_out.dtype)
        for i in range(self.k_h):
            for j in range(self.k_w):
                grad_padded[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += grad_cols[:, :, :, i, j]
        return grad_padded[:, top:top + height, left:left + width, :], grads


class AvgPool2d(Layer):
    """Average pooling with ceil-mode output; partial windows average their valid cells only."""
    kind = "avgpool2d"

    def __init__(self, window: int = 2, stride: Optional[int] = None):
        super().__init__()
        self.window = window
        self.stride = stride or window

    def expected_param_count(self):
        return 0

    class Cache(NamedTuple):
        layer_id: int
        out_shape: Tuple[int, ...]
        in_shape: Tuple[int, ...]
        counts: Tensor

    def _geometry(self, height: int, width: int):
        w, s = self.window, self.stride
        out_h = -(-max(height - w, 0) // s) + 1
        out_w = -(-max(width - w, 0) // s) + 1
        return out_h, out_w, s * (out_h - 1) + w - height, s * (out_w - 1) + w - width

    def forward(self, x: Tensor):
        check_shape(x, 4)
        b, height, width, c = x.shape
        out_h, out_w, pad_h, pad_w = self._geometry(height, width)
        w, s = self.window, self.stride
        padded = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
        mask = np.pad(np.ones((height, width), dtype=x.dtype), ((0, pad_h), (0, pad_w)))
        total = np.zeros((b, out_h, out_w, c), dtype=x.dtype)
        counts = np.zeros((out_h, out_w), dtype=x.dtype)
        for i in range(w):
            for j in range(w):
                rows = slice(i, i + s * (out_h - 1) + 1, s)
                cols = slice(j, j + s * (out_w - 1) + 1, s)
                total += padded[:, rows, cols, :]
                counts += mask[rows, cols]
        out = total / counts[None, :, :, None]
        return out, self.Cache(id(self), out.shape, x.shape, counts)

    def backward(self, cache, grad_out: Tensor) -> Tuple[Tensor, Grads]:
        self._check_cache(cache, grad_out)
        b, height, width, c = cache.in_shape
        out_h, out_w, pad_h, pad_w = self._geometry(height, width)
        w, s = self.window, self.stride
        scaled = grad_out / cache.counts[None, :, :, None]
        grad_padded = np.zeros((b, height + pad_h, width + pad_w, c), dtype=grad_out.dtype)
        for i in range(w):
            for j in range(w):
                grad_padded[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += scaled
        return grad_padded[:, :height, :width, :], OrderedDict()


def global_avg_pool(x: Tensor) -> Tensor:
    """``[b, H, W, c] -> [b, 1, 1, c]``."""
    return x.mean(axis=(1, 2), keepdims=True)


def global_avg_pool_backward(in_shape: Tuple[int, ...], grad_out: Tensor) -> Tensor:
    b, height, width, c = in_shape
    return np.broadcast_to(grad_out / (height * width), in_shape).copy()
