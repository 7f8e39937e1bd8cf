"""
Generator and discriminator assembly, parameter registry and checkpoints.

Every network keeps an ordered registry of named layers; a parameter's name
is ``<layer name>.<param key>``, e.g. ``blocks.2.mixer.w1``. The registry
drives parameter counting, optimization and checkpoint I/O.
"""

import io
import json
import logging
import math
import struct
from collections import OrderedDict
from typing import Dict, List, NamedTuple, Optional, Tuple, Type, Union

import numpy as np

from .config import from_dict
from .errors import CheckpointError, ConfigurationError, ContractViolationError, DimensionError, TensorFormatError
from .layers import (
    AdaIN, AvgPool2d, Conv1d, Conv2d, DynConvLayer, Layer, LayerNorm, LconvLayer, WadaINConv, global_avg_pool,
    global_avg_pool_backward,
)
from .tensor import Rng, Tensor, check_shape, decode_tensor, leaky_relu, leaky_relu_backward, sigmoid, write_tensor

logger = logging.getLogger(__name__)

MIXERS = ("dynconv", "lconv")
ADAPTERS = ("wadain", "adain")


class GeneratorConfig(NamedTuple):
    in_dim: int = 512
    hidden: int = 256
    out_dim: int = 80
    n_blocks: int = 6
    k: int = 3
    h: int = 8
    spk_dim: int = 128
    conv_kernel: int = 3
    mixer: str = "dynconv"
    adapter: str = "wadain"
    softmax_kernel: bool = False

    def validate(self) -> None:
        for name in ("in_dim", "hidden", "out_dim", "n_blocks", "k", "h", "spk_dim", "conv_kernel"):
            if getattr(self, name) < 1:
                raise ConfigurationError("generator.{} must be at least 1, got {}".format(name, getattr(self, name)))
        if self.hidden % self.h:
            raise ConfigurationError("generator.h={} must divide generator.hidden={}".format(self.h, self.hidden))
        if self.k % 2 == 0:
            raise ConfigurationError("generator.k must be odd, got {}".format(self.k))
        if self.mixer not in MIXERS:
            raise ConfigurationError("generator.mixer must be one of {}, got {!r}".format(MIXERS, self.mixer))
        if self.adapter not in ADAPTERS:
            raise ConfigurationError("generator.adapter must be one of {}, got {!r}".format(ADAPTERS, self.adapter))

    @classmethod
    def from_dict(cls, data, section="generator") -> "GeneratorConfig":
        return from_dict(cls, data, section)

    @classmethod
    def toy(cls) -> "GeneratorConfig":
        return cls(in_dim=16, hidden=32, out_dim=16, n_blocks=2, k=3, h=4, spk_dim=8)


class DiscriminatorConfig(NamedTuple):
    base_channels: int = 32
    max_channels: int = 128
    n_blocks: int = 4
    post_kernel: int = 5
    slope: float = 0.2

    def validate(self) -> None:
        for name in ("base_channels", "max_channels", "n_blocks", "post_kernel"):
            if getattr(self, name) < 1:
                raise ConfigurationError(
                    "discriminator.{} must be at least 1, got {}".format(name, getattr(self, name)))
        if self.base_channels > self.max_channels:
            raise ConfigurationError("discriminator.base_channels exceeds discriminator.max_channels")
        if self.slope < 0:
            raise ConfigurationError("discriminator.slope must be non-negative, got {}".format(self.slope))

    @property
    def min_frames(self) -> int:
        return 2 ** self.n_blocks

    def channel_schedule(self) -> List[int]:
        """Input-conv width followed by each residual block's output width."""
        schedule = [self.base_channels]
        for _ in range(self.n_blocks):
            schedule.append(min(schedule[-1] * 2, self.max_channels))
        return schedule

    @classmethod
    def from_dict(cls, data, section="discriminator") -> "DiscriminatorConfig":
        return from_dict(cls, data, section)

    @classmethod
    def toy(cls) -> "DiscriminatorConfig":
        return cls(base_channels=4, max_channels=8, n_blocks=4, post_kernel=3)


Grads = Dict[str, Tensor]


def _collect(grads: Grads, prefix: str, layer_grads: Grads) -> None:
    for key, value in layer_grads.items():
        grads["{}.{}".format(prefix, key)] = value


class Network(object):
    kind = "network"
    config_class: Type

    def __init__(self, config):
        self.config = config
        self.layers: Dict[str, Layer] = OrderedDict()

    def add(self, name: str, layer: Layer) -> Layer:
        if name in self.layers:
            raise ContractViolationError("Layer {} registered twice".format(name))
        self.layers[name] = layer
        return layer

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict(
            ("{}.{}".format(layer_name, key), value)
            for layer_name, layer in self.layers.items()
            for key, value in layer.params.items()
        )

    def set_parameters(self, values: Dict[str, Tensor]) -> None:
        for layer_name, layer in self.layers.items():
            for key, current in layer.params.items():
                value = values["{}.{}".format(layer_name, key)]
                if value.shape != current.shape:
                    raise DimensionError("{}.{} expects shape {}, got {}".format(
                        layer_name, key, list(current.shape), list(value.shape)))
                layer.params[key] = np.array(value, copy=True)

    def astype(self, dtype) -> "Network":
        for layer in self.layers.values():
            layer.astype(dtype)
        return self

    def _ordered(self, grads: Grads) -> Grads:
        return OrderedDict((name, grads[name]) for name in self.named_parameters())

    def __repr__(self):
        return '<{0.__class__.__name__}: {0.config}>'.format(self)


class BlockCache(NamedTuple):
    norm1: tuple
    mixer: tuple
    norm2: tuple
    conv: tuple
    adapter: tuple


class IntermediateBlock(object):
    """Two pre-norm residual sub-blocks.

    ``h + mixer(norm1(h))`` then ``h + adapter(conv(norm2(h)), s)``; the mixer
    is dynamic or lightweight convolution and the adapter WadaIN-conv or AdaIN.
    """

    def __init__(self, network: Network, prefix: str, config: GeneratorConfig, rng: Rng, dtype):
        c = config.hidden
        self.prefix = prefix
        self.norm1 = network.add(prefix + ".norm1", LayerNorm(c, dtype=dtype))
        if config.mixer == "dynconv":
            mixer: Layer = DynConvLayer(c, config.k, config.h, rng, config.softmax_kernel, dtype=dtype)
        else:
            mixer = LconvLayer(config.k, config.h, dtype=dtype)
        self.mixer = network.add(prefix + ".mixer", mixer)
        self.norm2 = network.add(prefix + ".norm2", LayerNorm(c, dtype=dtype))
        self.conv = network.add(prefix + ".conv", Conv1d(c, c, config.conv_kernel, rng, dtype=dtype))
        if config.adapter == "wadain":
            adapter: Layer = WadaINConv(c, c, config.conv_kernel, config.spk_dim, rng, dtype=dtype)
        else:
            adapter = AdaIN(c, config.spk_dim, rng, dtype=dtype)
        self.adapter = network.add(prefix + ".adapter", adapter)

    def forward(self, h: Tensor, s: Tensor) -> Tuple[Tensor, BlockCache]:
        normed, norm1 = self.norm1.forward(h)
        mixed, mixer = self.mixer.forward(normed)
        h = h + mixed
        normed, norm2 = self.norm2.forward(h)
        convolved, conv = self.conv.forward(normed)
        adapted, adapter = self.adapter.forward(convolved, s)
        return h + adapted, BlockCache(norm1, mixer, norm2, conv, adapter)

    def backward(self, cache: BlockCache, grad_h: Tensor, grads: Grads) -> Tuple[Tensor, Tensor]:
        grad_conv, grad_s, layer_grads = self.adapter.backward(cache.adapter, grad_h)
        _collect(grads, self.prefix + ".adapter", layer_grads)
        grad_normed, layer_grads = self.conv.backward(cache.conv, grad_conv)
        _collect(grads, self.prefix + ".conv", layer_grads)
        grad_branch, layer_grads = self.norm2.backward(cache.norm2, grad_normed)
        _collect(grads, self.prefix + ".norm2", layer_grads)
        grad_h = grad_h + grad_branch

        grad_normed, layer_grads = self.mixer.backward(cache.mixer, grad_h)
        _collect(grads, self.prefix + ".mixer", layer_grads)
        grad_branch, layer_grads = self.norm1.backward(cache.norm1, grad_normed)
        _collect(grads, self.prefix + ".norm1", layer_grads)
        return grad_h + grad_branch, grad_s


class GeneratorCache(NamedTuple):
    out_shape: Tuple[int, ...]
    input_conv: tuple
    blocks: List[BlockCache]
    output_conv: tuple


class Generator(Network):
    """Input conv, ``n_blocks`` intermediate blocks, output conv; ``G(z, s)``."""
    kind = "generator"
    config_class = GeneratorConfig

    def __init__(self, config: Optional[GeneratorConfig] = None, rng: Optional[Rng] = None, dtype=np.float64):
        config = config or GeneratorConfig()
        config.validate()
        super().__init__(config)
        rng = rng or Rng(0)
        self.input_conv = self.add("input_conv", Conv1d(config.in_dim, config.hidden, 1, rng, dtype=dtype))
        self.blocks = [
            IntermediateBlock(self, "blocks.{}".format(i), config, rng, dtype) for i in range(config.n_blocks)
        ]
        self.output_conv = self.add("output_conv", Conv1d(config.hidden, config.out_dim, 1, rng, dtype=dtype))

    def _check_inputs(self, z: Tensor, s: Tensor) -> None:
        check_shape(z, 3, "features z")
        check_shape(s, 2, "speaker embedding s")
        if z.shape[2] != self.config.in_dim or s.shape != (z.shape[0], self.config.spk_dim):
            raise DimensionError("generator expects z [b, t, {}] and s [b, {}], got {} and {}".format(
                self.config.in_dim, self.config.spk_dim, list(z.shape), list(s.shape)))

    def forward(self, z: Tensor, s: Tensor) -> Tuple[Tensor, GeneratorCache]:
        self._check_inputs(z, s)
        h, input_conv = self.input_conv.forward(z)
        block_caches = []
        for block in self.blocks:
            h, cache = block.forward(h, s)
            block_caches.append(cache)
        out, output_conv = self.output_conv.forward(h)
        return out, GeneratorCache(out.shape, input_conv, block_caches, output_conv)

    def __call__(self, z: Tensor, s: Tensor) -> Tensor:
        return self.forward(z, s)[0]

    def backward(self, cache: GeneratorCache, grad_out: Tensor) -> Tuple[Grads, Tensor, Tensor]:
        """Return parameter gradients (registry order), then gradients w.r.t. ``z`` and ``s``."""
        if grad_out.shape != cache.out_shape:
            raise ContractViolationError("generator upstream gradient has shape {}, output was {}".format(
                list(grad_out.shape), list(cache.out_shape)))
        grads: Grads = OrderedDict()
        grad_h, layer_grads = self.output_conv.backward(cache.output_conv, grad_out)
        _collect(grads, "output_conv", layer_grads)
        grad_s = None
        for block, block_cache in zip(reversed(self.blocks), reversed(cache.blocks)):
            grad_h, block_grad_s = block.backward(block_cache, grad_h, grads)
            grad_s = block_grad_s if grad_s is None else grad_s + block_grad_s
        grad_z, layer_grads = self.input_conv.backward(cache.input_conv, grad_h)
        _collect(grads, "input_conv", layer_grads)
        return self._ordered(grads), grad_z, grad_s


class ResidualBlock2d(object):
    """StarGAN-v2 style downsampling block: ``(shortcut(x) + residual(x)) / sqrt(2)``."""

    def __init__(self, network: Network, prefix: str, c_in: int, c_out: int, slope: float, rng: Rng, dtype):
        self.prefix = prefix
        self.slope = slope
        self.conv1 = network.add(prefix + ".conv1", Conv2d(c_in, c_in, 3, rng, dtype=dtype))
        self.conv2 = network.add(prefix + ".conv2", Conv2d(c_in, c_out, 3, rng, dtype=dtype))
        self.shortcut = None
        if c_in != c_out:
            self.shortcut = network.add(prefix + ".shortcut", Conv2d(c_in, c_out, 1, rng, bias=False, dtype=dtype))
        self.pool = AvgPool2d(2)

    class Cache(NamedTuple):
        x: Tensor
        shortcut: Optional[tuple]
        shortcut_pool: tuple
        conv1: tuple
        pool: tuple
        pooled: Tensor
        conv2: tuple

    def forward(self, x: Tensor):
        shortcut_cache = None
        skip = x
        if self.shortcut is not None:
            skip, shortcut_cache = self.shortcut.forward(skip)
        skip, shortcut_pool = self.pool.forward(skip)

        h, conv1 = self.conv1.forward(leaky_relu(x, self.slope))
        pooled, pool = self.pool.forward(h)
        h, conv2 = self.conv2.forward(leaky_relu(pooled, self.slope))
        out = (skip + h) / math.sqrt(2.0)
        return out, self.Cache(x, shortcut_cache, shortcut_pool, conv1, pool, pooled, conv2)

    def backward(self, cache, grad_out: Tensor, grads: Grads) -> Tensor:
        grad_out = grad_out / math.sqrt(2.0)
        grad_h, layer_grads = self.conv2.backward(cache.conv2, grad_out)
        _collect(grads, self.prefix + ".conv2", layer_grads)
        grad_h, _ = self.pool.backward(cache.pool, leaky_relu_backward(cache.pooled, grad_h, self.slope))
        grad_h, layer_grads = self.conv1.backward(cache.conv1, grad_h)
        _collect(grads, self.prefix + ".conv1", layer_grads)
        grad_x = leaky_relu_backward(cache.x, grad_h, self.slope)

        grad_skip, _ = self.pool.backward(cache.shortcut_pool, grad_out)
        if self.shortcut is not None:
            grad_skip, layer_grads = self.shortcut.backward(cache.shortcut, grad_skip)
            _collect(grads, self.prefix + ".shortcut", layer_grads)
        return grad_x + grad_skip


class DiscriminatorCache(NamedTuple):
    out_shape: Tuple[int, ...]
    input_conv: tuple
    blocks: list
    trunk: Tensor
    post_conv: tuple
    post: Tensor
    output_conv: tuple
    probabilities: Tensor


class Discriminator(Network):
    """Unconditional single-branch discriminator over mel-spectrograms, ``D(x) -> (0, 1)``.

    The spectrogram ``[b, t, mel]`` is treated as a one-channel image with
    time as height and mel bins as width.
    """
    kind = "discriminator"
    config_class = DiscriminatorConfig

    def __init__(self, config: Optional[DiscriminatorConfig] = None, rng: Optional[Rng] = None,
                 dtype=np.float64):
        config = config or DiscriminatorConfig()
        config.validate()
        super().__init__(config)
        rng = rng or Rng(0)
        schedule = config.channel_schedule()
        self.input_conv = self.add("input_conv", Conv2d(1, schedule[0], 3, rng, dtype=dtype))
        self.blocks = [
            ResidualBlock2d(self, "blocks.{}".format(i), c_in, c_out, config.slope, rng, dtype)
            for i, (c_in, c_out) in enumerate(zip(schedule[:-1], schedule[1:]))
        ]
        self.post_conv = self.add(
            "post_conv", Conv2d(schedule[-1], schedule[-1], config.post_kernel, rng, dtype=dtype))
        self.output_conv = self.add("output_conv", Conv2d(schedule[-1], 1, 1, rng, dtype=dtype))

    def forward(self, x: Tensor) -> Tuple[Tensor, DiscriminatorCache]:
        check_shape(x, 3, "spectrogram")
        if x.shape[1] < self.config.min_frames:
            raise DimensionError("discriminator needs at least {} frames, got shape {}".format(
                self.config.min_frames, list(x.shape)))
        slope = self.config.slope
        h, input_conv = self.input_conv.forward(x[..., None])
        block_caches = []
        for block in self.blocks:
            h, cache = block.forward(h)
            block_caches.append(cache)
        trunk = h
        h, post_conv = self.post_conv.forward(leaky_relu(trunk, slope))
        post = h
        logits, output_conv = self.output_conv.forward(global_avg_pool(leaky_relu(post, slope)))
        probabilities = sigmoid(logits.reshape(x.shape[0], 1))
        return probabilities, DiscriminatorCache(
            probabilities.shape, input_conv, block_caches, trunk, post_conv, post, output_conv, probabilities)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[0]

    def backward(self, cache: DiscriminatorCache, grad_out: Tensor) -> Tuple[Grads, Tensor]:
        """Return parameter gradients (registry order) and the gradient w.r.t. the spectrogram."""
        if grad_out.shape != cache.out_shape:
            raise ContractViolationError("discriminator upstream gradient has shape {}, output was {}".format(
                list(grad_out.shape), list(cache.out_shape)))
        slope = self.config.slope
        grads: Grads = OrderedDict()
        y = cache.probabilities
        grad_logits = (grad_out * y * (1.0 - y)).reshape(-1, 1, 1, 1)
        grad_pooled, layer_grads = self.output_conv.backward(cache.output_conv, grad_logits)
        _collect(grads, "output_conv", layer_grads)
        grad_h = leaky_relu_backward(cache.post, global_avg_pool_backward(cache.post.shape, grad_pooled), slope)
        grad_h, layer_grads = self.post_conv.backward(cache.post_conv, grad_h)
        _collect(grads, "post_conv", layer_grads)
        grad_h = leaky_relu_backward(cache.trunk, grad_h, slope)
        for block, block_cache in zip(reversed(self.blocks), reversed(cache.blocks)):
            grad_h = block.backward(block_cache, grad_h, grads)
        grad_x, layer_grads = self.input_conv.backward(cache.input_conv, grad_h)
        _collect(grads, "input_conv", layer_grads)
        return self._ordered(grads), grad_x[..., 0]


NETWORKS: Dict[str, Type[Network]] = {"generator": Generator, "discriminator": Discriminator}


class ParamRow(NamedTuple):
    name: str
    kind: str
    count: int
    expected: int


class ParamBreakdown(NamedTuple):
    network: str
    rows: List[ParamRow]
    total: int

    def by_kind(self) -> Dict[str, int]:
        totals: Dict[str, int] = OrderedDict()
        for row in self.rows:
            totals[row.kind] = totals.get(row.kind, 0) + row.count
        return totals


def count_params(net: Network) -> ParamBreakdown:
    rows = [
        ParamRow(name, layer.kind, layer.param_count(), layer.expected_param_count())
        for name, layer in net.layers.items()
    ]
    return ParamBreakdown(net.kind, rows, sum(row.count for row in rows))


# Checkpoint container: "DYCK", u64 manifest length, JSON manifest, DYT1 blocks.
CHECKPOINT_MAGIC = b"DYCK"
CHECKPOINT_FORMAT = "dygan-checkpoint"
CHECKPOINT_VERSION = 1
_LENGTH = struct.Struct("<Q")


def encode_checkpoint(net: Network) -> bytes:
    blocks = io.BytesIO()
    tensors = OrderedDict()
    for name, value in net.named_parameters().items():
        offset = blocks.tell()
        write_tensor(blocks, value)
        tensors[name] = {"offset": offset, "shape": list(value.shape), "dtype": np.dtype(value.dtype).name}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": net.kind,
        "config": net.config._asdict(),
        "tensors": tensors,
    }
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + _LENGTH.pack(len(encoded)) + encoded + blocks.getvalue()


def save_checkpoint(net: Network, path: str) -> None:
    data = encode_checkpoint(net)
    with open(path, "wb") as f:
        f.write(data)
    logger.info("saved checkpoint", extra={"path": path, "kind": net.kind, "bytes": len(data)})


def decode_checkpoint(data: bytes, source: str = "checkpoint") -> Network:
    header = len(CHECKPOINT_MAGIC) + _LENGTH.size
    if len(data) < header or data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("{} is not a checkpoint".format(source))
    (length,) = _LENGTH.unpack_from(data, len(CHECKPOINT_MAGIC))
    try:
        manifest = json.loads(data[header:header + length].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError("{} has an unreadable manifest: {}".format(source, e))
    blocks = memoryview(data)[header + length:]

    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("Cannot load {}".format(source), [
            "unsupported format {!r} version {!r}".format(manifest.get("format"), manifest.get("version"))])
    network_class = NETWORKS.get(manifest.get("kind"))
    if network_class is None:
        raise CheckpointError("Cannot load {}".format(source), ["unknown kind {!r}".format(manifest.get("kind"))])
    try:
        config = network_class.config_class.from_dict(manifest.get("config"), manifest["kind"])
    except ConfigurationError as e:
        raise CheckpointError("Cannot load {}".format(source), [str(e)])
    net = network_class(config)  # type: ignore

    expected = net.named_parameters()
    entries = manifest.get("tensors", {})
    problems = ["missing entry {}".format(name) for name in expected if name not in entries]
    problems += ["unexpected entry {}".format(name) for name in entries if name not in expected]
    loaded = {}
    for name in expected:
        if name not in entries:
            continue
        entry = entries[name]
        try:
            value, _ = decode_tensor(blocks, entry["offset"])
        except (TensorFormatError, KeyError, TypeError) as e:
            problems.append("entry {} unreadable: {}".format(name, e))
            continue
        if list(value.shape) != list(expected[name].shape) or list(value.shape) != entry.get("shape"):
            problems.append("entry {} has shape {}, expected {}".format(
                name, list(value.shape), list(expected[name].shape)))
        elif np.dtype(value.dtype).name != entry.get("dtype"):
            problems.append("entry {} has dtype {}, manifest says {}".format(name, value.dtype, entry.get("dtype")))
        loaded[name] = value
    if problems:
        raise CheckpointError("Cannot load {}".format(source), problems)

    net.set_parameters(loaded)
    return net


def load_checkpoint(path: str, kind: Optional[str] = None) -> Union[Generator, Discriminator]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except IOError as e:
        raise CheckpointError("No checkpoint at {}: {}".format(path, e.strerror))
    net = decode_checkpoint(data, path)
    if kind is not None and net.kind != kind:
        raise CheckpointError("Cannot load {}".format(path), ["expected a {}, found a {}".format(kind, net.kind)])
    logger.info("loaded checkpoint", extra={"path": path, "kind": net.kind})
    return net  # type: ignore
