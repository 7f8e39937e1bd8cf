"""
Central finite-difference checks for every hand-written backward pass.

Layers are checked through the scalar objective ``sum(output * R)`` for a
fixed random projection ``R``, so the upstream gradient handed to ``backward``
is exactly ``R``. Inputs come from ``Normal(0, 1)``; kinks (zero for leaky
ReLU, ties for the l1 loss) are avoided by nudging inputs ``1e-3`` away.
"""

import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, OracleError
from .layers import AdaIN, AvgPool2d, Conv1d, Conv2d, DynConvLayer, Layer, LayerNorm, LconvLayer, WadaINConv
from .model import Generator, GeneratorConfig
from .tensor import Rng, Tensor, glu, glu_backward, leaky_relu, leaky_relu_backward
from .training import (
    loss_adv_d, loss_adv_d_backward, loss_adv_g, loss_adv_g_backward, loss_recon, loss_recon_backward,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
KINK_NUDGE = 1e-3

DEFAULT_SHAPES: Dict[str, Dict[str, Any]] = OrderedDict([
    ("lconv", {"b": 2, "t": 7, "c": 6, "k": 3, "h": 2}),
    ("dynconv", {"b": 2, "t": 7, "c": 6, "k": 3, "h": 2}),
    ("dynconv_softmax", {"b": 2, "t": 7, "c": 6, "k": 3, "h": 3}),
    ("adain", {"b": 2, "t": 6, "c": 4, "spk": 3}),
    ("wadain", {"b": 2, "t": 6, "c_in": 3, "c_out": 4, "k": 3, "spk": 3}),
    ("conv1d", {"b": 2, "t": 6, "c_in": 3, "c_out": 4, "k": 3}),
    ("conv2d", {"b": 2, "height": 5, "width": 4, "c_in": 2, "c_out": 3, "k": 3, "stride": 1}),
    ("avgpool2d", {"b": 2, "height": 5, "width": 5, "c": 2}),
    ("layer_norm", {"b": 2, "t": 4, "c": 5}),
    ("glu", {"b": 2, "t": 4, "c": 6}),
    ("leaky_relu", {"b": 2, "t": 4, "c": 5, "slope": 0.2}),
    ("loss_recon", {"b": 2, "t": 4, "c": 5, "norm": "l1"}),
    ("loss_adv_g", {"b": 4}),
    ("loss_adv_d", {"b": 4}),
    ("generator", {"b": 2, "t": 5}),
])

LAYER_KINDS = tuple(DEFAULT_SHAPES)

TINY_GENERATOR = GeneratorConfig(in_dim=4, hidden=8, out_dim=4, n_blocks=1, k=3, h=2, spk_dim=3, conv_kernel=3)


class GradCheckReport(NamedTuple):
    kind: str
    param_errors: Dict[str, float]
    input_errors: Dict[str, float]
    step: float
    tolerance: float
    seeds: int
    failure: Optional[str] = None

    @property
    def max_error(self) -> float:
        errors = list(self.param_errors.values()) + list(self.input_errors.values())
        return max(errors) if errors else 0.0

    @property
    def passed(self) -> bool:
        errors = list(self.param_errors.values()) + list(self.input_errors.values())
        return self.failure is None and all(error < self.tolerance for error in errors)

    def to_dict(self) -> Dict[str, Any]:
        result = self._asdict()
        result["passed"] = self.passed
        result["max_error"] = self.max_error
        return result


def relative_error(a: Tensor, b: Tensor) -> float:
    """``max|a - b| / max(|a|, |b|, 1e-8)`` with both maxima taken over the whole tensor."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-8)
    return float(np.abs(a - b).max(initial=0.0)) / scale


def fd_gradient(f: Callable[[Tensor], float], x: Tensor, step: float = DEFAULT_STEP) -> Tensor:
    """Central differences of ``f`` at ``x``; ``x`` is perturbed in place and restored.

    ``x`` may be any writable view (transposed, sliced); elements are visited
    in row-major order of ``x`` itself.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    for i, index in enumerate(np.ndindex(*x.shape)):
        saved = x[index]
        x[index] = saved + step
        plus = f(x)
        x[index] = saved - step
        minus = f(x)
        x[index] = saved
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise OracleError("Non-finite evaluation perturbing element {} of shape {}".format(i, list(x.shape)))
        grad[index] = (plus - minus) / (2.0 * step)
    return grad


class Probe(NamedTuple):
    """What the checker needs: live tensors to perturb, the objective and the analytic gradients."""
    inputs: Dict[str, Tensor]
    params: Dict[str, Tensor]
    objective: Callable[[], float]
    analytic: Callable[[], Tuple[Dict[str, Tensor], Dict[str, Tensor]]]


def _randomize(layer: Layer, rng: Rng) -> Layer:
    for name, value in layer.params.items():
        layer.params[name] = rng.normal(value.shape, std=0.5)
    return layer


def _nudged(rng: Rng, shape) -> Tensor:
    x = rng.normal(shape)
    return x + np.where(x >= 0, KINK_NUDGE, -KINK_NUDGE)


def _layer_probe(layer: Layer, inputs: Dict[str, Tensor], rng: Rng) -> Probe:
    projection = rng.normal(layer.forward(*inputs.values())[0].shape)

    def objective():
        return float((layer.forward(*inputs.values())[0] * projection).sum())

    def analytic():
        _, cache = layer.forward(*inputs.values())
        result = layer.backward(cache, projection)
        return OrderedDict(zip(inputs, result[:-1])), result[-1]

    return Probe(inputs, layer.params, objective, analytic)


def _function_probe(forward: Callable, backward: Callable, inputs: Dict[str, Tensor], rng: Rng) -> Probe:
    projection = rng.normal(np.shape(forward(*inputs.values())))

    def objective():
        return float((forward(*inputs.values()) * projection).sum())

    def analytic():
        grads = backward(*inputs.values(), projection)
        return OrderedDict(zip(inputs, grads)), OrderedDict()

    return Probe(inputs, OrderedDict(), objective, analytic)


def _scalar_probe(loss: Callable, backward: Callable, inputs: Dict[str, Tensor], names: Sequence[str]) -> Probe:
    # losses are already scalar; only the inputs in ``names`` are differentiated
    def objective():
        return loss(*inputs.values())

    def analytic():
        grads = backward(*inputs.values())
        if not isinstance(grads, tuple):
            grads = (grads,)
        return OrderedDict(zip(names, grads)), OrderedDict()

    return Probe(inputs, OrderedDict(), objective, analytic)


def _build(kind: str, rng: Rng, spec: Dict[str, Any]) -> Probe:
    if kind == "lconv":
        layer: Layer = _randomize(LconvLayer(spec["k"], spec["h"]), rng)
        return _layer_probe(layer, {"x": rng.normal((spec["b"], spec["t"], spec["c"]))}, rng)
    if kind in ("dynconv", "dynconv_softmax"):
        layer = _randomize(DynConvLayer(spec["c"], spec["k"], spec["h"], rng, kind == "dynconv_softmax"), rng)
        return _layer_probe(layer, {"x": rng.normal((spec["b"], spec["t"], spec["c"]))}, rng)
    if kind == "adain":
        layer = _randomize(AdaIN(spec["c"], spec["spk"], rng), rng)
        inputs = OrderedDict([("x", rng.normal((spec["b"], spec["t"], spec["c"]))),
                              ("s", rng.normal((spec["b"], spec["spk"])))])
        return _layer_probe(layer, inputs, rng)
    if kind == "wadain":
        layer = _randomize(WadaINConv(spec["c_in"], spec["c_out"], spec["k"], spec["spk"], rng), rng)
        inputs = OrderedDict([("x", rng.normal((spec["b"], spec["t"], spec["c_in"]))),
                              ("s", rng.normal((spec["b"], spec["spk"])))])
        return _layer_probe(layer, inputs, rng)
    if kind == "conv1d":
        layer = _randomize(Conv1d(spec["c_in"], spec["c_out"], spec["k"], rng), rng)
        return _layer_probe(layer, {"x": rng.normal((spec["b"], spec["t"], spec["c_in"]))}, rng)
    if kind == "conv2d":
        layer = _randomize(Conv2d(spec["c_in"], spec["c_out"], spec["k"], rng, stride=spec["stride"]), rng)
        x = rng.normal((spec["b"], spec["height"], spec["width"], spec["c_in"]))
        return _layer_probe(layer, {"x": x}, rng)
    if kind == "avgpool2d":
        x = rng.normal((spec["b"], spec["height"], spec["width"], spec["c"]))
        return _layer_probe(AvgPool2d(2), {"x": x}, rng)
    if kind == "layer_norm":
        layer = _randomize(LayerNorm(spec["c"]), rng)
        return _layer_probe(layer, {"x": rng.normal((spec["b"], spec["t"], spec["c"]))}, rng)
    if kind == "glu":
        return _function_probe(
            glu, lambda x, g: (glu_backward(x, g),), {"x": rng.normal((spec["b"], spec["t"], spec["c"]))}, rng)
    if kind == "leaky_relu":
        slope = spec["slope"]
        return _function_probe(
            lambda x: leaky_relu(x, slope), lambda x, g: (leaky_relu_backward(x, g, slope),),
            {"x": _nudged(rng, (spec["b"], spec["t"], spec["c"]))}, rng)
    if kind == "loss_recon":
        shape = (spec["b"], spec["t"], spec["c"])
        target = rng.normal(shape)
        inputs = OrderedDict([("x", target), ("x_hat", target + _nudged(rng, shape))])
        norm = spec["norm"]
        return _scalar_probe(
            lambda x, x_hat: loss_recon(x, x_hat, norm), lambda x, x_hat: loss_recon_backward(x, x_hat, norm),
            inputs, ["x_hat"])
    if kind == "loss_adv_g":
        inputs = {"d_fake": rng.uniform((spec["b"], 1), 0.05, 0.95)}
        return _scalar_probe(loss_adv_g, loss_adv_g_backward, inputs, ["d_fake"])
    if kind == "loss_adv_d":
        inputs = OrderedDict([("d_real", rng.uniform((spec["b"], 1), 0.05, 0.95)),
                              ("d_fake", rng.uniform((spec["b"], 1), 0.05, 0.95))])
        return _scalar_probe(loss_adv_d, loss_adv_d_backward, inputs, ["d_real", "d_fake"])
    if kind == "generator":
        return _generator_probe(rng, spec)
    raise ConfigurationError("No gradient check for layer kind {!r}; known kinds: {}".format(
        kind, ", ".join(LAYER_KINDS)))


def _generator_probe(rng: Rng, spec: Dict[str, Any]) -> Probe:
    config = spec.get("config", TINY_GENERATOR)
    generator = Generator(config, rng)
    params = generator.named_parameters()
    for name, value in params.items():
        value[...] = rng.normal(value.shape, std=0.5)
    inputs = OrderedDict([("z", rng.normal((spec["b"], spec["t"], config.in_dim))),
                          ("s", rng.normal((spec["b"], config.spk_dim)))])
    projection = rng.normal((spec["b"], spec["t"], config.out_dim))

    def objective():
        return float((generator(inputs["z"], inputs["s"]) * projection).sum())

    def analytic():
        _, cache = generator.forward(inputs["z"], inputs["s"])
        grads, grad_z, grad_s = generator.backward(cache, projection)
        return OrderedDict([("z", grad_z), ("s", grad_s)]), grads

    return Probe(inputs, params, objective, analytic)


def _non_finite(grads: Dict[str, Tensor]) -> Optional[str]:
    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            return name
    return None


def _worst(errors: Dict[str, float], name: str, error: float) -> None:
    errors[name] = max(errors.get(name, 0.0), error)


def check_layer(kind: str, shape_spec: Optional[Dict[str, Any]] = None, seeds: Union[int, Sequence[int]] = 5,
                step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    """Compare analytic gradients of ``kind`` with central differences over every seed.

    :param kind: one of ``LAYER_KINDS``
    :param shape_spec: overrides for the kind's default shapes
    :param seeds: a seed count (``0..n-1``) or explicit seeds
    """
    if kind not in DEFAULT_SHAPES:
        raise ConfigurationError("No gradient check for layer kind {!r}; known kinds: {}".format(
            kind, ", ".join(LAYER_KINDS)))
    spec = dict(DEFAULT_SHAPES[kind], **(shape_spec or {}))
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    param_errors: Dict[str, float] = OrderedDict()
    input_errors: Dict[str, float] = OrderedDict()

    def report(failure=None):
        return GradCheckReport(kind, param_errors, input_errors, step, tolerance, len(seed_list), failure)

    for seed in seed_list:
        probe = _build(kind, Rng(seed), spec)
        input_grads, param_grads = probe.analytic()
        for label, grads in (("input", input_grads), ("parameter", param_grads)):
            bad = _non_finite(grads)
            if bad is not None:
                return report("non-finite analytic gradient for {} {} (seed {})".format(label, bad, seed))
        try:
            for name, analytic in input_grads.items():
                numeric = fd_gradient(lambda _: probe.objective(), probe.inputs[name], step)
                _worst(input_errors, name, relative_error(analytic, numeric))
            for name, analytic in param_grads.items():
                numeric = fd_gradient(lambda _: probe.objective(), probe.params[name], step)
                _worst(param_errors, name, relative_error(analytic, numeric))
        except OracleError as e:
            return report("{} (seed {})".format(e, seed))

    result = report()
    logger.debug("gradient check", extra={"kind": kind, "passed": result.passed, "max_error": result.max_error})
    return result


def run_suite(seeds: Union[int, Sequence[int]] = 5, tolerance: float = DEFAULT_TOLERANCE, step: float = DEFAULT_STEP,
              kinds: Optional[Sequence[str]] = None, workers: int = 1) -> List[GradCheckReport]:
    """Check every layer kind; ``workers > 1`` runs kinds concurrently, each on its own instances."""
    kinds = list(kinds or LAYER_KINDS)

    def check(kind):
        return check_layer(kind, seeds=seeds, step=step, tolerance=tolerance)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(check, kinds))
    return [check(kind) for kind in kinds]
