"""
Objectives, optimizer and the synthetic-data training loop.

The generator is trained with ``L_G = lambda * L_recon + L_adv_G`` and the
discriminator with the least-squares ``L_D``. One discriminator step is taken
before each generator step on the same minibatch.
"""

import json
import logging
import math
import time
from collections import OrderedDict
from typing import Any, Dict, IO, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from .config import from_dict, read_config
from .errors import ConfigurationError, ContractViolationError, DimensionError, TrainingDivergedError
from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .tensor import MAX_SEED, Rng, Tensor, check_shape

logger = logging.getLogger(__name__)

MODES = ("recon_only", "adversarial")
RECON_NORMS = ("l1", "l2")
DTYPE_NAMES = ("float32", "float64")

Grads = Dict[str, Tensor]


class LossWeights(NamedTuple):
    lambda_recon: float = 5.0

    def validate(self) -> None:
        if self.lambda_recon < 0:
            raise ConfigurationError("lambda_recon must be non-negative, got {}".format(self.lambda_recon))


# Losses. Each ``*_backward`` returns the gradient of the scalar loss w.r.t. its inputs.

def _check_pair(x: Tensor, x_hat: Tensor) -> None:
    if x.shape != x_hat.shape:
        raise DimensionError("Reconstruction target {} and output {} differ in shape".format(
            list(x.shape), list(x_hat.shape)))


def loss_recon(x: Tensor, x_hat: Tensor, norm: str = "l1") -> float:
    """Mean absolute (``l1``) or mean squared (``l2``) difference over every element."""
    _check_pair(x, x_hat)
    diff = x_hat - x
    if norm == "l1":
        return float(np.abs(diff).mean())
    if norm == "l2":
        return float((diff * diff).mean())
    raise ConfigurationError("recon_norm must be one of {}, got {!r}".format(RECON_NORMS, norm))


def loss_recon_backward(x: Tensor, x_hat: Tensor, norm: str = "l1") -> Tensor:
    """Gradient w.r.t. ``x_hat``; ties in the l1 form get the zero subgradient."""
    _check_pair(x, x_hat)
    diff = x_hat - x
    if norm == "l1":
        return np.sign(diff) / diff.size
    if norm == "l2":
        return 2.0 * diff / diff.size
    raise ConfigurationError("recon_norm must be one of {}, got {!r}".format(RECON_NORMS, norm))


def loss_adv_g(d_fake: Tensor) -> float:
    return float(((1.0 - d_fake) ** 2).mean())


def loss_adv_g_backward(d_fake: Tensor) -> Tensor:
    return -2.0 * (1.0 - d_fake) / d_fake.size


def loss_adv_d(d_real: Tensor, d_fake: Tensor) -> float:
    return float(((1.0 - d_real) ** 2).mean() + (d_fake ** 2).mean())


def loss_adv_d_backward(d_real: Tensor, d_fake: Tensor) -> Tuple[Tensor, Tensor]:
    return -2.0 * (1.0 - d_real) / d_real.size, 2.0 * d_fake / d_fake.size


def total_losses(l_recon: float, l_adv_g: float, l_adv_d: float,
                 weights: Optional[LossWeights] = None) -> Tuple[float, float]:
    """Combine component losses into ``(L_G, L_D)``."""
    weights = weights or LossWeights()
    return weights.lambda_recon * l_recon + l_adv_g, l_adv_d


class AdamState(object):
    """Bias-corrected Adam; moments are created lazily, shaped like their parameters."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError("learning rate must be positive, got {}".format(lr))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.first: Dict[str, Tensor] = OrderedDict()
        self.second: Dict[str, Tensor] = OrderedDict()
        self.step_count = 0

    def step(self, params: Dict[str, Tensor], grads: Grads) -> None:
        """Update ``params`` in place."""
        if set(params) != set(grads):
            missing = sorted(set(params) - set(grads))
            extra = sorted(set(grads) - set(params))
            raise ContractViolationError("Gradients do not match parameters (missing {}, unexpected {})".format(
                missing, extra))
        for name, value in params.items():
            if grads[name].shape != value.shape:
                raise ContractViolationError("Gradient for {} has shape {}, parameter is {}".format(
                    name, list(grads[name].shape), list(value.shape)))
            if name in self.first and self.first[name].shape != value.shape:
                raise ContractViolationError("Moments for {} are shaped {}, parameter is {}".format(
                    name, list(self.first[name].shape), list(value.shape)))

        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in params.items():
            grad = grads[name]
            first = self.first.get(name)
            if first is None:
                first = self.first[name] = np.zeros_like(value)
                self.second[name] = np.zeros_like(value)
            second = self.second[name]
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            value -= self.lr * (first / correction1) / (np.sqrt(second / correction2) + self.eps)

    def __repr__(self):
        return '<{0.__class__.__name__}: lr={0.lr} step={0.step_count}>'.format(self)


def adam_step(state: AdamState, params: Dict[str, Tensor], grads: Grads) -> Dict[str, Tensor]:
    state.step(params, grads)
    return params


def crop_segment(utterance: Tensor, rng: Rng, frames: int = 128) -> Tensor:
    """Take a random ``frames``-long window, zero-padding short utterances on the right."""
    check_shape(utterance, 2, "utterance")
    t = utterance.shape[0]
    if t > frames:
        start = rng.integers(0, t - frames + 1)
        return utterance[start:start + frames].copy()
    if t < frames:
        return np.pad(utterance, ((0, frames - t), (0, 0)))
    return utterance.copy()


class TrainConfig(NamedTuple):
    lr_g: float = 1e-4
    lr_d: float = 2e-5
    batch: int = 8
    segment_frames: int = 128
    epochs: int = 100
    steps_per_epoch: int = 100
    seed: int = 0
    mode: str = "adversarial"
    lambda_recon: float = 5.0
    recon_norm: str = "l1"
    n_speakers: int = 4
    log_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    target_gain: float = 0.25
    dtype: str = "float64"

    def validate(self) -> None:
        if self.segment_frames < 16:
            raise ConfigurationError("training.segment_frames must be at least 16, got {}".format(
                self.segment_frames))
        if self.batch < 1:
            raise ConfigurationError("training.batch must be at least 1, got {}".format(self.batch))
        for name in ("epochs", "seed"):
            if getattr(self, name) < 0:
                raise ConfigurationError("training.{} must be non-negative".format(name))
        # held-out evaluation draws from seed + 1
        if self.seed >= MAX_SEED:
            raise ConfigurationError("training.seed must be below {}, got {}".format(MAX_SEED, self.seed))
        for name in ("steps_per_epoch", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError("training.{} must be at least 1".format(name))
        if self.n_speakers < 2:
            raise ConfigurationError("training.n_speakers must be at least 2, got {}".format(self.n_speakers))
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigurationError("training learning rates must be positive")
        if self.mode not in MODES:
            raise ConfigurationError("training.mode must be one of {}, got {!r}".format(MODES, self.mode))
        if self.recon_norm not in RECON_NORMS:
            raise ConfigurationError("training.recon_norm must be one of {}, got {!r}".format(
                RECON_NORMS, self.recon_norm))
        if self.dtype not in DTYPE_NAMES:
            raise ConfigurationError("training.dtype must be one of {}, got {!r}".format(DTYPE_NAMES, self.dtype))
        self.loss_weights.validate()

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_recon)

    @classmethod
    def from_dict(cls, data, section="training") -> "TrainConfig":
        return from_dict(cls, data, section)


class RunConfig(NamedTuple):
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    training: TrainConfig = TrainConfig()

    def validate(self) -> None:
        self.generator.validate()
        self.discriminator.validate()
        self.training.validate()
        if self.training.mode == "adversarial" and self.training.segment_frames < self.discriminator.min_frames:
            raise ConfigurationError("training.segment_frames={} is shorter than the discriminator's {}".format(
                self.training.segment_frames, self.discriminator.min_frames))

    @classmethod
    def toy(cls, **training) -> "RunConfig":
        return cls(GeneratorConfig.toy(), DiscriminatorConfig.toy(), TrainConfig(**training))

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("A run config must be a mapping of sections, got {!r}".format(data))
        unknown = sorted(set(data) - set(cls._fields))
        if unknown:
            raise ConfigurationError("Unknown section(s) in config: {}".format(", ".join(unknown)))
        config = cls(
            GeneratorConfig.from_dict(data.get("generator")),
            DiscriminatorConfig.from_dict(data.get("discriminator")),
            TrainConfig.from_dict(data.get("training")),
        )
        config.validate()
        return config


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(read_config(path))


class Batch(NamedTuple):
    z: Tensor
    s: Tensor
    x: Tensor
    speakers: List[int]


class SyntheticSpeakers(object):
    """Multi-speaker toy task: ``x = scale[speaker] * z A`` frame by frame.

    ``A`` is one fixed random map; each speaker owns a scale (evenly spaced in
    ``[0.8, 1.2]``) and a fixed embedding, so converting ``z`` needs the
    speaker embedding.
    """

    def __init__(self, in_dim: int, out_dim: int, spk_dim: int, n_speakers: int, rng: Rng,
                 target_gain: float = 0.25, dtype=np.float64):
        if n_speakers < 2:
            raise ConfigurationError("need at least 2 speakers, got {}".format(n_speakers))
        self.in_dim, self.out_dim, self.spk_dim = in_dim, out_dim, spk_dim
        self.dtype = dtype
        self.mapping = rng.normal((in_dim, out_dim), std=target_gain / math.sqrt(in_dim), dtype=dtype)
        self.scales = np.linspace(0.8, 1.2, n_speakers).astype(dtype)
        self.embeddings = rng.normal((n_speakers, spk_dim), dtype=dtype)

    @property
    def n_speakers(self) -> int:
        return len(self.scales)

    def target(self, z: Tensor, speaker: int) -> Tensor:
        return self.scales[speaker] * (z @ self.mapping)

    def utterance(self, rng: Rng, speaker: int, frames: int) -> Tuple[Tensor, Tensor]:
        z = rng.normal((frames, self.in_dim), dtype=self.dtype)
        return z, self.target(z, speaker)

    def batch(self, rng: Rng, size: int, segment: int) -> Batch:
        zs, xs, speakers = [], [], []
        for _ in range(size):
            speaker = rng.integers(0, self.n_speakers)
            length = rng.integers(segment // 2, 2 * segment + 1)
            z, x = self.utterance(rng, speaker, length)
            # crop both streams with one draw so frames stay aligned
            joint = crop_segment(np.concatenate([z, x], axis=1), rng, segment)
            zs.append(joint[:, :self.in_dim])
            xs.append(joint[:, self.in_dim:])
            speakers.append(speaker)
        return Batch(np.stack(zs), self.embeddings[speakers], np.stack(xs), speakers)


def evaluate_generator(generator: Generator, dataset: SyntheticSpeakers, rng: Rng, utterances: int = 8,
                       frames: int = 128, norm: str = "l1") -> float:
    """Reconstruction loss of ``generator`` over freshly drawn, uncropped utterances."""
    total, count = 0.0, 0
    for _ in range(utterances):
        speaker = rng.integers(0, dataset.n_speakers)
        z, x = dataset.utterance(rng, speaker, frames)
        x_hat = generator(z[None], dataset.embeddings[speaker][None])
        total += loss_recon(x[None], x_hat, norm) * x.size
        count += x.size
    return total / count if count else 0.0


class TrainReport(object):
    def __init__(self, mode: str, run_config: RunConfig, generator: Generator,
                 discriminator: Optional[Discriminator], dataset: SyntheticSpeakers):
        self.mode = mode
        self.run_config = run_config
        self.generator = generator
        self.discriminator = discriminator
        self.dataset = dataset
        self.records: List[Dict[str, Any]] = []
        self.steps = 0
        self.d_output_range: Optional[Tuple[float, float]] = None

    @property
    def final(self) -> Dict[str, Optional[float]]:
        """Losses averaged over the last logging interval; empty when nothing ran."""
        if not self.records:
            return {}
        return {key: self.records[-1][key] for key in ("L_recon", "L_adv_G", "L_adv_D")}

    def curve(self, wall_clock: bool = False) -> List[Dict[str, Any]]:
        keys = ("step", "L_recon", "L_adv_G", "L_adv_D") + (("wall_ms",) if wall_clock else ())
        return [OrderedDict((key, record[key]) for key in keys) for record in self.records]

    def write_jsonl(self, stream: IO[str], wall_clock: bool = True) -> None:
        for record in self.curve(wall_clock):
            stream.write(json.dumps(record) + "\n")

    def __repr__(self):
        return '<{0.__class__.__name__}: mode={0.mode} steps={0.steps}>'.format(self)


def _track(interval: Dict[str, List[float]], losses: Dict[str, Optional[float]]) -> None:
    for key, value in losses.items():
        if value is not None:
            interval.setdefault(key, []).append(value)


def _check_finite(step: int, losses: Dict[str, Optional[float]]) -> None:
    if any(value is not None and not math.isfinite(value) for value in losses.values()):
        raise TrainingDivergedError(step, losses)


def _merge(into: Grads, grads: Grads) -> None:
    for name, value in grads.items():
        into[name] = into[name] + value if name in into else value


def train_toy(config: Union[RunConfig, TrainConfig], mode: Optional[str] = None) -> TrainReport:
    """Train on the synthetic speaker task.

    :param config: a full run config, or just the training section (toy networks are used then)
    :param mode: ``recon_only`` or ``adversarial``; overrides ``config.training.mode``
    :return: the report, holding the trained networks and the logged loss curve
    """
    run = config if isinstance(config, RunConfig) else RunConfig.toy(**config._asdict())
    if mode is not None:
        run = run._replace(training=run.training._replace(mode=mode))
    run.validate()
    settings = run.training
    dtype = np.dtype(settings.dtype)

    rng = Rng(settings.seed)
    dataset = SyntheticSpeakers(
        run.generator.in_dim, run.generator.out_dim, run.generator.spk_dim, settings.n_speakers, rng,
        settings.target_gain, dtype)
    generator = Generator(run.generator, rng, dtype)
    adversarial = settings.mode == "adversarial"
    discriminator = Discriminator(run.discriminator, rng, dtype) if adversarial else None

    g_params = generator.named_parameters()
    g_optimizer = AdamState(settings.lr_g, settings.beta1, settings.beta2, settings.adam_eps)
    d_optimizer = AdamState(settings.lr_d, settings.beta1, settings.beta2, settings.adam_eps)
    weights = settings.loss_weights

    report = TrainReport(settings.mode, run, generator, discriminator, dataset)
    logger.info("training started", extra={
        "mode": settings.mode, "steps": settings.total_steps, "seed": settings.seed})

    interval: Dict[str, List[float]] = {}
    started = time.perf_counter()
    d_low, d_high = math.inf, -math.inf
    for step in range(1, settings.total_steps + 1):
        batch = dataset.batch(rng, settings.batch, settings.segment_frames)
        losses: Dict[str, Optional[float]] = {"L_recon": None, "L_adv_G": None, "L_adv_D": None}

        if discriminator is not None:
            fake = generator(batch.z, batch.s)
            d_real, real_cache = discriminator.forward(batch.x)
            d_fake, fake_cache = discriminator.forward(fake)
            losses["L_adv_D"] = loss_adv_d(d_real, d_fake)
            _check_finite(step, losses)
            grad_real, grad_fake = loss_adv_d_backward(d_real, d_fake)
            d_grads, _ = discriminator.backward(real_cache, grad_real)
            _merge(d_grads, discriminator.backward(fake_cache, grad_fake)[0])
            d_optimizer.step(discriminator.named_parameters(), d_grads)
            d_low = min(d_low, float(d_real.min()), float(d_fake.min()))
            d_high = max(d_high, float(d_real.max()), float(d_fake.max()))

        x_hat, g_cache = generator.forward(batch.z, batch.s)
        losses["L_recon"] = loss_recon(batch.x, x_hat, settings.recon_norm)
        grad_x_hat = weights.lambda_recon * loss_recon_backward(batch.x, x_hat, settings.recon_norm)
        if discriminator is not None:
            d_fake, fake_cache = discriminator.forward(x_hat)
            losses["L_adv_G"] = loss_adv_g(d_fake)
            d_low, d_high = min(d_low, float(d_fake.min())), max(d_high, float(d_fake.max()))
            _, grad_through_d = discriminator.backward(fake_cache, loss_adv_g_backward(d_fake))
            grad_x_hat = grad_x_hat + grad_through_d
        _check_finite(step, losses)
        g_grads, _, _ = generator.backward(g_cache, grad_x_hat)
        g_optimizer.step(g_params, g_grads)

        _track(interval, losses)
        report.steps = step
        if step % settings.log_every == 0 or step == settings.total_steps:
            record: Dict[str, Any] = OrderedDict([("step", step)])
            for key in ("L_recon", "L_adv_G", "L_adv_D"):
                record[key] = float(np.mean(interval[key])) if key in interval else None
            record["wall_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
            report.records.append(record)
            interval = {}
            logger.info("training progress", extra=dict(record))

    if discriminator is not None and report.steps:
        report.d_output_range = (d_low, d_high)
    logger.info("training finished", extra={"steps": report.steps, "final": report.final})
    return report
