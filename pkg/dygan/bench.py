"""
Generator latency benchmark.

Times ``Generator.forward`` at several sequence lengths on 32-bit inputs and
reports order statistics per length, frames per second and a synthetic real
time factor (wall seconds per second of audio at a 10 ms hop).
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .layers import attention_param_count
from .model import Generator, GeneratorConfig, count_params
from .tensor import Rng

logger = logging.getLogger(__name__)

HOP_SECONDS = 0.01
DEFAULT_LENGTHS = (128, 256, 512, 1024)
NO_VOCODER_NOTE = (
    "Generator-only timing: no vocoder runs, so this RTF is not comparable with end-to-end figures "
    "that include waveform synthesis."
)


class LengthTiming(NamedTuple):
    frames: int
    samples: List[float]
    median: float
    p10: float
    p90: float
    frames_per_second: float
    rtf: float

    @classmethod
    def from_samples(cls, frames: int, samples: Sequence[float], batch: int = 1) -> "LengthTiming":
        p10, median, p90 = (float(v) for v in np.percentile(samples, [10, 50, 90]))
        fps = frames * batch / median if median > 0 else float("inf")
        return cls(frames, [float(s) for s in samples], median, p10, p90, fps, median / (frames * HOP_SECONDS))


class BenchResult(NamedTuple):
    config: GeneratorConfig
    timings: List[LengthTiming]
    reps: int
    warmup: int
    seed: int
    threads: int
    batch: int
    generator_params: int
    mixer_params: int
    attention_params: int
    note: str = NO_VOCODER_NOTE

    @property
    def lengths(self) -> List[int]:
        return [timing.frames for timing in self.timings]

    @property
    def param_ratio(self) -> float:
        """Parameters of an equivalent self-attention block per parameter of one mixing layer."""
        return self.attention_params / self.mixer_params if self.mixer_params else float("inf")

    def scaling(self, short: int, long: int) -> float:
        by_length = {timing.frames: timing.median for timing in self.timings}
        return by_length[long] / by_length[short]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config._asdict(),
            "lengths": self.lengths,
            "timings": [timing._asdict() for timing in self.timings],
            "reps": self.reps,
            "warmup": self.warmup,
            "seed": self.seed,
            "threads": self.threads,
            "batch": self.batch,
            "generator_params": self.generator_params,
            "mixer_params": self.mixer_params,
            "attention_params": self.attention_params,
            "param_ratio": self.param_ratio,
            "hop_seconds": HOP_SECONDS,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BenchResult":
        return cls(
            config=GeneratorConfig.from_dict(data["config"]),
            timings=[LengthTiming(**timing) for timing in data["timings"]],
            reps=data["reps"],
            warmup=data["warmup"],
            seed=data["seed"],
            threads=data["threads"],
            batch=data["batch"],
            generator_params=data["generator_params"],
            mixer_params=data["mixer_params"],
            attention_params=data["attention_params"],
            note=data["note"],
        )


def _validate(lengths: Sequence[int], reps: int, warmup: int, threads: int, batch: int) -> None:
    if not lengths or any(t < 1 for t in lengths):
        raise ConfigurationError("bench lengths must be positive frame counts, got {}".format(list(lengths)))
    if reps < 1:
        raise ConfigurationError("reps must be at least 1, got {}".format(reps))
    if warmup < 0:
        raise ConfigurationError("warmup must be non-negative, got {}".format(warmup))
    if threads < 1 or batch < 1:
        raise ConfigurationError("threads and batch must be at least 1")


def run_benchmark(config: Optional[GeneratorConfig] = None, lengths: Sequence[int] = DEFAULT_LENGTHS, reps: int = 10,
                  warmup: int = 2, seed: int = 0, threads: int = 1, batch: int = 1) -> BenchResult:
    """Time the generator forward pass.

    :param threads: workers for concurrent repetitions; 1 measures honest single-core latency
    """
    _validate(lengths, reps, warmup, threads, batch)
    config = config or GeneratorConfig()
    rng = Rng(seed)
    generator = Generator(config, rng, np.float32)
    s = rng.normal((batch, config.spk_dim), dtype=np.float32)

    timings = []
    for frames in lengths:
        z = rng.normal((batch, frames, config.in_dim), dtype=np.float32)

        def run_once(_=None):
            started = time.perf_counter()
            generator(z, s)
            return time.perf_counter() - started

        for _ in range(warmup):
            generator(z, s)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                samples = list(executor.map(run_once, range(reps)))
        else:
            samples = [run_once() for _ in range(reps)]
        timing = LengthTiming.from_samples(frames, samples, batch)
        logger.info("benchmarked length", extra={"frames": frames, "median_s": timing.median, "rtf": timing.rtf})
        timings.append(timing)

    return BenchResult(
        config=config,
        timings=timings,
        reps=reps,
        warmup=warmup,
        seed=seed,
        threads=threads,
        batch=batch,
        generator_params=count_params(generator).total,
        mixer_params=generator.blocks[0].mixer.param_count(),
        attention_params=attention_param_count(config.hidden),
    )
