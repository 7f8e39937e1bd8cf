"""
Command line entry point: ``dygan params|gradcheck|bench|train-toy|convert``.

Exit status is 0 on success, 1 when a check or training run fails and 2 for
usage or input errors (bad configs, unreadable or mismatched tensor files).
"""

import json
import os
from typing import List

import click
import numpy as np

from . import __version__
from .bench import DEFAULT_LENGTHS, run_benchmark
from .errors import CheckpointError, ConfigurationError, DimensionError, TensorFormatError, TrainingDivergedError
from .gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, LAYER_KINDS, run_suite
from .layers import attention_param_count
from .logs import configure_logging
from .model import Discriminator, Generator, count_params, load_checkpoint, save_checkpoint
from .reports import render_bench, render_gradcheck, render_params
from .tensor import MAX_SEED, Rng, load_tensor, save_tensor
from .training import evaluate_generator, load_run_config, train_toy

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class InputError(click.ClickException):
    """A problem with the command's inputs; exits with status 2."""
    exit_code = 2


def _parse_lengths(ctx, param, value) -> List[int]:
    try:
        lengths = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter("expected comma separated frame counts, got {!r}".format(value))
    if not lengths or any(t < 1 for t in lengths):
        raise click.BadParameter("frame counts must be positive, got {!r}".format(value))
    return lengths


def _run_config(path):
    try:
        return load_run_config(path)
    except ConfigurationError as e:
        raise InputError(str(e))


@click.group()
@click.version_option(__version__, prog_name="dygan")
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default="WARNING",
              show_default=True)
@click.option("--json-logs", is_flag=True, help="Emit log records as JSON objects.")
def cli(log_level, json_logs):
    """Dynamic-convolution voice conversion generator: accounting, checks, benchmarks and toy training."""
    configure_logging(log_level, json_logs)


@cli.command()
@click.argument("config", required=False, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the breakdown as JSON.")
def params(config, as_json):
    """Print per-layer parameter counts for the networks described by CONFIG."""
    run = _run_config(config)
    generator = Generator(run.generator, Rng(0))
    discriminator = Discriminator(run.discriminator, Rng(0))
    breakdowns = [count_params(generator), count_params(discriminator)]
    mixer_params = generator.blocks[0].mixer.param_count()
    attention_params = attention_param_count(run.generator.hidden)
    context = {
        "breakdowns": breakdowns,
        "total": sum(breakdown.total for breakdown in breakdowns),
        "mixer_kind": run.generator.mixer,
        "hidden": run.generator.hidden,
        "k": run.generator.k,
        "h": run.generator.h,
        "mixer_params": mixer_params,
        "attention_params": attention_params,
        "ratio": attention_params / mixer_params,
    }
    if as_json:
        click.echo(json.dumps({
            "networks": {
                breakdown.network: {
                    "rows": [row._asdict() for row in breakdown.rows],
                    "total": breakdown.total,
                } for breakdown in breakdowns
            },
            "total": context["total"],
            "mixer_params": mixer_params,
            "attention_params": attention_params,
            "ratio": context["ratio"],
        }, indent=2, sort_keys=True))
    else:
        click.echo(render_params(context), nl=False)


@cli.command()
@click.option("--seeds", default=5, show_default=True, type=click.IntRange(min=1), help="Seeds per layer kind.")
@click.option("--tol", default=DEFAULT_TOLERANCE, show_default=True, type=float, help="Relative error tolerance.")
@click.option("--step", default=DEFAULT_STEP, show_default=True, type=float, help="Finite-difference step.")
@click.option("--kind", "kinds", multiple=True, type=click.Choice(LAYER_KINDS), help="Check only these kinds.")
@click.option("--json", "as_json", is_flag=True, help="Print the reports as JSON.")
@click.pass_context
def gradcheck(ctx, seeds, tol, step, kinds, as_json):
    """Compare every backward pass against central finite differences."""
    reports = run_suite(seeds=seeds, tolerance=tol, step=step, kinds=kinds or None)
    if as_json:
        click.echo(json.dumps([report.to_dict() for report in reports], indent=2))
    else:
        click.echo(render_gradcheck(reports, tol, step), nl=False)
    if not all(report.passed for report in reports):
        ctx.exit(1)


@cli.command()
@click.option("--lengths", default=",".join(str(t) for t in DEFAULT_LENGTHS), show_default=True,
              callback=_parse_lengths, help="Comma separated sequence lengths in frames.")
@click.option("--reps", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--warmup", default=2, show_default=True, type=click.IntRange(min=0))
@click.option("--seed", default=0, show_default=True, type=click.IntRange(0, MAX_SEED))
@click.option("--threads", default=1, show_default=True, type=click.IntRange(min=1),
              help="Run repetitions concurrently on this many threads.")
@click.option("--batch", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--config", type=click.Path(dir_okay=False), help="Run config whose generator section is timed.")
@click.option("--json-out", type=click.Path(dir_okay=False, writable=True), help="Also write the result as JSON.")
def bench(lengths, reps, warmup, seed, threads, batch, config, json_out):
    """Time generator forward passes and report latency and real time factor."""
    run = _run_config(config)
    result = run_benchmark(run.generator, lengths, reps=reps, warmup=warmup, seed=seed, threads=threads,
                           batch=batch)
    click.echo(render_bench(result), nl=False)
    if json_out:
        with open(json_out, "w") as f:
            f.write(result.to_json() + "\n")


@cli.command("train-toy")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False),
              help="Directory for the loss logs and checkpoints.")
@click.option("--mode", type=click.Choice(["recon_only", "adversarial"]), help="Override training.mode.")
@click.option("--eval-utterances", default=8, show_default=True, type=click.IntRange(min=0),
              help="Held-out synthetic utterances scored after training.")
def train_toy_command(config, out_dir, mode, eval_utterances):
    """Train on the synthetic multi-speaker task and write logs and checkpoints."""
    run = _run_config(config)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise InputError("Cannot create {}: {}".format(out_dir, e.strerror))
    try:
        report = train_toy(run, mode)
    except ConfigurationError as e:
        raise InputError(str(e))
    except TrainingDivergedError as e:
        raise click.ClickException(str(e))

    with open(os.path.join(out_dir, "train_log.jsonl"), "w") as f:
        report.write_jsonl(f, wall_clock=True)
    with open(os.path.join(out_dir, "loss_curve.jsonl"), "w") as f:
        report.write_jsonl(f, wall_clock=False)
    save_checkpoint(report.generator, os.path.join(out_dir, "generator.ckpt"))
    if report.discriminator is not None:
        save_checkpoint(report.discriminator, os.path.join(out_dir, "discriminator.ckpt"))

    click.echo("{} steps ({})".format(report.steps, report.mode))
    for key, value in report.final.items():
        if value is not None:
            click.echo("final {}: {:.6f}".format(key, value))
    if report.d_output_range is not None:
        click.echo("discriminator outputs in [{:.6f}, {:.6f}]".format(*report.d_output_range))
    if report.steps and eval_utterances:
        held_out = evaluate_generator(
            report.generator, report.dataset, Rng(run.training.seed + 1), eval_utterances,
            run.training.segment_frames, run.training.recon_norm)
        click.echo("held-out {}: {:.6f}".format(run.training.recon_norm, held_out))


@cli.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("z_file", type=click.Path(dir_okay=False))
@click.argument("spk_file", type=click.Path(dir_okay=False))
@click.argument("out_file", type=click.Path(dir_okay=False, writable=True))
def convert(checkpoint, z_file, spk_file, out_file):
    """Run a trained generator over content features Z_FILE [t, in_dim] with speaker SPK_FILE [spk_dim]."""
    try:
        generator = load_checkpoint(checkpoint, kind="generator")
    except CheckpointError as e:
        raise InputError(str(e))
    try:
        z = load_tensor(z_file)
        s = load_tensor(spk_file)
    except IOError as e:
        raise InputError("Cannot read {}: {}".format(e.filename, e.strerror))
    except TensorFormatError as e:
        raise InputError(str(e))

    config = generator.config
    if z.ndim != 2 or z.shape[1] != config.in_dim or z.shape[0] < 1:
        raise InputError("{} has shape {}, expected [t, {}]".format(z_file, list(z.shape), config.in_dim))
    if s.shape != (config.spk_dim,):
        raise InputError("{} has shape {}, expected [{}]".format(spk_file, list(s.shape), config.spk_dim))

    dtype = generator.input_conv.params["weight"].dtype
    try:
        out = generator(z[None].astype(dtype), s[None].astype(dtype))[0]
    except DimensionError as e:
        raise InputError(str(e))
    save_tensor(out_file, np.ascontiguousarray(out))
    click.echo("wrote {} {}".format(out_file, list(out.shape)))


def main():
    cli(prog_name="dygan")


if __name__ == "__main__":
    main()
