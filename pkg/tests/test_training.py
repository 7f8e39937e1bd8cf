import io
import json
import os

import mock
import numpy as np
import pytest

from dygan.errors import ConfigurationError, ContractViolationError, DimensionError, TrainingDivergedError
from dygan.model import DiscriminatorConfig, Generator, GeneratorConfig
from dygan.tensor import Rng
from dygan.training import (
    AdamState, LossWeights, RunConfig, SyntheticSpeakers, TrainConfig, adam_step, crop_segment,
    evaluate_generator, load_run_config, loss_adv_d, loss_adv_d_backward, loss_adv_g, loss_adv_g_backward,
    loss_recon, loss_recon_backward, total_losses, train_toy,
)

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def short_run(**overrides):
    settings = dict(epochs=1, steps_per_epoch=6, batch=2, segment_frames=16, log_every=3)
    settings.update(overrides)
    return RunConfig(GeneratorConfig(in_dim=4, hidden=8, out_dim=4, n_blocks=1, k=3, h=2, spk_dim=3),
                     DiscriminatorConfig(base_channels=2, max_channels=4, n_blocks=2, post_kernel=3),
                     TrainConfig(**settings))


class TestLosses(object):
    def test_recon_identity(self):
        x = Rng(0).normal((2, 3, 4))
        assert loss_recon(x, x.copy()) == 0.0

    def test_recon_constant_offset(self):
        assert loss_recon(np.zeros((1, 2, 3)), np.full((1, 2, 3), 2.0)) == 2.0

    def test_recon_matches_scalar_loop(self):
        rng = Rng(1)
        x, x_hat = rng.normal((2, 3, 4)), rng.normal((2, 3, 4))
        total = 0.0
        for value, estimate in zip(x.flat, x_hat.flat):
            total += abs(value - estimate)
        assert loss_recon(x, x_hat) == pytest.approx(total / x.size)

    def test_recon_l2(self):
        assert loss_recon(np.zeros((1, 1, 2)), np.array([[[1.0, 3.0]]]), "l2") == 5.0

    def test_recon_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss_recon(np.zeros((1, 2, 3)), np.zeros((1, 3, 3)))

    def test_recon_unknown_norm(self):
        with pytest.raises(ConfigurationError):
            loss_recon(np.zeros(2), np.zeros(2), "l3")

    @pytest.mark.parametrize("norm", ["l1", "l2"])
    def test_recon_backward_shape(self, norm):
        rng = Rng(2)
        x, x_hat = rng.normal((2, 3, 4)), rng.normal((2, 3, 4))
        assert loss_recon_backward(x, x_hat, norm).shape == x.shape

    def test_adv_g(self):
        assert loss_adv_g(np.ones((3, 1))) == 0.0
        assert loss_adv_g(np.zeros((3, 1))) == 1.0
        assert loss_adv_g(np.array([[0.5], [1.0]])) == pytest.approx(0.125)

    def test_adv_d(self):
        assert loss_adv_d(np.ones((2, 1)), np.zeros((2, 1))) == 0.0
        assert loss_adv_d(np.zeros((2, 1)), np.ones((2, 1))) == 2.0
        assert loss_adv_d(np.array([[1.0], [0.5]]), np.array([[0.5]])) == pytest.approx(0.375)

    def test_adv_backward_signs(self):
        grad_real, grad_fake = loss_adv_d_backward(np.array([[0.5]]), np.array([[0.5]]))
        assert grad_real[0, 0] < 0 < grad_fake[0, 0]
        assert loss_adv_g_backward(np.array([[0.5]]))[0, 0] < 0

    def test_total_losses(self):
        assert total_losses(0.2, 0.3, 0.4) == pytest.approx((1.3, 0.4))

    def test_zero_lambda_drops_reconstruction(self):
        assert total_losses(10.0, 0.3, 0.4, LossWeights(0.0)) == pytest.approx((0.3, 0.4))

    def test_negative_lambda(self):
        with pytest.raises(ConfigurationError):
            LossWeights(-1.0).validate()


class TestAdam(object):
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.5, -2.0])}
        adam_step(AdamState(0.1), params, {"w": np.zeros(2)})
        assert params["w"].tolist() == [1.5, -2.0]

    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([0.0])}
        adam_step(AdamState(0.01), params, {"w": np.array([1.0])})
        assert params["w"][0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic(self):
        state = AdamState(0.1)
        params = {"w": np.array([1.0])}
        for _ in range(100):
            state.step(params, {"w": 2.0 * params["w"]})
        assert abs(params["w"][0]) < 0.1
        assert state.step_count == 100

    def test_deterministic(self):
        def run():
            state = AdamState(0.05)
            params = {"w": np.array([1.0, 2.0])}
            for step in range(5):
                state.step(params, {"w": params["w"] * step})
            return params["w"]
        assert run().tobytes() == run().tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolationError):
            AdamState(0.1).step({"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_missing_gradient(self):
        with pytest.raises(ContractViolationError) as e:
            AdamState(0.1).step({"w": np.zeros(2), "b": np.zeros(1)}, {"w": np.zeros(2)})
        assert "'b'" in str(e.value)

    def test_learning_rate_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            AdamState(0.0)


class TestCropSegment(object):
    def test_exact_length(self):
        utterance = Rng(0).normal((128, 3))
        cropped = crop_segment(utterance, Rng(1))
        np.testing.assert_array_equal(cropped, utterance)
        assert cropped is not utterance

    def test_short_utterance_is_padded(self):
        utterance = Rng(0).normal((100, 3))
        cropped = crop_segment(utterance, Rng(1))
        assert cropped.shape == (128, 3)
        np.testing.assert_array_equal(cropped[:100], utterance)
        assert not cropped[100:].any()

    def test_long_utterance_start_is_seeded(self):
        utterance = np.arange(1000, dtype=np.float64)[:, None]
        first = crop_segment(utterance, Rng(5))
        second = crop_segment(utterance, Rng(5))
        assert first.shape == (128, 1)
        np.testing.assert_array_equal(first, second)
        start = int(first[0, 0])
        np.testing.assert_array_equal(first[:, 0], np.arange(start, start + 128))

    def test_rank_checked(self):
        with pytest.raises(DimensionError):
            crop_segment(np.zeros(5), Rng(0))


class TestConfig(object):
    def test_defaults(self):
        config = TrainConfig()
        assert (config.lr_g, config.lr_d, config.batch, config.segment_frames) == (1e-4, 2e-5, 8, 128)
        assert config.total_steps == 10000
        assert config.loss_weights == LossWeights(5.0)

    @pytest.mark.parametrize("changes", [
        {"segment_frames": 8},
        {"batch": 0},
        {"n_speakers": 1},
        {"mode": "gan"},
        {"recon_norm": "huber"},
        {"dtype": "float16"},
        {"lr_d": 0.0},
        {"seed": -1},
        {"seed": 2 ** 64 - 1},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigurationError):
            TrainConfig(**changes).validate()

    def test_segment_shorter_than_discriminator_needs(self):
        with pytest.raises(ConfigurationError) as e:
            RunConfig(discriminator=DiscriminatorConfig(n_blocks=5), training=TrainConfig(segment_frames=16)).validate()
        assert "discriminator" in str(e.value)

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"optimiser": {}})

    def test_missing_path_gives_defaults(self):
        assert load_run_config(None) == RunConfig()

    @pytest.mark.parametrize("name", ["default.json", "toy-recon.json", "toy-adversarial.json"])
    def test_shipped_configs_load(self, name):
        load_run_config(os.path.join(CONFIGS, name)).validate()

    def test_toy_recon_config(self):
        config = load_run_config(os.path.join(CONFIGS, "toy-recon.json"))
        assert config.generator == GeneratorConfig.toy()
        assert config.training.mode == "recon_only"
        assert config.training.total_steps == 2000


class TestSyntheticSpeakers(object):
    @pytest.fixture
    def dataset(self):
        return SyntheticSpeakers(4, 3, 2, 3, Rng(0))

    def test_batch_shapes(self, dataset):
        batch = dataset.batch(Rng(1), 5, 16)
        assert batch.z.shape == (5, 16, 4)
        assert batch.x.shape == (5, 16, 3)
        assert batch.s.shape == (5, 2)
        assert len(batch.speakers) == 5

    def test_targets_follow_the_speaker_map(self, dataset):
        batch = dataset.batch(Rng(2), 4, 16)
        for i, speaker in enumerate(batch.speakers):
            np.testing.assert_allclose(batch.x[i], dataset.target(batch.z[i], speaker), atol=1e-12)
            np.testing.assert_array_equal(batch.s[i], dataset.embeddings[speaker])

    def test_speakers_differ(self, dataset):
        z = Rng(3).normal((6, 4))
        assert not np.allclose(dataset.target(z, 0), dataset.target(z, 2))

    def test_needs_two_speakers(self):
        with pytest.raises(ConfigurationError):
            SyntheticSpeakers(4, 3, 2, 1, Rng(0))

    def test_evaluate_perfect_generator(self, dataset):
        class Oracle(object):
            def __call__(self, z, s):
                speaker = int(np.argmin(np.abs(dataset.embeddings - s[0]).sum(axis=1)))
                return dataset.target(z[0], speaker)[None]

        assert evaluate_generator(Oracle(), dataset, Rng(4), utterances=3, frames=20) == pytest.approx(0.0)


class TestTrainToy(object):
    def test_zero_epochs(self):
        report = train_toy(short_run(epochs=0))
        assert report.steps == 0
        assert report.records == []
        assert report.final == {}
        assert report.d_output_range is None

    def test_recon_only_records(self):
        report = train_toy(short_run(), "recon_only")
        assert report.discriminator is None
        assert [record["step"] for record in report.records] == [3, 6]
        assert all(record["L_adv_G"] is None and record["L_adv_D"] is None for record in report.records)
        assert all(np.isfinite(record["L_recon"]) for record in report.records)

    def test_last_step_is_always_logged(self):
        report = train_toy(short_run(steps_per_epoch=7))
        assert [record["step"] for record in report.records] == [3, 6, 7]

    def test_adversarial_records(self):
        report = train_toy(short_run(mode="adversarial"))
        assert report.discriminator is not None
        for record in report.records:
            assert all(np.isfinite(record[key]) for key in ("L_recon", "L_adv_G", "L_adv_D"))
        low, high = report.d_output_range
        assert 0.0 < low <= high < 1.0

    def test_mode_argument_overrides_config(self):
        assert train_toy(short_run(mode="adversarial"), "recon_only").mode == "recon_only"

    def test_same_seed_same_curve(self):
        first, second = io.StringIO(), io.StringIO()
        train_toy(short_run(mode="adversarial")).write_jsonl(first, wall_clock=False)
        train_toy(short_run(mode="adversarial")).write_jsonl(second, wall_clock=False)
        assert first.getvalue() == second.getvalue()
        assert "wall_ms" not in first.getvalue()

    def test_different_seed_different_curve(self):
        first = train_toy(short_run(seed=1)).curve()
        second = train_toy(short_run(seed=2)).curve()
        assert first != second

    def test_wall_clock_log(self):
        stream = io.StringIO()
        train_toy(short_run()).write_jsonl(stream)
        records = [json.loads(line) for line in stream.getvalue().splitlines()]
        assert list(records[0]) == ["step", "L_recon", "L_adv_G", "L_adv_D", "wall_ms"]
        assert records[-1]["wall_ms"] >= records[0]["wall_ms"]

    def test_training_section_alone_uses_toy_networks(self):
        report = train_toy(TrainConfig(epochs=0, mode="recon_only"))
        assert report.generator.config == GeneratorConfig.toy()

    def test_float32_run(self):
        report = train_toy(short_run(dtype="float32"))
        assert report.generator.input_conv.params["weight"].dtype == np.float32

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            train_toy(short_run(segment_frames=4))

    def test_divergence(self):
        with mock.patch("dygan.training.loss_recon", return_value=float("nan")):
            with pytest.raises(TrainingDivergedError) as e:
                train_toy(short_run())
        assert e.value.step == 1
        assert "L_recon=nan" in str(e.value)

    def test_generator_parameters_change(self):
        untrained = Generator(short_run().generator, Rng(0))
        report = train_toy(short_run())
        assert report.generator.named_parameters().keys() == untrained.named_parameters().keys()
        assert any(
            not np.array_equal(value, untrained.named_parameters()[name])
            for name, value in report.generator.named_parameters().items()
        )

    @pytest.mark.slow
    def test_recon_only_converges(self):
        config = load_run_config(os.path.join(CONFIGS, "toy-recon.json"))
        report = train_toy(config)
        assert report.steps == 2000
        assert report.final["L_recon"] < 0.05
        held_out = evaluate_generator(report.generator, report.dataset, Rng(config.training.seed + 1))
        assert held_out < 2 * report.final["L_recon"]

    @pytest.mark.slow
    def test_adversarial_completes(self):
        report = train_toy(load_run_config(os.path.join(CONFIGS, "toy-adversarial.json")))
        assert report.steps == 500
        for record in report.records:
            assert all(np.isfinite(record[key]) for key in ("L_recon", "L_adv_G", "L_adv_D"))
        low, high = report.d_output_range
        assert 0.0 < low and high < 1.0
