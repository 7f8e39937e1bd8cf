import json
import struct

import numpy as np
import pytest

from dygan.errors import CheckpointError, ConfigurationError, ContractViolationError, DimensionError
from dygan.model import (
    CHECKPOINT_MAGIC, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, count_params,
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from dygan.tensor import Rng

SMALL = GeneratorConfig(in_dim=6, hidden=8, out_dim=5, n_blocks=2, k=3, h=2, spk_dim=3)
SMALL_D = DiscriminatorConfig(base_channels=2, max_channels=4, n_blocks=2, post_kernel=3)


@pytest.fixture
def generator():
    return Generator(SMALL, Rng(0))


def speaker_inputs(rng, b=2, t=7, config=SMALL):
    return rng.normal((b, t, config.in_dim)), rng.normal((b, config.spk_dim))


class TestGeneratorConfig(object):
    def test_defaults(self):
        config = GeneratorConfig()
        assert (config.in_dim, config.hidden, config.out_dim, config.n_blocks, config.k, config.h,
                config.spk_dim) == (512, 256, 80, 6, 3, 8, 128)

    @pytest.mark.parametrize("changes, message", [
        ({"h": 7}, "must divide"),
        ({"k": 4}, "odd"),
        ({"n_blocks": 0}, "n_blocks"),
        ({"mixer": "attention"}, "mixer"),
        ({"adapter": "film"}, "adapter"),
    ])
    def test_invalid(self, changes, message):
        with pytest.raises(ConfigurationError) as e:
            GeneratorConfig()._replace(**changes).validate()
        assert message in str(e.value)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigurationError) as e:
            GeneratorConfig.from_dict({"hiden": 128})
        assert "hiden" in str(e.value)


class TestGenerator(object):
    def test_output_shape_preserves_time(self, generator):
        z, s = speaker_inputs(Rng(1), b=3, t=1)
        assert generator(z, s).shape == (3, 1, 5)

    def test_default_config_shape(self):
        rng = Rng(2)
        z, s = speaker_inputs(rng, b=1, t=1, config=GeneratorConfig())
        assert Generator(rng=Rng(0))(z, s).shape == (1, 1, 80)

    def test_deterministic(self):
        z, s = speaker_inputs(Rng(3))
        first = Generator(SMALL, Rng(0))(z, s)
        second = Generator(SMALL, Rng(0))(z, s)
        assert first.tobytes() == second.tobytes()

    def test_speaker_reaches_output(self, generator):
        rng = Rng(4)
        z = rng.normal((1, 6, 6))
        assert not np.allclose(generator(z, rng.normal((1, 3))), generator(z, rng.normal((1, 3))))

    @pytest.mark.parametrize("mixer, adapter", [("lconv", "wadain"), ("dynconv", "adain"), ("lconv", "adain")])
    def test_ablation_variants(self, mixer, adapter):
        config = SMALL._replace(mixer=mixer, adapter=adapter)
        generator = Generator(config, Rng(0))
        z, s = speaker_inputs(Rng(5))
        out = generator(z, s)
        assert out.shape == (2, 7, 5)
        assert np.all(np.isfinite(out))
        breakdown = count_params(generator)
        assert all(row.count == row.expected for row in breakdown.rows)

    def test_zeroed_branches_leave_input_and_output_convs(self, generator):
        for block in generator.blocks:
            block.mixer.params["w2"][...] = 0.0
            block.mixer.params["b2"][...] = 0.0
            for layer in (block.conv, block.adapter):
                for name in ("weight", "bias"):
                    layer.params[name][...] = 0.0
        z, s = speaker_inputs(Rng(6))
        hidden = generator.input_conv.forward(z)[0]
        expected = generator.output_conv.forward(hidden)[0]
        np.testing.assert_allclose(generator(z, s), expected, atol=1e-12)

    def test_input_shape_checked(self, generator):
        with pytest.raises(DimensionError):
            generator(np.zeros((1, 4, 5)), np.zeros((1, 3)))
        with pytest.raises(DimensionError):
            generator(np.zeros((1, 4, 6)), np.zeros((2, 3)))

    def test_backward_shapes_and_registry_order(self, generator):
        z, s = speaker_inputs(Rng(7))
        out, cache = generator.forward(z, s)
        grads, grad_z, grad_s = generator.backward(cache, np.ones_like(out))
        assert list(grads) == list(generator.named_parameters())
        assert grad_z.shape == z.shape
        assert grad_s.shape == s.shape

    def test_backward_rejects_wrong_upstream_shape(self, generator):
        out, cache = generator.forward(*speaker_inputs(Rng(8)))
        with pytest.raises(ContractViolationError):
            generator.backward(cache, np.ones((1,) + out.shape[1:]))

    def test_every_parameter_reaches_the_output(self, generator):
        z, s = speaker_inputs(Rng(9))
        reference = generator(z, s)
        for name, value in generator.named_parameters().items():
            saved = value.flat[0]
            value.flat[0] = saved + 1e-3
            changed = generator(z, s)
            value.flat[0] = saved
            assert not np.array_equal(changed, reference), name

    def test_registry_names(self, generator):
        names = list(generator.named_parameters())
        assert names[0] == "input_conv.weight"
        assert "blocks.1.mixer.w1" in names
        assert "blocks.0.adapter.w_gamma" in names
        assert names[-1] == "output_conv.bias"
        assert len(names) == len(set(names))


class TestDiscriminator(object):
    def test_probabilities(self):
        rng = Rng(0)
        out = Discriminator(SMALL_D, rng)(rng.normal((3, 8, 5)))
        assert out.shape == (3, 1)
        assert np.all((out > 0) & (out < 1))

    def test_longer_input_keeps_output_shape(self):
        rng = Rng(1)
        discriminator = Discriminator(SMALL_D, rng)
        assert discriminator(rng.normal((2, 16, 5))).shape == discriminator(rng.normal((2, 32, 5))).shape

    def test_minimum_frames(self):
        discriminator = Discriminator(rng=Rng(0))
        with pytest.raises(DimensionError) as e:
            discriminator(np.zeros((1, 15, 80)))
        assert "16" in str(e.value)

    def test_channel_schedule_is_capped(self):
        assert DiscriminatorConfig().channel_schedule() == [32, 64, 128, 128, 128]

    def test_backward_shapes(self):
        rng = Rng(2)
        discriminator = Discriminator(SMALL_D, rng)
        x = rng.normal((2, 8, 5))
        out, cache = discriminator.forward(x)
        grads, grad_x = discriminator.backward(cache, np.ones_like(out))
        assert list(grads) == list(discriminator.named_parameters())
        assert grad_x.shape == x.shape

    def test_shortcut_only_when_widths_change(self):
        discriminator = Discriminator(DiscriminatorConfig(), Rng(0))
        names = discriminator.layers
        assert "blocks.0.shortcut" in names and "blocks.1.shortcut" in names
        assert "blocks.2.shortcut" not in names


class TestCountParams(object):
    def test_default_generator(self):
        breakdown = count_params(Generator(rng=Rng(0)))
        rows = {row.name: row for row in breakdown.rows}
        assert rows["blocks.0.mixer"].count == 137752
        assert rows["output_conv"].count == 20560
        assert breakdown.total == sum(row.count for row in breakdown.rows) == 3545056
        assert all(row.count == row.expected for row in breakdown.rows)

    def test_default_total_below_ten_million(self):
        total = count_params(Generator(rng=Rng(0))).total + count_params(Discriminator(rng=Rng(0))).total
        assert total < 10000000

    def test_by_kind_is_additive(self):
        breakdown = count_params(Generator(SMALL, Rng(0)))
        assert sum(breakdown.by_kind().values()) == breakdown.total
        assert set(breakdown.by_kind()) == {"conv1d", "layer_norm", "dynconv", "wadain"}


class TestCheckpoints(object):
    def test_save_load_save_is_byte_identical(self, generator, tmp_path):
        first, second = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(generator, first)
        save_checkpoint(load_checkpoint(first), second)
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()

    def test_forward_survives_round_trip(self, generator, tmp_path):
        path = str(tmp_path / "g.ckpt")
        save_checkpoint(generator, path)
        z, s = speaker_inputs(Rng(1))
        assert load_checkpoint(path, kind="generator")(z, s).tobytes() == generator(z, s).tobytes()

    def test_discriminator_round_trip(self, tmp_path):
        discriminator = Discriminator(SMALL_D, Rng(3))
        path = str(tmp_path / "d.ckpt")
        save_checkpoint(discriminator, path)
        loaded = load_checkpoint(path)
        assert isinstance(loaded, Discriminator)
        assert loaded.config == SMALL_D
        x = Rng(4).normal((1, 8, 5))
        assert loaded(x).tobytes() == discriminator(x).tobytes()

    def test_float32_parameters_keep_their_dtype(self):
        generator = Generator(SMALL, Rng(0), np.float32)
        loaded = decode_checkpoint(encode_checkpoint(generator))
        assert all(value.dtype == np.float32 for value in loaded.named_parameters().values())

    def test_container_layout(self, generator):
        data = encode_checkpoint(generator)
        assert data[:4] == CHECKPOINT_MAGIC
        (length,) = struct.unpack("<Q", data[4:12])
        manifest = json.loads(data[12:12 + length].decode("utf-8"))
        assert manifest["kind"] == "generator"
        assert manifest["config"]["hidden"] == 8
        first = manifest["tensors"]["input_conv.weight"]
        assert first == {"offset": 0, "shape": [1, 6, 8], "dtype": "float64"}

    def test_renamed_entry_is_named_in_the_error(self, generator):
        data = encode_checkpoint(generator)
        (length,) = struct.unpack("<Q", data[4:12])
        manifest = json.loads(data[12:12 + length].decode("utf-8"))
        manifest["tensors"]["blocks.0.mixer.renamed"] = manifest["tensors"].pop("blocks.0.mixer.w1")
        encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        tampered = data[:4] + struct.pack("<Q", len(encoded)) + encoded + data[12 + length:]
        with pytest.raises(CheckpointError) as e:
            decode_checkpoint(tampered)
        assert "missing entry blocks.0.mixer.w1" in str(e.value)
        assert "unexpected entry blocks.0.mixer.renamed" in e.value.entries

    def test_version_mismatch(self, generator):
        data = encode_checkpoint(generator).replace(b'"version":1', b'"version":9')
        with pytest.raises(CheckpointError) as e:
            decode_checkpoint(data)
        assert "version 9" in str(e.value)

    def test_kind_mismatch(self, generator, tmp_path):
        path = str(tmp_path / "g.ckpt")
        save_checkpoint(generator, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, kind="discriminator")

    def test_not_a_checkpoint(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"DYT1 something else")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nothing.ckpt"))
