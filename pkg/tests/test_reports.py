import pytest

from dygan.bench import BenchResult, LengthTiming
from dygan.errors import ReportTemplateError
from dygan.gradcheck import GradCheckReport
from dygan.model import Generator, GeneratorConfig, count_params
from dygan.reports import TextReport, render_bench, render_gradcheck, render_params
from dygan.tensor import Rng


class TestTextReport(object):
    def test_render(self):
        assert TextReport("{{ n|comma }} params").render({"n": 1234567}) == "1,234,567 params"

    def test_missing_variable(self):
        with pytest.raises(ReportTemplateError) as e:
            TextReport("{{ missing }}").render({})
        assert "missing" in str(e.value)

    def test_syntax_error(self):
        with pytest.raises(ReportTemplateError):
            TextReport("{% for %}")

    def test_repr(self):
        assert repr(TextReport("hello")) == '<TextReport: "hello">'


def test_params_report():
    config = GeneratorConfig(in_dim=8, hidden=16, out_dim=8, n_blocks=1, k=3, h=4, spk_dim=4)
    generator = Generator(config, Rng(0))
    breakdown = count_params(generator)
    text = render_params({
        "breakdowns": [breakdown],
        "total": breakdown.total,
        "mixer_kind": "dynconv",
        "hidden": 16,
        "k": 3,
        "h": 4,
        "mixer_params": 748,
        "attention_params": 1024,
        "ratio": 1024 / 748,
    })
    assert text.startswith("generator\n")
    assert "blocks.0.mixer" in text
    assert "model total: {:,}".format(breakdown.total) in text
    assert "dynconv layer (c=16, k=3, h=4): 748 parameters" in text
    assert "self-attention projections (4c^2): 1,024 parameters" in text
    assert "ratio: 1.369" in text


def test_bench_report():
    result = BenchResult(GeneratorConfig(), [LengthTiming.from_samples(128, [0.0124])], 1, 0, 0, 1, 1, 10, 2, 4)
    text = render_bench(result)
    lines = text.splitlines()
    assert lines[0].split() == ["frames", "median", "p10", "p90", "frames/s", "RTF"]
    assert lines[1].split()[:3] == ["128", "12.40", "ms"]
    assert "parameter ratio (attention / mixer): 2.000" in text
    assert text.rstrip().endswith(result.note)


def test_gradcheck_report():
    reports = [
        GradCheckReport("lconv", {"kernel": 3e-9}, {"x": 1e-9}, 1e-5, 1e-4, 5),
        GradCheckReport("glu", {}, {"x": 2.0}, 1e-5, 1e-4, 5),
    ]
    text = render_gradcheck(reports, 1e-4, 1e-5)
    assert "lconv            PASS  max error 3.00e-09 over 5 seed(s)" in text
    assert "glu              FAIL  max error 2.00e+00" in text
    assert "    input x: 2.00e+00" in text
    assert "kernel" not in text.split("glu")[1]
    assert text.splitlines()[-1] == "1/2 layer kinds pass at tolerance 1.00e-04 (step 1.00e-05)"


def test_gradcheck_report_shows_failure_reason():
    report = GradCheckReport("glu", {}, {}, 1e-5, 1e-4, 1, "non-finite analytic gradient for input x (seed 0)")
    assert "    non-finite analytic gradient" in render_gradcheck([report], 1e-4, 1e-5)
