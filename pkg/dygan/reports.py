"""Plain-text reports rendered from Jinja2 templates."""

from typing import Any, Dict, Optional

from jinja2 import Environment, StrictUndefined, TemplateSyntaxError, UndefinedError

from .errors import ReportTemplateError
from .formats import comma_format, format_duration, format_error

# jinja environments are threadsafe as long as nothing mutates them after setup
template_environment = Environment(
    undefined=StrictUndefined, trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
template_environment.filters["comma"] = comma_format
template_environment.filters["duration"] = format_duration
template_environment.filters["error"] = format_error


class TextReport(object):
    def __init__(self, source: str):
        self.source = source
        try:
            self.template = template_environment.from_string(source)
        except TemplateSyntaxError as e:
            raise ReportTemplateError(e.message)

    def render(self, context: Optional[Dict[str, Any]] = None) -> str:
        try:
            return self.template.render(context or {})
        except UndefinedError as e:
            raise ReportTemplateError(e.message)

    def __repr__(self):
        return '<{}: "{}">'.format(self.__class__.__name__, self.source[:40])


PARAMS_REPORT = TextReport("""\
{% for breakdown in breakdowns %}
{{ breakdown.network }}
{% for row in breakdown.rows %}
  {{ "%-28s"|format(row.name) }} {{ "%-11s"|format(row.kind) }} {{ "%12s"|format(row.count|comma) }}
{% endfor %}
  {{ "%-40s"|format("total") }} {{ "%12s"|format(breakdown.total|comma) }}

{% endfor %}
model total: {{ total|comma }}
{{ mixer_kind }} layer (c={{ hidden }}, k={{ k }}, h={{ h }}): {{ mixer_params|comma }} parameters
self-attention projections (4c^2): {{ attention_params|comma }} parameters
ratio: {{ "%.3f"|format(ratio) }}
""")

BENCH_REPORT = TextReport("""\
{{ "%8s"|format("frames") }} {{ "%11s"|format("median") }} {{ "%11s"|format("p10") }} \
{{ "%11s"|format("p90") }} {{ "%12s"|format("frames/s") }} {{ "%9s"|format("RTF") }}
{% for timing in result.timings %}
{{ "%8d"|format(timing.frames) }} {{ "%11s"|format(timing.median|duration) }} \
{{ "%11s"|format(timing.p10|duration) }} {{ "%11s"|format(timing.p90|duration) }} \
{{ "%12s"|format(timing.frames_per_second|comma(1)) }} {{ "%9.4f"|format(timing.rtf) }}
{% endfor %}
parameter ratio (attention / mixer): {{ "%.3f"|format(result.param_ratio) }}
{{ result.note }}
""")

GRADCHECK_REPORT = TextReport("""\
{% for report in reports %}
{{ "%-16s"|format(report.kind) }} {{ "PASS" if report.passed else "FAIL" }}  \
max error {{ report.max_error|error }} over {{ report.seeds }} seed(s)
{% if not report.passed %}
{% if report.failure %}
    {{ report.failure }}
{% endif %}
{% for name, value in report.input_errors.items() if value >= report.tolerance %}
    input {{ name }}: {{ value|error }}
{% endfor %}
{% for name, value in report.param_errors.items() if value >= report.tolerance %}
    parameter {{ name }}: {{ value|error }}
{% endfor %}
{% endif %}
{% endfor %}
{{ passed }}/{{ reports|length }} layer kinds pass at tolerance {{ tolerance|error }} (step {{ step|error }})
""")


def render_params(context: Dict[str, Any]) -> str:
    return PARAMS_REPORT.render(context)


def render_bench(result) -> str:
    return BENCH_REPORT.render({"result": result})


def render_gradcheck(reports, tolerance: float, step: float) -> str:
    return GRADCHECK_REPORT.render({
        "reports": reports,
        "passed": sum(1 for report in reports if report.passed),
        "tolerance": tolerance,
        "step": step,
    })
