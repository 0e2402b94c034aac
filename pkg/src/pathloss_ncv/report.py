"""Rendering and persistence of EvaluationReports.

The machine document (report.yaml) keeps every number at full precision.
The text table and the difference charts are derived from it with the
half-up display rules of `pathloss_ncv.metrics`, and
`check_table_consistency` re-derives each rendered cell to prove it.
"""

import logging
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import plotly.graph_objects as go
import plotly.io as pio
import yaml

from pathloss_ncv.metrics import format_diff, format_metric, format_percent
from pathloss_ncv.nested_cv import EvaluationReport, ModelSummary

# set the default plotly template
pio.templates.default = "plotly_white"

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("Model", "MAE", "MSE", "Diff.(MAE)", "Diff.(MSE)")
ChartFormat = Literal["svg", "html"]
Metric = Literal["mae", "mse"]


def table_cells(summary: ModelSummary) -> tuple[str, ...]:
    return (
        summary.label,
        format_metric(summary.metrics.mae),
        format_metric(summary.metrics.mse),
        format_diff(summary.diff_mae),
        format_diff(summary.diff_mse),
    )


def emit_table(report: EvaluationReport, title: Optional[str] = None) -> str:
    """Fixed-width text table, one row per model in report order.

    The best model's difference cells read "-".
    """
    rows = [TABLE_COLUMNS] + [table_cells(m) for m in report.models]
    widths = [max(len(row[c]) for row in rows) for c in range(len(TABLE_COLUMNS))]

    def render(row: Sequence[str]) -> str:
        first = row[0].ljust(widths[0])
        rest = [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        return "  ".join([first, *rest]).rstrip()

    lines = []
    if title is None:
        title = report.title
    if title:
        lines.append(title)
    lines.append(render(rows[0]))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(render(row) for row in rows[1:])
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict[str, tuple[str, ...]]:
    """Cells of every model row of a table produced by `emit_table`, keyed by label."""
    lines = text.splitlines()
    header_at = next(
        (i for i, line in enumerate(lines) if line.split() == list(TABLE_COLUMNS)), None
    )
    if header_at is None:
        raise ValueError("No table header found.")
    rows = {}
    for line in lines[header_at + 2 :]:
        cells = tuple(line.split())
        if not cells:
            continue
        label = " ".join(cells[: len(cells) - 4])
        rows[label] = (label, *cells[-4:])
    return rows


def check_table_consistency(report: EvaluationReport, table: str) -> list[str]:
    """Every mismatch between the rendered table and the cells re-derived from `report`."""
    problems = []
    try:
        rendered = parse_table(table)
    except ValueError as e:
        return [str(e)]
    expected = {m.label: table_cells(m) for m in report.models}
    for label in sorted(set(expected) - set(rendered)):
        problems.append(f"Model {label} is missing from the table.")
    for label in sorted(set(rendered) - set(expected)):
        problems.append(f"Table row {label} has no counterpart in the report.")
    for label in expected.keys() & rendered.keys():
        for column, want, got in zip(TABLE_COLUMNS, expected[label], rendered[label]):
            if want != got:
                problems.append(
                    f"{label} {column}: table shows {got} but the report gives {want}."
                )
    return problems


def build_diff_chart(report: EvaluationReport, metric: Metric) -> Optional[go.Figure]:
    """Bar chart of how much the best model undercuts each other model, in percent.

    Returns None when the report has fewer than two models.
    """
    if len(report.models) < 2:
        return None
    best = report.model(report.best_model).label if report.best_model else ""
    others = [m for m in report.models if m.name != report.best_model]
    values = [(m.diff_mae if metric == "mae" else m.diff_mse) or 0.0 for m in others]
    fig = go.Figure(
        go.Bar(
            x=[m.label for m in others],
            y=[v * 100 for v in values],
            text=[format_percent(v) for v in values],
            textposition="outside",
            name=f"Diff. ({metric.upper()})",
        )
    )
    fig.update_layout(
        title=f"{best} performance difference comparisons in {metric.upper()}",
        xaxis_title="Model",
        yaxis_title="Difference (%)",
        showlegend=False,
    )
    return fig


def emit_charts(
    report: EvaluationReport,
    out_dir: Union[str, Path],
    chart_format: ChartFormat = "svg",
    prefix: str = "",
) -> list[Path]:
    """Writes diff_mae and diff_mse charts as static files; skipped below two models."""
    if len(report.models) < 2:
        logger.info("Skipping difference charts: the report holds a single model.")
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in ("mae", "mse"):
        fig = build_diff_chart(report, metric)
        path = out_dir / f"{prefix}diff_{metric}.{chart_format}"
        if chart_format == "svg":
            fig.write_image(path, format="svg")
        else:
            fig.write_html(
                path, include_plotlyjs="cdn", config={"staticPlot": True}
            )
        paths.append(path)
    return paths


def report_to_yaml(report: EvaluationReport) -> str:
    return yaml.safe_dump(report.model_dump(mode="json"), sort_keys=False)


def save_report(report: EvaluationReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(report_to_yaml(report))
    return path


def load_report(path: Union[str, Path]) -> EvaluationReport:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Invalid path {path} provided. The report does not exist.")
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    return EvaluationReport.model_validate(data)


def write_artifacts(
    report: EvaluationReport,
    out_dir: Union[str, Path],
    formats: Sequence[str] = ("yaml", "table", "charts"),
    chart_format: ChartFormat = "svg",
    prefix: str = "",
) -> list[Path]:
    """Writes the requested renderings of `report` into `out_dir`.

    Raises RuntimeError when the written table disagrees with the report.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "yaml" in formats:
        paths.append(save_report(report, out_dir / f"{prefix}report.yaml"))
    if "table" in formats:
        table = emit_table(report)
        problems = check_table_consistency(report, table)
        if problems:
            raise RuntimeError("Rendered table is inconsistent: " + "; ".join(problems))
        path = out_dir / f"{prefix}table.txt"
        path.write_text(table)
        paths.append(path)
    if "charts" in formats:
        paths.extend(emit_charts(report, out_dir, chart_format, prefix))
    return paths
