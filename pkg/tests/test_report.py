import pytest
from pathloss_ncv.nested_cv import report_from_metrics, run_benchmark
from pathloss_ncv.regressors.families import EstimatorSpec
from pathloss_ncv.report import (
    build_diff_chart,
    check_table_consistency,
    emit_charts,
    emit_table,
    load_report,
    parse_table,
    report_to_yaml,
    save_report,
    table_cells,
    write_artifacts,
)
from pathloss_ncv.types import MetricPair
from test_data_pipeline import sample_dataset

PUBLISHED = {
    "SVR": MetricPair(mae=5.07, mse=52.17),
    "CBR": MetricPair(mae=2.42, mse=10.75),
    "ANN": MetricPair(mae=3.87, mse=26.14),
    "XGBR": MetricPair(mae=2.41, mse=10.64),
    "RFR": MetricPair(mae=2.97, mse=15.23),
}


def published_report():
    return report_from_metrics(PUBLISHED)


def test_table_cells_for_published_metrics():
    report = published_report()
    cells = {m.label: table_cells(m) for m in report.models}
    assert cells["SVR"] == ("SVR", "5.07", "52.17", "0.52", "0.8")
    assert cells["CBR"] == ("CBR", "2.42", "10.75", "0.004", "0.01")
    assert cells["ANN"] == ("ANN", "3.87", "26.14", "0.38", "0.59")
    assert cells["XGBR"] == ("XGBR", "2.41", "10.64", "-", "-")
    assert cells["RFR"] == ("RFR", "2.97", "15.23", "0.19", "0.3")


def test_emit_table_layout():
    table = emit_table(published_report(), title="Comparison")
    lines = table.splitlines()
    assert lines[0] == "Comparison"
    assert lines[1].split() == ["Model", "MAE", "MSE", "Diff.(MAE)", "Diff.(MSE)"]
    assert set(lines[2].replace(" ", "")) == {"-"}
    assert [line.split()[0] for line in lines[3:]] == ["SVR", "CBR", "ANN", "XGBR", "RFR"]
    assert table.endswith("\n")


def test_table_round_trips_through_parser():
    report = published_report()
    parsed = parse_table(emit_table(report))
    assert parsed == {m.label: table_cells(m) for m in report.models}
    assert check_table_consistency(report, emit_table(report)) == []


def test_consistency_check_flags_edited_cells():
    report = published_report()
    table = emit_table(report).replace("0.38", "0.37")
    problems = check_table_consistency(report, table)
    assert len(problems) == 1
    assert "ANN" in problems[0]
    missing = "\n".join(line for line in emit_table(report).splitlines() if not line.startswith("CBR"))
    assert any("CBR" in p for p in check_table_consistency(report, missing))
    assert check_table_consistency(report, "no table here") == ["No table header found."]


def test_diff_chart_bars_for_published_metrics():
    report = published_report()
    mae_chart = build_diff_chart(report, "mae")
    bars = mae_chart.data[0]
    assert list(bars.x) == ["SVR", "CBR", "ANN", "RFR"]
    assert list(bars.text) == ["52%", "0.4%", "38%", "19%"]
    assert list(bars.y) == pytest.approx([52.47, 0.413, 37.73, 18.86], abs=0.01)
    assert "XGBR" in mae_chart.layout.title.text
    mse_chart = build_diff_chart(report, "mse")
    assert list(mse_chart.data[0].text) == ["80%", "1%", "59%", "30%"]


def test_single_model_has_dashes_and_no_charts(tmp_path):
    report = report_from_metrics({"XGBR": MetricPair(mae=2.41, mse=10.64)})
    assert table_cells(report.models[0])[3:] == ("-", "-")
    assert build_diff_chart(report, "mae") is None
    assert emit_charts(report, tmp_path) == []


def test_all_zero_metrics_render_zero_differences():
    report = report_from_metrics(
        {"XGBR": MetricPair(mae=0.0, mse=0.0), "RF": MetricPair(mae=0.0, mse=0.0)}
    )
    assert report.best_model == "XGBR"
    assert table_cells(report.model("RF")) == ("RF", "0.00", "0.00", "0", "0")
    assert list(build_diff_chart(report, "mse").data[0].text) == ["0%"]


def test_html_charts(tmp_path):
    paths = emit_charts(published_report(), tmp_path, chart_format="html", prefix="x_")
    assert [p.name for p in paths] == ["x_diff_mae.html", "x_diff_mse.html"]
    assert all(p.stat().st_size > 0 for p in paths)


def test_svg_charts(tmp_path):
    paths = emit_charts(published_report(), tmp_path, chart_format="svg")
    assert [p.name for p in paths] == ["diff_mae.svg", "diff_mse.svg"]
    assert "<svg" in paths[0].read_text()


def test_report_yaml_round_trip(tmp_path):
    data = sample_dataset(n=18, seed=1)
    spec = EstimatorSpec(family="XGBR", grid={"rounds": [3], "max_depth": [2]})
    report = run_benchmark([spec], data, seed=2)
    summary = report.model_dump(mode="json")["models"][0]
    assert "best_params" not in summary
    assert all(fold["best_params"]["max_depth"] == 2 for fold in summary["folds"])
    path = save_report(report, tmp_path / "nested" / "report.yaml")
    restored = load_report(path)
    assert restored == report
    assert report_to_yaml(restored) == report_to_yaml(report)


def test_load_report_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_report(tmp_path / "absent.yaml")


def test_write_artifacts(tmp_path):
    paths = write_artifacts(published_report(), tmp_path, chart_format="html")
    assert sorted(p.name for p in paths) == [
        "diff_mae.html",
        "diff_mse.html",
        "report.yaml",
        "table.txt",
    ]
    assert (tmp_path / "table.txt").read_text() == emit_table(published_report())
