from pathloss_ncv.nested_cv import report_from_metrics
from pathloss_ncv.report import build_diff_chart, check_table_consistency, emit_table
from pathloss_ncv.types import MetricPair

# Aggregate metrics of the published comparison, in table order
published = {
    "SVR": MetricPair(mae=5.07, mse=52.17),
    "CBR": MetricPair(mae=2.42, mse=10.75),
    "ANN": MetricPair(mae=3.87, mse=26.14),
    "XGBR": MetricPair(mae=2.41, mse=10.64),
    "RFR": MetricPair(mae=2.97, mse=15.23),
}
report = report_from_metrics(published)
table = emit_table(report, title="Performance comparison")
problems = check_table_consistency(report, table)
mae_chart = build_diff_chart(report, "mae")
mse_chart = build_diff_chart(report, "mse")
print(table)
