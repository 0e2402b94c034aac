from pathloss_ncv.data_pipeline import generate_synthetic
from pathloss_ncv.nested_cv import run_benchmark
from pathloss_ncv.regressors.families import EstimatorSpec
from pathloss_ncv.report import emit_table
from pathloss_ncv.types import SyntheticConfig

# Synthetic measurements that follow a log-distance law with 2 dB noise
data = generate_synthetic(SyntheticConfig(n=60, seed=3))

specs = [
    EstimatorSpec(family="SVR", grid={"C": [10.0, 100.0], "epsilon": [0.5]}),
    EstimatorSpec(family="XGBR", grid={"rounds": [10], "max_depth": [2, 3]}),
    EstimatorSpec(family="RF", grid={"n_trees": [5], "max_depth": [4]}),
]
report = run_benchmark(specs, data, outer_k=3, inner_k=2, seed=0)
table = emit_table(report)
print(table)
