import numpy as np
import pytest
from pathloss_ncv.data_pipeline import apply_normalizer, fit_normalizer, generate_synthetic
from pathloss_ncv.exceptions import ConvergenceError, DivergenceError, HyperparameterError
from pathloss_ncv.regressors.ann import (
    AnnModel,
    ann_fit,
    ann_predict,
    init_ann,
    loss_and_gradients,
)
from pathloss_ncv.regressors.boosting import (
    _prefix_ladder,
    boosted_importance,
    boosted_predict,
    gbt_fit,
    obt_fit,
)
from pathloss_ncv.regressors.families import (
    EstimatorSpec,
    default_estimators,
    get_family,
    load_model,
    save_model,
)
from pathloss_ncv.regressors.forest import feature_importance, rf_fit, rf_predict
from pathloss_ncv.regressors.svr import dual_objective, rbf_kernel, svr_fit, svr_predict
from pathloss_ncv.tree_core import TreeParams, build_tree, is_oblivious, predict_tree_batch
from pathloss_ncv.types import DISTANCE_INDEX, Dataset, SyntheticConfig
from test_data_pipeline import sample_dataset


def normalized(n=40, seed=0) -> Dataset:
    data = sample_dataset(n=n, seed=seed)
    return apply_normalizer(fit_normalizer(data), data)


def toy_dataset(n, seed=0, noise=0.0) -> Dataset:
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, 6))
    targets = 100 + 2 * features[:, 0] - features[:, 1] + rng.normal(0, noise, n)
    return Dataset(features=features, targets=targets)


def full_beta(model, n):
    beta = np.zeros(n)
    beta[model.support_indices] = model.dual_coefficients
    return beta


# SVR


def test_svr_constant_targets_predict_the_constant():
    data = Dataset(features=np.random.default_rng(0).normal(size=(10, 6)), targets=np.full(10, 97.0))
    for epsilon in (0.0, 0.5):
        model = svr_fit(data, C=10.0, epsilon=epsilon)
        assert model.bias == pytest.approx(97.0)
        assert model.support_indices == []
        np.testing.assert_allclose(svr_predict(model, data.features), 97.0)


def test_svr_wide_tube_predicts_midrange():
    data = toy_dataset(20, seed=1)
    spread = data.targets.max() - data.targets.min()
    model = svr_fit(data, epsilon=spread)
    assert model.dual_coefficients.size == 0
    assert model.bias == pytest.approx((data.targets.max() + data.targets.min()) / 2)


@pytest.mark.parametrize("seed", range(5))
def test_svr_small_problems_reach_the_dual_optimum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    data = Dataset(features=rng.normal(size=(n, 6)), targets=rng.normal(100, 3, n))
    C, epsilon, gamma = 2.0, 0.2, 0.3
    model = svr_fit(data, C=C, epsilon=epsilon, rbf_gamma=gamma, tol=1e-9)
    kernel = rbf_kernel(data.features, data.features, gamma)
    beta = full_beta(model, n)
    best = dual_objective(beta, kernel, data.targets, epsilon)
    assert abs(beta.sum()) < 1e-9
    assert np.all(np.abs(beta) <= C + 1e-12)
    # random feasible points never beat the solver
    for _ in range(2000):
        candidate = rng.uniform(-C, C, n)
        candidate[-1] = -candidate[:-1].sum()
        if abs(candidate[-1]) > C:
            continue
        assert dual_objective(candidate, kernel, data.targets, epsilon) <= best + 1e-7
    # neither do small feasible moves away from it
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for step in (1e-4, -1e-4):
                moved = beta.copy()
                moved[i] += step
                moved[j] -= step
                if np.all(np.abs(moved) <= C):
                    assert dual_objective(moved, kernel, data.targets, epsilon) <= best + 1e-9


def test_svr_kkt_conditions_hold():
    data = normalized(n=40, seed=2)
    C, epsilon, tol = 10.0, 0.5, 1e-6
    model = svr_fit(data, C=C, epsilon=epsilon, tol=tol)
    beta = full_beta(model, data.n)
    residual = data.targets - svr_predict(model, data.features)
    slack = 1e-4
    for b, r in zip(beta, residual):
        if b == 0:
            assert abs(r) <= epsilon + slack
        elif 0 < b < C:
            assert r == pytest.approx(epsilon, abs=slack)
        elif -C < b < 0:
            assert r == pytest.approx(-epsilon, abs=slack)
        elif b >= C:
            assert r >= epsilon - slack
        else:
            assert r <= -epsilon + slack
    assert abs(beta.sum()) < 1e-9
    assert model.max_kkt_violation < tol


def test_svr_fits_a_smooth_surface():
    data = toy_dataset(40, seed=3)
    model = svr_fit(data, C=100.0, epsilon=0.1, rbf_gamma=0.2)
    residual = data.targets - svr_predict(model, data.features)
    assert np.mean(np.abs(residual)) < 0.5


def test_svr_iteration_cap_raises():
    with pytest.raises(ConvergenceError):
        svr_fit(toy_dataset(30, seed=4), C=100.0, epsilon=0.01, max_iter=1)


def test_svr_rejects_bad_hyperparameters():
    data = toy_dataset(5)
    with pytest.raises(HyperparameterError):
        svr_fit(data, C=0.0)
    with pytest.raises(HyperparameterError):
        svr_fit(data, epsilon=-1.0)
    with pytest.raises(HyperparameterError):
        svr_fit(data, rbf_gamma=0.0)


def test_rbf_kernel_diagonal_and_symmetry():
    x = np.random.default_rng(0).normal(size=(7, 6))
    kernel = rbf_kernel(x, x, 0.5)
    np.testing.assert_allclose(np.diag(kernel), 1.0)
    np.testing.assert_allclose(kernel, kernel.T)
    assert np.all((kernel > 0) & (kernel <= 1))


# ANN


def _with(model: AnnModel, **updates) -> AnnModel:
    fields = {
        "hidden_weights": model.hidden_weights,
        "hidden_bias": model.hidden_bias,
        "output_weights": model.output_weights,
        "output_bias": model.output_bias,
    }
    fields.update(updates)
    return AnnModel(**fields)


def test_ann_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    model = init_ann(6, 4, rng, output_bias=0.3)
    model = _with(model, hidden_bias=rng.normal(0, 0.5, 4))
    x = rng.normal(size=(5, 6))
    y = rng.normal(size=5)
    _, grads = loss_and_gradients(model, x, y)
    h = 1e-6

    def loss(m):
        return loss_and_gradients(m, x, y)[0]

    for name in ("hidden_weights", "hidden_bias", "output_weights"):
        values = getattr(model, name)
        analytic = getattr(grads, name)
        for index in np.ndindex(values.shape):
            plus, minus = values.copy(), values.copy()
            plus[index] += h
            minus[index] -= h
            numeric = (loss(_with(model, **{name: plus})) - loss(_with(model, **{name: minus}))) / (2 * h)
            assert abs(numeric - analytic[index]) < 1e-4
    numeric = (
        loss(_with(model, output_bias=model.output_bias + h))
        - loss(_with(model, output_bias=model.output_bias - h))
    ) / (2 * h)
    assert abs(numeric - grads.output_bias) < 1e-4


def test_ann_zero_epochs_returns_the_initial_network():
    data = normalized(n=20)
    model = ann_fit(data, hidden_units=5, epochs=0, seed=7)
    initial = init_ann(6, 5, np.random.default_rng(7), output_bias=float(data.targets.mean()))
    assert model == initial
    assert model.loss_history == []


def test_ann_hand_computed_forward_pass():
    model = AnnModel(
        hidden_weights=np.array([[0.5], [0.0], [0.0], [0.0], [0.0], [0.0]]),
        hidden_bias=[0.0],
        output_weights=[2.0],
        output_bias=1.0,
    )
    x = np.array([[2.0, 9.0, 9.0, 9.0, 9.0, 9.0]])
    assert ann_predict(model, x)[0] == pytest.approx(2 * np.tanh(1.0) + 1)
    assert model.hidden_units == 1


def test_ann_hidden_unit_permutation_is_symmetric():
    rng = np.random.default_rng(1)
    model = init_ann(6, 6, rng, output_bias=1.0)
    model = _with(model, hidden_bias=rng.normal(size=6))
    order = rng.permutation(6)
    permuted = _with(
        model,
        hidden_weights=model.hidden_weights[:, order],
        hidden_bias=model.hidden_bias[order],
        output_weights=model.output_weights[order],
    )
    x = rng.normal(size=(10, 6))
    np.testing.assert_allclose(ann_predict(permuted, x), ann_predict(model, x), rtol=1e-12)


def test_ann_learns_a_linear_response():
    data = toy_dataset(200, seed=2)
    model = ann_fit(data, hidden_units=16, learning_rate=0.05, epochs=300, batch_size=32, seed=0)
    residual = data.targets - ann_predict(model, data.features)
    assert np.mean(np.abs(residual)) < 0.5
    assert len(model.loss_history) == 300
    assert model.loss_history[-1] < model.loss_history[0]


def test_ann_divergence_raises():
    with pytest.raises(DivergenceError):
        ann_fit(toy_dataset(50, noise=5.0), learning_rate=1e4, epochs=100, batch_size=8)


def test_ann_is_deterministic():
    data = normalized(n=30)
    assert ann_fit(data, epochs=5, seed=3) == ann_fit(data, epochs=5, seed=3)
    assert ann_fit(data, epochs=5, seed=3) != ann_fit(data, epochs=5, seed=4)


def test_ann_rejects_bad_hyperparameters():
    with pytest.raises(HyperparameterError):
        ann_fit(toy_dataset(5), hidden_units=0)


# Random forest


def test_forest_constant_target():
    data = Dataset(features=np.random.default_rng(0).normal(size=(15, 6)), targets=np.full(15, 88.0))
    model = rf_fit(data, n_trees=5, seed=1)
    np.testing.assert_allclose(rf_predict(model, data.features), 88.0)


def test_forest_without_bootstrap_equals_one_tree():
    data = toy_dataset(30, seed=5, noise=0.5)
    model = rf_fit(data, n_trees=4, max_depth=4, feature_subsample=1.0, bootstrap=False)
    assert all(tree == model.trees[0] for tree in model.trees)
    single = build_tree(
        data.features, np.arange(30), -data.targets, np.ones(30), TreeParams(max_depth=4)
    )
    np.testing.assert_allclose(
        rf_predict(model, data.features), predict_tree_batch(single, data.features), rtol=1e-12
    )


def test_forest_predictions_stay_within_target_range():
    data = toy_dataset(40, seed=6, noise=1.0)
    model = rf_fit(data, n_trees=10, max_depth=6, seed=2)
    unseen = np.random.default_rng(9).normal(0, 3, size=(100, 6))
    predictions = rf_predict(model, unseen)
    assert np.all(predictions >= data.targets.min() - 1e-9)
    assert np.all(predictions <= data.targets.max() + 1e-9)


def test_forest_predicts_mean_of_trees():
    data = toy_dataset(40, seed=7, noise=1.0)
    model = rf_fit(data, n_trees=6, max_depth=3, seed=3)
    per_tree = np.array([predict_tree_batch(t, data.features) for t in model.trees])
    np.testing.assert_allclose(rf_predict(model, data.features), per_tree.mean(axis=0))


def test_forest_is_seeded():
    data = toy_dataset(40, seed=8, noise=1.0)
    assert rf_fit(data, n_trees=3, seed=4) == rf_fit(data, n_trees=3, seed=4)
    assert rf_fit(data, n_trees=3, seed=4) != rf_fit(data, n_trees=3, seed=5)


def test_forest_importance_favors_informative_features():
    data = toy_dataset(80, seed=9, noise=0.1)
    importance = feature_importance(rf_fit(data, n_trees=10, max_depth=4, seed=0))
    assert importance.sum() == pytest.approx(1.0)
    assert np.argmax(importance) == 0


def test_forest_rejects_bad_hyperparameters():
    with pytest.raises(HyperparameterError):
        rf_fit(toy_dataset(5), n_trees=0)
    with pytest.raises(HyperparameterError):
        rf_fit(toy_dataset(5), feature_subsample=0.0)


# Level-wise boosting


def test_one_deep_unshrunk_round_interpolates():
    data = toy_dataset(25, seed=10, noise=1.0)
    model = gbt_fit(data, rounds=1, learning_rate=1.0, reg_lambda=0.0, max_depth=20)
    np.testing.assert_allclose(boosted_predict(model, data.features), data.targets, atol=1e-9)


def test_boosting_constant_target():
    data = Dataset(features=np.random.default_rng(1).normal(size=(12, 6)), targets=np.full(12, 101.5))
    model = gbt_fit(data, rounds=3)
    np.testing.assert_allclose(boosted_predict(model, data.features), 101.5)


def non_increasing(history) -> bool:
    return all(b <= a * (1 + 1e-12) + 1e-9 for a, b in zip(history, history[1:]))


def test_boosting_training_loss_never_increases():
    data = toy_dataset(60, seed=11, noise=1.0)
    for reg_lambda in (0.0, 1.0):
        model = gbt_fit(data, rounds=20, learning_rate=0.3, max_depth=3, reg_lambda=reg_lambda)
        assert len(model.train_loss_history) == 21
        assert non_increasing(model.train_loss_history)


@pytest.mark.parametrize(
    "fit",
    [
        lambda data: gbt_fit(data, rounds=300, learning_rate=0.1, max_depth=3),
        lambda data: obt_fit(data, rounds=300, learning_rate=0.1, depth=4),
        lambda data: obt_fit(data, rounds=300, learning_rate=0.1, depth=4, ordered_min_rows=100),
    ],
    ids=["level-wise", "oblivious", "ordered"],
)
def test_boosting_loss_is_monotone_over_300_rounds(fit):
    model = fit(generate_synthetic(SyntheticConfig(n=300, seed=3)))
    history = model.train_loss_history
    assert len(history) == 301
    assert non_increasing(history)
    assert history[-1] < history[0]


def test_boosting_prefix_predictions_match_history():
    data = toy_dataset(50, seed=12, noise=1.0)
    model = gbt_fit(data, rounds=8, learning_rate=0.2, max_depth=3, feature_subsample=0.5, seed=3)
    for k in range(model.rounds + 1):
        prediction = boosted_predict(model, data.features, n_trees=k)
        assert np.mean((prediction - data.targets) ** 2) == pytest.approx(
            model.train_loss_history[k], rel=1e-12
        )
    with pytest.raises(ValueError):
        boosted_predict(model, data.features, n_trees=9)


def test_boosting_is_seeded():
    data = toy_dataset(40, seed=13, noise=1.0)
    kwargs = dict(rounds=4, max_depth=3, feature_subsample=0.5)
    assert gbt_fit(data, seed=1, **kwargs) == gbt_fit(data, seed=1, **kwargs)


def test_boosting_rejects_bad_hyperparameters():
    with pytest.raises(HyperparameterError):
        gbt_fit(toy_dataset(5), rounds=0)
    with pytest.raises(HyperparameterError):
        gbt_fit(toy_dataset(5), learning_rate=1.5)
    with pytest.raises(HyperparameterError):
        obt_fit(toy_dataset(5), depth=0)


# Oblivious boosting


def test_depth_one_oblivious_boosting_equals_stump_boosting():
    data = toy_dataset(40, seed=14, noise=1.0)
    oblivious = obt_fit(data, rounds=10, learning_rate=0.3, depth=1, reg_lambda=1.0)
    level_wise = gbt_fit(data, rounds=10, learning_rate=0.3, max_depth=1, reg_lambda=1.0)
    np.testing.assert_allclose(
        boosted_predict(oblivious, data.features),
        boosted_predict(level_wise, data.features),
        rtol=1e-12,
    )
    assert not oblivious.ordered


def test_oblivious_boosting_grows_oblivious_trees():
    data = toy_dataset(64, seed=15, noise=1.0)
    model = obt_fit(data, rounds=5, depth=3)
    assert model.family == "CBR"
    assert all(is_oblivious(tree) for tree in model.trees)
    assert non_increasing(model.train_loss_history)


def test_ordered_boosting_above_the_row_threshold():
    data = toy_dataset(60, seed=16, noise=1.0)
    model = obt_fit(data, rounds=6, depth=2, ordered_min_rows=20, seed=5)
    assert model.ordered
    assert all(is_oblivious(tree) for tree in model.trees)
    assert non_increasing(model.train_loss_history)
    assert model == obt_fit(data, rounds=6, depth=2, ordered_min_rows=20, seed=5)
    assert not obt_fit(data, rounds=2, depth=2, ordered_min_rows=60).ordered


def test_prefix_ladder_never_serves_a_row_its_own_target():
    n = 37
    prefixes, serving = _prefix_ladder(n, np.random.default_rng(0))
    assert [p.size for p in prefixes] == [1, 2, 4, 8, 16, 32]
    assert np.sum(serving == -1) == 1
    for row in range(n):
        if serving[row] >= 0:
            assert row not in prefixes[serving[row]]


def test_boosted_importance_sums_to_one():
    data = toy_dataset(60, seed=17, noise=0.1)
    importance = boosted_importance(gbt_fit(data, rounds=5, max_depth=2))
    assert importance.sum() == pytest.approx(1.0)
    assert np.argmax(importance) == 0


# Families and persistence


def test_default_estimators_follow_table_order():
    assert [spec.family for spec in default_estimators()] == ["SVR", "CBR", "ANN", "XGBR", "RF"]
    assert [spec.label for spec in default_estimators()][-1] == "RFR"


def test_estimator_spec_grid_points_are_row_major():
    spec = EstimatorSpec(family="XGBR", grid={"max_depth": [2, 3], "learning_rate": [0.1, 0.2]})
    points = spec.grid_points()
    assert [p.params for p in points] == [
        {"max_depth": 2, "learning_rate": 0.1},
        {"max_depth": 2, "learning_rate": 0.2},
        {"max_depth": 3, "learning_rate": 0.1},
        {"max_depth": 3, "learning_rate": 0.2},
    ]
    assert [p.index for p in points] == [0, 1, 2, 3]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"family": "GBM"},
        {"family": "SVR", "grid": {"kernel": ["rbf"]}},
        {"family": "SVR", "grid": {"C": []}},
        {"family": "SVR", "grid": {"C": [-1.0]}},
        {"family": "RF", "grid": {"n_trees": [10]}, "bogus": 1},
    ],
)
def test_estimator_spec_rejects_bad_grids(kwargs):
    with pytest.raises(ValueError):
        EstimatorSpec(**kwargs)


def test_family_validation_raises_hyperparameter_error():
    with pytest.raises(HyperparameterError):
        get_family("ANN").validate({"hidden_units": 0})
    with pytest.raises(HyperparameterError):
        get_family("NOPE")


def test_normalization_defaults_and_override():
    assert EstimatorSpec(family="SVR").normalizes
    assert not EstimatorSpec(family="RF").normalizes
    assert EstimatorSpec(family="RF", normalize_features=True).normalizes


def test_fitted_models_round_trip_through_yaml(tmp_path):
    data = normalized(n=30, seed=4)
    models = [
        svr_fit(data, C=10.0),
        ann_fit(data, hidden_units=4, epochs=3),
        rf_fit(data, n_trees=3, max_depth=3),
        gbt_fit(data, rounds=3, max_depth=2),
        obt_fit(data, rounds=3, depth=2),
    ]
    for model in models:
        path = save_model(model, tmp_path / f"{model.family}.yaml")
        restored = load_model(path)
        assert type(restored) is type(model)
        assert restored == model
        family = get_family(model.family)
        np.testing.assert_array_equal(
            family.predict(restored, data.features), family.predict(model, data.features)
        )


def test_synthetic_signal_lives_in_distance_only():
    data = generate_synthetic(SyntheticConfig(n=300, seed=1, noise_std=0.5))
    importance = feature_importance(rf_fit(data, n_trees=10, max_depth=4, feature_subsample=1.0))
    assert np.argmax(importance) == DISTANCE_INDEX
    assert importance[DISTANCE_INDEX] > 0.9
