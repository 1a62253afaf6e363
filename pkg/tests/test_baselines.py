import numpy as np
import pytest

from mixforge.baselines import (
    BaselineKind,
    CartTree,
    fit_baseline,
    fit_lasso,
    fit_ols,
    fit_ridge,
    load_reference_rows,
    preselect,
)
from mixforge.data import ColumnSpec, Dataset, FeatureSchema
from mixforge.errors import FitError


def make_dataset(x: np.ndarray, y: np.ndarray) -> Dataset:
    d = x.shape[1]
    cols = tuple(ColumnSpec(f"f{j}", "u", -1e12, 1e12, "input") for j in range(d))
    cols = cols + (ColumnSpec("y", "u", -1e12, 1e12, "target"),)
    return Dataset(
        schema=FeatureSchema(columns=cols, name="b"),
        rows=np.column_stack([x, y]),
        row_ids=tuple(f"r{i}" for i in range(x.shape[0])),
    )


@pytest.fixture()
def linear_problem():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(80, 3))
    y = 3.0 * x[:, 0] - 1.5 * x[:, 1] + 0.5 * x[:, 2] + 1.0
    return x, y


class TestLinearModels:
    def test_ols_exact_line(self):
        x = np.linspace(0, 10, 20).reshape(-1, 1)
        y = 3.0 * x[:, 0] + 1.0
        model = fit_ols(x, y)
        assert model.coef[0] == pytest.approx(3.0, abs=1e-9)
        assert model.intercept == pytest.approx(1.0, abs=1e-9)

    def test_ols_singular_suggests_ridge(self):
        x = np.ones((10, 2))
        x[:, 1] = 2.0  # two constant columns, collinear with intercept
        y = np.arange(10.0)
        with pytest.raises(FitError, match="ridge"):
            fit_ols(x, y)

    def test_ridge_limit_matches_ols(self, linear_problem):
        x, y = linear_problem
        ols = fit_ols(x, y)
        ridge = fit_ridge(x, y, lam=1e-10)
        assert np.allclose(ridge.coef, ols.coef, atol=1e-6)
        assert ridge.intercept == pytest.approx(ols.intercept, abs=1e-6)

    def test_ridge_satisfies_normal_equations(self, linear_problem):
        x, y = linear_problem
        lam = 2.5
        model = fit_ridge(x, y, lam=lam)
        xc = x - x.mean(axis=0)
        yc = y - y.mean()
        residual = (xc.T @ xc + lam * np.eye(3)) @ model.coef - xc.T @ yc
        assert np.linalg.norm(residual) < 1e-8

    def test_lasso_full_shrinkage(self, linear_problem):
        x, y = linear_problem
        lam = float(np.abs((x - x.mean(axis=0)).T @ (y - y.mean())).max() / len(y)) * 1.1
        model = fit_lasso(x, y, lam=lam)
        assert np.all(model.coef == 0.0)
        assert model.intercept == pytest.approx(y.mean(), abs=1e-12)

    def test_lasso_small_lambda_near_ols(self, linear_problem):
        x, y = linear_problem
        model = fit_lasso(x, y, lam=1e-8)
        ols = fit_ols(x, y)
        assert np.allclose(model.coef, ols.coef, atol=1e-4)

    def test_ridge_cv_selects_and_fits(self, linear_problem):
        x, y = linear_problem
        ds = make_dataset(x, y)
        model = fit_baseline(BaselineKind.RIDGE_CV, ds, "y")
        pred = model.predict_matrix(x)
        assert float(np.corrcoef(pred, y)[0, 1]) > 0.999


class TestTrees:
    def test_cart_fits_step_function(self):
        x = np.arange(20, dtype=np.float64).reshape(-1, 1)
        y = (x[:, 0] >= 10).astype(np.float64) * 5.0
        tree = CartTree(max_depth=2).fit(x, y)
        assert np.allclose(tree.predict_matrix(x), y)

    def test_min_samples_leaf_respected(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(30, 2))
        y = rng.uniform(size=30)
        tree = CartTree(max_depth=25, min_samples_leaf=5).fit(x, y)

        def leaf_counts(node, rows):
            if node.feature < 0:
                return [rows.size]
            mask = x[rows, node.feature] < node.threshold
            return leaf_counts(node.left, rows[mask]) + leaf_counts(node.right, rows[~mask])

        assert min(leaf_counts(tree.root, np.arange(30))) >= 5

    def test_bagging_single_estimator_full_sample_equals_tree(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(40, 2))
        y = np.sin(x[:, 0] * 6) + x[:, 1]
        ds = make_dataset(x, y)
        bag = fit_baseline(
            BaselineKind.BAGGING, ds, "y", params={"n_estimators": 1, "bootstrap": False}
        )
        tree = fit_baseline(BaselineKind.DECISION_TREE, ds, "y")
        assert np.allclose(bag.predict_matrix(x), tree.predict_matrix(x), atol=1e-12)

    def test_random_forest_learns(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(120, 3))
        y = 2 * x[:, 0] + np.sin(6 * x[:, 1])
        ds = make_dataset(x, y)
        model = fit_baseline(BaselineKind.RANDOM_FOREST, ds, "y", params={"n_estimators": 30})
        pred = model.predict_matrix(x)
        assert float(np.corrcoef(pred, y)[0, 1]) > 0.95

    def test_extra_trees_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(50, 2))
        y = x[:, 0] * 2
        ds = make_dataset(x, y)
        m1 = fit_baseline(BaselineKind.EXTRA_TREES, ds, "y", params={"n_estimators": 10}, seed=5)
        m2 = fit_baseline(BaselineKind.EXTRA_TREES, ds, "y", params={"n_estimators": 10}, seed=5)
        assert np.array_equal(m1.predict_matrix(x), m2.predict_matrix(x))

    def test_adaboost_learns_step(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(100, 1))
        y = (x[:, 0] > 0.5).astype(np.float64) * 4.0 + x[:, 0]
        ds = make_dataset(x, y)
        model = fit_baseline(BaselineKind.ADABOOST_R2, ds, "y", params={"n_estimators": 20})
        pred = model.predict_matrix(x)
        assert float(np.sqrt(((pred - y) ** 2).mean())) < 0.5


class TestVoting:
    def test_voting_is_exact_mean(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(40, 2))
        y = x[:, 0] + x[:, 1]
        ds = make_dataset(x, y)
        specs = [("decision_tree", {"max_depth": 4}), ("ridge", {})]
        voting = fit_baseline(BaselineKind.VOTING_MEAN, ds, "y", params={"members": specs})
        part0 = voting.members[0].predict_matrix(x)
        part1 = voting.members[1].predict_matrix(x)
        assert np.allclose(voting.predict_matrix(x), (part0 + part1) / 2.0, atol=1e-12)


class TestPreselect:
    def test_single_ols_on_learnable_data(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(size=(60, 2))
        y = 4 * x[:, 0] - x[:, 1] + 2
        train = make_dataset(x[:40], y[:40])
        test = make_dataset(x[40:], y[40:])
        report = preselect(train, test, "y", kinds=[BaselineKind.OLS_LINEAR])
        assert len(report.rows) == 1
        assert report.rows[0].test.r2 == pytest.approx(1.0, abs=1e-9)

    def test_failure_recorded_not_fatal(self):
        x = np.ones((12, 2))  # constant features: OLS singular, trees fine
        y = np.arange(12.0)
        train = make_dataset(x[:8], y[:8])
        test = make_dataset(x[8:], y[8:])
        report = preselect(
            train, test, "y", kinds=[BaselineKind.OLS_LINEAR, BaselineKind.DECISION_TREE]
        )
        by_label = {r.label: r for r in report.rows}
        assert by_label["ols_linear"].source == "failed"
        assert "ridge" in by_label["ols_linear"].error
        assert by_label["decision_tree"].source == "fitted"

    def test_deterministic_rerun(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(size=(50, 2))
        y = x[:, 0] * 3 + rng.normal(0, 0.1, 50)
        train = make_dataset(x[:35], y[:35])
        test = make_dataset(x[35:], y[35:])
        kinds = [BaselineKind.RANDOM_FOREST, BaselineKind.RIDGE]
        r1 = preselect(train, test, "y", kinds=kinds, params={"random_forest": {"n_estimators": 5}}, seed=3)
        r2 = preselect(train, test, "y", kinds=kinds, params={"random_forest": {"n_estimators": 5}}, seed=3)
        assert r1.to_json() == r2.to_json()

    def test_external_rows_merge_and_gate(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(size=(30, 2))
        y = x[:, 0]
        train = make_dataset(x[:20], y[:20])
        test = make_dataset(x[20:], y[20:])
        external = {
            "GoodExternal": {
                "train": None,
                "test": {"mae": 1, "pmae_percent": 1, "mse": 4, "rmse": 2.0,
                         "maxae": 3, "r2": 0.9, "m": 10, "pmae_skipped": 0},
            },
            "BadExternal": {
                "train": None,
                "test": {"mae": 50, "pmae_percent": 50, "mse": 2500, "rmse": 50.0,
                         "maxae": 80, "r2": -0.5, "m": 10, "pmae_skipped": 0},
            },
        }
        report = preselect(train, test, "y", kinds=[], gate=(30.0, 0.18), external_rows=external)
        assert "GoodExternal" in report.passing
        assert "BadExternal" not in report.passing

    def test_reference_rows_resource(self):
        rows = load_reference_rows()
        assert len(rows) == 21
        assert rows["LightGBM"]["train"]["r2"] is None  # blank cell preserved
        assert rows["XGBoost"]["test"]["rmse"] == 25.82

    def test_csv_export_shape(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=(30, 2))
        y = x[:, 0]
        train = make_dataset(x[:20], y[:20])
        test = make_dataset(x[20:], y[20:])
        report = preselect(train, test, "y", kinds=[BaselineKind.RIDGE])
        lines = report.to_csv().strip().splitlines()
        assert lines[0].split(",")[:2] == ["label", "source"]
        assert len(lines[0].split(",")) == 2 + 12
        assert len(lines) == 2
