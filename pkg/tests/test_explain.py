import numpy as np
import pytest

from mixforge.data import uhpc_schema
from mixforge.errors import DataError, FitError, SchemaError
from mixforge.explain import (
    Attribution,
    TreeShapExplainer,
    brute_force_shapley,
    default_selections,
    rank_features,
    select_features,
    shap_values,
)
from mixforge.gbtree import Ensemble, GbtConfig, TreeNodes, fit_matrix


def stump(feature: int, threshold: float, w_left: float, w_right: float) -> TreeNodes:
    return TreeNodes(
        feature=np.array([feature, -1, -1], dtype=np.int32),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32),
        weight=np.array([0.0, w_left, w_right]),
    )


def make_ensemble(trees, n_features, base=0.0) -> Ensemble:
    return Ensemble(
        base_score=base,
        trees=list(trees),
        features=tuple(f"f{j}" for j in range(n_features)),
        config=GbtConfig(n_rounds=1),
    )


def fitted_model(seed: int, n: int, d: int, rounds: int = 12, depth: int = 3) -> tuple[Ensemble, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, size=(n, d))
    y = x[:, 0] * 2 + np.sin(x[:, min(1, d - 1)]) + rng.normal(0, 0.1, n)
    cfg = GbtConfig(learning_rate=0.3, max_depth=depth, n_rounds=rounds,
                    lambda_l1=0.0, lambda_l2=0.1, seed=0)
    return fit_matrix(x, y, cfg), x


class TestBruteForce:
    def test_constant_model_all_zero(self):
        model = make_ensemble([], n_features=3, base=7.0)
        bg = np.random.default_rng(0).uniform(size=(10, 3))
        attr = brute_force_shapley(model, {"f0": 1.0, "f1": 2.0, "f2": 3.0}, bg)
        assert all(v == 0.0 for v in attr.contributions.values())
        assert attr.base_value == pytest.approx(7.0)
        assert attr.prediction == pytest.approx(7.0)

    def test_single_feature_full_marginal(self):
        model = make_ensemble([stump(0, 0.5, -1.0, 2.0)], n_features=1, base=1.0)
        bg = np.array([[0.0], [0.2], [0.9]])
        attr = brute_force_shapley(model, {"f0": 0.8}, bg)
        f_row = model.predict({"f0": 0.8})
        f_bg = model.predict_matrix(bg).mean()
        assert attr.contributions["f0"] == pytest.approx(f_row - f_bg, abs=1e-12)

    def test_local_accuracy_three_feature_stumps(self):
        trees = [stump(0, 0.0, -1.0, 1.0), stump(1, 0.5, 2.0, -2.0), stump(2, -0.5, 0.3, 0.7)]
        model = make_ensemble(trees, n_features=3, base=0.5)
        rng = np.random.default_rng(1)
        bg = rng.uniform(-1, 1, size=(8, 3))
        attr = brute_force_shapley(model, {"f0": 0.3, "f1": -0.2, "f2": 0.9}, bg)
        assert attr.total == pytest.approx(attr.prediction, abs=1e-12)

    def test_refuses_many_features(self):
        model = make_ensemble([], n_features=17, base=0.0)
        bg = np.zeros((2, 17))
        with pytest.raises(FitError):
            brute_force_shapley(model, np.zeros(17), bg)

    def test_empty_background(self):
        model = make_ensemble([], n_features=2, base=0.0)
        with pytest.raises(DataError):
            brute_force_shapley(model, np.zeros(2), np.zeros((0, 2)))


class TestShapValues:
    def test_symmetry_identical_trees(self):
        trees = [stump(0, 0.5, -1.0, 1.0), stump(1, 0.5, -1.0, 1.0)]
        model = make_ensemble(trees, n_features=2, base=0.0)
        bg = np.array([[0.2, 0.2], [0.7, 0.7], [0.4, 0.4]])
        attr = shap_values(model, {"f0": 0.9, "f1": 0.9}, bg)
        assert attr.contributions["f0"] == pytest.approx(attr.contributions["f1"], abs=1e-12)

    def test_dummy_feature_exactly_zero(self):
        model = make_ensemble([stump(0, 0.5, -1.0, 1.0)], n_features=3, base=0.0)
        rng = np.random.default_rng(2)
        bg = rng.uniform(size=(16, 3))
        attr = shap_values(model, {"f0": 0.8, "f1": 0.1, "f2": 0.4}, bg)
        assert attr.contributions["f1"] == 0.0
        assert attr.contributions["f2"] == 0.0

    def test_missing_feature_named(self):
        model = make_ensemble([stump(0, 0.5, -1.0, 1.0)], n_features=2, base=0.0)
        with pytest.raises(SchemaError, match="f1"):
            shap_values(model, {"f0": 0.8}, np.zeros((2, 2)))

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(3)
        for trial in range(8):
            d = int(rng.integers(1, 6))
            n = int(rng.integers(10, 40))
            model, x = fitted_model(seed=trial, n=n, d=d, rounds=6, depth=3)
            bg = x[: int(rng.integers(1, min(20, n)))]
            row = x[int(rng.integers(n))]
            fast = shap_values(model, row, bg)
            slow = brute_force_shapley(model, row, bg)
            for f in model.features:
                assert fast.contributions[f] == pytest.approx(
                    slow.contributions[f], abs=1e-6
                )
            assert fast.base_value == pytest.approx(slow.base_value, abs=1e-9)

    def test_local_accuracy_fitted(self):
        model, x = fitted_model(seed=9, n=60, d=4, rounds=15, depth=4)
        explainer = TreeShapExplainer(model, x[:32])
        for i in range(10):
            attr = explainer.attribute(x[i])
            assert attr.total == pytest.approx(attr.prediction, abs=1e-6)

    def test_additivity_across_trees(self):
        t1 = stump(0, 0.5, -1.0, 1.0)
        t2 = stump(1, 0.3, 0.5, -0.5)
        both = make_ensemble([t1, t2], n_features=2, base=0.0)
        only1 = make_ensemble([t1], n_features=2, base=0.0)
        only2 = make_ensemble([t2], n_features=2, base=0.0)
        bg = np.random.default_rng(4).uniform(size=(12, 2))
        row = {"f0": 0.9, "f1": 0.1}
        a_both = shap_values(both, row, bg)
        a1 = shap_values(only1, row, bg)
        a2 = shap_values(only2, row, bg)
        for f in ("f0", "f1"):
            assert a_both.contributions[f] == pytest.approx(
                a1.contributions[f] + a2.contributions[f], abs=1e-9
            )

    def test_deep_tree_against_brute_force(self):
        model, x = fitted_model(seed=11, n=50, d=3, rounds=10, depth=6)
        bg = x[:25]
        row = x[7]
        fast = shap_values(model, row, bg)
        slow = brute_force_shapley(model, row, bg)
        for f in model.features:
            assert fast.contributions[f] == pytest.approx(slow.contributions[f], abs=1e-6)


class TestRankFeatures:
    def test_single_used_feature_ranks_first(self):
        model = make_ensemble([stump(1, 0.5, -2.0, 2.0)], n_features=3, base=0.0)
        rng = np.random.default_rng(5)
        data = rng.uniform(size=(20, 3))
        ranking = rank_features(model, data, data[:10])
        assert ranking[0][0] == "f1"
        assert ranking[0][1] > 0.0
        assert ranking[1][1] == 0.0 and ranking[2][1] == 0.0
        # ties keep column order
        assert [r[0] for r in ranking[1:]] == ["f0", "f2"]

    def test_dominant_feature_outranks_weak(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=(200, 2))
        y = 10.0 * x[:, 0] + 0.1 * x[:, 1] + rng.normal(0, 0.01, 200)
        model = fit_matrix(x, y, GbtConfig(learning_rate=0.3, max_depth=3, n_rounds=20,
                                           lambda_l1=0.0, lambda_l2=0.1, seed=0))
        ranking = rank_features(model, x[:40], x[:32])
        assert ranking[0][0] == "0"
        assert ranking[0][1] > ranking[1][1]

    def test_length_equals_feature_count(self):
        model, x = fitted_model(seed=7, n=30, d=4, rounds=5)
        ranking = rank_features(model, x[:10], x[:8])
        assert len(ranking) == 4


class TestSelectFeatures:
    def test_fixed_list_compressive(self):
        sel = default_selections()["Compressive strength"]
        assert set(sel.excluded) == {
            "Coarse aggregate",
            "Fly ash content",
            "Steel fiber length",
            "Hydration Temperature",
        }
        assert len(sel.included) == 13

    def test_fixed_list_porosity(self):
        sel = default_selections()["Porosity"]
        assert set(sel.excluded) == {
            "Fly ash content",
            "Slag powder content",
            "HPWR",
            "Steel fiber content",
            "SF Tensile strength",
            "SF Elastic modulus",
            "Hydration Temperature",
        }
        assert "Steel fiber length" in sel.included

    def test_all_five_targets_partition_inputs(self):
        schema = uhpc_schema()
        selections = default_selections(schema)
        assert set(selections) == set(schema.target_names)
        inputs = set(schema.input_names)
        for sel in selections.values():
            assert set(sel.included) | set(sel.excluded) == inputs
            assert not set(sel.included) & set(sel.excluded)

    def test_bottom_zero_keeps_all(self):
        ranking = [("a", 3.0), ("b", 2.0), ("c", 1.0)]
        sel = select_features(ranking, {"kind": "bottom-k", "k": 0}, target="t")
        assert sel.included == ("a", "b", "c")
        assert sel.excluded == ()

    def test_bottom_k_drops_lowest(self):
        ranking = [("a", 3.0), ("b", 0.5), ("c", 1.0)]
        sel = select_features(ranking, {"kind": "bottom-k", "k": 1}, target="t")
        assert sel.excluded == ("b",)

    def test_threshold_policy(self):
        ranking = [("a", 8.0), ("b", 1.5), ("c", 0.5)]
        sel = select_features(ranking, {"kind": "threshold", "fraction": 0.1}, target="t")
        assert sel.excluded == ("c",)

    def test_fixed_list_unknown_column(self):
        with pytest.raises(SchemaError, match="nope"):
            select_features([("a", 1.0)], {"kind": "fixed-list", "excluded": ["nope"]})

    def test_cannot_exclude_everything(self):
        with pytest.raises(SchemaError):
            select_features([("a", 1.0)], {"kind": "fixed-list", "excluded": ["a"]})

    def test_roundtrip(self):
        sel = default_selections()["Slump flow"]
        from mixforge.explain import FeatureSelection

        assert FeatureSelection.from_dict(sel.to_dict()) == sel
