import csv
import json

import numpy as np
import pytest

from oracles import composed_affine_attribution
from shapaudit.attribution import (AttributionResult, BackgroundSet, RankVector, ScoreSet,
                                   aggregate_scores, annotate_result, background_from_dataset,
                                   deepshap_attribute, rank_features, save_attribution_csv,
                                   save_rank_json, verify_completeness)
from shapaudit.dataio import SynthConfig, synth_multiview
from shapaudit.multiview import LayerPlan, TrainedModel, init_params
from shapaudit.rng import stream


def make_model(fusion="mean", n_views=2, seed=0, emb=3):
    dims = tuple(4 + v for v in range(n_views))
    plan = LayerPlan(
        view_ids=tuple(f"v{i}" for i in range(n_views)),
        input_dims=dims,
        hidden1=tuple(5 for _ in dims),
        hidden2=tuple(4 for _ in dims),
        embedding=tuple(emb for _ in dims),
        fusion=fusion,
        post_fusion=3,
        n_classes=2,
    )
    params = init_params(plan, stream(seed, "init"))
    return TrainedModel(plan=plan, params=params, dropout_rate=0.1, seed=seed,
                        loss_weights=(1.0,) * (n_views + 1))


def make_inputs(model, n, n_refs, seed=0):
    rng = np.random.default_rng(seed)
    samples = [rng.normal(size=(n, d)) for d in model.plan.input_dims]
    refs = [rng.normal(size=(n_refs, d)) for d in model.plan.input_dims]
    return samples, BackgroundSet(refs)


def affine_region_model(fusion, seed=0):
    """Random model kept in the all-ReLUs-active region for inputs in [-1, 1]:
    weights shrunk so propagated magnitudes stay below the +1 hidden biases,
    making the net affine end to end."""
    model = make_model(fusion, seed=seed)
    shifted = []
    for p in model.params:
        if p.ndim == 2:
            shifted.append(p * 0.1)
        elif p.size != model.plan.n_classes:
            shifted.append(p + 1.0)
        else:
            shifted.append(p.copy())
    return TrainedModel(plan=model.plan, params=shifted, dropout_rate=0.0,
                        seed=seed, loss_weights=model.loss_weights)


class TestBackgroundSet:
    def test_requires_equal_rows(self):
        with pytest.raises(ValueError, match="equal row counts"):
            BackgroundSet([np.ones((3, 2)), np.ones((2, 2))])

    def test_from_dataset_defaults_to_train_split(self):
        dataset, _ = synth_multiview(SynthConfig(view_dims=(5, 4), n_samples=30, seed=0))
        bg = background_from_dataset(dataset)
        tr = dataset.split_indices("train")
        assert bg.n_references == tr.size
        assert np.array_equal(bg.views[0], dataset.views[0].values[tr])

    def test_from_dataset_subsample_is_seeded(self):
        dataset, _ = synth_multiview(SynthConfig(view_dims=(5, 4), n_samples=30, seed=0))
        a = background_from_dataset(dataset, size=5, rng=stream(1, "bg"))
        b = background_from_dataset(dataset, size=5, rng=stream(1, "bg"))
        assert np.array_equal(a.views[0], b.views[0])
        assert a.n_references == 5

    def test_subsample_needs_rng_and_valid_size(self):
        dataset, _ = synth_multiview(SynthConfig(view_dims=(5, 4), n_samples=30, seed=0))
        with pytest.raises(ValueError, match="rng"):
            background_from_dataset(dataset, size=5)
        with pytest.raises(ValueError, match="size"):
            background_from_dataset(dataset, size=10_000, rng=stream(0, "bg"))


class TestDeepshapCompleteness:
    @pytest.mark.parametrize("fusion", ["mean", "concat"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_models_satisfy_completeness(self, fusion, seed):
        model = make_model(fusion, n_views=3 if seed == 2 else 2, seed=seed)
        samples, bg = make_inputs(model, n=5, n_refs=4, seed=seed + 10)
        result = deepshap_attribute(model, samples, bg)
        assert verify_completeness(result) <= 1e-6

    def test_verify_rejects_tampered_phi(self):
        model = make_model()
        samples, bg = make_inputs(model, 3, 2)
        result = deepshap_attribute(model, samples, bg)
        result.phi[0][0, 0, 0] += 1.0
        with pytest.raises(ValueError, match="completeness"):
            verify_completeness(result)


class TestDeepshapExactness:
    @pytest.mark.parametrize("fusion", ["mean", "concat"])
    def test_affine_model_matches_composed_weights(self, fusion):
        model = affine_region_model(fusion, seed=3)
        rng = np.random.default_rng(7)
        samples = [rng.uniform(-1, 1, size=(4, d)) for d in model.plan.input_dims]
        refs = [rng.uniform(-1, 1, size=(3, d)) for d in model.plan.input_dims]
        for batch in (samples, refs):
            cache = model.forward(batch)
            assert all((z > 0).all() for z in cache.z1 + cache.z2)
            assert (cache.zf > 0).all()
        result = deepshap_attribute(model, samples, BackgroundSet(refs))
        slots = 8
        weights = [tuple(model.params[v * slots + k] for k in (0, 2, 4))
                   for v in range(model.plan.n_views)]
        fw = model.params[model.plan.n_views * slots]
        ow = model.params[model.plan.n_views * slots + 2]
        expect = composed_affine_attribution(weights, fw, ow, fusion, samples, refs)
        for v in range(model.plan.n_views):
            assert np.abs(expect[v]).max() > 1e-6
            assert np.allclose(result.phi[v], expect[v], rtol=1e-10, atol=1e-12)

    def test_sample_equal_to_single_reference_gives_zero_phi(self):
        model = make_model(seed=5)
        rng = np.random.default_rng(0)
        point = [rng.normal(size=(1, d)) for d in model.plan.input_dims]
        result = deepshap_attribute(model, point, BackgroundSet([p.copy() for p in point]))
        for p in result.phi:
            assert np.all(p == 0.0)
        assert np.all(result.output_delta == 0.0)

    def test_hand_traced_rescale_case(self):
        # 1 view, 2 features -> 1 ReLU unit, identity tail; one reference.
        # x=(3,1), b=(1,2), w1=(1,-1): z1_x=2, z1_b=-1, m=(2-0)/(2+1)=2/3,
        # phi = m*w1*(x-b) = (4/3, 2/3); delta = (2, 0).
        plan = LayerPlan(view_ids=("a",), input_dims=(2,), hidden1=(1,),
                         hidden2=(1,), embedding=(1,), fusion="mean",
                         post_fusion=1, n_classes=2)
        params = [
            np.array([[1.0], [-1.0]]), np.zeros(1),
            np.array([[1.0]]), np.zeros(1),
            np.array([[1.0]]), np.zeros(1),
            np.array([[1.0, 0.0]]), np.zeros(2),
            np.array([[1.0]]), np.zeros(1),
            np.array([[1.0, 0.0]]), np.zeros(2),
        ]
        model = TrainedModel(plan=plan, params=params, dropout_rate=0.0, seed=0,
                             loss_weights=(1.0, 1.0))
        result = deepshap_attribute(model, [np.array([[3.0, 1.0]])],
                                    BackgroundSet([np.array([[1.0, 2.0]])]))
        assert np.allclose(result.phi[0][0, 0], [4.0 / 3.0, 2.0 / 3.0], atol=1e-15)
        assert np.allclose(result.phi[0][0, 1], [0.0, 0.0], atol=1e-15)
        assert np.allclose(result.output_delta[0], [2.0, 0.0], atol=1e-15)

    def test_repeated_reference_equals_singleton(self):
        model = make_model(seed=6)
        samples, _ = make_inputs(model, 3, 1, seed=4)
        rng = np.random.default_rng(5)
        ref = [rng.normal(size=(1, d)) for d in model.plan.input_dims]
        single = deepshap_attribute(model, samples, BackgroundSet(ref))
        tripled = deepshap_attribute(model, samples,
                                     BackgroundSet([np.repeat(r, 3, axis=0) for r in ref]))
        for pa, pb in zip(single.phi, tripled.phi):
            assert np.allclose(pa, pb, atol=1e-12)

    def test_duplicated_feature_gets_equal_score(self):
        model = make_model(seed=8)
        samples, bg = make_inputs(model, 5, 3, seed=9)
        j = 1
        # copy column j of view 0 and its weight row
        plan = model.plan
        plan2 = LayerPlan.from_dict({**plan.to_dict(),
                                     "input_dims": [plan.input_dims[0] + 1, plan.input_dims[1]]})
        params2 = [p.copy() for p in model.params]
        params2[0] = np.vstack([model.params[0], model.params[0][j]])
        model2 = TrainedModel(plan=plan2, params=params2, dropout_rate=0.0, seed=0,
                              loss_weights=model.loss_weights)
        samples2 = [np.hstack([samples[0], samples[0][:, [j]]]), samples[1]]
        bg2 = BackgroundSet([np.hstack([bg.views[0], bg.views[0][:, [j]]]), bg.views[1]])
        scores = aggregate_scores(deepshap_attribute(model2, samples2, bg2), "v0")
        assert scores.scores[j] == pytest.approx(scores.scores[-1], abs=1e-10)

    def test_rejects_view_count_and_dim_mismatch(self):
        model = make_model()
        samples, bg = make_inputs(model, 3, 2)
        with pytest.raises(ValueError, match="sample views"):
            deepshap_attribute(model, samples[:1], bg)
        bad_bg = BackgroundSet([bg.views[0][:, :-1], bg.views[1]])
        with pytest.raises(ValueError, match="plan expects"):
            deepshap_attribute(model, samples, bad_bg)


def manual_result(phi_per_view, view_ids=None):
    n, n_cls = phi_per_view[0].shape[0], phi_per_view[0].shape[1]
    view_ids = view_ids or tuple(f"v{i}" for i in range(len(phi_per_view)))
    return AttributionResult(
        view_ids=tuple(view_ids),
        feature_names=[tuple(f"{vid}_x{i}" for i in range(p.shape[2]))
                       for vid, p in zip(view_ids, phi_per_view)],
        phi=[np.asarray(p, dtype=np.float64) for p in phi_per_view],
        output_delta=sum(np.asarray(p, dtype=np.float64).sum(axis=2) for p in phi_per_view),
        class_names=tuple(f"class{c}" for c in range(n_cls)),
        sample_ids=tuple(f"sample{i}" for i in range(n)),
    )


class TestAggregateScores:
    def test_mean_absolute_hand_case(self):
        # samples x features = [[1,-2],[3,-4]] -> scores [2, 3]
        phi = np.array([[[1.0, -2.0]], [[3.0, -4.0]]])
        scores = aggregate_scores(manual_result([phi]), "v0")
        assert np.allclose(scores.scores, [2.0, 3.0], atol=1e-15)

    def test_zero_phi_gives_zero_scores(self):
        scores = aggregate_scores(manual_result([np.zeros((2, 2, 3))]), "pooled")
        assert np.all(scores.scores == 0.0)

    def test_single_sample_single_class_is_abs_row(self):
        phi = np.array([[[-1.5, 2.0, 0.0]]])
        scores = aggregate_scores(manual_result([phi]), "v0")
        assert np.allclose(scores.scores, [1.5, 2.0, 0.0], atol=1e-15)

    def test_pooled_universe_concatenates_views(self):
        pa = np.ones((2, 1, 2))
        pb = np.full((2, 1, 3), 2.0)
        scores = aggregate_scores(manual_result([pa, pb]), "pooled")
        assert scores.labels == ("v0:v0_x0", "v0:v0_x1", "v1:v1_x0", "v1:v1_x1", "v1:v1_x2")
        assert np.allclose(scores.scores, [1, 1, 2, 2, 2], atol=1e-15)

    def test_unknown_universe_rejected(self):
        with pytest.raises(ValueError, match="universe"):
            aggregate_scores(manual_result([np.ones((1, 1, 2))]), "nope")


class TestRankFeatures:
    def test_descending_order(self):
        rank = rank_features(ScoreSet("u", ("a", "b", "c"), np.array([0.5, 2.0, 1.0])))
        assert rank.ranks.tolist() == [3, 1, 2]

    def test_all_ties_break_by_index(self):
        rank = rank_features(ScoreSet("u", tuple("abcd"), np.full(4, 7.0)))
        assert rank.ranks.tolist() == [1, 2, 3, 4]

    def test_partial_tie(self):
        rank = rank_features(ScoreSet("u", ("a", "b", "c"), np.array([2.0, 2.0, 1.0])))
        assert rank.ranks.tolist() == [1, 2, 3]

    def test_rank_determinism(self):
        scores = ScoreSet("u", tuple("abcde"), np.array([3.0, 1.0, 3.0, 0.0, 1.0]))
        a, b = rank_features(scores), rank_features(scores)
        assert np.array_equal(a.ranks, b.ranks)

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="finite"):
            rank_features(ScoreSet("u", ("a", "b"), np.array([1.0, np.nan])))

    def test_rank_vector_validates_permutation(self):
        with pytest.raises(ValueError, match="permutation"):
            RankVector("u", ("a", "b"), np.array([1.0, 2.0]), np.array([1, 1]))


class TestAnnotateAndExport:
    def test_annotate_replaces_names(self):
        result = manual_result([np.ones((2, 1, 2))])
        annotate_result(result, feature_names=[("f1", "f2")], sample_ids=("s1", "s2"),
                        class_names=("neg",))
        assert result.feature_names == [("f1", "f2")]
        assert result.sample_ids == ("s1", "s2")

    def test_annotate_rejects_wrong_lengths(self):
        result = manual_result([np.ones((2, 1, 2))])
        with pytest.raises(ValueError, match="names"):
            annotate_result(result, feature_names=[("only",)])
        with pytest.raises(ValueError, match="sample_ids"):
            annotate_result(result, sample_ids=("s1",))

    def test_csv_round_trips_phi_exactly(self, tmp_path):
        model = make_model(seed=9)
        samples, bg = make_inputs(model, 2, 2, seed=11)
        result = deepshap_attribute(model, samples, bg)
        path = tmp_path / "phi.csv"
        save_attribution_csv(result, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == result.n_samples * result.n_classes * sum(
            p.shape[2] for p in result.phi)
        posn = {vid: v for v, vid in enumerate(result.view_ids)}
        for row in rows[:40]:
            v = posn[row["view"]]
            s = result.sample_ids.index(row["sample_id"])
            c = result.class_names.index(row["class"])
            f = result.feature_names[v].index(row["feature"])
            assert float(row["phi"]) == result.phi[v][s, c, f]

    def test_rank_json_export(self, tmp_path):
        rank = rank_features(ScoreSet("pooled", ("a", "b"), np.array([1.0, 2.0])))
        path = tmp_path / "ranks.json"
        save_rank_json(rank, path)
        doc = json.loads(path.read_text())
        assert doc["ranks"] == [2, 1]
        assert doc["labels"] == ["a", "b"]
        assert doc["universe"] == "pooled"
