import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatrec import Dataset, apply_transform
from flatrec.recsys import (
    ConfigError,
    FactorModel,
    KNNModel,
    ModelConfig,
    TrainingDiverged,
    load_model,
    pearson_matrix,
    pearson_similarity,
    rank_scores,
    recommend_topn,
    sample_gradient,
    sample_loss,
    save_model,
    train_biasedmf,
    train_knn,
    train_model,
    train_svdpp,
)
from flatrec.recsys.factorization import _biasedmf_epoch, _svdpp_epoch

from .conftest import U1_SIMILARITY, neighbour_profiles

REG_B, REG_F, MU = 0.03, 0.05, 3.2


def random_params(rng, f=4, n_implicit=None):
    params = {
        "bu": float(rng.normal()),
        "bi": float(rng.normal()),
        "pu": rng.normal(size=f),
        "qi": rng.normal(size=f),
    }
    if n_implicit:
        params["y"] = rng.normal(size=(n_implicit, f))
    return params


def numeric_gradient(params, rating, h=1e-6):
    grad = {}
    for key, value in params.items():
        arr = np.array(value, dtype=float, ndmin=1)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h

            def at(v):
                p = dict(params)
                p[key] = v if np.ndim(value) else float(v[0])
                return sample_loss(p, rating, MU, REG_B, REG_F)

            g[idx] = (at(plus) - at(minus)) / (2 * h)
        grad[key] = g if np.ndim(value) else float(g[0])
    return grad


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("n_implicit", [None, 3], ids=["biasedmf", "svdpp"])
def test_gradient_matches_finite_differences(n_implicit):
    rng = np.random.default_rng(2024)
    for _ in range(20):
        params = random_params(rng, n_implicit=n_implicit)
        rating = float(rng.uniform(1, 5))
        analytic = sample_gradient(params, rating, MU, REG_B, REG_F)
        numeric = numeric_gradient(params, rating)
        assert set(analytic) == set(params)
        for key in params:
            assert relative_error(analytic[key], numeric[key]) < 1e-4, key


def test_biasedmf_kernel_step_is_gradient_step():
    rng = np.random.default_rng(0)
    n_users, n_items, f, lr = 3, 4, 5, 0.05
    bu, bi = rng.normal(size=n_users), rng.normal(size=n_items)
    P, Q = rng.normal(size=(n_users, f)), rng.normal(size=(n_items, f))
    uu, ii, rr = np.array([1]), np.array([2]), np.array([4.0])
    params = {"bu": bu[1], "bi": bi[2], "pu": P[1].copy(), "qi": Q[2].copy()}
    grad = sample_gradient(params, 4.0, MU, REG_B, REG_F)
    _biasedmf_epoch(np.array([0]), uu, ii, rr, MU, bu, bi, P, Q, lr, REG_B, REG_F)
    assert bu[1] == pytest.approx(params["bu"] - lr * grad["bu"], abs=1e-12)
    assert bi[2] == pytest.approx(params["bi"] - lr * grad["bi"], abs=1e-12)
    assert np.allclose(P[1], params["pu"] - lr * grad["pu"], atol=1e-12)
    assert np.allclose(Q[2], params["qi"] - lr * grad["qi"], atol=1e-12)


def test_svdpp_kernel_step_is_gradient_step():
    rng = np.random.default_rng(1)
    n_users, n_items, f, lr = 2, 5, 3, 0.05
    bu, bi = rng.normal(size=n_users), rng.normal(size=n_items)
    P, Q, Y = (rng.normal(size=s) for s in [(n_users, f), (n_items, f), (n_items, f)])
    # user 0 rated items 0, 2, 4; only the (0, 2) rating is visited
    uu, ii, rr = np.array([0, 0, 0]), np.array([0, 2, 4]), np.array([2.0, 5.0, 3.0])
    indptr, indices = np.array([0, 3, 3]), np.array([0, 2, 4])
    params = {"bu": bu[0], "bi": bi[2], "pu": P[0].copy(), "qi": Q[2].copy(), "y": Y[[0, 2, 4]].copy()}
    grad = sample_gradient(params, 5.0, MU, REG_B, REG_F)
    _svdpp_epoch(np.array([1]), uu, ii, rr, indptr, indices, MU, bu, bi, P, Q, Y, lr, lr, REG_B, REG_F)
    assert bu[0] == pytest.approx(params["bu"] - lr * grad["bu"], abs=1e-12)
    assert np.allclose(P[0], params["pu"] - lr * grad["pu"], atol=1e-12)
    assert np.allclose(Q[2], params["qi"] - lr * grad["qi"], atol=1e-12)
    assert np.allclose(Y[[0, 2, 4]], params["y"] - lr * grad["y"], atol=1e-12)
    untouched = np.random.default_rng(1)
    for s in [(n_users,), (n_items,), (n_users, f), (n_items, f)]:
        untouched.normal(size=s)
    assert np.array_equal(Y[[1, 3]], untouched.normal(size=(n_items, f))[[1, 3]])


def rank_one_data(seed=0, n=20, keep=0.7):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(1, 2, size=n), rng.uniform(1, 2, size=n)
    mask = rng.random((n, n)) < keep
    train = [(f"u{u}", f"i{i}", a[u] * b[i]) for u in range(n) for i in range(n) if mask[u, i]]
    test = [(f"u{u}", f"i{i}", a[u] * b[i]) for u in range(n) for i in range(n) if not mask[u, i]]
    return Dataset(train), test


def held_out_rmse(model, test):
    errs = [model.predict(u, i) - r for u, i, r in test if u in model.user_index and i in model.item_index]
    return float(np.sqrt(np.mean(np.square(errs))))


class TestFactorization:
    def test_single_rating_fit(self):
        ds = Dataset([("u", "i", 4.0)])
        cfg = ModelConfig(factors=1, iterations=50, learning_rate=0.05)
        model = train_biasedmf(apply_transform(ds, "identity"), cfg)
        assert model.global_mean == 4.0
        assert model.predict("u", "i") == pytest.approx(4.0, abs=1e-3)

    def test_recovers_rank_one_structure(self):
        ds, test = rank_one_data()
        cfg = ModelConfig(factors=3, iterations=400, learning_rate=0.02, reg_bias=0.001, reg_factors=0.001)
        model = train_biasedmf(apply_transform(ds, "identity"), cfg)
        assert held_out_rmse(model, test) < 0.1

    def test_svdpp_recovers_rank_one_structure(self):
        ds, test = rank_one_data()
        cfg = ModelConfig("svdpp", factors=3, iterations=400, learning_rate=0.02, reg_bias=0.001, reg_factors=0.001)
        model = train_svdpp(apply_transform(ds, "identity"), cfg)
        assert held_out_rmse(model, test) < 0.15

    @pytest.mark.parametrize("algorithm", ["biasedmf", "svdpp"])
    def test_deterministic(self, synthetic, algorithm):
        vm = apply_transform(synthetic, "per:last:user")
        cfg = ModelConfig(algorithm, factors=8, iterations=5, learning_rate=0.001, seed=13)
        a, b = train_model(vm, cfg), train_model(vm, cfg)
        assert np.array_equal(a.item_factors, b.item_factors)
        assert a.loss_trace == b.loss_trace
        c = train_model(vm, cfg.with_(seed=14))
        assert not np.array_equal(a.item_factors, c.item_factors)

    @pytest.mark.parametrize("algorithm", ["biasedmf", "svdpp"])
    def test_loss_settles(self, synthetic, algorithm):
        cfg = ModelConfig(algorithm, factors=10, iterations=25, learning_rate=0.005)
        trace = train_model(apply_transform(synthetic, "identity"), cfg).loss_trace
        assert len(trace) == 25
        assert all(b <= a * (1 + 1e-9) for a, b in zip(trace[3:], trace[4:]))

    def test_svdpp_without_implicit_signal_is_biasedmf(self, synthetic):
        vm = apply_transform(synthetic, "identity")
        cfg = ModelConfig(factors=6, iterations=4, seed=5)
        mf = train_biasedmf(vm, cfg)
        pp = train_svdpp(vm, cfg.with_(algorithm="svdpp", learning_rate_implicit=0.0), zero_implicit=True)
        assert not pp.implicit_factors.any()
        assert np.allclose(pp.user_factors, mf.user_factors, atol=1e-12)
        assert np.allclose(pp.item_bias, mf.item_bias, atol=1e-12)
        assert pp.loss_trace == pytest.approx(mf.loss_trace, rel=1e-12)

    def test_single_item_user_normalisation(self):
        ds = Dataset([("solo", "a", 3), ("x", "a", 4), ("x", "b", 2)])
        model = train_svdpp(apply_transform(ds, "identity"), ModelConfig("svdpp", factors=2, iterations=2))
        u, a = model.user_index["solo"], model.item_index["a"]
        assert np.allclose(model.user_vector(u), model.user_factors[u] + model.implicit_factors[a])

    def test_divergence_is_reported(self, synthetic):
        cfg = ModelConfig(factors=10, iterations=50, learning_rate=5.0)
        with pytest.raises(TrainingDiverged) as err:
            train_biasedmf(apply_transform(synthetic, "identity"), cfg)
        assert err.value.epoch >= 1

    def test_bad_config(self, synthetic):
        with pytest.raises(ConfigError):
            train_biasedmf(apply_transform(synthetic, "identity"), ModelConfig(factors=0))
        with pytest.raises(ConfigError):
            ModelConfig(algorithm="slopeone")


class TestNeighbourhood:
    def test_u1_similarities(self):
        profiles = neighbour_profiles()
        for user in ("U2", "U3", "U5", "U6"):
            assert pearson_similarity(profiles["U1"], profiles[user]) == pytest.approx(U1_SIMILARITY[user], abs=1e-3)

    def test_u4_with_corrected_cell(self):
        profiles = neighbour_profiles()
        profiles["U4"]["I6"] = 4
        assert pearson_similarity(profiles["U1"], profiles["U4"]) == pytest.approx(0.606, abs=1e-3)

    def test_strongest_neighbour(self, neighbours):
        model = train_knn(apply_transform(neighbours, "identity"), ModelConfig("userknn"))
        row = model.similarity[model.user_index["U1"]]
        assert model.user_ids[int(np.nanargmax(row))] == "U2"
        assert model.user_ids[int(np.nanargmin(row))] == "U6"

    def test_undefined_similarity(self):
        assert pearson_similarity({"a": 1}, {"a": 2}) is None
        assert pearson_similarity({"a": 3, "b": 3}, {"a": 1, "b": 5}) is None

    def test_matrix_matches_pairwise(self, synthetic):
        vm = apply_transform(synthetic, "zscore:user")
        model = train_knn(vm, ModelConfig("userknn"))
        profiles = {u: vm.profile(u) for u in synthetic.user_ids}
        rng = np.random.default_rng(0)
        for a, b in rng.integers(0, synthetic.n_users, size=(300, 2)):
            ua, ub = synthetic.user_ids[a], synthetic.user_ids[b]
            expected = None if a == b else pearson_similarity(profiles[ua], profiles[ub])
            got = model.similarity[a, b]
            if expected is None:
                assert np.isnan(got)
            else:
                assert got == pytest.approx(expected, abs=1e-9)

    def test_zero_values_still_count_as_rated(self):
        # after a shifted z-score, the lowest rating becomes exactly 0
        ds = Dataset([("a", "x", 1), ("a", "y", 5), ("a", "z", 3), ("b", "x", 1), ("b", "y", 5)])
        vm = apply_transform(ds, "zscore:user")
        assert 0.0 in vm.values
        sim = pearson_matrix(train_knn(vm, ModelConfig("userknn")).ratings)
        assert sim[0, 1] == pytest.approx(1.0)

    def test_resnick_prediction(self):
        ds = Dataset([("a", "p", 2), ("a", "q", 4), ("a", "r", 5), ("b", "p", 1), ("b", "q", 3),
                      ("b", "r", 4), ("b", "t", 5)])
        model = train_knn(apply_transform(ds, "identity"), ModelConfig("userknn", neighbors=5))
        mean_a, mean_b = 11 / 3, 13 / 4
        assert model.predict("a", "t") == pytest.approx(mean_a + (5 - mean_b))

    def test_no_neighbour_falls_back(self):
        ds = Dataset([("a", "p", 2), ("a", "q", 4), ("b", "r", 5), ("b", "s", 1)])
        model = train_knn(apply_transform(ds, "identity"), ModelConfig("userknn"))
        assert model.predict("a", "r") is None
        assert model.score_all("a")[model.item_index["r"]] == model.global_mean

    def test_item_based(self, synthetic):
        model = train_knn(apply_transform(synthetic, "identity"), ModelConfig("itemknn", neighbors=20))
        assert model.similarity.shape == (synthetic.n_items, synthetic.n_items)
        assert np.all(np.isfinite(model.score_all(synthetic.user_ids[0])))


class TestTopN:
    def test_order_and_tie_rule(self):
        scores = np.array([0.5, 0.9, 0.5, 0.1])
        id_rank = np.array([2, 0, 1, 3])  # ids "c", "a", "b", "d"
        assert rank_scores(scores, id_rank, np.array([], dtype=int), 3).tolist() == [1, 2, 0]

    def test_n_larger_than_candidates(self):
        top = rank_scores(np.arange(5.0), np.arange(5), np.array([0, 1]), 10)
        assert top.tolist() == [4, 3, 2]

    def test_never_recommends_training_items(self, synthetic):
        model = train_biasedmf(apply_transform(synthetic, "identity"), ModelConfig(iterations=3))
        for user in synthetic.user_ids[:30]:
            rec = recommend_topn(model, user, 10)
            assert len(rec) == 10
            assert not set(rec.item_ids) & set(synthetic.by_user[user])
            scores = [s for _, s in rec.items]
            assert scores == sorted(scores, reverse=True)

    def test_ties_broken_by_item_id(self):
        ds = Dataset([("u", "z", 3), ("u", "m", 3), ("v", "b", 3), ("v", "a", 3), ("v", "c", 3)])
        model = train_knn(apply_transform(ds, "identity"), ModelConfig("userknn"))
        assert recommend_topn(model, "u", 10).item_ids == ["a", "b", "c"]

    def test_cold_user(self, synthetic):
        model = train_biasedmf(apply_transform(synthetic, "identity"), ModelConfig(iterations=1))
        rec = recommend_topn(model, "nobody")
        assert rec.cold and rec.items == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.integers(1, 12))
def test_ranking_ignores_monotone_rescaling(raw, n):
    scores = np.array(raw, dtype=float)
    id_rank = np.arange(len(scores))[::-1].copy()
    none = np.array([], dtype=int)
    base = rank_scores(scores, id_rank, none, n)
    assert np.array_equal(base, rank_scores(np.exp(scores) * 3 + 1, id_rank, none, n))


@pytest.mark.parametrize("algorithm", ["biasedmf", "svdpp", "userknn", "itemknn"])
def test_checkpoint_round_trip(tmp_path, synthetic, algorithm):
    vm = apply_transform(synthetic, "per:median:user")
    model = train_model(vm, ModelConfig(algorithm, factors=4, iterations=2, neighbors=10))
    path = tmp_path / "model.npz"
    save_model(model, path)
    loaded = load_model(path)
    assert type(loaded) is type(model)
    assert loaded.config == model.config
    for user in synthetic.user_ids[:5]:
        assert np.array_equal(loaded.score_all(user), model.score_all(user))
        assert recommend_topn(loaded, user).items == recommend_topn(model, user).items
    assert isinstance(loaded, (FactorModel, KNNModel))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.integers(1, 15), st.data())
def test_partial_ranking_matches_full_sort(raw, n, data):
    scores = np.array(raw, dtype=float)
    id_rank = np.array(data.draw(st.permutations(range(len(scores)))))
    exclude = np.array(sorted(data.draw(st.sets(st.integers(0, len(scores) - 1)))), dtype=int)
    keep = [j for j in range(len(scores)) if j not in set(exclude.tolist())]
    expected = sorted(keep, key=lambda j: (-scores[j], id_rank[j]))[:n]
    assert rank_scores(scores, id_rank, exclude, n).tolist() == expected
