import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seaglide.cart import PlainForest, RegressionTree
from seaglide.errors import DimensionMismatch, NoOobCoverage, NoValidSplit, TooFewRows
from seaglide.linear import ols_fit
from seaglide.mrf import (TIE_ATOL_SCALE, TIE_RTOL, ArrayData, Forest, Leaf, MrfParams, Split,
                          beta_paths, block_subsample, expand_leaf, fit_forest, forest_from_json,
                          forest_to_json, grow_tree, oob_predictions, oob_rmsfe, podium_weights,
                          predict, route, split_search, tree_predictions, tree_rngs)

from conftest import random_data


# -- kernel -------------------------------------------------------------------------

@pytest.mark.parametrize("zeta, expect", [
    (0.25, [0.0625, 0.25, 1.0, 0.25, 0.0625]),
    (0.0, [0.0, 0.0, 1.0, 0.0, 0.0]),
    (0.5, [0.25, 0.5, 1.0, 0.5, 0.25]),
])
def test_podium_weights(zeta, expect):
    assert podium_weights(zeta).tolist() == expect


@pytest.mark.parametrize("zeta", [-0.1, 1.0, 1.5])
def test_podium_rejects_zeta(zeta):
    with pytest.raises(ValueError):
        podium_weights(zeta)


def test_expand_leaf_zeta_zero_is_members():
    assert expand_leaf([2, 5, 7], 10, 0.0) == {2: 1.0, 5: 1.0, 7: 1.0}


def test_expand_leaf_interior_member():
    assert expand_leaf([5], 10, 0.25) == {3: 0.0625, 4: 0.25, 5: 1.0, 6: 0.25, 7: 0.0625}


def expand_oracle(members, n, zeta):
    out = {}
    pod = podium_weights(zeta)
    for m in members:
        for off in range(-2, 3):
            t = m + off
            if 0 <= t < n and pod[off + 2] > 0:
                out[t] = max(out.get(t, 0.0), pod[off + 2])
    return out


@pytest.mark.parametrize("members, size", [([0], 3), ([1], 4), ([9], 3), ([8], 4)])
def test_expand_leaf_edges(members, size):
    got = expand_leaf(members, 10, 0.25)
    assert got == expand_oracle(members, 10, 0.25) and len(got) == size


@given(st.sets(st.integers(0, 19), min_size=1), st.sampled_from([0.0, 0.1, 0.25, 0.5]))
def test_expand_leaf_matches_enumeration(members, zeta):
    got = expand_leaf(sorted(members), 20, zeta)
    assert got == expand_oracle(sorted(members), 20, zeta)
    assert all(got[m] == 1.0 for m in members)


def test_expand_leaf_respects_eligible():
    assert expand_leaf([5], 10, 0.25, eligible=[4, 5, 7]) == {4: 0.25, 5: 1.0, 7: 0.0625}


# -- split search ------------------------------------------------------------------

def side_objective(X, y, rows, n, zeta, lam, prior):
    w = expand_leaf(rows, n, zeta)
    idx = np.array(sorted(w))
    sw = np.sqrt([w[i] for i in idx])
    A = np.vstack([X[idx] * sw[:, None], np.sqrt(lam) * np.eye(X.shape[1])])
    b = np.concatenate([y[idx] * sw, np.sqrt(lam) * prior])
    beta = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(np.sum((b - A @ beta) ** 2))


def split_oracle(data, members, feats, params, prior):
    X, S, y = data.X, data.S, data.y
    n = len(y)
    min_leaf = params.leaf_size(X.shape[1])
    cands = []
    for j in sorted(feats):
        vals = np.unique(S[members, j])
        for c in (vals[:-1] + vals[1:]) / 2:
            left = [m for m in members if S[m, j] <= c]
            right = [m for m in members if S[m, j] > c]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            obj = (side_objective(X, y, left, n, params.zeta, params.lam, prior)
                   + side_objective(X, y, right, n, params.zeta, params.lam, prior))
            cands.append((obj, j, c))
    best = min(o for o, _, _ in cands)
    tol = TIE_RTOL * abs(best) + TIE_ATOL_SCALE * float(np.sum(y[members] ** 2))
    return next(c for c in cands if c[0] <= best + tol)


@pytest.mark.parametrize("seed", range(50))
def test_split_search_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    data = random_data(12, 2, 4, seed=seed)
    prior = rng.normal(size=2)
    params = MrfParams(zeta=0.25, lam=1.0)
    members = np.arange(12)
    j, c, obj = split_search(data, members, [0, 1, 2, 3], params, prior)
    o_obj, o_j, o_c = split_oracle(data, members, [0, 1, 2, 3], params, prior)
    assert (j, c) == (o_j, o_c)
    assert obj == pytest.approx(o_obj, rel=1e-9, abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_split_search_on_subset_of_rows(seed):
    data = random_data(30, 3, 5, seed=seed)
    members = np.sort(np.random.default_rng(seed).choice(30, 16, replace=False))
    params = MrfParams(zeta=0.5, lam=0.5)
    prior = np.zeros(3)
    j, c, obj = split_search(data, members, [1, 3, 4], params, prior)
    o_obj, o_j, o_c = split_oracle(data, members, [1, 3, 4], params, prior)
    assert (j, c) == (o_j, o_c) and obj == pytest.approx(o_obj, rel=1e-9)


def test_split_intercept_only_is_variance_reduction():
    data = random_data(24, 1, 3, seed=5)
    X = np.ones((24, 1))
    params = MrfParams(zeta=0.0, lam=0.0, min_leaf_obs=5)
    j, c, _ = split_search(ArrayData(X, data.S, data.y), np.arange(24), [0, 1, 2], params,
                           np.zeros(1))
    ref = RegressionTree(min_leaf=5)._best_split(data.S, data.y, np.arange(24), [0, 1, 2])
    assert (j, c) == (ref[1], ref[2])


def test_split_constant_features():
    data = random_data(12, 2, 3)
    S = np.ones_like(data.S)
    with pytest.raises(NoValidSplit):
        split_search(ArrayData(data.X, S, data.y), np.arange(12), [0, 1, 2], MrfParams(),
                     np.zeros(2))


def test_split_too_few_members():
    data = random_data(12, 2, 3)
    with pytest.raises(NoValidSplit):
        split_search(data, np.arange(7), [0, 1, 2], MrfParams(), np.zeros(2))


def test_split_children_do_not_increase_ssr_without_penalty():
    data = random_data(30, 2, 4, seed=9)
    params = MrfParams(zeta=0.0, lam=0.0)
    _, _, obj = split_search(data, np.arange(30), [0, 1, 2, 3], params, np.zeros(2))
    parent = float(np.sum(ols_fit(data.X, data.y).residuals ** 2))
    assert obj <= parent * (1 + 1e-12)


# -- trees ------------------------------------------------------------------------

def test_tree_single_leaf_when_min_leaf_is_large():
    data = random_data(20, 2, 3)
    prior = ols_fit(data.X, data.y).coefficients
    tree = grow_tree(data, np.arange(20), MrfParams(min_leaf_obs=20, lam=0.5), prior,
                     np.random.default_rng(0))
    assert isinstance(tree, Leaf) and tree.members.tolist() == list(range(20))


def test_tree_leaves_partition_bag_and_respect_min_leaf():
    data = random_data(40, 2, 6, seed=2)
    bag = block_subsample(40, 0.9, 2, np.random.default_rng(1))
    params = MrfParams()
    tree = grow_tree(data, bag, params, np.zeros(2), np.random.default_rng(2))
    leaves = []

    def walk(node):
        if isinstance(node, Leaf):
            leaves.append(node)
        else:
            assert 0 <= node.feature < 6
            walk(node.left)
            walk(node.right)
    walk(tree)
    members = np.sort(np.concatenate([lf.members for lf in leaves]))
    assert members.tolist() == bag.tolist()
    assert all(len(lf.members) >= params.leaf_size(2) for lf in leaves)
    for i in bag:
        assert i in route(tree, data.S[i]).members


def test_tree_restricted_case_equals_textbook_tree():
    data = random_data(30, 1, 4, seed=3)
    X = np.ones((30, 1))
    bag = np.arange(30)
    params = MrfParams(zeta=0.0, lam=0.0, mtry_fraction=1.0)
    tree = grow_tree(ArrayData(X, data.S, data.y), bag, params, np.zeros(1), np.random.default_rng(4))
    ref = RegressionTree(min_leaf=params.leaf_size(1), n_candidates=4).fit(
        data.S, data.y, bag, np.random.default_rng(4))
    probe = np.random.default_rng(5).normal(size=(50, 4))
    for s in probe:
        assert route(tree, s).beta[0] == ref.predict_one(s)


# -- forests -----------------------------------------------------------------------

def test_restricted_forest_equals_plain_forest():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(30, 6))
    y = np.sin(S[:, 0]) + S[:, 1] ** 2 + 0.1 * rng.normal(size=30)
    X = np.ones((30, 1))
    params = MrfParams(zeta=0.0, lam=0.0, block_len=1, n_trees=40, seed=7)
    forest = fit_forest(ArrayData(X, S, y), params, beta_prior=np.zeros(1))
    rngs = tree_rngs(7, 40)
    bags = [block_subsample(30, 0.9, 1, r) for r in rngs]
    plain = PlainForest(min_leaf=params.leaf_size(1)).fit(S, y, bags, rngs)
    probe = rng.normal(size=(25, 6))
    got = np.array([predict(forest, [1.0], s) for s in probe])
    assert np.array_equal(got, plain.predict(probe))


def test_one_tree_full_sample_equals_tree():
    data = random_data(30, 2, 4)
    params = MrfParams(n_trees=1, row_subsample_rate=1.0, seed=3)
    forest = fit_forest(data, params)
    x, s = data.X[4], data.S[4]
    assert predict(forest, x, s) == x @ route(forest.trees[0], s).beta


def test_collapse_to_linear():
    data = random_data(40, 3, 5, seed=8)
    params = MrfParams(min_leaf_obs=40, lam=1e-8, row_subsample_rate=1.0, n_trees=5)
    forest = fit_forest(data, params)
    ols = ols_fit(data.X, data.y).coefficients
    for i in range(40):
        assert abs(predict(forest, data.X[i], data.S[i]) - data.X[i] @ ols) <= 1e-6


def test_exactly_linear_target_recovered():
    data = random_data(40, 3, 5, seed=4)
    y = data.X @ np.array([2.0, -1.0, 0.5])
    d2 = ArrayData(data.X, data.S, y)
    forest = fit_forest(d2, MrfParams(lam=0.0, n_trees=20, row_subsample_rate=0.5))
    for i in range(0, 40, 7):
        assert abs(predict(forest, data.X[i], data.S[i]) - y[i]) <= 1e-6
    assert oob_rmsfe(forest, d2) < 1e-6


def test_forest_is_deterministic():
    data = random_data(30, 2, 4)
    a = fit_forest(data, MrfParams(n_trees=15, seed=11))
    b = fit_forest(data, MrfParams(n_trees=15, seed=11))
    assert forest_to_json(a) == forest_to_json(b)
    c = fit_forest(data, MrfParams(n_trees=15, seed=12))
    assert forest_to_json(a) != forest_to_json(c)


def test_forest_json_round_trip():
    data = random_data(30, 2, 4)
    f = fit_forest(data, MrfParams(n_trees=8, seed=2))
    g = forest_from_json(forest_to_json(f))
    assert forest_to_json(g) == forest_to_json(f)
    for i in range(30):
        assert predict(g, data.X[i], data.S[i]) == predict(f, data.X[i], data.S[i])


def test_forest_json_rejects_other_documents():
    with pytest.raises(ValueError):
        forest_from_json('{"format": "other", "version": 1}')


@given(st.permutations(range(12)))
@settings(max_examples=20)
def test_prediction_invariant_to_tree_order(perm):
    data = random_data(30, 2, 4, seed=6)
    f = _small_forest()
    g = Forest([f.trees[i] for i in perm], [f.in_bag[i] for i in perm], f.params,
               f.beta_prior, f.n_rows, f.n_linear, f.n_state)
    x, s = data.X[3], data.S[3]
    assert sorted(tree_predictions(g, x, s)) == sorted(tree_predictions(f, x, s))
    assert predict(g, x, s) == pytest.approx(predict(f, x, s), abs=1e-12)


_CACHE = {}


def _small_forest():
    if "f" not in _CACHE:
        _CACHE["f"] = fit_forest(random_data(30, 2, 4, seed=6), MrfParams(n_trees=12, seed=1))
    return _CACHE["f"]


def routing_oracle(tree, s):
    # enumerate root-to-leaf paths and keep the one whose every condition holds
    def paths(node, conds):
        if isinstance(node, Leaf):
            yield conds, node
        else:
            yield from paths(node.left, conds + [(node.feature, node.threshold, True)])
            yield from paths(node.right, conds + [(node.feature, node.threshold, False)])
    hits = [leaf for conds, leaf in paths(tree, [])
            if all((s[j] <= c) == left for j, c, left in conds)]
    assert len(hits) == 1
    return hits[0]


def test_routing_matches_enumeration():
    data = random_data(30, 2, 4, seed=6)
    f = _small_forest()
    probe = np.vstack([data.S, np.random.default_rng(0).normal(size=(10, 4))])
    for tree in f.trees:
        for s in probe:
            assert route(tree, s) is routing_oracle(tree, s)


def test_oob_matches_set_membership():
    data = random_data(30, 2, 4, seed=6)
    f = _small_forest()
    oob = oob_predictions(f, data)
    for i in range(30):
        preds = [data.X[i] @ route(t, data.S[i]).beta
                 for t, bag in zip(f.trees, f.in_bag) if i not in set(bag.tolist())]
        if preds:
            assert oob[i] == pytest.approx(np.mean(preds), abs=1e-12)
        else:
            assert np.isnan(oob[i])


def test_oob_no_coverage():
    data = random_data(30, 2, 4)
    f = fit_forest(data, MrfParams(n_trees=3, row_subsample_rate=1.0))
    with pytest.raises(NoOobCoverage):
        oob_rmsfe(f, data)


def test_oob_half_subsample_covers_all_rows():
    data = random_data(30, 2, 4)
    f = fit_forest(data, MrfParams(n_trees=60, row_subsample_rate=0.5))
    assert not np.isnan(oob_predictions(f, data)).any()


def test_dimension_mismatch():
    f = _small_forest()
    with pytest.raises(DimensionMismatch):
        predict(f, [1.0, 2.0, 3.0], np.zeros(4))


def test_too_few_rows():
    data = random_data(3, 3, 2)
    with pytest.raises(TooFewRows):
        fit_forest(data, MrfParams(n_trees=2))


def test_block_subsample_blocks():
    rng = np.random.default_rng(0)
    for _ in range(50):
        bag = block_subsample(41, 0.9, 2, rng)
        assert len(bag) >= 37 and len(set(bag.tolist())) == len(bag)
        # whole blocks only, except the trailing single-year block
        for b in set(bag.tolist()):
            if b < 40:
                assert (b ^ 1) in bag


def test_beta_paths():
    data = random_data(30, 2, 4)
    single = fit_forest(data, MrfParams(n_trees=3, min_leaf_obs=30))
    paths = beta_paths(single, data)
    assert np.allclose(paths, paths[0], atol=0)
    stiff = fit_forest(data, MrfParams(n_trees=10, lam=1e9))
    assert np.abs(beta_paths(stiff, data) - stiff.beta_prior).max() < 1e-4


def test_beta_paths_stable_for_stationary_linear_data():
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(40), rng.normal(size=40)])
        y = X @ np.array([3.0, 2.0]) + 0.2 * rng.normal(size=40)
        S = np.column_stack([X[:, 1], rng.normal(size=(40, 5))])
        data = ArrayData(X, S, y)
        paths = beta_paths(fit_forest(data, MrfParams(n_trees=30, seed=seed)), data)
        ratios.append(paths.var(axis=0) / np.abs(paths.mean(axis=0)))
    assert np.max(ratios) < 0.1


@pytest.mark.parametrize("kwargs", [dict(mtry_fraction=0), dict(zeta=1.0), dict(lam=-1),
                                    dict(row_subsample_rate=1.5), dict(n_trees=0)])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        MrfParams(**kwargs)


def test_min_leaf_floor():
    assert MrfParams().leaf_size(5) == 7 and MrfParams().leaf_size(1) == 5
    with pytest.raises(ValueError):
        MrfParams(min_leaf_obs=3).leaf_size(5)
