"""Macro Random Forest: regression trees whose leaves hold linear models.

Model::

    y_t = X_t beta_t + e_t,    beta_t = F(S_t)

Each split of a leaf picks the state column ``j`` (from a random subset)
and cut point ``c`` minimizing the sum, over the two children, of a
kernel-weighted ridge objective::

    min_b  sum_{t in leaf*} w_t (y_t - X_t b)^2 + lam * ||b - b_prior||^2

where ``leaf*`` is the leaf expanded by its members' neighbours in time
(rows t-2..t+2, weighted zeta^2, zeta, 1, zeta, zeta^2).  Trees are grown
on block subsamples of the rows and averaged.

Rows are years, in time order; row index is the time axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NoOobCoverage, NoValidSplit, TooFewRows
from .linear import RANK_RTOL, ols_fit, ridge_fit

FORMAT_VERSION = 1

TIE_RTOL = 1e-9
TIE_ATOL_SCALE = 1e-12


@dataclass(frozen=True)
class MrfParams:
    mtry_fraction: float = 1 / 3
    row_subsample_rate: float = 0.9
    zeta: float = 0.25
    lam: float = 1.0
    n_trees: int = 500
    min_leaf_obs: int | None = None
    block_len: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mtry_fraction <= 1:
            raise ValueError("mtry_fraction must be in (0, 1]")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 < self.row_subsample_rate <= 1:
            raise ValueError("row_subsample_rate must be in (0, 1]")
        if self.n_trees < 1 or self.block_len < 1:
            raise ValueError("n_trees and block_len must be positive")

    def leaf_size(self, n_linear: int) -> int:
        """Minimum members per leaf; defaults to max(5, |X| + 2)."""
        if self.min_leaf_obs is None:
            return max(5, n_linear + 2)
        if self.min_leaf_obs < n_linear + 1:
            raise ValueError(f"min_leaf_obs must be at least |X|+1 = {n_linear + 1}")
        return self.min_leaf_obs

    def n_candidates(self, n_state: int) -> int:
        return max(1, math.ceil(self.mtry_fraction * n_state - 1e-12))


@dataclass(frozen=True, eq=False)
class ArrayData:
    """Bare training arrays: anything with X, S, y works where a Dataset does."""
    X: np.ndarray
    S: np.ndarray
    y: np.ndarray


@dataclass(eq=False)
class Leaf:
    beta: np.ndarray
    members: np.ndarray


@dataclass(eq=False)
class Split:
    feature: int
    threshold: float
    left: "Split | Leaf"
    right: "Split | Leaf"


TreeNode = Split | Leaf


@dataclass(eq=False)
class Forest:
    trees: list
    in_bag: list
    params: MrfParams
    beta_prior: np.ndarray
    n_rows: int
    n_linear: int
    n_state: int

    def __len__(self) -> int:
        return len(self.trees)


# =============================================================================
# Kernel and leaf expansion
# =============================================================================

def podium_weights(zeta: float) -> np.ndarray:
    """Weights for time offsets -2..+2."""
    if not 0 <= zeta < 1:
        raise ValueError("zeta must be in [0, 1)")
    return np.array([zeta * zeta, zeta, 1.0, zeta, zeta * zeta])


def _dilate(M: np.ndarray, zeta: float) -> np.ndarray:
    """Row-wise podium dilation of member indicators (last axis is time)."""
    W = M.astype(float, copy=True)
    if zeta == 0:
        return W
    for off, wt in ((1, zeta), (2, zeta * zeta)):
        np.maximum(W[..., off:], wt * M[..., :-off], out=W[..., off:])
        np.maximum(W[..., :-off], wt * M[..., off:], out=W[..., :-off])
    return W


def expand_leaf(member_rows, n_rows: int, zeta: float, eligible=None) -> dict[int, float]:
    """Weighted row set of a leaf grown by its members' time neighbours.

    A row reached from several members keeps its largest weight; members
    keep weight 1.  ``eligible`` (optional) limits which rows may be
    added, e.g. to the tree's in-bag rows.
    """
    members = np.asarray(member_rows, dtype=int)
    if members.size == 0:
        raise ValueError("empty leaf")
    M = np.zeros(n_rows)
    M[members] = 1.0
    W = _dilate(M, zeta)
    if eligible is not None:
        mask = np.zeros(n_rows, dtype=bool)
        mask[np.asarray(eligible, dtype=int)] = True
        mask[members] = True
        W = W * mask
    return {int(i): float(W[i]) for i in np.flatnonzero(W)}


# =============================================================================
# Split search
# =============================================================================

def _row_stats(X, y) -> np.ndarray:
    """Per-row sufficient statistics: upper triangle of x x', then x y, y^2."""
    p = X.shape[1]
    iu = np.triu_indices(p)
    return np.ascontiguousarray(np.hstack([
        (X[:, :, None] * X[:, None, :])[:, iu[0], iu[1]], X * y[:, None], (y * y)[:, None]]))


@njit(cache=True, error_model="numpy", inline="always")
def _axpy(acc, dw, row):
    for k in range(acc.shape[0]):
        acc[k] += dw * row[k]


@njit(cache=True, error_model="numpy", inline="always")
def _ridge_objective(st, lam, prior, rtol, M, r, d):
    """Minimum of the weighted ridge objective from its sufficient statistics.

    ``st`` holds the weighted sums laid out as in ``_row_stats``.  With
    ``A = X'WX + lam I``,
    ``r = X'Wy + lam prior`` and ``c = y'Wy + lam |prior|^2`` the minimum is
    ``c - r' A^-1 r``; an LDL' factorization gives it as
    ``c - sum(z_u^2 / d_u)`` with ``L z = r``.  Returns inf when singular.
    ``M, r, d`` are scratch buffers.
    """
    p = r.shape[0]
    q = p * (p + 1) // 2
    cc = st[q + p]
    k = 0
    for u in range(p):
        r[u] = st[q + u] + lam * prior[u]
        cc += lam * prior[u] * prior[u]
        for v in range(u, p):
            M[u, v] = st[k]
            M[v, u] = st[k]
            k += 1
        M[u, u] += lam
    if lam == 0.0:
        ev = np.linalg.eigvalsh(M)
        if ev[0] <= rtol * max(ev[p - 1], 0.0):
            return np.inf
    # in-place LDL': strict lower triangle of M becomes L, d the diagonal
    for u in range(p):
        for v in range(u):
            acc = M[u, v]
            for k in range(v):
                acc -= M[u, k] * M[v, k] * d[k]
            M[u, v] = acc / d[v]
        acc = M[u, u]
        for k in range(u):
            acc -= M[u, k] * M[u, k] * d[k]
        if acc <= 0.0:
            return np.inf
        d[u] = acc
    out = cc
    for u in range(p):
        acc = r[u]
        for k in range(u):
            acc -= M[u, k] * r[k]
        r[u] = acc
        out -= acc * acc / d[u]
    return out


@njit(cache=True, error_model="numpy", inline="always")
def _grow_side(st, w, row, R, elig, kern):
    """Add member ``row`` to a leaf: kernel weights only ever rise."""
    n = w.shape[0]
    for t in range(max(0, row - 2), min(n, row + 3)):
        wt = kern[abs(t - row)] if (elig[t] or t == row) else 0.0
        if wt > w[t]:
            _axpy(st, wt - w[t], R[t])
            w[t] = wt


@njit(cache=True, error_model="numpy")
def _search_kernel(R, S, elig, members, feats, min_leaf, zeta, lam, prior, rtol):
    """Objective of every admissible (feature, cut), in (feature, cut) order.

    For each feature the sorted members are swept twice: forward, growing
    the left child one member at a time, then backward, growing the right
    child.  Adding a member only raises kernel weights of rows within two
    steps of it, so each child's sufficient statistics update in O(1) rows.
    """
    n, nq = R.shape
    p = prior.shape[0]
    m = members.shape[0]
    kern = np.array([1.0, zeta, zeta * zeta])
    cap = feats.shape[0] * max(m - 1, 1)
    out_j = np.empty(cap, np.int64)
    out_c = np.empty(cap)
    out_o = np.empty(cap)
    nc = 0
    vals = np.empty(m)
    valid = np.empty(m, np.bool_)
    objL = np.empty(m)
    w = np.empty(n)
    st = np.empty(nq)
    M = np.empty((p, p))
    r = np.empty(p)
    d = np.empty(p)
    for fi in range(feats.shape[0]):
        j = feats[fi]
        for i in range(m):
            vals[i] = S[members[i], j]
        order = np.argsort(vals)
        n_valid = 0
        for i in range(m - 1):
            valid[i] = (min_leaf - 1 <= i <= m - min_leaf - 1
                        and vals[order[i]] < vals[order[i + 1]])
            n_valid += valid[i]
        if n_valid == 0:
            continue
        w[:] = 0.0
        st[:] = 0.0
        for i in range(m - 1):
            _grow_side(st, w, members[order[i]], R, elig, kern)
            if valid[i]:
                objL[i] = _ridge_objective(st, lam, prior, rtol, M, r, d)
        # backward pass fills this feature's slots from the largest cut down
        nc += n_valid
        k = nc - 1
        w[:] = 0.0
        st[:] = 0.0
        for i in range(m - 2, -1, -1):
            _grow_side(st, w, members[order[i + 1]], R, elig, kern)
            if valid[i]:
                out_j[k] = j
                out_c[k] = (vals[order[i]] + vals[order[i + 1]]) / 2
                out_o[k] = objL[i] + _ridge_objective(st, lam, prior, rtol, M, r, d)
                k -= 1
    return out_j[:nc], out_c[:nc], out_o[:nc]


class _Problem:
    """Per-tree constants shared by every node's split search."""

    def __init__(self, X, y, S, lam, beta_prior, zeta, eligible):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.S = np.ascontiguousarray(S, dtype=float)
        self.n, self.p = self.X.shape
        self.lam = float(lam)
        self.prior = np.ascontiguousarray(beta_prior, dtype=float)
        self.zeta = float(zeta)
        self.stats = _row_stats(self.X, self.y)
        self.eligible = np.ones(self.n, dtype=bool)
        if eligible is not None:
            self.eligible[:] = False
            self.eligible[np.asarray(eligible, dtype=int)] = True

    def weights(self, M: np.ndarray) -> np.ndarray:
        return _dilate(M, self.zeta) * np.maximum(self.eligible, M)

    def leaf_beta(self, members: np.ndarray) -> np.ndarray:
        M = np.zeros(self.n)
        M[members] = 1.0
        w = self.weights(M)
        keep = w > 0
        return ridge_fit(self.X[keep], self.y[keep], w[keep], self.lam, self.prior)


def pick_best(objective: np.ndarray, scale: float) -> int:
    """Index of the first candidate whose objective ties the minimum.

    Candidates must be ordered by (feature, cut); values within a relative
    1e-9 of the minimum (plus a small absolute floor tied to ``scale``)
    count as ties.
    """
    best = objective.min()
    tol = TIE_RTOL * abs(best) + TIE_ATOL_SCALE * scale
    return int(np.flatnonzero(objective <= best + tol)[0])


def _search(prob: _Problem, members: np.ndarray, features, min_leaf: int):
    members = np.sort(np.asarray(members, dtype=np.int64))
    feats = np.unique(np.asarray(features, dtype=np.int64))
    js, cs, obj = _search_kernel(prob.stats, prob.S, prob.eligible, members, feats,
                                 min_leaf, prob.zeta, prob.lam, prob.prior, RANK_RTOL)
    if js.size == 0:
        raise NoValidSplit("no admissible cut for the candidate features")
    if not np.isfinite(obj).any():
        raise NoValidSplit("every candidate leaf system is singular")
    i = pick_best(obj, float(np.sum(prob.y[members] ** 2)))
    return int(js[i]), float(cs[i]), float(obj[i])


def split_search(data, member_rows, candidate_features, params: MrfParams, beta_prior,
                 eligible=None) -> tuple[int, float, float]:
    """Best (feature, cut, objective) over the candidate features.

    Cuts are midpoints between consecutive distinct values of the feature
    among ``member_rows``; a row goes left when its value is <= the cut.
    Ties go to the lower feature index, then the lower cut.
    """
    X = np.asarray(data.X, dtype=float)
    prob = _Problem(X, data.y, data.S, params.lam, beta_prior, params.zeta, eligible)
    return _search(prob, member_rows, candidate_features, params.leaf_size(X.shape[1]))


# =============================================================================
# Trees and forests
# =============================================================================

def _grow(prob: _Problem, members: np.ndarray, min_leaf: int, n_cand: int, rng) -> TreeNode:
    if len(members) >= 2 * min_leaf:
        feats = rng.choice(prob.S.shape[1], size=n_cand, replace=False)
        try:
            j, c, _ = _search(prob, members, feats, min_leaf)
        except NoValidSplit:
            pass
        else:
            go_left = prob.S[members, j] <= c
            return Split(j, c, _grow(prob, members[go_left], min_leaf, n_cand, rng),
                         _grow(prob, members[~go_left], min_leaf, n_cand, rng))
    return Leaf(prob.leaf_beta(members), members)


def grow_tree(data, in_bag_rows, params: MrfParams, beta_prior, rng) -> TreeNode:
    """Grow one tree on ``in_bag_rows``.

    A fresh random subset of ceil(mtry_fraction * |S|) state columns is
    drawn (without replacement) at every node large enough to split.
    """
    X = np.asarray(data.X, dtype=float)
    S = np.asarray(data.S, dtype=float)
    in_bag = np.sort(np.asarray(in_bag_rows, dtype=int))
    prob = _Problem(X, data.y, S, params.lam, beta_prior, params.zeta, in_bag)
    return _grow(prob, in_bag, params.leaf_size(X.shape[1]), params.n_candidates(S.shape[1]), rng)


def block_subsample(n_rows: int, rate: float, block_len: int, rng) -> np.ndarray:
    """Rows covered by randomly ordered consecutive blocks, drawn without
    replacement until at least ``rate`` of the rows are covered."""
    starts = range(0, n_rows, block_len)
    blocks = [np.arange(s, min(s + block_len, n_rows)) for s in starts]
    need = math.ceil(rate * n_rows - 1e-9)
    chosen, covered = [], 0
    for b in rng.permutation(len(blocks)):
        if covered >= need:
            break
        chosen.append(blocks[b])
        covered += len(blocks[b])
    return np.sort(np.concatenate(chosen))


def tree_rngs(seed: int, n_trees: int) -> list[np.random.Generator]:
    """Independent per-tree generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]


def _fit_one(data, params, beta_prior, rng):
    bag = block_subsample(len(data.y), params.row_subsample_rate, params.block_len, rng)
    return bag, grow_tree(data, bag, params, beta_prior, rng)


def fit_forest(data, params: MrfParams | None = None, beta_prior=None, n_jobs: int = 1) -> Forest:
    """Grow ``params.n_trees`` trees on block subsamples.

    ``beta_prior`` defaults to the OLS coefficients of y on X over all rows.
    Tree ``i`` uses the ``i``-th child stream of ``params.seed``, so the
    result does not depend on ``n_jobs``.
    """
    params = params or MrfParams()
    X = np.asarray(data.X, dtype=float)
    n, p = X.shape
    params.leaf_size(p)
    # fewer than 2 * min_leaf rows is allowed: every tree is then a single leaf
    if n < p + 1:
        raise TooFewRows(f"{n} rows for {p} linear coefficients")
    if beta_prior is None:
        beta_prior = ols_fit(X, data.y).coefficients
    beta_prior = np.asarray(beta_prior, dtype=float)
    rngs = tree_rngs(params.seed, params.n_trees)
    if n_jobs == 1:
        results = [_fit_one(data, params, beta_prior, r) for r in rngs]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(delayed(_fit_one)(data, params, beta_prior, r)
                                          for r in rngs)
    return Forest(trees=[t for _, t in results], in_bag=[b for b, _ in results],
                  params=params, beta_prior=beta_prior, n_rows=n, n_linear=p,
                  n_state=np.asarray(data.S).shape[1])


# =============================================================================
# Prediction
# =============================================================================

def route(tree: TreeNode, s_row) -> Leaf:
    node = tree
    while isinstance(node, Split):
        node = node.left if s_row[node.feature] <= node.threshold else node.right
    return node


def _check_dims(forest: Forest, x_row, s_row):
    if len(x_row) != forest.n_linear or len(s_row) != forest.n_state:
        raise DimensionMismatch(
            f"got |x|={len(x_row)}, |s|={len(s_row)}; forest expects "
            f"{forest.n_linear}, {forest.n_state}")


def tree_predictions(forest: Forest, x_row, s_row) -> np.ndarray:
    x = np.asarray(getattr(x_row, "values", x_row), dtype=float)
    s = np.asarray(getattr(s_row, "values", s_row), dtype=float)
    _check_dims(forest, x, s)
    return np.array([x @ route(t, s).beta for t in forest.trees])


def predict(forest: Forest, x_row, s_row) -> float:
    """Equal-weight average over trees of ``x_row . beta_leaf``."""
    return float(tree_predictions(forest, x_row, s_row).mean())


def beta_paths(forest: Forest, data) -> np.ndarray:
    """Average leaf coefficients per training row, over all trees."""
    S = np.asarray(data.S, dtype=float)
    out = np.zeros((S.shape[0], forest.n_linear))
    for tree in forest.trees:
        for i in range(S.shape[0]):
            out[i] += route(tree, S[i]).beta
    return out / len(forest.trees)


def oob_predictions(forest: Forest, data) -> np.ndarray:
    """Out-of-bag prediction per row (NaN where a row is in every bag)."""
    X = np.asarray(data.X, dtype=float)
    S = np.asarray(data.S, dtype=float)
    n = X.shape[0]
    total = np.zeros(n)
    count = np.zeros(n, dtype=int)
    for tree, bag in zip(forest.trees, forest.in_bag):
        out = np.ones(n, dtype=bool)
        out[bag] = False
        for i in np.flatnonzero(out):
            total[i] += X[i] @ route(tree, S[i]).beta
            count[i] += 1
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def oob_rmsfe(forest: Forest, data) -> float:
    """Root mean squared out-of-bag error over rows with OOB coverage."""
    pred = oob_predictions(forest, data)
    covered = ~np.isnan(pred)
    if not covered.any():
        raise NoOobCoverage("no row is out of bag in any tree")
    err = np.asarray(data.y, dtype=float)[covered] - pred[covered]
    return float(np.sqrt(np.mean(err ** 2)))


# =============================================================================
# Serialization
# =============================================================================

def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"beta": node.beta.tolist(), "members": node.members.tolist()}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> TreeNode:
    if "beta" in d:
        return Leaf(np.array(d["beta"], dtype=float), np.array(d["members"], dtype=int))
    return Split(int(d["feature"]), float(d["threshold"]),
                 _node_from_dict(d["left"]), _node_from_dict(d["right"]))


def forest_to_json(forest: Forest) -> str:
    p = forest.params
    doc = {
        "format": "seaglide-mrf", "version": FORMAT_VERSION,
        "params": {"mtry_fraction": p.mtry_fraction, "row_subsample_rate": p.row_subsample_rate,
                   "zeta": p.zeta, "lam": p.lam, "n_trees": p.n_trees,
                   "min_leaf_obs": p.min_leaf_obs, "block_len": p.block_len, "seed": p.seed},
        "beta_prior": forest.beta_prior.tolist(),
        "n_rows": forest.n_rows, "n_linear": forest.n_linear, "n_state": forest.n_state,
        "in_bag": [b.tolist() for b in forest.in_bag],
        "trees": [_node_to_dict(t) for t in forest.trees],
    }
    return json.dumps(doc, separators=(",", ":"))


def forest_from_json(text: str) -> Forest:
    doc = json.loads(text)
    if doc.get("format") != "seaglide-mrf" or doc.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 seaglide forest document")
    return Forest(
        trees=[_node_from_dict(t) for t in doc["trees"]],
        in_bag=[np.array(b, dtype=int) for b in doc["in_bag"]],
        params=MrfParams(**doc["params"]),
        beta_prior=np.array(doc["beta_prior"], dtype=float),
        n_rows=doc["n_rows"], n_linear=doc["n_linear"], n_state=doc["n_state"],
    )
