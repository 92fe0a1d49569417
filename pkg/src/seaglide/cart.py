"""Plain regression forest (CART, variance reduction).

A deliberately separate implementation used as the reference for the
macro forest's restricted case (intercept-only linear part, no ridge
penalty, no time kernel).  Bags and per-node feature draws are supplied
by the caller so both forests can be grown on identical randomness.
"""

from __future__ import annotations

import math

import numpy as np

from .mrf import TIE_ATOL_SCALE, TIE_RTOL


class RegressionTree:
    def __init__(self, min_leaf=5, n_candidates=None):
        self.min_leaf = min_leaf
        self.n_candidates = n_candidates
        self.root = None

    def _best_split(self, S, y, members, features):
        best = None  # (sse, j, c)
        cands = []
        for j in sorted(int(f) for f in features):
            order = members[np.argsort(S[members, j], kind="stable")]
            v = S[order, j]
            yy = y[order]
            csum = np.cumsum(yy)
            csq = np.cumsum(yy * yy)
            tot, totsq, m = csum[-1], csq[-1], len(order)
            for k in range(self.min_leaf - 1, m - self.min_leaf):
                if v[k] == v[k + 1]:
                    continue
                nl, nr = k + 1, m - k - 1
                sse_l = csq[k] - csum[k] ** 2 / nl
                sse_r = (totsq - csq[k]) - (tot - csum[k]) ** 2 / nr
                cands.append((sse_l + sse_r, j, (v[k] + v[k + 1]) / 2))
        if not cands:
            return None
        sse = np.array([c[0] for c in cands])
        lo = sse.min()
        tol = TIE_RTOL * abs(lo) + TIE_ATOL_SCALE * float(np.sum(y[members] ** 2))
        for c in cands:
            if c[0] <= lo + tol:
                best = c
                break
        return best

    def _grow(self, S, y, members, rng):
        if len(members) >= 2 * self.min_leaf:
            feats = rng.choice(S.shape[1], size=self.n_candidates, replace=False)
            best = self._best_split(S, y, members, feats)
            if best is not None:
                _, j, c = best
                left = members[S[members, j] <= c]
                right = members[S[members, j] > c]
                return ("split", j, c, self._grow(S, y, left, rng), self._grow(S, y, right, rng))
        return ("leaf", math.fsum(y[members]) / len(members))

    def fit(self, S, y, rows, rng):
        S = np.asarray(S, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.n_candidates is None:
            self.n_candidates = S.shape[1]
        self.root = self._grow(S, y, np.sort(np.asarray(rows, dtype=int)), rng)
        return self

    def predict_one(self, s):
        node = self.root
        while node[0] == "split":
            node = node[3] if s[node[1]] <= node[2] else node[4]
        return node[1]


class PlainForest:
    """Average of regression trees grown on caller-supplied bags.

    Parameters
    ----------
    bags : list of int arrays
        In-bag rows for each tree.
    rngs : list of numpy Generators
        One per tree, consumed only by the per-node feature draws.
    """

    def __init__(self, min_leaf=5, mtry_fraction=1 / 3):
        self.min_leaf = min_leaf
        self.mtry_fraction = mtry_fraction
        self.trees = []

    def fit(self, S, y, bags, rngs):
        S = np.asarray(S, dtype=float)
        k = max(1, math.ceil(self.mtry_fraction * S.shape[1] - 1e-12))
        self.trees = [RegressionTree(self.min_leaf, k).fit(S, y, bag, rng)
                      for bag, rng in zip(bags, rngs)]
        return self

    def predict(self, S):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return np.array([np.mean([t.predict_one(s) for t in self.trees]) for s in S])
