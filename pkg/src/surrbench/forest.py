"""Quantile regression forest over mixed numeric/categorical inputs.

Trees split numeric columns on value thresholds and categorical columns on
value subsets (found by ordering categories by mean response and scanning
prefix partitions).  Each leaf keeps the multiset of training responses that
reached it; quantile predictions pool the reached leaves across trees with
per-label weight 1/(num_trees * leaf_size) and evaluate the weighted
empirical quantile

    Q_alpha(x) = inf{ y : P(Y <= y | X = x) >= alpha }

as a step function (no interpolation).  Mean/variance predictions combine the
spread of per-tree leaf means with the mean per-tree leaf variance.

Growth and traversal loops are JIT-compiled; all randomness derives from a
per-tree seed taken from the caller's stream up front, so results do not
depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

__all__ = ["ForestConfig", "QuantileForest", "Tree", "ForestError", "fit", "fit_forest"]

MAX_CATEGORIES = 64  # categorical splits are stored as 64-bit membership masks

_U64 = np.uint64
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


class ForestError(ValueError):
    """Invalid forest configuration or training input."""


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters.

    Defaults are tuned values for runtime prediction; typical search ranges
    are num_trees 10..50, frac_points and frac_feats 0.001..1, max_nodes
    10..100000, max_depth 20..100, min_samples_in_leaf 1..20,
    min_samples_to_split 2..20.  Validation enforces sanity, not those
    ranges: degenerate settings (one deep tree on all points) are legitimate
    for interpolation checks.  max_depth None disables the depth cap.
    """

    num_trees: int = 48
    frac_points: float = 0.8
    bootstrapping: bool = False
    frac_feats: float = 0.28
    max_nodes: int = 50_000
    max_depth: int | None = 26
    min_samples_in_leaf: int = 1
    min_samples_to_split: int = 5

    def __post_init__(self):
        if self.num_trees < 1:
            raise ForestError(f"num_trees must be >= 1, got {self.num_trees}")
        if not (0.0 < self.frac_points <= 1.0):
            raise ForestError(f"frac_points must be in (0, 1], got {self.frac_points}")
        if not (0.0 < self.frac_feats <= 1.0):
            raise ForestError(f"frac_feats must be in (0, 1], got {self.frac_feats}")
        if self.max_nodes < 1:
            raise ForestError(f"max_nodes must be >= 1, got {self.max_nodes}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_samples_in_leaf < 1:
            raise ForestError("min_samples_in_leaf must be >= 1")
        if self.min_samples_to_split < 2:
            raise ForestError("min_samples_to_split must be >= 2")


@njit(cache=True)
def _sm_next(state):
    # splitmix64: uint64 state -> (next state, output)
    state = state + _U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return state, z ^ (z >> _U64(31))


@njit(cache=True)
def _grow(X, y, rows, is_cat, n_cats, k_feats, max_depth, max_nodes,
          min_leaf, min_split, seed):
    """Grow one tree on X[rows]; returns node arrays plus the partitioned
    row-index array whose [start, end) slices are the leaves."""
    m = rows.shape[0]
    p = X.shape[1]
    cap = max_nodes if max_nodes < 2 * m - 1 else 2 * m - 1
    if cap < 1:
        cap = 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    catmask = np.zeros(cap, np.uint64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    start = np.zeros(cap, np.int64)
    end = np.zeros(cap, np.int64)
    depth = np.zeros(cap, np.int64)

    idx = rows.copy()
    scratch = np.empty(m, np.int64)
    perm = np.empty(p, np.int64)
    vals = np.empty(m, np.float64)
    ys = np.empty(m, np.float64)
    max_c = 0
    for f in range(p):
        if n_cats[f] > max_c:
            max_c = n_cats[f]
    cat_sum = np.zeros(max_c + 1, np.float64)
    cat_cnt = np.zeros(max_c + 1, np.int64)
    cat_ids = np.zeros(max_c + 1, np.int64)

    stack = np.empty(cap, np.int64)
    node_count = 1
    start[0] = 0
    end[0] = m
    depth[0] = 0
    stack[0] = 0
    sp = 1
    state = seed

    while sp > 0:
        sp -= 1
        nid = stack[sp]
        s = start[nid]
        e = end[nid]
        d = depth[nid]
        mnode = e - s

        splittable = (
            mnode >= min_split
            and (max_depth < 0 or d < max_depth)
            and node_count + 2 <= max_nodes
            and node_count + 2 <= cap
        )
        if splittable:
            y0 = y[idx[s]]
            pure = True
            for i in range(s + 1, e):
                if y[idx[i]] != y0:
                    pure = False
                    break
            splittable = not pure

        best_feat = -1
        best_sse = np.inf
        best_thr = 0.0
        best_mask = _U64(0)
        if splittable:
            for i in range(p):
                perm[i] = i
            for i in range(p - 1, 0, -1):
                state, z = _sm_next(state)
                j = int(((z >> _U64(11)) * _INV53) * (i + 1))
                if j > i:
                    j = i
                t = perm[i]
                perm[i] = perm[j]
                perm[j] = t

            sumsq = 0.0
            total = 0.0
            for i in range(mnode):
                yv = y[idx[s + i]]
                total += yv
                sumsq += yv * yv

            tried = 0
            for fpos in range(p):
                if tried >= k_feats and best_feat >= 0:
                    break  # enough features seen and a split exists
                f = perm[fpos]
                tried += 1
                for i in range(mnode):
                    r = idx[s + i]
                    vals[i] = X[r, f]
                    ys[i] = y[r]
                if is_cat[f]:
                    C = n_cats[f]
                    for c in range(C):
                        cat_sum[c] = 0.0
                        cat_cnt[c] = 0
                    for i in range(mnode):
                        c = int(vals[i])
                        cat_sum[c] += ys[i]
                        cat_cnt[c] += 1
                    npres = 0
                    for c in range(C):
                        if cat_cnt[c] > 0:
                            cat_ids[npres] = c
                            npres += 1
                    if npres < 2:
                        continue
                    # order present categories by (mean response, id)
                    for a in range(1, npres):
                        cid = cat_ids[a]
                        ma = cat_sum[cid] / cat_cnt[cid]
                        b = a - 1
                        while b >= 0:
                            cb = cat_ids[b]
                            mb = cat_sum[cb] / cat_cnt[cb]
                            if mb > ma or (mb == ma and cb > cid):
                                cat_ids[b + 1] = cb
                                b -= 1
                            else:
                                break
                        cat_ids[b + 1] = cid
                    nl = 0
                    sl = 0.0
                    mask = _U64(0)
                    for k in range(npres - 1):
                        cid = cat_ids[k]
                        nl += cat_cnt[cid]
                        sl += cat_sum[cid]
                        mask = mask | (_U64(1) << _U64(cid))
                        nr = mnode - nl
                        if nl < min_leaf or nr < min_leaf:
                            continue
                        sr = total - sl
                        sse = sumsq - (sl * sl / nl + sr * sr / nr)
                        if sse < best_sse or (sse == best_sse and f < best_feat):
                            best_sse = sse
                            best_feat = f
                            best_thr = 0.0
                            best_mask = mask
                else:
                    order = np.argsort(vals[:mnode])
                    nl = 0
                    sl = 0.0
                    for i in range(mnode - 1):
                        j = order[i]
                        nl += 1
                        sl += ys[j]
                        vcur = vals[j]
                        vnext = vals[order[i + 1]]
                        if vcur == vnext:
                            continue
                        nr = mnode - nl
                        if nl < min_leaf or nr < min_leaf:
                            continue
                        sr = total - sl
                        sse = sumsq - (sl * sl / nl + sr * sr / nr)
                        thr = 0.5 * (vcur + vnext)
                        if sse < best_sse or (
                            sse == best_sse
                            and (f < best_feat or (f == best_feat and thr < best_thr))
                        ):
                            best_sse = sse
                            best_feat = f
                            best_thr = thr
                            best_mask = _U64(0)

        if best_feat < 0:
            continue  # leaf; its [start, end) slice of idx is final

        # stable partition of idx[s:e]: left block then right block
        f = best_feat
        wl = 0
        if is_cat[f]:
            for i in range(s, e):
                v = int(X[idx[i], f])
                if (best_mask >> _U64(v)) & _U64(1):
                    scratch[wl] = idx[i]
                    wl += 1
        else:
            for i in range(s, e):
                if X[idx[i], f] <= best_thr:
                    scratch[wl] = idx[i]
                    wl += 1
        wr = wl
        if is_cat[f]:
            for i in range(s, e):
                v = int(X[idx[i], f])
                if not ((best_mask >> _U64(v)) & _U64(1)):
                    scratch[wr] = idx[i]
                    wr += 1
        else:
            for i in range(s, e):
                if not (X[idx[i], f] <= best_thr):
                    scratch[wr] = idx[i]
                    wr += 1
        for i in range(mnode):
            idx[s + i] = scratch[i]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feature[nid] = f
        threshold[nid] = best_thr
        catmask[nid] = best_mask
        left[nid] = lid
        right[nid] = rid
        start[lid] = s
        end[lid] = s + wl
        depth[lid] = d + 1
        start[rid] = s + wl
        end[rid] = e
        depth[rid] = d + 1
        stack[sp] = rid
        sp += 1
        stack[sp] = lid
        sp += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        catmask[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        start[:node_count].copy(),
        end[:node_count].copy(),
        idx,
    )


@njit(cache=True)
def _apply(Xq, feature, threshold, catmask, left, right, is_cat):
    n = Xq.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        nid = 0
        while feature[nid] >= 0:
            f = feature[nid]
            v = Xq[i, f]
            if is_cat[f]:
                c = int(v)
                if 0 <= c < 64 and (catmask[nid] >> _U64(c)) & _U64(1):
                    nid = left[nid]
                else:
                    nid = right[nid]
            else:
                if v <= threshold[nid]:
                    nid = left[nid]
                else:
                    nid = right[nid]
        out[i] = nid
    return out


@dataclass
class Tree:
    """One grown tree: flat node arrays plus per-leaf response multisets."""

    feature: np.ndarray
    threshold: np.ndarray
    catmask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vstart: np.ndarray  # per node: offset into values (leaves only)
    vlen: np.ndarray  # per node: leaf size, 0 for internal nodes
    values: np.ndarray  # leaf responses, grouped by leaf in node-id order
    leaf_mean: np.ndarray
    leaf_var: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


def _finish_tree(arrays, y) -> Tree:
    feature, threshold, catmask, left, right, start, end, idx = arrays
    nc = feature.shape[0]
    vstart = np.zeros(nc, dtype=np.int64)
    vlen = np.zeros(nc, dtype=np.int64)
    leaf_nodes = np.where(feature < 0)[0]
    sizes = end[leaf_nodes] - start[leaf_nodes]
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    vstart[leaf_nodes] = offsets
    vlen[leaf_nodes] = sizes
    values = np.concatenate(
        [y[idx[start[l]:end[l]]] for l in leaf_nodes]
    ) if len(leaf_nodes) else np.empty(0)
    sums = np.add.reduceat(values, offsets) if len(values) else np.empty(0)
    sqs = np.add.reduceat(values * values, offsets) if len(values) else np.empty(0)
    leaf_mean = np.zeros(nc)
    leaf_var = np.zeros(nc)
    mean = sums / sizes
    leaf_mean[leaf_nodes] = mean
    leaf_var[leaf_nodes] = np.maximum(sqs / sizes - mean * mean, 0.0)
    return Tree(
        feature, threshold, catmask, left, right, vstart, vlen, values,
        leaf_mean, leaf_var,
    )


@dataclass
class QuantileForest:
    config: ForestConfig
    trees: list[Tree]
    is_cat: np.ndarray
    n_cats: np.ndarray
    y_min: float
    y_max: float
    n_train: int

    @property
    def n_features(self) -> int:
        return self.is_cat.shape[0]

    def _rows(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ForestError(
                f"expected {self.n_features} columns, got {X.shape[1]}"
            )
        return np.ascontiguousarray(X), single

    def leaves(self, X) -> np.ndarray:
        """Leaf node id reached in each tree; shape (n, num_trees)."""
        X, _ = self._rows(X)
        out = np.empty((X.shape[0], len(self.trees)), dtype=np.int64)
        cat8 = self.is_cat.astype(np.uint8)
        for t, tree in enumerate(self.trees):
            out[:, t] = _apply(
                X, tree.feature, tree.threshold, tree.catmask,
                tree.left, tree.right, cat8,
            )
        return out

    def pooled(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Sorted pooled leaf labels and their weights for one input row."""
        X, _ = self._rows(np.atleast_2d(x)[0])
        L = self.leaves(X)[0]
        T = len(self.trees)
        parts = []
        wparts = []
        for t, tree in enumerate(self.trees):
            n0 = tree.vstart[L[t]]
            n1 = n0 + tree.vlen[L[t]]
            vals = tree.values[n0:n1]
            parts.append(vals)
            wparts.append(np.full(len(vals), 1.0 / (T * len(vals))))
        values = np.concatenate(parts)
        weights = np.concatenate(wparts)
        order = np.argsort(values, kind="stable")
        return values[order], weights[order]

    def predict_quantile(self, X, alpha) -> np.ndarray | float:
        """Weighted empirical alpha-quantile of the pooled reached leaves.

        alpha may be a scalar or one value per row; alpha 0 and 1 return the
        pooled minimum and maximum.
        """
        X, single = self._rows(X)
        n = X.shape[0]
        alphas = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
        if np.any((alphas < 0.0) | (alphas > 1.0)):
            raise ForestError("alpha must lie in [0, 1]")
        L = self.leaves(X)
        T = len(self.trees)
        out = np.empty(n)
        for i in range(n):
            total_len = 0
            for t, tree in enumerate(self.trees):
                total_len += tree.vlen[L[i, t]]
            vals = np.empty(total_len)
            wts = np.empty(total_len)
            pos = 0
            for t, tree in enumerate(self.trees):
                ln = tree.vlen[L[i, t]]
                n0 = tree.vstart[L[i, t]]
                vals[pos:pos + ln] = tree.values[n0:n0 + ln]
                wts[pos:pos + ln] = 1.0 / (T * ln)
                pos += ln
            order = np.argsort(vals, kind="stable")
            vals = vals[order]
            cum = np.cumsum(wts[order])
            j = np.searchsorted(cum, alphas[i] * cum[-1], side="left")
            out[i] = vals[min(j, total_len - 1)]
        return float(out[0]) if single else out

    def predict_mean_var(self, X) -> tuple[np.ndarray, np.ndarray] | tuple[float, float]:
        """Mean of per-tree leaf means; variance splits across and within trees."""
        X, single = self._rows(X)
        L = self.leaves(X)
        n = X.shape[0]
        T = len(self.trees)
        means = np.empty((n, T))
        variances = np.empty((n, T))
        for t, tree in enumerate(self.trees):
            means[:, t] = tree.leaf_mean[L[:, t]]
            variances[:, t] = tree.leaf_var[L[:, t]]
        mu = means.mean(axis=1)
        var = means.var(axis=1) + variances.mean(axis=1)
        if single:
            return float(mu[0]), float(var[0])
        return mu, var


def fit_forest(
    X,
    y,
    is_cat,
    n_cats,
    config: ForestConfig = ForestConfig(),
    rng: np.random.Generator | None = None,
) -> QuantileForest:
    """Train a forest.  Per-tree seeds are drawn from rng up front, indexed
    by tree, so the result is a pure function of (inputs, config, stream)."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ForestError(f"bad training shapes X{X.shape}, y{y.shape}")
    n, p = X.shape
    if n < 1:
        raise ForestError("need at least one training row")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ForestError("training data must be finite")
    is_cat = np.asarray(is_cat, dtype=bool)
    n_cats = np.asarray(n_cats, dtype=np.int64)
    if is_cat.shape != (p,) or n_cats.shape != (p,):
        raise ForestError("feature metadata must have one entry per column")
    for j in range(p):
        if not is_cat[j]:
            continue
        if n_cats[j] > MAX_CATEGORIES:
            raise ForestError(
                f"column {j}: {n_cats[j]} categories exceeds the supported "
                f"{MAX_CATEGORIES}"
            )
        col = X[:, j]
        if ((col < 0) | (col >= n_cats[j]) | (col != np.floor(col))).any():
            raise ForestError(f"column {j}: categorical values must be indices")
    if rng is None:
        rng = np.random.default_rng(0)

    seeds = rng.integers(0, 2**63, size=(config.num_trees, 2))
    n_sub = max(1, math.ceil(config.frac_points * n))
    k_feats = max(1, math.ceil(config.frac_feats * p))
    max_depth = -1 if config.max_depth is None else config.max_depth
    cat8 = is_cat.astype(np.uint8)

    trees = []
    for t in range(config.num_trees):
        row_rng = np.random.default_rng(int(seeds[t, 0]))
        if config.bootstrapping:
            rows = np.sort(row_rng.integers(0, n, size=n_sub))
        else:
            rows = np.sort(row_rng.choice(n, size=n_sub, replace=False))
        arrays = _grow(
            X,
            y,
            rows.astype(np.int64),
            cat8,
            n_cats,
            k_feats,
            max_depth,
            config.max_nodes,
            config.min_samples_in_leaf,
            config.min_samples_to_split,
            _U64(seeds[t, 1]),
        )
        trees.append(_finish_tree(arrays, y))

    return QuantileForest(
        config=config,
        trees=trees,
        is_cat=is_cat,
        n_cats=n_cats,
        y_min=float(y.min()),
        y_max=float(y.max()),
        n_train=n,
    )


def fit(matrix, config: ForestConfig = ForestConfig(), rng: np.random.Generator | None = None) -> QuantileForest:
    """Train on a TrainingMatrix; the censored mask is ignored here (impute
    censored responses first)."""
    return fit_forest(
        matrix.X, matrix.y, matrix.feat_is_cat, matrix.feat_n_cats, config, rng
    )
