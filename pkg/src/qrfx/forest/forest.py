"""Bagged CART regression trees with leaf-multiset quantile prediction."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._seeding import derive_seed
from ..utils.validation import (ValidationError, check_finite_X, check_finite_y, check_tau,
                                resolve_max_features)
from . import _kernels as K

INTERP_CODES = {"lower": 0, "linear": 1}


def default_n_jobs() -> int:
    """Worker cap from ``QRFX_THREADS`` (results never depend on it)."""
    raw = os.environ.get("QRFX_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class ForestArrays:
    """Flat node storage for a fitted forest (global node ids)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    start: np.ndarray
    end: np.ndarray
    value: np.ndarray
    samples: np.ndarray
    roots: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    def tree_slice(self, t: int) -> slice:
        stop = self.roots[t + 1] if t + 1 < self.n_trees else self.feature.shape[0]
        return slice(int(self.roots[t]), int(stop))

    @classmethod
    def concatenate(cls, trees, y) -> "ForestArrays":
        node_off = 0
        sample_off = 0
        parts = {k: [] for k in ("feature", "threshold", "left", "right", "depth", "start", "end", "samples")}
        roots = []
        for feat, thr, lft, rgt, dep, st, en, smp in trees:
            roots.append(node_off)
            parts["feature"].append(feat)
            parts["threshold"].append(thr)
            parts["left"].append(np.where(lft >= 0, lft + node_off, -1))
            parts["right"].append(np.where(rgt >= 0, rgt + node_off, -1))
            parts["depth"].append(dep)
            parts["start"].append(st + sample_off)
            parts["end"].append(en + sample_off)
            parts["samples"].append(smp)
            node_off += feat.shape[0]
            sample_off += smp.shape[0]
        cat = {k: np.concatenate(v) for k, v in parts.items()}
        ints = ("feature", "left", "right", "depth", "start", "end")
        for k in ints:
            cat[k] = np.ascontiguousarray(cat[k], dtype=np.int64)
        cat["samples"] = np.ascontiguousarray(cat["samples"], dtype=np.int64)
        cat["threshold"] = np.ascontiguousarray(cat["threshold"], dtype=np.float64)
        value = K.node_values(np.asarray(y, dtype=np.float64), cat["samples"], cat["start"], cat["end"])
        return cls(value=value, roots=np.asarray(roots, dtype=np.int64), **cat)

    def max_depth(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0

    def node_tree(self) -> np.ndarray:
        """Owning tree index of every node."""
        sizes = np.diff(np.append(self.roots, self.feature.shape[0]))
        return np.repeat(np.arange(self.n_trees, dtype=np.int64), sizes)


def _merge_chunks(chunks) -> ForestArrays:
    """Join per-chunk forests (each with chunk-local ids) in chunk order."""
    if len(chunks) == 1:
        f, thr, lft, rgt, dep, st, en, val, smp, roots = chunks[0]
        return ForestArrays(f, thr, lft, rgt, dep, st, en, val, smp, roots)
    node_off = 0
    sample_off = 0
    parts = [[] for _ in range(10)]
    for f, thr, lft, rgt, dep, st, en, val, smp, roots in chunks:
        for lst, arr in zip(parts, (f, thr, np.where(lft >= 0, lft + node_off, -1),
                                    np.where(rgt >= 0, rgt + node_off, -1), dep, st + sample_off,
                                    en + sample_off, val, smp, roots + node_off)):
            lst.append(arr)
        node_off += f.shape[0]
        sample_off += smp.shape[0]
    return ForestArrays(*(np.ascontiguousarray(np.concatenate(p)) for p in parts))


class QuantileForestRegressor(RegressorMixin, BaseEstimator):
    """Quantile regression forest.

    Trees are grown on bootstrap resamples by greedy variance reduction; each
    leaf keeps its in-bag training rows (with multiplicity), so the forest
    can return any conditional quantile from the weighted empirical CDF as
    well as the usual mean prediction.

    Parameters
    ----------
    n_estimators : int, default=100
    max_depth : int or None, default=None
        ``None`` grows until leaves are pure or hold a single row.
    max_features : int, float, str or None, default=None
        Features sampled without replacement at every node.  ``None`` uses
        all of them; ``"third"`` uses ``ceil(p / 3)``.
    min_samples_leaf : int, default=1
    tau : float or None, default=0.9
        Quantile returned by :meth:`predict`; ``None`` makes :meth:`predict`
        return the conditional mean.
    quantile_interp : {"lower", "linear"}, default="lower"
        ``"lower"`` returns the smallest stored target whose cumulative
        weight reaches ``tau``.
    random_state : int, default=0
        Master seed.  Tree ``b`` draws its bootstrap and its split-feature
        hash key from SplitMix64 streams keyed by ``(random_state, b)``.
    n_jobs : int or None
        Thread count for growing trees; defaults to ``QRFX_THREADS`` or 1.
    """

    def __init__(self, n_estimators=100, max_depth=None, max_features=None, min_samples_leaf=1,
                 tau=0.9, quantile_interp="lower", random_state=0, n_jobs=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.tau = tau
        self.quantile_interp = quantile_interp
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, feature_names=None):
        if hasattr(X, "columns") and feature_names is None:
            feature_names = [str(c) for c in X.columns]
        X = check_finite_X(X)
        y = check_finite_y(y, X.shape[0])
        n, p = X.shape
        if int(self.n_estimators) < 1:
            raise ValidationError("n_estimators must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 0:
            raise ValidationError("max_depth must be >= 0 or None")
        if self.quantile_interp not in INTERP_CODES:
            raise ValidationError(f"quantile_interp must be one of {sorted(INTERP_CODES)}")
        if self.tau is not None:
            check_tau(self.tau)
        if self.random_state is None:
            raise ValidationError("random_state must be an integer seed")
        msl = int(self.min_samples_leaf)
        if msl < 1:
            raise ValidationError("min_samples_leaf must be >= 1")
        mf = resolve_max_features(self.max_features, p)
        depth_arg = -1 if self.max_depth is None else int(self.max_depth)
        seed = int(self.random_state)
        X = np.ascontiguousarray(X)
        B = int(self.n_estimators)
        boot_base = np.uint64(derive_seed(seed, "bootstrap"))
        split_base = np.uint64(derive_seed(seed, "splits"))
        n_jobs = min(self.n_jobs or default_n_jobs(), B)
        # contiguous tree ranges per worker; results are merged in tree order
        bounds = np.linspace(0, B, n_jobs + 1).astype(int)
        tasks = [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

        def run(first, count):
            return K.build_forest(X, y, first, count, boot_base, split_base, depth_arg, mf, msl)

        if len(tasks) == 1:
            chunks = [run(*tasks[0])]
        else:
            chunks = Parallel(n_jobs=len(tasks), prefer="threads")(delayed(run)(*t) for t in tasks)
        self._set_fitted(_merge_chunks(chunks), y, p, feature_names)
        self.max_features_ = mf
        return self

    def _set_fitted(self, arrays: ForestArrays, y, p, feature_names):
        self.forest_ = arrays
        self.y_train_ = np.asarray(y, dtype=np.float64)
        order = np.argsort(self.y_train_, kind="mergesort")
        self.y_sorted_ = np.ascontiguousarray(self.y_train_[order])
        rank = np.empty_like(order)
        rank[order] = np.arange(order.shape[0])
        self.rank_ = rank.astype(np.int64)
        self.n_features_in_ = p
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(p)]
        if len(feature_names) != p:
            raise ValidationError(f"{len(feature_names)} feature names for {p} features")
        self.feature_names_ = list(feature_names)

    # prediction --------------------------------------------------------
    def _check_X(self, X):
        check_is_fitted(self, "forest_")
        X = np.ascontiguousarray(check_finite_X(X))
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def _quantiles(self, X, taus, n_trees=None, depth_limit=-1):
        f = self.forest_
        n_trees = f.n_trees if n_trees is None else int(n_trees)
        return K.predict_quantiles(X, f.feature, f.threshold, f.left, f.right, f.depth, f.start, f.end,
                                   f.samples, f.roots, n_trees, depth_limit, self.rank_, self.y_sorted_,
                                   np.asarray(taus, dtype=np.float64),
                                   INTERP_CODES[self.quantile_interp])

    def _means(self, X, n_trees=None, depth_limit=-1):
        f = self.forest_
        n_trees = f.n_trees if n_trees is None else int(n_trees)
        return K.predict_means(X, f.feature, f.threshold, f.left, f.right, f.depth, f.value,
                               f.roots, n_trees, depth_limit)

    def predict_quantile(self, X, tau=None):
        """Conditional quantile(s); a sequence of levels gives one column per level."""
        X = self._check_X(X)
        if tau is None:
            tau = self.tau if self.tau is not None else 0.5
        scalar = np.ndim(tau) == 0
        taus = np.atleast_1d(np.asarray(tau, dtype=float))
        for t in taus:
            check_tau(float(t))
        out = self._quantiles(X, taus)
        return out[:, 0] if scalar else out

    def predict_mean(self, X):
        """Average over trees of the in-bag leaf mean."""
        return self._means(self._check_X(X))

    def predict(self, X):
        if self.tau is None:
            return self.predict_mean(X)
        return self.predict_quantile(X, self.tau)

    def quantile_weights(self, X):
        """Per-row weights ``w_i(x)`` over the training rows; each row sums to 1."""
        X = self._check_X(X)
        f = self.forest_
        W, totals = K.quantile_weights(X, f.feature, f.threshold, f.left, f.right, f.depth, f.start,
                                       f.end, f.samples, f.roots, f.n_trees, -1, self.y_train_.shape[0])
        return W / totals[:, None].astype(float)

    def apply(self, X):
        X = self._check_X(X)
        f = self.forest_
        return K.apply_forest(X, f.feature, f.threshold, f.left, f.right, f.depth, f.roots, f.n_trees, -1)

    # introspection -----------------------------------------------------
    def tree_depths(self) -> list[int]:
        f = self.forest_
        return [int(f.depth[f.tree_slice(t)].max()) for t in range(f.n_trees)]

    def tree(self, t: int) -> "TreeNode":
        check_is_fitted(self, "forest_")
        return TreeNode.from_arrays(self.forest_, self.y_train_, int(self.forest_.roots[t]))

    @property
    def hyper_(self) -> dict:
        return {"n_estimators": int(self.n_estimators),
                "max_depth": None if self.max_depth is None else int(self.max_depth),
                "max_features": int(self.max_features_),
                "min_samples_leaf": int(self.min_samples_leaf)}


@dataclass
class TreeNode:
    """Read-only nested view of one node.

    Internal nodes route ``x[feature] <= threshold`` to ``left``; leaves list
    their in-bag training rows (with repeats) and targets.
    """

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    rows: tuple[int, ...] = ()
    targets: tuple[float, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @classmethod
    def from_arrays(cls, f: ForestArrays, y, node: int) -> "TreeNode":
        if f.left[node] < 0:
            rows = tuple(int(r) for r in f.samples[f.start[node]:f.end[node]])
            return cls(rows=rows, targets=tuple(float(y[r]) for r in rows))
        return cls(feature=int(f.feature[node]), threshold=float(f.threshold[node]),
                   left=cls.from_arrays(f, y, int(f.left[node])),
                   right=cls.from_arrays(f, y, int(f.right[node])))

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


def fit_forest(X, y, hyper: dict, seed: int, tau=0.9, feature_names=None, n_jobs=None,
               quantile_interp="lower") -> QuantileForestRegressor:
    """Functional wrapper: ``hyper`` holds n_estimators, max_depth, max_features."""
    model = QuantileForestRegressor(n_estimators=hyper.get("n_estimators", 100),
                                    max_depth=hyper.get("max_depth"),
                                    max_features=hyper.get("max_features"),
                                    min_samples_leaf=hyper.get("min_samples_leaf", 1),
                                    tau=tau, quantile_interp=quantile_interp,
                                    random_state=seed, n_jobs=n_jobs)
    return model.fit(X, y, feature_names=feature_names)
