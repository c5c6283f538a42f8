"""Missing-value imputers and their nested-CV comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.linear_model import BayesianRidge
from sklearn.utils.validation import check_is_fitted

from ._seeding import derive_seed
from .cv import make_folds
from .dataset import TabularDataset
from .forest import HyperGrid, QuantileForestRegressor, tune
from .metrics import regression_metrics
from .utils.validation import ValidationError, check_missing_X

METHODS = ("mean", "knn", "bayes_iterative", "forest_iterative")
METHOD_ALIASES = {"mean": "mean", "knn": "knn", "bayes": "bayes_iterative", "br": "bayes_iterative",
                  "bayes_iterative": "bayes_iterative", "rf": "forest_iterative",
                  "forest": "forest_iterative", "forest_iterative": "forest_iterative"}


def canonical_method(name: str) -> str:
    try:
        return METHOD_ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown imputation method {name!r}; choose from {sorted(METHOD_ALIASES)}") from None


def _observed_means(X: np.ndarray, names=None) -> np.ndarray:
    obs = ~np.isnan(X)
    counts = obs.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        label = names[empty[0]] if names is not None else f"column {empty[0]}"
        raise ValidationError(f"{label} has no observed values")
    return np.where(obs, X, 0.0).sum(axis=0) / counts


class MeanImputer(TransformerMixin, BaseEstimator):
    """Fill each missing cell with its column's observed training mean."""

    def __init__(self, column_names=None):
        self.column_names = column_names

    def fit(self, X, y=None):
        X = check_missing_X(X)
        self.means_ = _observed_means(X, self.column_names)
        self.n_features_in_ = X.shape[1]
        self.notes_ = []
        return self

    def transform(self, X):
        check_is_fitted(self, "means_")
        X = check_missing_X(X).copy()
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.means_[cols]
        return X


class KNNImputer(TransformerMixin, BaseEstimator):
    """Nearest-neighbour imputation on z-scored features.

    Distance between two rows is the squared difference averaged over the
    coordinates both observe, scaled by the number of columns.  A missing
    cell gets the mean raw value of its ``n_neighbors`` nearest training
    rows among those observing the column; equal distances keep the lower
    row index.  Cells with no usable neighbour fall back to the column mean
    and are listed in ``notes_``.
    """

    def __init__(self, n_neighbors=5, column_names=None):
        self.n_neighbors = n_neighbors
        self.column_names = column_names

    def fit(self, X, y=None):
        if int(self.n_neighbors) < 1:
            raise ValidationError("n_neighbors must be >= 1")
        X = check_missing_X(X)
        self.means_ = _observed_means(X, self.column_names)
        sd = np.nanstd(X, axis=0)
        self.sd_ = np.where(sd > 0, sd, 1.0)
        self.train_ = X.copy()
        self.n_features_in_ = X.shape[1]
        self.notes_ = []
        return self

    def _distances(self, Q: np.ndarray) -> np.ndarray:
        Zq = (Q - self.means_) / self.sd_
        Zt = (self.train_ - self.means_) / self.sd_
        oq = ~np.isnan(Zq)
        ot = ~np.isnan(Zt)
        zq = np.where(oq, Zq, 0.0)
        zt = np.where(ot, Zt, 0.0)
        # sum over co-observed coordinates of (a - b)^2 = a^2 + b^2 - 2ab, masked
        sq = (zq ** 2) @ ot.T + oq @ (zt ** 2).T - 2.0 * zq @ zt.T
        common = oq.astype(float) @ ot.T.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.maximum(sq, 0.0) * (Q.shape[1] / common)
        d[common == 0] = np.inf
        return d

    def transform(self, X, _exclude_self: bool = False):
        check_is_fitted(self, "train_")
        X = check_missing_X(X).copy()
        miss = np.isnan(X)
        rows = np.flatnonzero(miss.any(axis=1))
        if rows.size == 0:
            return X
        D = self._distances(X[rows])
        obs_t = ~np.isnan(self.train_)
        k = int(self.n_neighbors)
        for a, i in enumerate(rows):
            order = np.argsort(D[a], kind="stable")
            for j in np.flatnonzero(miss[i]):
                cand = [b for b in order if obs_t[b, j] and np.isfinite(D[a, b])
                        and not (_exclude_self and b == i)]
                if not cand:
                    X[i, j] = self.means_[j]
                    self.notes_.append(f"row {i} column {self._label(j)}: no neighbour, mean fill")
                    continue
                X[i, j] = float(np.mean(self.train_[cand[:k], j]))
        return X

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X, _exclude_self=True)

    def _label(self, j):
        return self.column_names[j] if self.column_names is not None else str(j)


class IterativeImputer(TransformerMixin, BaseEstimator):
    """Round-robin regression imputation.

    Missing cells start at column means.  Each round visits the columns that
    had missing training cells, in ascending order of missing rate, fits the
    regressor on the rows observing that column (all other columns as
    inputs, at their current fill) and overwrites that column's missing
    cells with predictions.  Rounds stop after ``max_rounds`` or once no
    fill moves by more than ``tol`` times the column's SD.  ``transform``
    replays the stored regressors in the same order.

    Parameters
    ----------
    estimator : {"bayes_ridge", "forest"}
    max_rounds : int, default=10
    tol : float, default=1e-3
    random_state : int, default=0
        Seeds the forest regressors.
    """

    def __init__(self, estimator="bayes_ridge", max_rounds=10, tol=1e-3, random_state=0,
                 n_estimators=100, column_names=None):
        self.estimator = estimator
        self.max_rounds = max_rounds
        self.tol = tol
        self.random_state = random_state
        self.n_estimators = n_estimators
        self.column_names = column_names

    def _make(self, round_no: int, col: int):
        if self.estimator == "bayes_ridge":
            return BayesianRidge(max_iter=300, tol=1e-3)
        if self.estimator == "forest":
            return QuantileForestRegressor(n_estimators=int(self.n_estimators), max_depth=None,
                                           max_features="third", tau=None,
                                           random_state=derive_seed(self.random_state, "impute", round_no, col))
        raise ValidationError(f"unknown iterative regressor {self.estimator!r}")

    def fit(self, X, y=None):
        self._fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        return self._fit_transform(X)

    def _fit_transform(self, X):
        if int(self.max_rounds) < 1:
            raise ValidationError("max_rounds must be >= 1")
        X = check_missing_X(X)
        n, p = X.shape
        miss = np.isnan(X)
        self.means_ = _observed_means(X, self.column_names)
        sd = np.nanstd(X, axis=0)
        self.sd_ = np.where(sd > 0, sd, 1.0)
        self.n_features_in_ = p
        self.notes_ = []
        rate = miss.mean(axis=0)
        visit = [int(j) for j in np.argsort(rate, kind="stable") if miss[:, j].any()]
        Xf = np.where(miss, self.means_, X)
        self.steps_: list[list[tuple[int, object]]] = []
        self.changes_: list[float] = []
        for rnd in range(int(self.max_rounds)):
            steps = []
            change = 0.0
            for j in visit:
                obs = ~miss[:, j]
                if obs.sum() < 2:
                    self.notes_.append(f"column {self._label(j)}: fewer than 2 observed rows, mean fill")
                    continue
                others = np.delete(np.arange(p), j)
                reg = self._make(rnd, j)
                reg.fit(Xf[obs][:, others], X[obs, j])
                new = reg.predict(Xf[miss[:, j]][:, others])
                change = max(change, float(np.max(np.abs(new - Xf[miss[:, j], j]))) / self.sd_[j])
                Xf[miss[:, j], j] = new
                steps.append((j, reg))
            self.steps_.append(steps)
            self.changes_.append(change)
            if change <= self.tol:
                break
        self.n_rounds_ = len(self.steps_)
        return Xf

    def transform(self, X):
        check_is_fitted(self, "steps_")
        X = check_missing_X(X)
        p = X.shape[1]
        miss = np.isnan(X)
        Xf = np.where(miss, self.means_, X)
        for steps in self.steps_:
            for j, reg in steps:
                rows = miss[:, j]
                if rows.any():
                    others = np.delete(np.arange(p), j)
                    Xf[rows, j] = reg.predict(Xf[rows][:, others])
        return Xf

    def _label(self, j):
        return self.column_names[j] if self.column_names is not None else str(j)


def make_imputer(method: str, seed: int = 0, column_names=None, k: int = 5, rounds: int = 10,
                 tol: float = 1e-3):
    method = canonical_method(method)
    if method == "mean":
        return MeanImputer(column_names=column_names)
    if method == "knn":
        return KNNImputer(n_neighbors=k, column_names=column_names)
    est = "bayes_ridge" if method == "bayes_iterative" else "forest"
    return IterativeImputer(estimator=est, max_rounds=rounds, tol=tol, random_state=seed,
                            column_names=column_names)


# -- dataset-level helpers --------------------------------------------------

@dataclass
class FittedImputer:
    method: str
    columns: list[str]
    imputer: object

    @property
    def notes(self) -> list[str]:
        return list(getattr(self.imputer, "notes_", []))

    def transform(self, d: TabularDataset) -> TabularDataset:
        idx = [d.index(c) for c in self.columns]
        values = d.values.copy()
        values[:, idx] = self.imputer.transform(d.to_array(self.columns))
        missing = d.missing.copy()
        missing[:, idx] = False
        return d.with_values(values, missing)


def _fit_transform(d: TabularDataset, method: str, **kw) -> tuple[FittedImputer, TabularDataset]:
    cols = d.names
    imp = make_imputer(method, column_names=cols, **kw)
    filled = imp.fit_transform(d.to_array(cols))
    values = d.values.copy()
    values[:, [d.index(c) for c in cols]] = filled
    out = d.with_values(values, np.zeros_like(d.missing))
    return FittedImputer(canonical_method(method), cols, imp), out


def fit_transform_mean(d: TabularDataset):
    return _fit_transform(d, "mean")


def fit_transform_knn(d: TabularDataset, k: int = 5):
    return _fit_transform(d, "knn", k=k)


def fit_transform_iterative(d: TabularDataset, regressor: str = "bayes_ridge", rounds: int = 10,
                            tol: float = 1e-3, seed: int = 0):
    method = "bayes_iterative" if regressor in ("bayes_ridge", "bayes") else "forest_iterative"
    return _fit_transform(d, method, rounds=rounds, tol=tol, seed=seed)


def impute(d: TabularDataset, method: str, seed: int = 0, **kw):
    return _fit_transform(d, method, seed=seed, **kw)


# -- evaluation ---------------------------------------------------------------

def default_inner_grid(p: int) -> HyperGrid:
    return HyperGrid(n_estimators=(100,), max_depth=(3, 5, None),
                     max_features=tuple(sorted({max(1, math.ceil(p / 3)), p})))


@dataclass
class ImputationEvalReport:
    """Fold-averaged metrics per method and the winner per metric."""

    target: str
    seed: int
    methods: dict = field(default_factory=dict)
    folds: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def winners(self) -> dict:
        rows = self.methods
        return {"mse": min(rows, key=lambda m: (rows[m]["mse"], METHODS.index(m))),
                "rmse": min(rows, key=lambda m: (rows[m]["rmse"], METHODS.index(m))),
                "r2": max(rows, key=lambda m: (np.nan_to_num(rows[m]["r2"], nan=-np.inf),
                                               -METHODS.index(m)))}

    @property
    def winner(self) -> str:
        return self.winners["mse"]

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {"target": self.target, "seed": self.seed,
                "methods": {m: {k: clean(v) for k, v in row.items()} for m, row in self.methods.items()},
                "winners": self.winners,
                "folds": {m: [{k: clean(v) for k, v in f.items()} for f in fs] for m, fs in self.folds.items()},
                "notes": self.notes}


def evaluate_imputers(d: TabularDataset, target: str, outer_k: int = 4, inner_k: int = 3, seed: int = 0,
                      methods=METHODS, grid: HyperGrid | None = None, n_jobs=None) -> ImputationEvalReport:
    """Rank imputers by the test error of a mean forest trained on their output.

    Every method sees the same outer plan.  In each outer fold the imputer
    is fit on the training rows (all numeric columns, target included) and
    applied to the test rows; a mean forest is tuned by inner k-fold CV on
    the imputed training rows, refit, and scored on the test rows.  Rows
    whose target is missing take part in imputation only.  Columns with no
    observed training value in a fold are dropped for that fold.
    """
    d = d.with_target(target)
    if d.n < outer_k:
        raise ValidationError(f"need at least {outer_k} rows, got {d.n}")
    cols = d.names
    X_all = d.to_array(cols)
    t = cols.index(target)
    outer = make_folds(d.n, outer_k, derive_seed(seed, "impute-eval-outer"))
    report = ImputationEvalReport(target=target, seed=seed)
    for method in [canonical_method(m) for m in methods]:
        fold_rows = []
        notes = []
        for f, (tr, te) in enumerate(outer):
            keep = [j for j in range(len(cols)) if not np.isnan(X_all[tr][:, j]).all()]
            if t not in keep:
                raise ValidationError(f"target {target} unobserved in outer fold {f}")
            dropped = [cols[j] for j in range(len(cols)) if j not in keep]
            if dropped:
                notes.append(f"fold {f}: dropped {', '.join(dropped)} (no observed training values)")
            names = [cols[j] for j in keep]
            imp = make_imputer(method, seed=derive_seed(seed, "imputer", f), column_names=names)
            Xtr = imp.fit_transform(X_all[np.ix_(tr, keep)])
            Xte = imp.transform(X_all[np.ix_(te, keep)])
            notes.extend(f"fold {f}: {s}" for s in getattr(imp, "notes_", []))
            tpos = keep.index(t)
            ytr_obs = ~np.isnan(X_all[tr, t])
            yte_obs = ~np.isnan(X_all[te, t])
            feat = [c for c in range(len(keep)) if c != tpos]
            Ftr, ytr = Xtr[ytr_obs][:, feat], X_all[tr, t][ytr_obs]
            Fte, yte = Xte[yte_obs][:, feat], X_all[te, t][yte_obs]
            g = grid or default_inner_grid(len(feat))
            fseed = derive_seed(seed, "impute-eval-forest", f)
            inner = make_folds(ytr.shape[0], inner_k, derive_seed(seed, "impute-eval-inner", f))
            best = tune(Ftr, ytr, grid=g, folds=inner, seed=fseed, mean=True, n_jobs=n_jobs).best
            model = QuantileForestRegressor(tau=None, random_state=fseed, n_jobs=n_jobs, **best).fit(Ftr, ytr)
            scores = regression_metrics(yte, model.predict_mean(Fte)).as_dict() if yte.size else \
                {"mse": math.nan, "rmse": math.nan, "r2": math.nan}
            fold_rows.append(dict(scores, fold=f, n_test=int(yte.size), **{f"best_{k}": v for k, v in best.items()}))
        with np.errstate(all="ignore"):
            report.methods[method] = {k: float(np.nanmean([r[k] for r in fold_rows])) if any(
                not math.isnan(r[k]) for r in fold_rows) else math.nan for k in ("mse", "rmse", "r2")}
        report.folds[method] = fold_rows
        report.notes[method] = notes
    return report
