"""Combined versus per-gender modelling.

Squared-loss Lasso picks a feature set for the combined data (with a
female indicator column) and for each gender.  Mean-predicting forests are
then compared under one gender-stratified outer cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._seeding import derive_seed
from .cv import make_folds
from .dataset import TabularDataset, add_indicator, classify_group
from .forest import HyperGrid, QuantileForestRegressor, tune
from .l1_quantile import SelectionResult, select_features
from .metrics import RegressionScores, regression_metrics
from .utils.validation import ValidationError

COMBINED, MEN, WOMEN = "combined", "men", "women"
PAIRS = ((COMBINED, COMBINED), (COMBINED, MEN), (COMBINED, WOMEN), (MEN, MEN), (WOMEN, WOMEN))


def _labels(d: TabularDataset) -> dict[str, str]:
    if d.group is None:
        raise ValidationError("dataset has no group column")
    found: dict[str, str] = {}
    for label in dict.fromkeys(d.group):
        kind = classify_group(label)
        if kind is None:
            raise ValidationError(f"group label {label!r} is neither men nor women")
        found.setdefault(kind, label)
    if set(found) != {MEN, WOMEN}:
        raise ValidationError("both a men and a women group are required")
    return found


def with_female_indicator(d: TabularDataset) -> TabularDataset:
    return add_indicator(d, _labels(d)[WOMEN])


def group_views(d: TabularDataset) -> dict[str, TabularDataset]:
    """``combined`` (with the indicator column), ``men`` and ``women`` datasets."""
    labels = _labels(d)
    out = {COMBINED: with_female_indicator(d)}
    for kind in (MEN, WOMEN):
        out[kind] = d.take(np.flatnonzero(d.group == labels[kind]))
    return out


def _require_complete(d: TabularDataset, names) -> None:
    idx = [d.index(n) for n in names]
    if d.missing[:, idx].any():
        raise ValidationError("the gender-split study needs an imputed dataset; run impute first")


def select_supplement(d: TabularDataset, target: str = "d_resEffe", seed: int = 0, folds: int = 4,
                      repeats: int = 10, **kw) -> dict[str, SelectionResult]:
    """Squared-loss feature selection for each of combined / men / women."""
    out = {}
    for i, (name, view) in enumerate(group_views(d).items()):
        _require_complete(view, view.feature_names + [target])
        out[name] = select_features(view, target, tau=None, loss="squared", repeats=repeats, folds=folds,
                                    seed=derive_seed(seed, "supplement-select", i), **kw)
    return out


@dataclass
class CompareReport:
    target: str
    seed: int
    features: dict[str, list[str]]
    scores: dict[tuple[str, str], RegressionScores]
    hyper: dict[str, list[dict]] = field(default_factory=dict)
    n_rows: dict[str, int] = field(default_factory=dict)

    def gap_holds(self) -> dict[str, bool]:
        """Whether the gender-specific model beats the combined one on its own rows."""
        return {g: self.scores[(g, g)].mse < self.scores[(COMBINED, g)].mse for g in (MEN, WOMEN)}

    def rows(self) -> list[dict]:
        return [{"train": a, "test": b, **self.scores[(a, b)].as_dict()} for a, b in PAIRS]

    def to_dict(self) -> dict:
        return {"target": self.target, "seed": self.seed, "features": self.features,
                "n_rows": self.n_rows, "results": self.rows(), "hyper": self.hyper}


def _fit_predict(X_tr, y_tr, X_te, grid, inner_k, seed, strata=None, n_jobs=None):
    plan = make_folds(X_tr.shape[0], inner_k, seed, strata=strata)
    res = tune(X_tr, y_tr, grid=grid, folds=plan, seed=seed, mean=True, n_jobs=n_jobs)
    h = res.best
    model = QuantileForestRegressor(n_estimators=h["n_estimators"], max_depth=h["max_depth"],
                                    max_features=h["max_features"], tau=None, random_state=seed,
                                    n_jobs=n_jobs).fit(X_tr, y_tr)
    return model.predict(X_te), dict(h)


def compare_combined_vs_split(d: TabularDataset, target: str = "d_resEffe", seed: int = 0,
                              features: dict[str, list[str]] | None = None, outer_k: int = 5,
                              inner_k: int = 4, grid: HyperGrid | None = None, n_jobs=None) -> CompareReport:
    """Gender-stratified outer CV comparing a combined forest with per-gender forests.

    Each row gets exactly one out-of-fold prediction from every model that
    may see it, and every (train, test) pair is scored once on the pooled
    predictions.  ``features`` defaults to :func:`select_supplement`.
    """
    labels = _labels(d)
    if features is None:
        features = {k: r.features for k, r in select_supplement(d, target, seed).items()}
    missing = [k for k in (COMBINED, MEN, WOMEN) if not features.get(k)]
    if missing:
        raise ValidationError(f"no features given for {', '.join(missing)}")
    combined = with_female_indicator(d)
    _require_complete(combined, sorted(set(features[COMBINED]) | {target}))
    is_woman = d.group == labels[WOMEN]
    strata = np.where(is_woman, WOMEN, MEN)
    y = combined.column(target)
    X = {COMBINED: combined.to_array(features[COMBINED]), MEN: combined.to_array(features[MEN]),
         WOMEN: combined.to_array(features[WOMEN])}
    for k in (MEN, WOMEN):
        _require_complete(combined, features[k])
    member = {COMBINED: np.ones(d.n, dtype=bool), MEN: ~is_woman, WOMEN: is_woman}
    pred = {k: np.full(d.n, np.nan) for k in member}
    hyper: dict[str, list[dict]] = {k: [] for k in member}
    plan = make_folds(d.n, outer_k, derive_seed(seed, "supplement-outer"), strata=strata)
    for f, (train, test) in enumerate(plan):
        for gi, g in enumerate((COMBINED, MEN, WOMEN)):
            tr = train[member[g][train]]
            te = test[member[g][test]]
            if te.size == 0:
                continue
            inner_seed = derive_seed(seed, "supplement-inner", f, gi)
            p, h = _fit_predict(X[g][tr], y[tr], X[g][te], grid, inner_k, inner_seed,
                                strata=strata[tr] if g == COMBINED else None, n_jobs=n_jobs)
            pred[g][te] = p
            hyper[g].append(h)
    scores = {}
    for a, b in PAIRS:
        rows = member[b]
        scores[(a, b)] = regression_metrics(y[rows], pred[a][rows])
    return CompareReport(target=target, seed=seed, features={k: list(v) for k, v in features.items()},
                         scores=scores, hyper=hyper, n_rows={k: int(v.sum()) for k, v in member.items()})


__all__ = ["COMBINED", "MEN", "WOMEN", "PAIRS", "CompareReport", "compare_combined_vs_split", "group_views",
           "select_supplement", "with_female_indicator"]
