"""Grid search over forest hyper-parameters by k-fold pinball loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..cv import FoldPlan, make_folds
from ..metrics import pinball
from ..utils.validation import ValidationError, check_finite_X, check_finite_y, check_tau
from .forest import QuantileForestRegressor

_INF_DEPTH = math.inf


def _depth_key(d):
    return _INF_DEPTH if d is None else d


@dataclass(frozen=True)
class HyperGrid:
    """Candidate lists; ``"p"`` in ``max_features`` means all features.

    Values of ``max_features`` above p are dropped when the grid is resolved
    against a concrete feature count, and ``None`` in ``max_depth`` means
    unlimited depth.
    """

    n_estimators: tuple = (100, 200, 500)
    max_depth: tuple = (2, 3, 4, 5, 7)
    max_features: tuple = (1, 2, 3, 6, 9, "p")

    def __post_init__(self):
        for name in ("n_estimators", "max_depth", "max_features"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValidationError(f"grid for {name} is empty")
            object.__setattr__(self, name, vals)
        if any(int(v) < 1 for v in self.n_estimators):
            raise ValidationError("n_estimators candidates must be >= 1")
        if any(d is not None and int(d) < 1 for d in self.max_depth):
            raise ValidationError("max_depth candidates must be >= 1 or None")
        for m in self.max_features:
            if m != "p" and (not isinstance(m, (int, np.integer)) or m < 1):
                raise ValidationError(f"max_features candidates must be ints >= 1 or 'p', got {m!r}")

    def resolved_features(self, p: int) -> list[int]:
        vals = {p if m == "p" else int(m) for m in self.max_features}
        out = sorted(v for v in vals if 1 <= v <= p)
        if not out:
            raise ValidationError(f"no max_features candidate fits p={p}")
        return out

    def candidates(self, p: int) -> list[dict]:
        """All combinations in tie-break order (fewer trees, shallower, fewer features)."""
        out = []
        for n in sorted({int(v) for v in self.n_estimators}):
            for d in sorted(set(self.max_depth), key=_depth_key):
                for m in self.resolved_features(p):
                    out.append({"n_estimators": n, "max_depth": None if d is None else int(d),
                                "max_features": m})
        return out

    def to_dict(self) -> dict:
        return {"n_estimators": list(self.n_estimators), "max_depth": list(self.max_depth),
                "max_features": list(self.max_features)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperGrid":
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass
class TuneResult:
    best: dict
    score: float
    table: list[dict] = field(default_factory=list)
    fold_scores: list[float] = field(default_factory=list)


def _score_folds(X, y, plan, grid_cands, tau, seed, mean, n_jobs):
    """Fill ``scores[c, f]`` for every candidate c and fold f.

    One forest per (fold, max_features) is grown at the largest tree count
    and depth; smaller settings are evaluated on its tree prefix and depth
    truncation, which reproduces the separately refitted forest exactly.
    """
    n_max = max(c["n_estimators"] for c in grid_cands)
    depths = {c["max_depth"] for c in grid_cands}
    d_max = None if None in depths else max(depths)
    scores = np.full((len(grid_cands), plan.k), np.nan)
    for f, (tr, te) in enumerate(plan):
        for m in sorted({c["max_features"] for c in grid_cands}):
            model = QuantileForestRegressor(n_estimators=n_max, max_depth=d_max, max_features=m,
                                            tau=tau, random_state=seed, n_jobs=n_jobs)
            model.fit(X[tr], y[tr])
            Xte = np.ascontiguousarray(X[te])
            cache: dict = {}
            for ci, c in enumerate(grid_cands):
                if c["max_features"] != m:
                    continue
                key = (c["n_estimators"], c["max_depth"])
                if key not in cache:
                    limit = -1 if c["max_depth"] is None else c["max_depth"]
                    if mean:
                        pred = model._means(Xte, n_trees=key[0], depth_limit=limit)
                        cache[key] = float(np.mean((y[te] - pred) ** 2))
                    else:
                        pred = model._quantiles(Xte, [tau], n_trees=key[0], depth_limit=limit)[:, 0]
                        cache[key] = pinball(y[te] - pred, tau)
                scores[ci, f] = cache[key]
    return scores


def tune(X, y, tau: float = 0.9, grid: HyperGrid | None = None, folds: int | FoldPlan = 4,
         seed: int = 0, mean: bool = False, n_jobs=None) -> TuneResult:
    """Exhaustive k-fold grid search.

    Parameters
    ----------
    X, y : arrays without missing values.
    tau : float
        Quantile scored by mean pinball loss.  Ignored when ``mean`` is set,
        in which case forests predict the mean and are scored by MSE.
    grid : HyperGrid, optional
    folds : int or FoldPlan
        A count builds a plan from ``seed``.
    seed : int
        Master seed for fold assignment and for every forest.

    Returns
    -------
    TuneResult
        ``best`` minimises the fold-mean score; exact ties go to fewer
        trees, then smaller depth, then fewer features.
    """
    X = check_finite_X(X)
    y = check_finite_y(y, X.shape[0])
    if not mean:
        tau = check_tau(tau)
    grid = grid or HyperGrid()
    plan = folds if isinstance(folds, FoldPlan) else make_folds(X.shape[0], int(folds), seed)
    if plan.n != X.shape[0]:
        raise ValidationError(f"fold plan covers {plan.n} rows, data has {X.shape[0]}")
    cands = grid.candidates(X.shape[1])
    scores = _score_folds(X, y, _local(plan), cands, tau, seed, mean, n_jobs)
    means = scores.mean(axis=1)
    best = 0
    for ci in range(1, len(cands)):
        if means[ci] < means[best]:
            best = ci
    table = [dict(c, score=float(means[ci])) for ci, c in enumerate(cands)]
    return TuneResult(best=dict(cands[best]), score=float(means[best]), table=table,
                      fold_scores=[float(s) for s in scores[best]])


def _local(plan: FoldPlan) -> FoldPlan:
    """Re-express a (possibly nested) plan over positions ``0..n-1``."""
    return FoldPlan(k=plan.k, assignments=plan.assignments, seed=plan.seed, strata=plan.strata)
