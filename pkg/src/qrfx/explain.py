"""Shapley attributions and partial-dependence / ICE grids.

Every explainer works on a *prediction target*: either a conditional
quantile at some level or the conditional mean.  Forest models from
:mod:`qrfx.forest` use a compiled exact path; anything else with
``predict_quantile``/``predict_mean``/``predict`` (or a plain callable) is
evaluated by batched prediction.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from ._seeding import make_rng
from .forest import QuantileForestRegressor
from .forest import _kernels as K
from .forest.forest import INTERP_CODES, default_n_jobs
from .utils.validation import ValidationError, check_tau

MAX_EXACT_FEATURES = 20


@dataclass(frozen=True)
class PredictionTarget:
    kind: str
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("quantile", "mean"):
            raise ValidationError(f"unknown prediction target {self.kind!r}")
        if self.kind == "quantile":
            check_tau(self.tau)

    @property
    def label(self) -> str:
        return f"quantile:{self.tau:g}" if self.kind == "quantile" else "mean"


def as_target(target, model=None) -> PredictionTarget:
    """Accepts a PredictionTarget, a quantile level, ``"mean"``, or ``None``.

    ``None`` uses the model's own ``tau`` when it has one, else the mean.
    """
    if isinstance(target, PredictionTarget):
        return target
    if target is None:
        tau = getattr(model, "tau", None)
        return PredictionTarget("quantile", float(tau)) if tau is not None else PredictionTarget("mean")
    if isinstance(target, str):
        if target == "mean":
            return PredictionTarget("mean")
        if target.startswith("quantile:"):
            return PredictionTarget("quantile", float(target.split(":", 1)[1]))
        raise ValidationError(f"cannot parse prediction target {target!r}")
    return PredictionTarget("quantile", float(target))


def predictor(model, target=None):
    """Batch prediction function ``f(X) -> (n,)`` for ``target``."""
    t = as_target(target, model)
    if callable(model) and not hasattr(model, "predict"):
        return lambda X: np.asarray(model(np.asarray(X, dtype=float)), dtype=float)
    if t.kind == "quantile" and hasattr(model, "predict_quantile"):
        return lambda X: np.asarray(model.predict_quantile(X, t.tau), dtype=float)
    if t.kind == "mean" and hasattr(model, "predict_mean"):
        return lambda X: np.asarray(model.predict_mean(X), dtype=float)
    if hasattr(model, "predict"):
        return lambda X: np.asarray(model.predict(X), dtype=float)
    raise ValidationError(f"{type(model).__name__} cannot produce {t.label} predictions")


def _feature_names(model, p: int, names=None) -> list[str]:
    if names is not None:
        return list(names)
    got = getattr(model, "feature_names_", None) or getattr(model, "feature_names", None)
    return list(got) if got is not None and len(got) == p else [f"x{j}" for j in range(p)]


# -- Shapley ------------------------------------------------------------------

def _popcount(a: np.ndarray) -> np.ndarray:
    c = np.zeros(a.shape, dtype=np.int64)
    a = a.copy()
    while np.any(a):
        c += a & 1
        a >>= 1
    return c


def shapley_from_values(v: np.ndarray, p: int) -> np.ndarray:
    """phi_j = sum over S without j of |S|!(p-|S|-1)!/p! (v[S+j] - v[S])."""
    masks = np.arange(1 << p, dtype=np.int64)
    size = _popcount(masks)
    weight = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    phi = np.empty(p)
    for j in range(p):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = float(np.sum(weight[size[without]] * (v[without | bit] - v[without])))
    return phi


@lru_cache(maxsize=None)
def _shapley_tables(p: int):
    weights = np.zeros((p + 1, p + 1))
    for d in range(1, p + 1):
        for s in range(d):
            weights[d, s] = math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
    return weights, _popcount(np.arange(1 << p, dtype=np.int64))


def _node_tree(model: QuantileForestRegressor) -> np.ndarray:
    f = model.forest_
    node_tree = model.__dict__.get("_node_tree")
    if node_tree is None or node_tree.shape[0] != f.feature.shape[0]:
        node_tree = model.__dict__["_node_tree"] = f.node_tree()
    return node_tree


def _forest_shapley(model: QuantileForestRegressor, x, background, t: PredictionTarget):
    f = model.forest_
    node_tree = _node_tree(model)
    weights, pc = _shapley_tables(x.shape[0])
    tau = t.tau if t.kind == "quantile" else 0.5
    phi, base, _ = K.forest_shapley(
        np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(background, dtype=float),
        f.feature, f.threshold, f.left, f.right, f.depth, f.start, f.end, f.samples, f.value, f.roots,
        node_tree, model.rank_, model.y_sorted_, float(tau), INTERP_CODES[model.quantile_interp],
        t.kind == "mean", weights, pc)
    return phi, float(base)


def _generic_coalitions(fn, x, background, chunk_rows: int = 1 << 16):
    p = x.shape[0]
    nb = background.shape[0]
    N = 1 << p
    v = np.empty(N)
    per = max(1, chunk_rows // nb)
    bits = (np.arange(N)[:, None] >> np.arange(p)[None, :]) & 1
    for lo in range(0, N, per):
        hi = min(N, lo + per)
        take = bits[lo:hi].astype(bool)
        Z = np.where(take[:, None, :], x[None, None, :], background[None, :, :]).reshape(-1, p)
        v[lo:hi] = fn(Z).reshape(hi - lo, nb).mean(axis=1)
    return v


def _check_exact(x, background):
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    p = x.shape[0]
    if background.shape[0] == 0:
        raise ValidationError("background set is empty")
    if background.shape[1] != p:
        raise ValidationError(f"background has {background.shape[1]} columns, x has {p}")
    if p > MAX_EXACT_FEATURES:
        raise ValidationError(f"exact Shapley values enumerate 2^p coalitions; p={p} exceeds "
                              f"{MAX_EXACT_FEATURES}, use shap_sampled instead")
    return x, background


def coalition_values(model, x, background, target=None) -> np.ndarray:
    """``v[mask]`` for all ``2**p`` coalitions (bit j set = feature j from ``x``).

    Always evaluated by batched prediction; this is the brute-force route.
    """
    x, background = _check_exact(x, background)
    return _generic_coalitions(predictor(model, target), x, background)


def shap_exact(model, x, background, target=None) -> tuple[np.ndarray, float]:
    """Interventional Shapley values of one row by full coalition enumeration.

    Returns ``(phi, base)`` where ``base`` is the mean prediction over the
    background rows and ``base + phi.sum()`` equals the prediction at ``x``.
    """
    x, background = _check_exact(x, background)
    t = as_target(target, model)
    if isinstance(model, QuantileForestRegressor):
        return _forest_shapley(model, x, background, t)
    v = _generic_coalitions(predictor(model, t), x, background)
    return shapley_from_values(v, x.shape[0]), float(v[0])


def shap_sampled(model, x, background, target=None, permutations: int = 256, seed: int = 0
                 ) -> tuple[np.ndarray, float]:
    """Antithetic permutation estimate of the same Shapley values.

    Each drawn ordering is paired with its reverse.  Along an ordering the
    coalition grows one feature at a time and the change in the background
    mean prediction is credited to the added feature, so the increments of
    every ordering telescope to ``f(x) - base``.
    """
    if int(permutations) < 1:
        raise ValidationError("permutations must be >= 1")
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] == 0:
        raise ValidationError("background set is empty")
    if background.shape[1] != x.shape[0]:
        raise ValidationError(f"background has {background.shape[1]} columns, x has {x.shape[0]}")
    t = as_target(target, model)
    p = x.shape[0]
    nb = background.shape[0]
    rng = make_rng(seed, "shap-permutations")
    phi = np.zeros(p)
    orders = []
    for _ in range(int(permutations)):
        perm = rng.permutation(p)
        orders += [perm, perm[::-1]]
    if isinstance(model, QuantileForestRegressor):
        f = model.forest_
        phi, base = K.forest_shapley_sampled(
            np.ascontiguousarray(x), np.ascontiguousarray(background), np.array(orders, dtype=np.int64),
            f.feature, f.threshold, f.left, f.right, f.depth, f.start, f.end, f.samples, f.value, f.roots,
            _node_tree(model), model.rank_, model.y_sorted_, float(t.tau if t.kind == "quantile" else 0.5),
            INTERP_CODES[model.quantile_interp], t.kind == "mean")
        return phi, float(base)
    fn = predictor(model, t)
    base = float(np.mean(fn(background)))
    for perm in orders:
        # rows k*nb .. (k+1)*nb hold the background with perm[:k] taken from x
        Z = np.repeat(background[None], p + 1, axis=0)
        for k in range(1, p + 1):
            Z[k:, :, perm[k - 1]] = x[perm[k - 1]]
        vals = fn(Z.reshape(-1, p)).reshape(p + 1, nb).mean(axis=1)
        vals[0] = base
        phi[perm] += np.diff(vals)
    return phi / len(orders), base


@dataclass
class ShapReport:
    base_value: float
    phi: np.ndarray
    X: np.ndarray
    predictions: np.ndarray
    feature_names: list[str]
    mode: str
    target: str
    background_size: int

    @property
    def mean_abs(self) -> np.ndarray:
        return np.abs(self.phi).mean(axis=0)

    @property
    def ranking(self) -> list[int]:
        """Feature indices by decreasing mean |phi|; ties keep index order."""
        m = self.mean_abs
        return sorted(range(m.shape[0]), key=lambda j: (-m[j], j))

    def ranked_names(self) -> list[str]:
        return [self.feature_names[j] for j in self.ranking]

    def additivity_error(self) -> float:
        return float(np.max(np.abs(self.base_value + self.phi.sum(axis=1) - self.predictions)))

    def write_beeswarm_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "sample", "phi", "feature_value"])
            for j in self.ranking:
                for i in range(self.phi.shape[0]):
                    w.writerow([self.feature_names[j], i, repr(float(self.phi[i, j])), repr(float(self.X[i, j]))])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "base_value", "prediction", *self.feature_names])
            for i in range(self.phi.shape[0]):
                w.writerow([i, repr(self.base_value), repr(float(self.predictions[i])),
                            *(repr(float(v)) for v in self.phi[i])])

    def bar_data(self) -> tuple[list[str], np.ndarray]:
        order = self.ranking
        return [self.feature_names[j] for j in order], self.mean_abs[order]


def shap_global(model, X, background=None, target=None, mode: str = "exact", permutations: int = 256,
                seed: int = 0, feature_names=None, n_jobs: int | None = None) -> ShapReport:
    """Per-row Shapley values for every row of ``X`` plus a mean-|phi| ranking.

    ``background`` defaults to ``X`` itself.  Rows are independent, so
    ``n_jobs`` worker threads change only the wall time.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    bg = X if background is None else np.atleast_2d(np.asarray(background, dtype=float))
    t = as_target(target, model)
    if mode == "exact":
        one = lambda row: shap_exact(model, row, bg, t)
    elif mode == "sampled":
        one = lambda row: shap_sampled(model, row, bg, t, permutations, seed=seed)
    else:
        raise ValidationError(f"unknown SHAP mode {mode!r}")
    workers = default_n_jobs() if n_jobs is None else max(1, int(n_jobs))
    if workers > 1 and X.shape[0] > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, list(X)))
    else:
        results = [one(row) for row in X]
    phi = np.vstack([r[0] for r in results]) if results else np.empty_like(X)
    base = results[0][1] if results else float(np.mean(predictor(model, t)(bg)))
    preds = predictor(model, t)(X)
    return ShapReport(base_value=float(base), phi=phi, X=X, predictions=preds,
                      feature_names=_feature_names(model, X.shape[1], feature_names), mode=mode,
                      target=t.label, background_size=bg.shape[0])


@dataclass
class WaterfallRecord:
    features: list[str]
    phi: np.ndarray
    values: np.ndarray
    base_value: float
    prediction: float

    def rows(self) -> list[tuple[str, float, float]]:
        return list(zip(self.features, (float(v) for v in self.phi), (float(v) for v in self.values)))


def shap_individual(model, x, background, target=None, mode: str = "exact", feature_names=None,
                    **kw) -> WaterfallRecord:
    """Shapley values of one row ordered by decreasing |phi| (index tie-break)."""
    x = np.asarray(x, dtype=float).ravel()
    if mode == "exact":
        phi, base = shap_exact(model, x, background, target)
    else:
        phi, base = shap_sampled(model, x, background, target, **kw)
    names = _feature_names(model, x.shape[0], feature_names)
    order = sorted(range(x.shape[0]), key=lambda j: (-abs(phi[j]), j))
    pred = float(predictor(model, target)(x[None, :])[0])
    return WaterfallRecord(features=[names[j] for j in order], phi=phi[order], values=x[order],
                           base_value=base, prediction=pred)


# -- partial dependence -----------------------------------------------------------

def _resolve_feature(model, feature, p: int, names=None) -> int:
    if isinstance(feature, (int, np.integer)):
        if not 0 <= feature < p:
            raise ValidationError(f"feature index {feature} out of range")
        return int(feature)
    names = _feature_names(model, p, names)
    if feature not in names:
        raise ValidationError(f"feature {feature!r} is not one of the model's features")
    return names.index(feature)


def feature_grid(values: np.ndarray, size: int) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        warnings.warn("constant feature: grid has a single point", stacklevel=3)
        return np.array([lo])
    return np.linspace(lo, hi, int(size))


@dataclass
class IceGrid:
    feature: str
    grid: np.ndarray
    curves: np.ndarray
    sample_x: np.ndarray
    sample_pred: np.ndarray
    target: str
    pdp: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pdp = self.curves.mean(axis=0)

    def slopes(self) -> np.ndarray:
        """Finite-difference slope of the PDP on each grid cell."""
        return np.diff(self.pdp) / np.diff(self.grid)

    def mean_slope(self, below: float | None = None, above: float | None = None) -> float:
        """Mean PDP slope over cells lying entirely below / above a threshold."""
        lo, hi = self.grid[:-1], self.grid[1:]
        keep = np.ones(lo.shape, dtype=bool)
        if below is not None:
            keep &= hi <= below
        if above is not None:
            keep &= lo >= above
        if not keep.any():
            return math.nan
        return float(np.mean(self.slopes()[keep]))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["curve", self.feature, "prediction"])
            for g, val in zip(self.grid, self.pdp):
                w.writerow(["pdp", repr(float(g)), repr(float(val))])
            for i in range(self.curves.shape[0]):
                for g, val in zip(self.grid, self.curves[i]):
                    w.writerow([i, repr(float(g)), repr(float(val))])


def ice_1d(model, X, feature, grid_size: int = 50, target=None, feature_names=None) -> IceGrid:
    """ICE curves over an equispaced grid from the observed min to max."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    j = _resolve_feature(model, feature, X.shape[1], feature_names)
    fn = predictor(model, target)
    grid = feature_grid(X[:, j], grid_size)
    n, G = X.shape[0], grid.shape[0]
    Z = np.repeat(X, G, axis=0)
    Z[:, j] = np.tile(grid, n)
    curves = fn(Z).reshape(n, G)
    name = _feature_names(model, X.shape[1], feature_names)[j]
    return IceGrid(feature=name, grid=grid, curves=curves, sample_x=X[:, j].copy(), sample_pred=fn(X),
                   target=as_target(target, model).label)


@dataclass
class PdpSurface:
    features: tuple[str, str]
    grid_a: np.ndarray
    grid_b: np.ndarray
    surface: np.ndarray
    sample_a: np.ndarray
    sample_b: np.ndarray
    target: str

    def quadrant_means(self, thr_a: float, thr_b: float) -> dict[str, float]:
        """Mean surface value in each quadrant, keyed ``"a>,b>"`` etc.

        A grid point on a threshold counts as "not above" it.
        """
        out = {}
        for ka, ma in (("a>", self.grid_a > thr_a), ("a<=", self.grid_a <= thr_a)):
            for kb, mb in (("b>", self.grid_b > thr_b), ("b<=", self.grid_b <= thr_b)):
                block = self.surface[np.ix_(ma, mb)]
                out[f"{ka},{kb}"] = float(block.mean()) if block.size else math.nan
        return out

    def top_quadrant_dominates(self, thr_a: float, thr_b: float) -> bool:
        """True when the quadrant above both thresholds has the highest mean."""
        q = self.quadrant_means(thr_a, thr_b)
        top = q.pop("a>,b>")
        return not math.isnan(top) and all(top > v for v in q.values() if not math.isnan(v))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.features[0], self.features[1], "pdp"])
            for g, a in enumerate(self.grid_a):
                for h, b in enumerate(self.grid_b):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.surface[g, h]))])


def pdp_2d(model, X, feature_a, feature_b, grid_size: int = 25, target=None, feature_names=None) -> PdpSurface:
    """Two-feature partial dependence: ``surface[g, h]`` averages predictions over rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = X.shape[1]
    a = _resolve_feature(model, feature_a, p, feature_names)
    b = _resolve_feature(model, feature_b, p, feature_names)
    if a == b:
        raise ValidationError("pdp_2d needs two distinct features")
    fn = predictor(model, target)
    ga = feature_grid(X[:, a], grid_size)
    gb = feature_grid(X[:, b], grid_size)
    n = X.shape[0]
    Z = np.repeat(X, ga.shape[0] * gb.shape[0], axis=0)
    A, B = np.meshgrid(ga, gb, indexing="ij")
    Z[:, a] = np.tile(A.ravel(), n)
    Z[:, b] = np.tile(B.ravel(), n)
    surface = fn(Z).reshape(n, ga.shape[0], gb.shape[0]).mean(axis=0)
    names = _feature_names(model, p, feature_names)
    return PdpSurface(features=(names[a], names[b]), grid_a=ga, grid_b=gb, surface=surface,
                      sample_a=X[:, a].copy(), sample_b=X[:, b].copy(), target=as_target(target, model).label)
