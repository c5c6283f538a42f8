"""End-to-end per-group run: impute, select, tune, train, explain, then a manifest."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as acc
from . import reference as ref
from ._seeding import derive_seed
from .dataset import (TabularDataset, classify_group, concat, load_csv, load_group_files, load_schema,
                      split_by_group, summarize, write_csv)
from .explain import ice_1d, pdp_2d, shap_global, shap_individual, MAX_EXACT_FEATURES
from .forest import HyperGrid, fit_forest, save_model, tune
from .impute import canonical_method, evaluate_imputers, impute
from .l1_quantile import select_features
from .plots import emit_plot
from .utils.validation import QrfxError, ValidationError, check_tau

MANIFEST = "manifest.json"


class StageError(QrfxError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _default_grid(name):
    return field(default_factory=lambda: list(getattr(HyperGrid(), name)))


@dataclass
class PipelineConfig:
    """Flat run configuration.  ``seed`` has no default on purpose."""

    input: object
    seed: int
    out: str = "qrfx-run"
    schema: str | None = None
    target: str = "d_resEffe"
    group: str | None = None
    tau: float = 0.9
    imputer: str = "auto"
    impute_outer: int = 4
    impute_inner: int = 3
    n_lambda: int = 60
    lambda_ratio: float = 1e-3
    select_repeats: int = 10
    select_folds: int = 3
    n_estimators: list = _default_grid("n_estimators")
    max_depth: list = _default_grid("max_depth")
    max_features: list = _default_grid("max_features")
    tune_folds: int = 4
    shap_mode: str = "auto"
    permutations: int = 256
    grid_size: int = 50
    pdp_grid_size: int = 25
    supplement: bool = True
    threads: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValidationError("seed must be an integer")
        check_tau(self.tau)
        if self.imputer != "auto":
            self.imputer = canonical_method(self.imputer)
        if self.shap_mode not in ("auto", "exact", "sampled"):
            raise ValidationError("shap_mode must be auto, exact or sampled")
        for name in ("impute_outer", "impute_inner", "select_folds", "tune_folds"):
            if int(getattr(self, name)) < 2:
                raise ValidationError(f"{name} must be >= 2")
        for name in ("select_repeats", "n_lambda", "permutations", "grid_size", "pdp_grid_size"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0 < float(self.lambda_ratio) < 1:
            raise ValidationError("lambda_ratio must lie in (0, 1)")
        self.hyper_grid()

    def hyper_grid(self) -> HyperGrid:
        return HyperGrid(n_estimators=tuple(self.n_estimators), max_depth=tuple(self.max_depth),
                         max_features=tuple(self.max_features))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = sorted(set(raw) - set(cls.keys()))
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        if "seed" not in raw or "input" not in raw:
            raise ValidationError("config needs both 'input' and 'seed'")
        return cls(**raw)

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValidationError("config must be a flat JSON object")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw)


def load_input(config: PipelineConfig) -> TabularDataset:
    schema = load_schema(config.schema) if config.schema else None
    src = config.input
    if isinstance(src, dict):
        return load_group_files(src, schema)
    if isinstance(src, (list, tuple)):
        return concat([load_csv(p, schema, group_col=config.group) for p in src])
    return load_csv(src, schema, group_col=config.group)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _clean(obj):
    """NaN/inf become null so manifests stay strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _slug(label: str) -> str:
    kind = classify_group(label)
    return kind or "".join(c if c.isalnum() else "_" for c in str(label).lower())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import sklearn

    return {"qrfx": __version__, "numpy": np.__version__, "scikit-learn": sklearn.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


class _Run:
    def __init__(self, config: PipelineConfig):
        self.cfg = config
        self.out = Path(config.out)
        self.elapsed: dict[str, float] = {}
        self.seeds: dict[str, int] = {}
        self.groups: dict[str, dict] = {}
        self.results: dict[str, dict] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # any failure is reported with its stage
            raise StageError(name, exc) from exc
        finally:
            self.elapsed[name] = round(time.perf_counter() - t0, 3)

    def seed(self, purpose: str, *idx: int) -> int:
        key = "/".join([purpose, *map(str, idx)])
        self.seeds[key] = derive_seed(self.cfg.seed, purpose, *idx)
        return self.seeds[key]

    # -- per group ------------------------------------------------------------
    def group(self, gi: int, label: str, d: TabularDataset) -> None:
        cfg = self.cfg
        g = _slug(label)
        gdir = self.out / g
        gdir.mkdir(parents=True, exist_ok=True)
        info: dict = {"label": label, "n_rows": d.n}
        res: dict = {}
        self.groups[g] = info
        self.results[g] = res
        target = cfg.target

        with self.stage(f"{g}/stats"):
            res["stats"] = summarize(d)
            _write_summary(res["stats"], gdir / "summary.csv")
            emit_plot("hist", {"values": d.observed(target), "label": target,
                               "quantiles": (0.1, 0.5, cfg.tau)}, gdir / "target_hist.svg")

        with self.stage(f"{g}/impute-eval"):
            if cfg.imputer == "auto":
                rep = evaluate_imputers(d, target, outer_k=cfg.impute_outer, inner_k=cfg.impute_inner,
                                        seed=self.seed("impute-eval", gi), n_jobs=cfg.threads)
                _dump(_clean(rep.to_dict()), gdir / "impute_eval.json")
                res["impute_eval"] = rep
                method = rep.winner
            else:
                method = cfg.imputer
            info["imputer"] = method

        with self.stage(f"{g}/impute"):
            fitted, imputed = impute(d, method, seed=self.seed("impute", gi))
            write_csv(imputed, gdir / "imputed.csv")
            rows = np.flatnonzero(~d.missing[:, d.index(target)])
            data = imputed.take(rows)
            info["rows_with_target"] = int(rows.size)

        with self.stage(f"{g}/select"):
            sel = select_features(data, target, tau=cfg.tau, loss="pinball", repeats=cfg.select_repeats,
                                  folds=cfg.select_folds, seed=self.seed("select", gi),
                                  n_lambda=cfg.n_lambda, ratio=cfg.lambda_ratio)
            res["selection"] = sel
            _write_rows(sel.to_rows(), gdir / "select_path.csv")
            emit_plot("path", sel, gdir / "select_path.svg")
            feats, fallback = _chosen(sel)
            info["selection_fallback"] = fallback
            info["selected_features"] = feats
            info["selected_count"] = len(feats)
            info["selected_s"] = sel.best.s

        X = data.to_array(feats)
        y = data.column(target)
        with self.stage(f"{g}/tune"):
            tres = tune(X, y, tau=cfg.tau, grid=cfg.hyper_grid(), folds=cfg.tune_folds,
                        seed=self.seed("tune", gi), n_jobs=cfg.threads)
            res["tune"] = tres
            _dump(_clean({"best": tres.best, "score": tres.score, "fold_scores": tres.fold_scores,
                          "table": tres.table}), gdir / "tune.json")
            info["hyper"] = dict(tres.best)
            info["tune_pinball"] = tres.score

        with self.stage(f"{g}/train"):
            model = fit_forest(X, y, tres.best, seed=self.seed("train", gi), tau=cfg.tau,
                               feature_names=feats, n_jobs=cfg.threads)
            save_model(model, gdir / "model.json")

        with self.stage(f"{g}/shap"):
            mode = cfg.shap_mode
            if mode == "auto":
                mode = "exact" if len(feats) <= MAX_EXACT_FEATURES else "sampled"
            rep = shap_global(model, X, X, mode=mode, permutations=cfg.permutations,
                              seed=self.seed("shap", gi), n_jobs=cfg.threads)
            res["shap"] = rep
            rep.write_csv(gdir / "shap.csv")
            rep.write_beeswarm_csv(gdir / "shap_beeswarm.csv")
            emit_plot("bar", rep, gdir / "shap_bar.svg")
            best_row = int(np.argmax(y))
            wf = shap_individual(model, X[best_row], X, mode=mode, permutations=cfg.permutations,
                                 seed=self.seed("shap", gi)) if mode == "sampled" else \
                shap_individual(model, X[best_row], X)
            res["individual"] = wf
            emit_plot("waterfall", wf, gdir / "shap_waterfall.svg")
            info["shap"] = {"mode": mode, "ranking": rep.ranked_names(),
                            "mean_abs": {feats[j]: float(rep.mean_abs[j]) for j in rep.ranking},
                            "additivity_error": rep.additivity_error(),
                            "best_row": best_row, "best_target": float(y[best_row]),
                            "best_row_top": list(wf.features[:3])}

        with self.stage(f"{g}/pdp"):
            kind = classify_group(label)
            ice_feats = ref.ICE_FEATURES.get(kind, tuple(rep.ranked_names()[:3]))
            pairs = ref.PDP_PAIRS.get(kind) or tuple(zip(rep.ranked_names()[:2], rep.ranked_names()[1:3]))
            made, skipped = [], []
            res["ice"], res["pdp2"] = {}, {}
            for f in ice_feats:
                if f not in feats:
                    skipped.append(f"ice:{f}")
                    continue
                grid = ice_1d(model, X, f, grid_size=cfg.grid_size)
                grid.write_csv(gdir / f"ice_{f}.csv")
                emit_plot("ice", grid, gdir / f"ice_{f}.svg")
                res["ice"][f] = grid
                made.append(f"ice:{f}")
            for a, b in pairs:
                if a not in feats or b not in feats:
                    skipped.append(f"pdp2:{a},{b}")
                    continue
                surf = pdp_2d(model, X, a, b, grid_size=cfg.pdp_grid_size)
                surf.write_csv(gdir / f"pdp2_{a}__{b}.csv")
                emit_plot("pdp2", surf, gdir / f"pdp2_{a}__{b}.svg")
                res["pdp2"][(a, b)] = surf
                made.append(f"pdp2:{a},{b}")
            info["explained"] = made
            info["not_in_model"] = skipped

    # -- combined data -----------------------------------------------------
    def supplement(self, d: TabularDataset) -> None:
        from .supplement import COMBINED, compare_combined_vs_split, select_supplement

        cfg = self.cfg
        cdir = self.out / COMBINED
        cdir.mkdir(parents=True, exist_ok=True)
        info: dict = {"n_rows": d.n}
        res: dict = {}
        self.groups[COMBINED] = info
        self.results[COMBINED] = res
        with self.stage("combined/impute-eval"):
            if cfg.imputer == "auto":
                rep = evaluate_imputers(d, cfg.target, outer_k=cfg.impute_outer, inner_k=cfg.impute_inner,
                                        seed=self.seed("impute-eval", 99), n_jobs=cfg.threads)
                _dump(_clean(rep.to_dict()), cdir / "impute_eval.json")
                res["impute_eval"] = rep
                method = rep.winner
            else:
                method = cfg.imputer
            info["imputer"] = method
        with self.stage("combined/impute"):
            _, imputed = impute(d, method, seed=self.seed("impute", 99))
            imputed = imputed.take(np.flatnonzero(~d.missing[:, d.index(cfg.target)]))
            write_csv(imputed, cdir / "imputed.csv")
        with self.stage("combined/select"):
            sels = select_supplement(imputed, cfg.target, seed=self.seed("supplement-select"),
                                     n_lambda=cfg.n_lambda, ratio=cfg.lambda_ratio)
            res["squared"] = sels
            for name, sel in sels.items():
                _write_rows(sel.to_rows(), cdir / f"select_squared_{name}.csv")
            info["squared_features"] = {k: list(v.features) for k, v in sels.items()}
        with self.stage("combined/compare"):
            feats = {k: _chosen(v)[0] for k, v in sels.items()}
            info["squared_features"] = feats
            rep = compare_combined_vs_split(imputed, cfg.target, seed=self.seed("supplement-compare"),
                                            features=feats, n_jobs=cfg.threads)
            res["compare"] = rep
            _dump(_clean(rep.to_dict()), cdir / "gender_split.json")
            info["gender_split"] = _clean(rep.rows())

    # -- acceptance table --------------------------------------------------
    def checks(self) -> list[acc.Check]:
        r = self.results
        men, women = r.get(ref.MEN, {}), r.get(ref.WOMEN, {})
        out = [acc.check_summary({k: v["stats"] for k, v in r.items() if "stats" in v})]
        out.append(acc.check_imputation({k: [v["impute_eval"]] for k, v in r.items() if "impute_eval" in v}))
        sq = r.get("combined", {}).get("squared", {}).get("combined")
        out.append(acc.check_selection({k: v["selection"] for k, v in r.items() if "selection" in v}, sq))
        out.append(acc.check_tuning({k: v["tune"] for k, v in r.items() if "tune" in v}))
        out.append(acc.check_shap_rankings({k: v["shap"] for k, v in r.items() if "shap" in v},
                                           {k: v["individual"] for k, v in r.items() if "individual" in v}))
        out.append(acc.check_pdp(men.get("ice", {}).get("v_H_S1"), men.get("pdp2", {}).get(("v_H_S1", "a_knee_TD"))))
        out.append(acc.check_gender_split(r.get("combined", {}).get("compare")))
        return out


def _chosen(sel) -> tuple[list[str], bool]:
    """Selected features, or those at the sparsest non-empty penalty when CV keeps none."""
    if sel.features:
        return list(sel.features), False
    i = sel.sparsest_nonempty()
    if i is None:
        raise ValidationError("no penalty on the path keeps any feature")
    return sel.features_at(i), True


def _write_rows(rows: list[dict], path: Path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        w.writerow(list(rows[0].keys()))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row.values()])


def _write_summary(stats, path: Path) -> None:
    rows = [{"column": c.name, "unit": c.unit, "n_observed": c.n_observed, "mean": c.mean, "sd": c.sd,
             "missing_percent": c.missing_percent} for c in stats.columns]
    _write_rows(rows, path)


def reproduce(config: PipelineConfig) -> Path:
    """Run every stage per group and write ``manifest.json`` into ``config.out``.

    A failing stage raises :class:`StageError`; whatever was written before
    it stays on disk, and a manifest marked ``"status": "failed"`` is left.
    """
    config.validate()
    run = _Run(config)
    run.out.mkdir(parents=True, exist_ok=True)
    status, error = "ok", None
    try:
        with run.stage("load"):
            d = load_input(config)
            if d.group is None:
                raise ValidationError("input has no group column")
            d = d.with_target(config.target)
        for gi, (label, part) in enumerate(split_by_group(d).items()):
            run.group(gi, label, part)
        if config.supplement:
            run.supplement(d)
    except StageError as exc:
        status, error = "failed", {"stage": exc.stage, "cause": f"{type(exc.cause).__name__}: {exc.cause}"}
        raise
    finally:
        _write_manifest(run, status, error)
    return run.out


def _write_manifest(run: _Run, status: str, error) -> None:
    artifacts = {}
    for path in sorted(run.out.rglob("*")):
        if path.is_file() and path.name != MANIFEST:
            artifacts[path.relative_to(run.out).as_posix()] = _sha256(path)
    try:
        checks = [c.as_dict() for c in run.checks()] if status == "ok" else []
    except Exception as exc:  # a broken check must not hide the run's outputs
        checks = [{"criterion": "checks", "passed": False, "detail": f"{type(exc).__name__}: {exc}"}]
    manifest = {
        "status": status,
        "error": error,
        "config": run.cfg.to_dict(),
        "seeds": run.seeds,
        "versions": _versions(),
        "groups": _clean(run.groups),
        "artifacts": artifacts,
        "acceptance": checks,
        "elapsed_seconds": run.elapsed,
    }
    _dump(_clean(manifest), run.out / MANIFEST)


__all__ = ["MANIFEST", "PipelineConfig", "StageError", "load_input", "reproduce"]
