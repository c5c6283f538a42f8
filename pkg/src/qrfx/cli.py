"""``qrfx`` command line.

Exit codes: 0 success, 2 invalid input, 3 stage or runtime failure,
4 acceptance miss under ``reproduce --strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_STAGE, EXIT_STRICT = 0, 2, 3, 4


# -- helpers ----------------------------------------------------------------

def _csv_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _grid_values(text: str) -> list:
    out = []
    for tok in _csv_list(text):
        low = tok.lower()
        if low in ("none", "null"):
            out.append(None)
        elif low == "p":
            out.append(low)
        else:
            out.append(int(tok))
    return out


def _load(args, path=None):
    from .dataset import infer_schema, load_csv, load_schema

    path = path or args.data
    schema = None
    if getattr(args, "schema", None) == "infer":
        with open(path, encoding="utf-8-sig", newline="") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        schema = infer_schema(header, target=getattr(args, "target", None), group_col=getattr(args, "group_col", None))
    elif getattr(args, "schema", None):
        schema = load_schema(args.schema)
    d = load_csv(path, schema, group_col=getattr(args, "group_col", None) if schema is None else None)
    return _filter_group(d, getattr(args, "group", None))


def _filter_group(d, group):
    from .dataset import classify_group
    from .utils.validation import ValidationError

    if not group:
        return d
    if d.group is None:
        raise ValidationError("--group given but the data has no group column")
    want = group.lower()
    keep = [i for i, g in enumerate(d.group)
            if g is not None and (str(g).lower() == want or classify_group(str(g)) == want)]
    if not keep:
        raise ValidationError(f"no rows in group {group!r}")
    return d.take(np.asarray(keep))


def _write_json(obj, path) -> None:
    from .pipeline import _clean

    text = json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _features_arg(args, d) -> list[str]:
    from .utils.validation import ValidationError

    if args.features:
        feats = _csv_list(args.features)
    elif getattr(args, "features_from", None):
        feats = _features_from(args.features_from)
    else:
        feats = [n for n in d.feature_names]
    unknown = [f for f in feats if f not in d.names]
    if unknown:
        raise ValidationError(f"unknown feature(s): {', '.join(unknown)}")
    return feats


def _features_from(path) -> list[str]:
    """Feature list from a selection path CSV (row with lowest mean_loss) or a JSON list."""
    from .l1_quantile import NONZERO_TOL
    from .utils.validation import ValidationError

    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        got = json.loads(text)
        return list(got["features"] if isinstance(got, dict) else got)
    rows = list(csv.DictReader(text.splitlines()))
    if not rows:
        raise ValidationError(f"{path}: empty selection file")
    best = min(range(len(rows)), key=lambda i: (float(rows[i]["mean_loss"]), i))
    fixed = {"lambda", "s", "mean_loss", "nonzero_count"}
    return [k for k, v in rows[best].items() if k not in fixed and abs(float(v)) > NONZERO_TOL]


def _complete_xy(d, feats, target=None):
    from .utils.validation import ValidationError

    cols = feats + ([target] if target else [])
    idx = [d.index(c) for c in cols]
    if d.missing[:, idx].any():
        raise ValidationError("data has missing cells in the used columns; run `qrfx impute` first")
    X = d.to_array(feats)
    return (X, d.column(target)) if target else X


def _hyper_from(args) -> dict:
    from .utils.validation import ValidationError

    if args.from_tune:
        return dict(json.loads(Path(args.from_tune).read_text(encoding="utf-8"))["best"])
    hyper = {"n_estimators": 100, "max_depth": None, "max_features": None}
    for tok in _csv_list(args.hyper or ""):
        if "=" not in tok:
            raise ValidationError(f"--hyper expects key=value pairs, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in hyper:
            raise ValidationError(f"unknown hyperparameter {k!r}")
        hyper[k] = _grid_values(v)[0]
    return hyper


def _model_data(args):
    from .forest import load_model

    model = load_model(args.model)
    d = _load(args)
    X = _complete_xy(d, list(model.feature_names_))
    return model, d, X


def _target_arg(args, model):
    from .explain import as_target

    if getattr(args, "mean", False):
        return as_target("mean")
    if getattr(args, "tau", None) is not None:
        return as_target(float(args.tau))
    return as_target(None, model)


# -- commands --------------------------------------------------------------------

def cmd_stats(args) -> int:
    from .dataset import split_by_group, summarize

    d = _load(args)
    parts = split_by_group(d) if d.group is not None and not args.pooled else {"all": d}
    rows = []
    for label, part in parts.items():
        s = summarize(part)
        for c in s.columns:
            rows.append({"group": label, "column": c.name, "unit": c.unit, "n_observed": c.n_observed,
                         "mean": c.mean, "sd": c.sd, "missing_percent": c.missing_percent})
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(list(rows[0].keys()))
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r.values()])
    finally:
        if args.out:
            out.close()
    if args.plot:
        from .plots import emit_plot

        emit_plot("hist", {"values": d.observed(args.target), "label": args.target,
                           "quantiles": (0.1, 0.5, 0.9)}, args.plot)
    return EXIT_OK


def cmd_impute_eval(args) -> int:
    from .impute import METHODS, evaluate_imputers

    d = _load(args)
    rep = evaluate_imputers(d, args.target, outer_k=args.outer, inner_k=args.inner, seed=args.seed,
                            methods=_csv_list(args.methods) or METHODS)
    _write_json(rep.to_dict(), args.out)
    print(f"best by MSE: {rep.winner}", file=sys.stderr)
    return EXIT_OK


def cmd_impute(args) -> int:
    from .dataset import write_csv
    from .impute import impute

    d = _load(args)
    fitted, out = impute(d, args.method, seed=args.seed)
    write_csv(out, args.out)
    for note in fitted.notes:
        print(f"note: {note}", file=sys.stderr)
    return EXIT_OK


def cmd_select(args) -> int:
    from .l1_quantile import select_features
    from .pipeline import _write_rows
    from .plots import emit_plot

    d = _load(args).with_target(args.target)
    if args.features:
        d = d.select(_csv_list(args.features) + [args.target])
    sel = select_features(d, args.target, tau=args.tau if args.loss == "pinball" else None, loss=args.loss,
                          repeats=args.repeats, folds=args.folds, seed=args.seed, n_lambda=args.n_lambda,
                          ratio=args.ratio)
    _write_rows(sel.to_rows(), Path(args.out))
    if args.plot:
        emit_plot("path", sel, args.plot)
    print(f"best lambda {sel.best.lam:.6g}, s {sel.best.s:.6g}, {len(sel.features)} features: "
          f"{', '.join(sel.features)}", file=sys.stderr)
    return EXIT_OK


def cmd_tune(args) -> int:
    from .forest import HyperGrid, tune

    d = _load(args)
    feats = _features_arg(args, d.with_target(args.target))
    X, y = _complete_xy(d, feats, args.target)
    base = HyperGrid()
    grid = HyperGrid(
        n_estimators=tuple(_grid_values(args.n_estimators)) if args.n_estimators else base.n_estimators,
        max_depth=tuple(_grid_values(args.max_depth)) if args.max_depth else base.max_depth,
        max_features=tuple(_grid_values(args.max_features)) if args.max_features else base.max_features)
    res = tune(X, y, tau=args.tau, grid=grid, folds=args.folds, seed=args.seed, mean=args.mean)
    _write_json({"features": feats, "best": res.best, "score": res.score, "fold_scores": res.fold_scores,
                 "table": res.table, "grid": grid.to_dict(), "seed": args.seed, "tau": args.tau}, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .forest import fit_forest, save_model

    d = _load(args)
    if args.from_tune and not args.features and not args.features_from:
        feats = json.loads(Path(args.from_tune).read_text(encoding="utf-8")).get("features")
        args.features = ",".join(feats) if feats else None
    feats = _features_arg(args, d.with_target(args.target))
    X, y = _complete_xy(d, feats, args.target)
    model = fit_forest(X, y, _hyper_from(args), seed=args.seed, tau=None if args.mean else args.tau,
                       feature_names=feats)
    save_model(model, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, d, X = _model_data(args)
    taus = [float(t) for t in _csv_list(args.taus)] if args.taus else None
    cols, values = [], []
    if args.mean:
        cols.append("mean")
        values.append(model.predict_mean(X)[:, None])
    if taus:
        cols += [f"q{t:g}" for t in taus]
        values.append(model.predict_quantile(X, taus))
    if not cols:
        cols.append("mean" if model.tau is None else f"q{model.tau:g}")
        values.append(model.predict(X)[:, None])
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row", *cols])
        table = np.hstack(values)
        for i, row in enumerate(table):
            w.writerow([i, *(repr(float(v)) for v in row)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_explain(args) -> int:
    from .explain import MAX_EXACT_FEATURES, ice_1d, pdp_2d, shap_global, shap_individual
    from .plots import emit_plot
    from .utils.validation import ValidationError

    model, d, X = _model_data(args)
    target = _target_arg(args, model)
    if args.kind == "shap":
        bg = X
        if args.background:
            bg = _complete_xy(_load(args, args.background), list(model.feature_names_))
        mode = args.mode
        if mode == "auto":
            mode = "exact" if X.shape[1] <= MAX_EXACT_FEATURES else "sampled"
        rep = shap_global(model, X, bg, target, mode=mode, permutations=args.permutations, seed=args.seed)
        rep.write_csv(args.out)
        if args.beeswarm:
            rep.write_beeswarm_csv(args.beeswarm)
        if args.bar:
            emit_plot("bar", rep, args.bar)
        if args.row is not None or args.waterfall:
            row = int(args.row) if args.row is not None else int(np.argmax(model.predict(X)))
            if not 0 <= row < X.shape[0]:
                raise ValidationError(f"--row {row} out of range")
            wf = shap_individual(model, X[row], bg, target, mode=mode, permutations=args.permutations,
                                 seed=args.seed) if mode == "sampled" else \
                shap_individual(model, X[row], bg, target)
            if args.waterfall:
                emit_plot("waterfall", wf, args.waterfall)
            for name, phi, val in wf.rows():
                print(f"{name}\t{val:.6g}\t{phi:+.6g}", file=sys.stderr)
        print(f"additivity error {rep.additivity_error():.2e}", file=sys.stderr)
    elif args.kind == "ice":
        grid = ice_1d(model, X, args.feature, grid_size=args.grid_size, target=target)
        if args.out:
            grid.write_csv(args.out)
        if args.plot:
            emit_plot("ice", grid, args.plot)
    else:
        pair = _csv_list(args.features)
        if len(pair) != 2:
            raise ValidationError("--features needs exactly two names")
        surf = pdp_2d(model, X, pair[0], pair[1], grid_size=args.grid_size, target=target)
        if args.out:
            surf.write_csv(args.out)
        if args.plot:
            emit_plot("pdp2", surf, args.plot)
    return EXIT_OK


def cmd_supplement(args) -> int:
    from .supplement import compare_combined_vs_split, select_supplement

    d = _load(args)
    if args.kind == "compare":
        feats = None
        if args.features_json:
            feats = json.loads(Path(args.features_json).read_text(encoding="utf-8"))
        rep = compare_combined_vs_split(d, args.target, seed=args.seed, features=feats, outer_k=args.outer,
                                        inner_k=args.inner)
        _write_json(rep.to_dict(), args.out)
    else:
        from .pipeline import _chosen, _write_rows

        sels = select_supplement(d, args.target, seed=args.seed, folds=args.folds, repeats=args.repeats)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        feats = {}
        for name, sel in sels.items():
            _write_rows(sel.to_rows(), out / f"select_squared_{name}.csv")
            feats[name] = _chosen(sel)[0]
        _write_json(feats, out / "features.json")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .pipeline import PipelineConfig, reproduce

    overrides = {}
    for key in PipelineConfig.keys():
        val = getattr(args, f"cfg_{key}", None)
        if val is not None:
            overrides[key] = val
    if args.config:
        cfg = PipelineConfig.from_json(args.config, overrides)
    else:
        cfg = PipelineConfig.from_dict(overrides)
    out = reproduce(cfg)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    misses = [c for c in manifest["acceptance"] if not c["passed"]]
    for c in manifest["acceptance"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['criterion']}: {c['detail']}", file=sys.stderr)
    return EXIT_STRICT if args.strict and misses else EXIT_OK


# -- parser ------------------------------------------------------------------------

def _data_opts(p, target=True):
    p.add_argument("--schema", help="schema JSON, or 'infer' to treat every column as a feature")
    p.add_argument("--group-col", dest="group_col", help="column holding group labels")
    p.add_argument("--group", help="only use rows of this group (label, or men/women)")
    if target:
        p.add_argument("--target", default="d_resEffe")


def _reproduce_flag(p, key, default):
    flag = "--" + key.replace("_", "-")
    dest = f"cfg_{key}"
    if isinstance(default, bool):
        p.add_argument(flag, dest=dest, type=lambda s: s.lower() in ("1", "true", "yes"), metavar="BOOL")
    elif isinstance(default, list):
        p.add_argument(flag, dest=dest, type=_grid_values, metavar="LIST")
    elif isinstance(default, float):
        p.add_argument(flag, dest=dest, type=float)
    elif isinstance(default, int) or key in ("seed", "threads"):
        p.add_argument(flag, dest=dest, type=int)
    else:
        p.add_argument(flag, dest=dest)


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import PipelineConfig

    ap = argparse.ArgumentParser(prog="qrfx", description="Quantile regression forest analysis of long jump data.")
    ap.add_argument("--threads", type=int, help="worker cap (same as QRFX_THREADS); results do not depend on it")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-group mean, SD and missing rate")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--pooled", action="store_true", help="ignore the group column")
    p.add_argument("--out")
    p.add_argument("--plot", help="histogram SVG of the target with quantile markers")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("impute-eval", help="rank imputers by downstream forest error")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--outer", type=int, default=4)
    p.add_argument("--inner", type=int, default=3)
    p.add_argument("--methods")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_impute_eval)

    p = sub.add_parser("impute", help="fill missing cells")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--method", required=True, help="mean, knn, bayes_iterative or forest_iterative")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("select", help="L1 path with repeated-CV choice of the penalty")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--loss", choices=("pinball", "squared"), default="pinball")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--n-lambda", dest="n_lambda", type=int, default=60)
    p.add_argument("--ratio", type=float, default=1e-3)
    p.add_argument("--features", help="comma-separated candidate features (default: all)")
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("tune", help="k-fold grid search for the forest")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--features")
    p.add_argument("--features-from", dest="features_from", help="selection CSV or JSON list")
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--mean", action="store_true", help="tune a mean forest by MSE")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--n-estimators", dest="n_estimators")
    p.add_argument("--max-depth", dest="max_depth")
    p.add_argument("--max-features", dest="max_features")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="fit and save a forest")
    p.add_argument("data")
    _data_opts(p)
    p.add_argument("--features")
    p.add_argument("--features-from", dest="features_from")
    p.add_argument("--from-tune", dest="from_tune", help="tune.json whose best setting and features are used")
    p.add_argument("--hyper", help="e.g. n_estimators=100,max_depth=3,max_features=6")
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--mean", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="quantile or mean predictions")
    p.add_argument("model")
    p.add_argument("data")
    _data_opts(p, target=False)
    p.add_argument("--taus", help="comma-separated quantile levels")
    p.add_argument("--mean", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="Shapley values, ICE curves, 2-D partial dependence")
    esub = p.add_subparsers(dest="kind", required=True)
    for kind in ("shap", "ice", "pdp2"):
        e = esub.add_parser(kind)
        e.add_argument("model")
        e.add_argument("data")
        _data_opts(e, target=False)
        e.add_argument("--tau", type=float, help="quantile to explain (default: the model's)")
        e.add_argument("--mean", action="store_true", help="explain the mean prediction")
        e.set_defaults(func=cmd_explain)
        if kind == "shap":
            e.add_argument("--mode", choices=("auto", "exact", "sampled"), default="auto",
                           help="auto: exact up to 20 features, sampled beyond")
            e.add_argument("--permutations", type=int, default=256)
            e.add_argument("--seed", type=int, default=0)
            e.add_argument("--background", help="CSV of background rows (default: the explained rows)")
            e.add_argument("--out", required=True)
            e.add_argument("--bar")
            e.add_argument("--beeswarm")
            e.add_argument("--row", type=int)
            e.add_argument("--waterfall")
        elif kind == "ice":
            e.add_argument("--feature", required=True)
            e.add_argument("--grid-size", dest="grid_size", type=int, default=50)
            e.add_argument("--out")
            e.add_argument("--plot")
        else:
            e.add_argument("--features", required=True)
            e.add_argument("--grid-size", dest="grid_size", type=int, default=25)
            e.add_argument("--out")
            e.add_argument("--plot")

    p = sub.add_parser("supplement", help="combined versus per-gender study")
    ssub = p.add_subparsers(dest="kind", required=True)
    s = ssub.add_parser("compare")
    s.add_argument("data")
    _data_opts(s)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--features-json", dest="features_json", help="JSON {combined,men,women: [features]}")
    s.add_argument("--outer", type=int, default=5)
    s.add_argument("--inner", type=int, default=4)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_supplement)
    s = ssub.add_parser("select")
    s.add_argument("data")
    _data_opts(s)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--folds", type=int, default=4)
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_supplement)

    p = sub.add_parser("reproduce", help="full per-group pipeline with a manifest")
    p.add_argument("--config", help="flat JSON config; flags below override its keys")
    p.add_argument("--strict", action="store_true", help="exit 4 when an acceptance target is missed")
    defaults = PipelineConfig.__dataclass_fields__
    for key in PipelineConfig.keys():
        f = defaults[key]
        default = f.default_factory() if callable(f.default_factory) else f.default
        _reproduce_flag(p, key, default)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    from .pipeline import StageError
    from .utils.validation import QrfxError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        os.environ["QRFX_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"qrfx: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (QrfxError, ValueError, KeyError, OSError) as exc:
        print(f"qrfx: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # unexpected failures are stage failures
        print(f"qrfx: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
