"""Versioned JSON model files."""

from __future__ import annotations

import json
import os

import numpy as np

from ..utils.validation import QrfxError
from .forest import ForestArrays, QuantileForestRegressor, TreeNode

FORMAT = "qrfx-forest"
VERSION = 1


class ModelFileError(QrfxError):
    pass


def _node_to_json(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"rows": list(node.rows), "targets": list(node.targets)}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _node_to_json(node.left), "right": _node_to_json(node.right)}


def model_to_dict(model: QuantileForestRegressor) -> dict:
    f = model.forest_
    return {
        "format": FORMAT,
        "version": VERSION,
        "hyper": model.hyper_,
        "seed": int(model.random_state),
        "tau": model.tau,
        "quantile_interp": model.quantile_interp,
        "feature_names": list(model.feature_names_),
        "train_targets": [float(v) for v in model.y_train_],
        "n_estimators": f.n_trees,
        "trees": [_node_to_json(model.tree(t)) for t in range(f.n_trees)],
    }


def save_model(model: QuantileForestRegressor, path) -> None:
    text = json.dumps(model_to_dict(model), separators=(",", ":"), allow_nan=False)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    os.replace(tmp, path)


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.depth, self.start, self.end, self.samples = [], [], [], []

    def add(self, node: dict, depth: int, p: int, y: np.ndarray) -> int:
        k = len(self.feature)
        for col in (self.feature, self.threshold, self.left, self.right, self.start, self.end):
            col.append(-1)
        self.depth.append(depth)
        self.start[k] = len(self.samples)
        if "rows" in node:
            rows = [int(r) for r in node["rows"]]
            targets = [float(t) for t in node["targets"]]
            if not rows or len(rows) != len(targets):
                raise ModelFileError("leaf with missing or mismatched rows/targets")
            if any(r < 0 or r >= y.shape[0] for r in rows):
                raise ModelFileError("leaf row index out of range")
            if any(y[r] != t for r, t in zip(rows, targets)):
                raise ModelFileError("leaf targets disagree with training targets")
            self.samples.extend(rows)
            self.threshold[k] = 0.0
        else:
            j = int(node["feature"])
            if not 0 <= j < p:
                raise ModelFileError(f"split feature {j} out of range")
            self.feature[k] = j
            self.threshold[k] = float(node["threshold"])
            self.left[k] = self.add(node["left"], depth + 1, p, y)
            self.right[k] = self.add(node["right"], depth + 1, p, y)
        self.end[k] = len(self.samples)
        return k

    def arrays(self):
        i64 = lambda v: np.asarray(v, dtype=np.int64)
        return (i64(self.feature), np.asarray(self.threshold, dtype=np.float64), i64(self.left),
                i64(self.right), i64(self.depth), i64(self.start), i64(self.end), i64(self.samples))


def model_from_dict(doc: dict) -> QuantileForestRegressor:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFileError("not a qrfx forest model file")
    if doc.get("version") != VERSION:
        raise ModelFileError(f"unsupported model version {doc.get('version')!r} (expected {VERSION})")
    try:
        hyper = doc["hyper"]
        names = list(doc["feature_names"])
        y = np.asarray(doc["train_targets"], dtype=np.float64)
        trees = doc["trees"]
        if len(trees) != int(doc["n_estimators"]) or len(trees) != int(hyper["n_estimators"]):
            raise ModelFileError("tree count does not match n_estimators")
        p = len(names)
        built = []
        for t in trees:
            b = _Builder()
            b.add(t, 0, p, y)
            built.append(b.arrays())
        model = QuantileForestRegressor(n_estimators=int(hyper["n_estimators"]),
                                        max_depth=hyper["max_depth"],
                                        max_features=int(hyper["max_features"]),
                                        min_samples_leaf=int(hyper.get("min_samples_leaf", 1)),
                                        tau=doc.get("tau"), quantile_interp=doc["quantile_interp"],
                                        random_state=int(doc["seed"]))
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError, RecursionError) as exc:
        raise ModelFileError(f"malformed model file: {exc!r}") from exc
    model._set_fitted(ForestArrays.concatenate(built, y), y, p, names)
    model.max_features_ = int(hyper["max_features"])
    if model.max_depth is not None and model.forest_.max_depth() > int(model.max_depth):
        raise ModelFileError("tree deeper than max_depth")
    return model


def load_model(path) -> QuantileForestRegressor:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: corrupt model file ({exc.msg} at char {exc.pos})") from exc
    except OSError as exc:
        raise ModelFileError(f"{path}: cannot read model file ({exc.strerror})") from exc
    return model_from_dict(doc)


__all__ = ["ModelFileError", "save_model", "load_model", "model_to_dict", "model_from_dict"]
