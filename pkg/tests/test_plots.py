import re

import numpy as np
import pytest

from qrfx.explain import ice_1d, pdp_2d, shap_global, shap_individual
from qrfx.forest import QuantileForestRegressor
from qrfx.l1_quantile import select_features_xy
from qrfx.plots import KINDS, PlotError, data_path, emit_plot
from qrfx.utils.validation import ValidationError


@pytest.fixture(scope="module")
def artefacts():
    g = np.random.default_rng(0)
    X = g.normal(size=(30, 3))
    y = X[:, 0] + 0.1 * g.normal(size=30)
    m = QuantileForestRegressor(n_estimators=10, max_depth=3, random_state=0).fit(X, y, ["a", "b", "c"])
    rep = shap_global(m, X[:8], X)
    return {
        "path": select_features_xy(X, y, ["a", "b", "c"], repeats=1, folds=3, n_lambda=8),
        "ice": ice_1d(m, X, "a", grid_size=9),
        "pdp2": pdp_2d(m, X, "a", "b", grid_size=5),
        "bar": rep,
        "waterfall": shap_individual(m, X[0], X),
        "hist": {"values": y, "label": "y", "quantiles": (0.1, 0.9)},
    }


@pytest.mark.parametrize("kind", KINDS)
def test_plots_are_byte_deterministic(tmp_path, artefacts, kind):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    emit_plot(kind, artefacts[kind], a)
    emit_plot(kind, artefacts[kind], b)
    assert a.read_bytes() == b.read_bytes()
    assert data_path(a).read_bytes() == data_path(b).read_bytes()
    text = a.read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text
    # self-contained: no external links, no timestamps
    assert not re.search(r'(xlink:)?href="(?!#)', text)
    assert "<dc:date>" not in text
    assert not list(tmp_path.glob("*.tmp"))


def test_data_path_naming(tmp_path):
    assert data_path(tmp_path / "fig.svg") == tmp_path / "fig_data.csv"


def test_hist_markers_are_sample_quantiles(tmp_path):
    v = np.arange(1.0, 11.0)
    emit_plot("hist", {"values": v, "quantiles": (0.5, 0.9)}, tmp_path / "h.svg")
    rows = (tmp_path / "h_data.csv").read_text().splitlines()
    q = [r for r in rows if r.startswith("quantile")]
    assert q == ["quantile,0.5,5", "quantile,0.9,9"]


def test_empty_data_writes_nothing(tmp_path):
    out = tmp_path / "e.svg"
    with pytest.raises(ValidationError):
        emit_plot("hist", {"values": []}, out)
    with pytest.raises(ValidationError):
        emit_plot("bar", ([], []), out)
    assert not out.exists() and not data_path(out).exists()


def test_unknown_kind(tmp_path):
    with pytest.raises(ValidationError):
        emit_plot("pie", {}, tmp_path / "x.svg")


def test_unwritable_target(tmp_path):
    with pytest.raises(PlotError):
        emit_plot("hist", {"values": [1.0, 2.0]}, tmp_path / "missing_dir" / "x.svg")
