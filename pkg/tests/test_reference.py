"""Published reference constants, cross-checked against the bundled source text."""

import re
from pathlib import Path

import pytest

from qrfx import reference as ref
from qrfx.dataset import default_schema

SOURCE = Path(__file__).resolve().parents[1] / "paper.md"
pytestmark = pytest.mark.skipif(not SOURCE.is_file(), reason="source text not bundled")


def _text():
    return SOURCE.read_text(encoding="utf-8").replace("\\_", "_")


def _quoted(line):
    return re.findall(r"'([A-Za-z_0-9]+)'", line)


def test_summary_rows_match_source():
    rows = {}
    for line in _text().splitlines():
        cells = [c.strip() for c in line.rstrip("\\ ").split("&")]
        if len(cells) == 8 and cells[0] in ref.SUMMARY:
            rows[cells[0]] = cells[2:]
    assert set(rows) == set(ref.SUMMARY)
    for name, cells in rows.items():
        got = ref.SUMMARY[name]
        assert [got["men"]["mean"], got["men"]["sd"], got["men"]["missing"],
                got["women"]["mean"], got["women"]["sd"], got["women"]["missing"]] == cells, name


def test_summary_covers_schema():
    numeric = {c.name for c in default_schema() if c.kind != "group"}
    assert set(ref.SUMMARY) <= numeric


def test_imputation_tables():
    text = _text().replace("\\textbf{", "").replace("}", "")
    label = {"Mean": "mean", "KNN": "knn", "Bayesian": "bayes_iterative", "RF": "forest_iterative"}
    six, three = {}, {}
    for line in text.splitlines():
        cells = [c.strip() for c in line.strip().rstrip("\\").split("&")]
        if cells[0] in label:
            nums = tuple(float(c) for c in cells[1:])
            (six if len(nums) == 6 else three)[label[cells[0]]] = nums
    for m in label.values():
        assert ref.IMPUTATION["men"][m] == six[m][:3]
        assert ref.IMPUTATION["women"][m] == six[m][3:]
        assert ref.IMPUTATION["combined"][m] == three[m]
    for g, winner in ref.IMPUTATION_WINNER.items():
        assert min(ref.IMPUTATION[g], key=lambda m: ref.IMPUTATION[g][m][0]) == winner


def test_selected_feature_lists():
    lines = _text().splitlines()
    men = next(ln for ln in lines if "Men athletes' jumps (19 features)" in ln)
    women = next(ln for ln in lines if "Women athletes' jumps (10 features)" in ln)
    whole = next(ln for ln in lines if "Whole data (10 features)" in ln)
    male_sq = next(ln for ln in lines if "Male athletes' data (13 features)" in ln)
    female_sq = next(ln for ln in lines if "Female athletes' data (5 features)" in ln)
    assert tuple(_quoted(men)) == ref.SELECTED_FEATURES["men"]
    assert tuple(_quoted(women)) == ref.SELECTED_FEATURES["women"]
    assert tuple(_quoted(whole)) == ref.SQUARED_SELECTED_FEATURES["combined"]
    assert tuple(_quoted(male_sq)) == ref.SQUARED_SELECTED_FEATURES["men"]
    assert tuple(_quoted(female_sq)) == ref.SQUARED_SELECTED_FEATURES["women"]


def test_scalar_targets_appear():
    t = _text()
    for token in ("0.0287", "0.0333", "0.071", "0.018", "8.59m", "7.18m", "9.6m/", "0.0307", "0.0180", "0.0488"):
        assert token in t, token
    assert ref.TUNED_PINBALL == {"men": 0.0287, "women": 0.0333}
    assert ref.SHAP_TOP_MEAN_ABS["men"] == 0.071
    assert ref.VELOCITY_THRESHOLD == 9.6


def test_gender_split_table():
    t = _text()
    for (a, b), (mse, rmse, r2) in ref.GENDER_SPLIT.items():
        assert f"{mse:.4f} & {rmse:.3f} & {r2:.3f}" in t, (a, b)
    assert ref.GENDER_SPLIT[("combined", "combined")][2] == 0.920


def test_group_sizes():
    t = _text()
    assert "Men (n=35)" in t and "Women (n=33)" in t
    assert ref.GROUP_SIZES == {"men": 35, "women": 33}
