import json

import numpy as np
import pytest

from qrfx.dataset import fixture_path, write_csv
from qrfx.pipeline import MANIFEST, PipelineConfig, StageError, _chosen, reproduce
from qrfx.utils.validation import ValidationError

PER_GROUP = ["summary.csv", "target_hist.svg", "target_hist_data.csv", "impute_eval.json", "imputed.csv",
             "select_path.csv", "select_path.svg", "tune.json", "model.json", "shap.csv", "shap_beeswarm.csv",
             "shap_bar.svg", "shap_waterfall.svg"]


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != MANIFEST}


def test_run_writes_expected_artifacts(fixture_runs):
    out = fixture_runs[0]
    for g in ("men", "women"):
        for name in PER_GROUP:
            assert (out / g / name).is_file(), f"{g}/{name}"
    assert (out / "combined" / "gender_split.json").is_file()
    m = json.loads((out / MANIFEST).read_text())
    assert m["status"] == "ok" and m["error"] is None
    assert set(m["groups"]) == {"men", "women", "combined"}
    assert m["config"]["seed"] == 7
    assert {"numpy", "python"} <= set(m["versions"])
    assert len(m["acceptance"]) == 7
    assert all(k.startswith(("select", "impute", "tune", "train", "shap", "supplement")) for k in m["seeds"])
    assert m["artifacts"]["men/model.json"]


def test_shap_artifacts_are_additive(fixture_runs):
    m = json.loads((fixture_runs[0] / MANIFEST).read_text())
    for g in ("men", "women"):
        assert m["groups"][g]["shap"]["additivity_error"] <= 1e-9


def test_runs_byte_identical_across_threads(fixture_runs):
    a, b = (_files(r) for r in fixture_runs)
    assert a.keys() == b.keys()
    diff = [k for k in a if a[k] != b[k]]
    assert not diff


def test_manifest_hashes_match_files(fixture_runs):
    import hashlib

    out = fixture_runs[0]
    m = json.loads((out / MANIFEST).read_text())
    for rel, digest in m["artifacts"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest


def test_failed_stage_leaves_manifest(tmp_path):
    # a target column that exists but is entirely missing breaks imputation evaluation
    from qrfx.dataset import load_fixture

    d = load_fixture()
    j = d.index("d_resEffe")
    miss = d.missing.copy()
    miss[:, j] = True
    src = tmp_path / "broken.csv"
    write_csv(d.with_values(d.values, miss), src)
    cfg = PipelineConfig(input=str(src), seed=1, out=str(tmp_path / "run"), supplement=False)
    with pytest.raises(StageError) as exc:
        reproduce(cfg)
    m = json.loads((tmp_path / "run" / MANIFEST).read_text())
    assert m["status"] == "failed"
    assert m["error"]["stage"] == exc.value.stage
    assert m["acceptance"] == []


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"input": "x.csv"})
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"input": "x.csv", "seed": 1, "colour": "red"})
    with pytest.raises(ValidationError):
        PipelineConfig(input="x", seed=1, tau=1.5)
    with pytest.raises(ValidationError):
        PipelineConfig(input="x", seed=1, shap_mode="fast")
    with pytest.raises(ValidationError):
        PipelineConfig(input="x", seed="7")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"input": "a.csv", "seed": 3, "tau": 0.5}))
    cfg = PipelineConfig.from_json(p, {"tau": 0.8, "out": None})
    assert cfg.tau == 0.8 and cfg.seed == 3 and cfg.out == "qrfx-run"


def test_selection_fallback():
    from qrfx.l1_quantile import PathPoint, SelectionResult

    pts = [PathPoint(1.0, 0.0, 1.0, np.zeros(2), 0), PathPoint(0.5, 0.2, 1.1, np.array([0.2, 0.0]), 1)]
    sel = SelectionResult(path=pts, best_index=0, features=[], feature_names=["a", "b"], loss="pinball", tau=0.9)
    assert _chosen(sel) == (["a"], True)
    sel.features = ["b"]
    assert _chosen(sel) == (["b"], False)


def test_fixture_is_bundled():
    assert fixture_path().is_file()
