import math

import numpy as np
import pytest

from qrfx.dataset import (ColumnSpec, add_indicator, classify_group, default_schema, infer_schema, load_csv,
                          load_fixture, load_group_files, split_by_group, summarize, write_csv)
from qrfx.utils.validation import DataParseError, SchemaError, ValidationError


def test_fixture_loads_with_full_schema():
    d = load_fixture()
    assert d.n == 12
    assert d.p == 45
    assert "d_resEffe" in d.names
    assert d.group_name == "Gender"
    assert set(d.group) <= {"Male", "Female"}


def test_schema_has_target_and_group():
    kinds = {c.kind for c in default_schema()}
    assert kinds == {"feature", "target", "group"}


def test_roundtrip_preserves_values_and_mask(tmp_path, syn_dataset):
    path = tmp_path / "d.csv"
    write_csv(syn_dataset, path)
    back = load_csv(path, default_schema())
    assert np.array_equal(back.missing, syn_dataset.missing)
    obs = ~back.missing
    assert np.allclose(back.values[obs], syn_dataset.values[obs], rtol=1e-9)
    assert list(back.group) == list(syn_dataset.group)


def test_header_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(path, default_schema())


def test_unparseable_cell_reports_location(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,oops\n")
    with pytest.raises(DataParseError) as exc:
        load_csv(path, infer_schema(["a", "b"]))
    assert "oops" in str(exc.value)


def test_missing_tokens(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n1,NA\n,2\nnan,3\n")
    d = load_csv(path, infer_schema(["a", "b"]))
    assert d.missing.tolist() == [[False, True], [True, False], [True, False]]


def test_summary_matches_numpy(syn_dataset):
    s = summarize(syn_dataset)
    for j, name in enumerate(syn_dataset.names):
        obs = syn_dataset.values[~syn_dataset.missing[:, j], j]
        c = s[name]
        assert c.n_observed == obs.size
        assert c.mean == pytest.approx(obs.mean())
        assert c.sd == pytest.approx(obs.std(ddof=1))
        assert c.missing_rate == pytest.approx(100 * (1 - obs.size / syn_dataset.n))


def test_summary_undefined_for_empty_column():
    d = load_fixture()
    col = d.names[0]
    j = d.index(col)
    miss = d.missing.copy()
    miss[:, j] = True
    s = summarize(d.with_values(d.values, miss))
    assert math.isnan(s[col].mean) and s[col].missing_rate == 100.0


def test_split_by_group_is_partition(syn_dataset):
    parts = split_by_group(syn_dataset)
    assert sum(p.n for p in parts.values()) == syn_dataset.n
    assert {classify_group(k) for k in parts} == {"men", "women"}


def test_group_files_and_indicator(tmp_path, syn_dataset):
    parts = split_by_group(syn_dataset)
    files = {}
    for label, part in parts.items():
        p = tmp_path / f"{label}.csv"
        write_csv(part, p)
        files[label] = p
    d = load_group_files(files)
    assert d.n == syn_dataset.n
    women = next(k for k in parts if classify_group(k) == "women")
    d2 = add_indicator(d, women)
    ind = d2.column(d2.names[-1])
    assert d2.names[-1].endswith("isFemale")
    assert ind.sum() == parts[women].n


def test_group_file_label_conflict(tmp_path, syn_dataset):
    part = next(iter(split_by_group(syn_dataset).values()))
    p = tmp_path / "x.csv"
    write_csv(part, p)
    with pytest.raises(SchemaError):
        load_group_files({"SomethingElse": p})


def test_column_spec_validation():
    with pytest.raises(SchemaError):
        ColumnSpec("")
    with pytest.raises(SchemaError):
        ColumnSpec("x", kind="weird")
    with pytest.raises(SchemaError):
        infer_schema(["a", "a"])


def test_split_requires_labels(syn_dataset):
    d = syn_dataset.take(np.arange(4))
    object.__setattr__(d, "group", np.array(["Male", None, "Male", "Female"], dtype=object))
    with pytest.raises(ValidationError):
        split_by_group(d)


def test_group_files_accept_equivalent_labels(tmp_path, syn_dataset):
    from qrfx.dataset import classify_group, load_group_files, split_by_group, write_csv
    files = {}
    for k, v in split_by_group(syn_dataset).items():
        files[classify_group(k)] = tmp_path / f"{classify_group(k)}.csv"
        write_csv(v, files[classify_group(k)])
    d = load_group_files(files)
    assert set(d.group) == {"men", "women"}
    with pytest.raises(SchemaError):
        load_group_files({"women": files["men"]})
