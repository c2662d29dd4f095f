import json
import math

import numpy as np
import pytest

from trimeta import PipelineConfig, TrimSpec, analyze, load_cdp
from trimeta.dataio import (
    SCHEMA_VERSION,
    build_report,
    parse_dataset,
    read_dataset,
    read_report,
    render_text,
    write_report,
)
from trimeta.errors import DatasetParseError, InputError


def test_cdp_fixture(cdp):
    assert len(cdp) == 10
    s3 = cdp.studies[2]
    assert (s3.id, s3.effect, s3.se) == ("3", 2.22, 0.4107)
    assert cdp.ids == [str(i) for i in range(1, 11)]


def test_read_preserves_order_and_decimals(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("study,yi,sei\nb,0.1,0.30000000000000004\na,-1e-3,2\n")
    ds = read_dataset(p)
    assert ds.ids == ["b", "a"]
    assert ds.effects[1] == -0.001
    assert ds.ses[0] == 0.30000000000000004
    assert ds.name == "d"


def test_sniffed_delimiters():
    for sep in ("\t", ";"):
        ds = parse_dataset(sep.join(["Effect", "SE"]) + "\n" + sep.join(["1.5", "0.2"]) + "\n")
        assert ds.effects[0] == 1.5
        assert ds.ids == ["1"]


@pytest.mark.parametrize(
    "text, row, column",
    [
        ("", None, None),
        ("effect,se\n", None, None),
        ("id,effect\n1,0.5\n", 1, None),
        ("id,effect,se\n1,0.5,0.2\n2,abc,0.1\n", 3, "effect"),
        ("id,effect,se\n1,0.5,0\n", 2, "se"),
        ("id,effect,se\n1,0.5,-0.1\n", 2, "se"),
        ("id,effect,se\n1,0.5,0.1\n1,0.6,0.1\n", 3, "id"),
        ("id,effect,se\n1,0.5,nan\n", 2, "se"),
        ("id,effect,se\n1,0.5\n", 2, None),
    ],
)
def test_parse_errors(text, row, column):
    with pytest.raises(DatasetParseError) as info:
        parse_dataset(text)
    assert info.value.row == row
    assert info.value.column == column
    if row is not None:
        assert f"row {row}" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(DatasetParseError):
        read_dataset(tmp_path / "absent.csv")


@pytest.fixture(scope="module")
def small_report():
    ds = load_cdp()
    cfg = PipelineConfig(n_replicates=300, grid_step=0.1, refine_rounds=1)
    result = analyze(ds, cfg)
    return build_report(result, ds, {"model": "dsl", "n_replicates": 300, "seed": cfg.seed})


def test_structured_round_trip(small_report):
    text = write_report(small_report, "structured")
    doc = json.loads(text)
    assert doc["schema"] == "trimeta.report"
    assert doc["schema_version"] == SCHEMA_VERSION
    back = read_report(text)
    assert back.untrimmed == small_report.untrimmed
    assert back.trimmed == small_report.trimmed
    assert back.proportions_kept == small_report.proportions_kept
    assert len(back.surface) == len(small_report.surface)
    for a, b in zip(back.surface, small_report.surface):
        for k in a:
            assert a[k] == b[k] or (isinstance(b[k], float) and math.isnan(b[k]) and math.isnan(a[k]))
    assert write_report(back, "structured") == text


def test_round_trip_infinite_bounds():
    ds = load_cdp()
    result = analyze(ds, PipelineConfig(n_replicates=100), spec=TrimSpec(0, 0))
    r = build_report(result, ds, {})
    text = write_report(r, "structured")
    assert json.loads(text)["trimmed"]["b_hi"] is None
    back = read_report(text)
    assert back.trimmed.b_hi == math.inf and back.trimmed.b_lo == -math.inf
    assert back.trimmed == r.trimmed


def test_identity_rows_equal():
    ds = load_cdp()
    result = analyze(ds, PipelineConfig(n_replicates=100), spec=TrimSpec(0, 0))
    r = build_report(result, ds, {})
    assert r.untrimmed == r.trimmed


def test_text_layout(small_report):
    text = write_report(small_report, "text")
    assert text == render_text(small_report)
    lines = text.splitlines()
    assert any(l.lstrip().startswith("0        0") for l in lines)
    assert "proportion kept" in text
    assert "2.2200" in text


def test_report_schema_errors(small_report):
    doc = small_report.to_dict()
    doc["schema_version"] = 99
    with pytest.raises(InputError):
        read_report(json.dumps(doc))
    with pytest.raises(InputError):
        write_report(small_report, "xml")
