import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capwiener.config import dump_config, format_spec, load_config, parse_config, parse_spec
from capwiener.errors import ConfigParse, MissingReport
from capwiener.report import CheckReport
from capwiener.setgeom import Ball, Box, GridContext, GridField, SetSpec, rasterize
from capwiener.storage import (
    RecordWriter,
    read_field,
    read_mask,
    read_records,
    read_reports,
    run_lengths,
    write_field,
    write_mask,
)

BASE = """
[scenario]
name = demo
q = 4
checks = two_sided, wiener
seed = 3

[grid]
R = 4
resolution = 48

[set]
spec = ball(0, 0, 0, 1); points(1.5, 0, 0)

[samples]
kind = shell
count = 5
r_min = 1.2
r_max = 1.8

[check.wiener]
expect = BOUNDED
"""


def test_parse_basic():
    cfg = parse_config(BASE)
    assert cfg.name == "demo" and cfg.q == 4 and cfg.checks == ("two_sided", "wiener")
    assert cfg.grid.resolution == 48 and cfg.grid.R == 4
    assert len(cfg.set_spec.primitives) == 2
    assert cfg.sample_points().shape == (5, 3)
    assert cfg.override("wiener", "expect", kind=str) == "BOUNDED"
    assert cfg.override("wiener", "missing", 7, int) == 7


def test_round_trip_is_identity_on_semantics():
    cfg = parse_config(BASE)
    again = parse_config(dump_config(cfg))
    assert again.semantic() == cfg.semantic()
    assert again.digest() == cfg.digest()


def test_digest_tracks_semantic_fields_only():
    cfg = parse_config(BASE)
    assert replace(cfg, workers=4, output_dir="elsewhere").digest() == cfg.digest()
    assert replace(cfg, q=3.0).digest() != cfg.digest()
    assert replace(cfg, seed=4).digest() != cfg.digest()
    assert parse_config(BASE.replace("resolution = 48", "resolution = 64")).digest() != cfg.digest()


@pytest.mark.parametrize(
    "old,new,field",
    [
        ("q = 4", "q = 0", "scenario.q"),
        ("q = 4", "q = banana", "scenario.q"),
        ("resolution = 48", "resolution = 8", "grid.resolution"),
        ("kind = shell", "kind = cloud", "samples.kind"),
        ("spec = ball(0, 0, 0, 1); points(1.5, 0, 0)", "spec = torus(1, 2)", "set.spec"),
        ("r_max = 1.8", "r_max = 2.5", "samples"),
    ],
)
def test_bad_fields_are_named(old, new, field):
    with pytest.raises(ConfigParse) as exc:
        parse_config(BASE.replace(old, new))
    assert exc.value.field == field
    assert field in str(exc.value)


def test_error_carries_line_number():
    with pytest.raises(ConfigParse) as exc:
        parse_config(BASE.replace("q = 4", "q = 0"))
    assert exc.value.line == 4


def test_missing_name():
    with pytest.raises(ConfigParse):
        parse_config("[scenario]\nq = 4\n")


def test_suite_configs_parse():
    from capwiener.cli import CHECKS, suite_configs

    for suite in ("smoke", "acceptance", "borderline"):
        paths = suite_configs(suite)
        assert paths
        for p in paths:
            cfg = load_config(p)
            assert all(c in CHECKS for c in cfg.checks)


SPECS = [
    "ball(0.1, 0, 0, 0.5)",
    "box(-1, -1, -1, 1, 1, 1)",
    "segment(0, 0, 0, 1, 0, 0, 0.1)",
    "points(0, 0, 0, 1, 1, 1)",
    "cantor(2, 0.3)",
    "ballseq(0.5, 0, 0, 0.25, 0.3, 0, 0, 0.0625)",
    "cap(0, 0, 0, 1, 0, 0, 1, 0.5)",
]


@pytest.mark.parametrize("text", SPECS)
def test_spec_round_trip(text):
    spec = parse_spec(text)
    assert parse_spec(format_spec(spec)).digest() == spec.digest()


@settings(max_examples=40, deadline=None)
@given(
    c=st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3),
    r=st.floats(0.01, 0.9),
    lo=st.tuples(*[st.floats(-1, 0)] * 3),
    w=st.floats(0.01, 1.0),
)
def test_spec_round_trip_property(c, r, lo, w):
    hi = tuple(x + w for x in lo)
    spec = SetSpec((Ball(c, r), Box(lo, hi)))
    assert parse_spec(format_spec(spec)).digest() == spec.digest()


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------


def test_run_lengths():
    assert run_lengths(np.array([0, 0, 1, 1, 1, 0], bool)).tolist() == [2, 3, 1]
    assert run_lengths(np.array([1, 0], bool)).tolist() == [0, 1, 1]


def test_mask_round_trip(tmp_path):
    g = GridContext.cube(2.0, 24)
    m = rasterize(parse_spec("ball(0.2, 0, 0, 0.7); box(-1, -1, -1, -0.5, -0.5, -0.5)"), g)
    write_mask(tmp_path / "m.bin", m)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == b"CWMK" and len(raw) > 16
    back = read_mask(tmp_path / "m.bin")
    assert back.context.key() == g.key()
    assert np.array_equal(back.indicator, m.indicator)


def test_field_round_trip(tmp_path):
    g = GridContext.cube(1.0, 16)
    vals = np.random.default_rng(0).normal(size=g.shape)
    write_field(tmp_path / "f.bin", GridField(g, vals))
    back = read_field(tmp_path / "f.bin")
    assert np.array_equal(back.values, vals)


def test_records(tmp_path):
    w = RecordWriter(tmp_path / "r" / "reports.jsonl")
    rep = CheckReport("demo", "abc", {"x": np.float64(1.5), "v": np.arange(3)}, "PASS", {"t": 0.1})
    w.append({"kind": "report", "report": rep.to_record()})
    w.append({"kind": "other", "value": math.pi})
    recs = read_records(tmp_path / "r" / "reports.jsonl")
    assert len(recs) == 2
    (back,) = read_reports(tmp_path / "r" / "reports.jsonl")
    assert back.verdict == "PASS" and back.quantities["v"] == [0, 1, 2]
    with pytest.raises(MissingReport):
        read_records(tmp_path / "nope.jsonl")
