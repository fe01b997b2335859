from dataclasses import replace

import pytest

from capwiener.cli import emit_plotdata, main, run_config, suite_configs
from capwiener.config import parse_config
from capwiener.dyadic import PotentialTerm, PotentialValue
from capwiener.errors import MissingReport, ScenarioAborted, UnknownSuite
from capwiener.storage import RecordWriter, read_json, write_json

MINIMAL = """
[scenario]
name = {name}
q = 4
checks = {checks}

[check.ko_slab]
resolution = 64
tolerance = {tol}

[check.certification]
instances = 2
"""


def write_cfg(tmp_path, name="mini", checks="", tol=0.10, extra=""):
    p = tmp_path / f"{name}.ini"
    p.write_text(MINIMAL.format(name=name, checks=checks, tol=tol) + extra)
    return p


def test_empty_checks_exit_zero(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["run", str(p), "--out", str(tmp_path / "out")]) == 0
    man = read_json(tmp_path / "out" / "mini" / "manifest.json")
    assert man["check_outcomes"] == []
    assert (tmp_path / "out" / "mini" / "summary.tsv").read_text().startswith("check\tverdict")


def test_passing_run_writes_records(tmp_path, capsys):
    p = write_cfg(tmp_path, checks="ko_slab, certification")
    assert main(["run", str(p), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "ko_slab\tPASS" in out and "certification\tPASS" in out
    lines = (tmp_path / "mini" / "reports.jsonl").read_text().splitlines()
    assert len(lines) == 2
    man = read_json(tmp_path / "mini" / "manifest.json")
    assert len(man["check_outcomes"]) == 2 and man["config_digest"]
    # the dumped scenario re-parses to the same semantics
    again = parse_config((tmp_path / "mini" / "scenario.ini").read_text())
    assert again.digest() == man["config_digest"]


def test_fail_gives_exit_one(tmp_path):
    p = write_cfg(tmp_path, checks="ko_slab", tol=1e-4)
    assert main(["run", str(p), "--out", str(tmp_path)]) == 1


def test_workers_give_same_verdicts(tmp_path):
    cfg = parse_config(MINIMAL.format(name="par", checks="ko_slab, certification", tol=0.1))
    serial = run_config(cfg, tmp_path / "s")
    parallel = run_config(replace(cfg, workers=2), tmp_path / "p")
    assert serial.check_outcomes == parallel.check_outcomes
    assert serial.config_digest == parallel.config_digest


def test_malformed_q(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[scenario]\nname = bad\nq = 0\n")
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "scenario.q" in err


def test_aborted_check_flushes_manifest(tmp_path):
    # continuity needs a ball; the check raises and the run is aborted
    cfg = parse_config(MINIMAL.format(name="abort", checks="continuity, ko_slab", tol=0.1)
                       + "\n[set]\nspec = box(-0.5, -0.5, -0.5, 0.5, 0.5, 0.5)\n")
    with pytest.raises(ScenarioAborted):
        run_config(cfg, tmp_path)
    man = read_json(tmp_path / "abort" / "manifest.json")
    assert man["check_outcomes"] == [["continuity", "ERROR"], ["ko_slab", "SKIPPED"]]
    assert man["finished_at"]


def test_unknown_check_rejected(tmp_path):
    p = write_cfg(tmp_path, checks="nonsense")
    assert main(["run", str(p), "--out", str(tmp_path)]) == 2


def test_unknown_suite(capsys):
    with pytest.raises(UnknownSuite):
        suite_configs("nightly")
    assert main(["suite", "nightly"]) == 2


def test_capacity_command(capsys):
    assert main(["capacity", "ball(0, 0, 0, 0.5)", "--q", "4", "--resolution", "24"]) == 0
    out = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    assert float(out["capacity"]) > 0 and out["converged"] == "True"


def _manifest(tmp_path, records):
    d = tmp_path / "run"
    d.mkdir()
    w = RecordWriter(d / "reports.jsonl")
    for r in records:
        w.append(r)
    write_json(d / "manifest.json", {"name": "x", "check_outcomes": [["two_sided", "PASS"]] if records else [],
                                     "records": "reports.jsonl"})
    return d / "manifest.json"


def test_plot_tables_empty_manifest(tmp_path):
    m = _manifest(tmp_path, [])
    for what in ("potential-terms", "ratio-bands", "wiener-trace"):
        (path,) = emit_plotdata(m, what)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 and "\t" in lines[0]


def test_potential_terms_match_record_exactly(tmp_path):
    terms = [PotentialTerm(m, 1.0 / (m + 2), 2.0 ** (2 * m / 3), 2.0 ** (2 * m / 3) / (m + 2)) for m in (-1, 0, 1)]
    pv = PotentialValue((2.0, 0.0, 0.0), "annulus", terms, sum(t.contribution for t in terms), (-1, 1))
    m = _manifest(tmp_path, [{"kind": "potential", "check": "two_sided", "sample": 0, "value": pv.record()}])
    (path,) = emit_plotdata(m, "potential-terms")
    rows = [r.split("\t") for r in path.read_text().splitlines()[1:]]
    assert [int(r[2]) for r in rows] == [-1, 0, 1]
    for r, t in zip(rows, terms):
        assert float(r[3]) == t.annulus_capacity
        assert float(r[4]) == t.weight
        assert float(r[5]) == t.contribution


def test_wiener_trace_is_sorted_by_distance(tmp_path):
    trace = [[0.1, 3.0], [0.8, 0.5], [0.4, 1.2]]
    rec = {"kind": "wiener", "check": "wiener", "sample": 0, "verdict": {"solverTrace": trace}}
    m = _manifest(tmp_path, [rec])
    (path,) = emit_plotdata(m, "wiener-trace")
    rows = [tuple(map(float, r.split("\t"))) for r in path.read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == [0.8, 0.4, 0.1]
    assert [r[1] for r in rows] == sorted(r[1] for r in rows)


def test_plot_missing_manifest(tmp_path):
    with pytest.raises(MissingReport):
        emit_plotdata(tmp_path / "nothing" / "manifest.json", "ratio-bands")
    assert main(["plot", str(tmp_path / "nothing"), "ratio-bands"]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "capwiener", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
