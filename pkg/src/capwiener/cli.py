"""Batch front-end: ``run``, ``suite``, ``plot`` and ``capacity`` commands."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import CapacityConfig, Exponents, capacity, capacity_scaling_check
from .config import ScenarioConfig, default_workers, dump_config, format_spec, load_config, parse_spec
from .dyadic import equivalence_WF_WFstar, potential, sum_int_profile
from .errors import CapWienerError, ConfigParse, MissingReport, ScenarioAborted, UnknownSuite
from .report import FAIL, INCONCLUSIVE, PASS, CheckReport, digest, verdict_of
from .setgeom import Ball, GridContext, SetSpec, SphericalCap, boundary_samples, rasterize, scale_spec
from .storage import RecordWriter, read_json, read_records, write_json, write_table
from . import verify as V

log = logging.getLogger("capwiener")

SUITES = ("smoke", "acceptance", "borderline")
PLOTS = ("potential-terms", "ratio-bands", "wiener-trace")


@dataclass
class RunManifest:
    name: str
    config_digest: str
    tool_version: str
    started_at: str
    finished_at: str = ""
    check_outcomes: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    records: str = "reports.jsonl"

    def to_record(self) -> dict:
        return asdict(self)

    @property
    def failed(self) -> bool:
        return any(v in (FAIL, "ERROR") for _, v in self.check_outcomes)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())


def verify_config(cfg: ScenarioConfig) -> V.VerifyConfig:
    g = cfg.grid
    return V.VerifyConfig(
        R=g.R,
        resolution=g.resolution,
        refined_resolution=g.refined_resolution,
        capacity=CapacityConfig(window_resolution=g.window_resolution),
        refined_capacity=CapacityConfig(window_resolution=g.refined_window_resolution),
        wiener_R=g.wiener_R,
    )


# ---------------------------------------------------------------------------
# check registry: each runner returns (reports, extra records)
# ---------------------------------------------------------------------------


def _potential_records(cfg, vcfg, check, pts):
    exp = cfg.exponents
    recs = []
    for i, x in enumerate(pts):
        pv = potential(cfg.set_spec, x, "annulus", exp, vcfg.capacity)
        recs.append({"kind": "potential", "check": check, "sample": i, "value": pv.record()})
    return recs


def _two_sided(cfg, vcfg):
    pts = cfg.sample_points()
    rep = V.two_sided_report(cfg.set_spec, pts, cfg.exponents, vcfg)
    return [rep], _potential_records(cfg, vcfg, "two_sided", pts)


def _similarity(cfg, vcfg):
    a = cfg.override("similarity", "a", 2.0)
    return [V.similarity_check(cfg.set_spec, a, cfg.sample_points(), cfg.exponents, vcfg)], []


def _subadditivity(cfg, vcfg):
    parts = [SetSpec((p,)) for p in cfg.set_spec.primitives]
    return [V.subadditivity_check(parts, cfg.sample_points(), cfg.exponents, vcfg)], []


def _removability(cfg, vcfg):
    jmax = cfg.override("removability", "j_max", 4, int)
    specs = [scale_spec(cfg.set_spec, 2.0**j) for j in range(1, jmax + 1)]
    return [V.removability_check(specs, cfg.exponents, vcfg)], []


def _neighborhood(cfg, vcfg):
    return [V.neighborhood_check(cfg.set_spec, cfg.exponents, vcfg)], []


def _lower(cfg, vcfg):
    return [V.lower_construction_check(cfg.set_spec, cfg.exponents, vcfg)], []


def _sigma(cfg, vcfg):
    return [V.sigma_moderate_equality_check(cfg.set_spec, cfg.sample_points(), cfg.exponents, vcfg)], []


def _wiener_points(cfg, check):
    pts = cfg.overrides.get(check, {}).get("points")
    if pts:
        return np.array([[float(c) for c in p.split(",")] for p in pts.split(";") if p.strip()])
    return boundary_samples(cfg.set_spec, cfg.override(check, "count", 12, int))


def _wiener(cfg, vcfg):
    expect = cfg.overrides.get("wiener", {}).get("expect", V.BLOWUP).strip().upper()
    pts = _wiener_points(cfg, "wiener")
    verdicts = [V.wiener_classify(cfg.set_spec, y, cfg.exponents, vcfg) for y in pts]
    cls = [v.classification for v in verdicts]
    wrong = sum(c != expect and c != INCONCLUSIVE for c in cls)
    inc = cls.count(INCONCLUSIVE)
    consistent = all(v.consistent for v in verdicts)
    rep = CheckReport(
        "wiener",
        digest(cfg.digest(), pts),
        {"expected": expect, "classifications": cls, "misclassified": wrong, "inconclusive": inc,
         "consistent": [v.consistent for v in verdicts], "growth": [v.growth_slope for v in verdicts]},
        verdict_of(wrong == 0 and consistent and inc == 0, inconclusive=inc > 0 and wrong == 0),
        vcfg.thresholds(),
    )
    recs = [{"kind": "wiener", "check": "wiener", "sample": i, "verdict": v.record()} for i, v in enumerate(verdicts)]
    return [rep], recs


def _almost_large(cfg, vcfg):
    pts = _wiener_points(cfg, "almost_large")
    thr = cfg.override("almost_large", "threshold", 0.95)
    k = cfg.override("almost_large", "thickness_samples", 10, int)
    return [V.almost_large_fraction(cfg.set_spec, pts, cfg.exponents, vcfg, thr, k)], []


def _continuity(cfg, vcfg):
    balls = [p for p in cfg.set_spec.primitives if isinstance(p, Ball)]
    if not balls:
        raise ConfigParse("continuity needs a ball in the set", "check.continuity")
    b = balls[0]
    angles = cfg.override("continuity", "half_angles", [math.pi / 2 ** j for j in range(2, 7)], list)
    axis = tuple(cfg.override("continuity", "axis", [0.0, 0.0, 1.0], list))
    caps = [SetSpec((SphericalCap(b.center, b.radius, axis, a),)) for a in angles]
    x = cfg.sample_points()[0]
    return [V.capacity_continuity_check(cfg.set_spec, caps, x, cfg.exponents, vcfg)], []


def _ball_sequence(cfg, vcfg):
    return [V.ball_sequence_check(cfg.set_spec, cfg.sample_points(), cfg.exponents, vcfg)], []


def _sum_int(cfg, vcfg):
    gamma = cfg.override("sum_int", "gamma", 0.5)
    i = cfg.override("sum_int", "i", 0, int)
    k = cfg.override("sum_int", "k", 4, int)
    return [sum_int_profile(cfg.set_spec, gamma, (i, k), cfg.exponents, vcfg.capacity)], []


def _scaling(cfg, vcfg):
    factors = cfg.override("capacity_scaling", "factors", [0.25, 0.5, 1.0], list)
    return [capacity_scaling_check(cfg.set_spec, factors, cfg.exponents, vcfg.capacity)], []


def _equivalence(cfg, vcfg):
    return [equivalence_WF_WFstar(cfg.set_spec, cfg.sample_points(), cfg.exponents, vcfg.capacity,
                                  vcfg.refined_capacity)], []


def _ko_slab(cfg, vcfg):
    res = cfg.override("ko_slab", "resolution", 128, int)
    tol = cfg.override("ko_slab", "tolerance", 0.10)
    return [V.ko_slab_check(cfg.exponents, res, tol)], []


def _certification(cfg, vcfg):
    n = cfg.override("certification", "instances", 8, int)
    return [V.certification_suite(cfg.exponents, n, 16, cfg.seed)], []


CHECKS = {
    "two_sided": _two_sided,
    "similarity": _similarity,
    "subadditivity": _subadditivity,
    "removability": _removability,
    "neighborhood": _neighborhood,
    "lower_construction": _lower,
    "sigma_moderate": _sigma,
    "wiener": _wiener,
    "almost_large": _almost_large,
    "continuity": _continuity,
    "ball_sequence": _ball_sequence,
    "sum_int": _sum_int,
    "capacity_scaling": _scaling,
    "equivalence": _equivalence,
    "ko_slab": _ko_slab,
    "certification": _certification,
}


def run_check(cfg: ScenarioConfig, name: str):
    """Run one named check of a scenario; returns (reports, extra records)."""
    if name not in CHECKS:
        raise ConfigParse(f"unknown check {name!r}", "scenario.checks")
    vcfg = verify_config(cfg)
    return CHECKS[name](cfg, vcfg)


def run_config(cfg: ScenarioConfig, out_root=None) -> RunManifest:
    """Execute every listed check; the manifest is flushed even when a check aborts."""
    for c in cfg.checks:
        if c not in CHECKS:
            raise ConfigParse(f"unknown check {c!r}", "scenario.checks")
    out = Path(out_root or cfg.output_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / "reports.jsonl"
    if rec_path.exists():
        rec_path.unlink()
    writer = RecordWriter(rec_path)
    vcfg = verify_config(cfg)
    man = RunManifest(cfg.name, cfg.digest(), __version__, _now(),
                      environment={"workers": cfg.workers, "tolerances": vcfg.thresholds(),
                                   "exponents": [cfg.N, cfg.q]})
    (out / "scenario.ini").write_text(dump_config(cfg))
    error = None

    def handle(name, result):
        reports, extra = result
        for r in reports:
            writer.append({"kind": "report", "check": name, "manifest": man.config_digest, "report": r.to_record()})
            man.check_outcomes.append((name, r.verdict))
        for e in extra:
            writer.append({**e, "manifest": man.config_digest})

    try:
        if cfg.workers > 1 and len(cfg.checks) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futs = [(n, pool.submit(run_check, cfg, n)) for n in cfg.checks]
                for n, f in futs:
                    try:
                        handle(n, f.result())
                    except Exception as exc:  # noqa: BLE001
                        man.check_outcomes.append((n, "ERROR"))
                        error = error or (n, exc)
        else:
            for n in cfg.checks:
                try:
                    handle(n, run_check(cfg, n))
                except Exception as exc:  # noqa: BLE001
                    man.check_outcomes.append((n, "ERROR"))
                    error = error or (n, exc)
                    break
            for n in cfg.checks[len(man.check_outcomes):]:
                man.check_outcomes.append((n, "SKIPPED"))
    finally:
        man.finished_at = _now()
        write_json(out / "manifest.json", man.to_record())
        write_table(out / "summary.tsv", ["check", "verdict"], man.check_outcomes)
    if error is not None:
        raise ScenarioAborted(f"check {error[0]} aborted: {error[1]}") from error[1]
    return man


def run_scenario(path, out_root=None) -> RunManifest:
    return run_config(load_config(path), out_root)


def suite_configs(name: str) -> list:
    if name not in SUITES:
        raise UnknownSuite(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    base = resources.files("capwiener") / "suites" / name
    return sorted((p for p in base.iterdir() if p.name.endswith(".ini")), key=lambda p: p.name)


def run_suite(name: str, out_root=None, workers: int | None = None) -> list:
    manifests = []
    for p in suite_configs(name):
        cfg = load_config(p)
        if workers:
            cfg = replace(cfg, workers=workers)
        root = Path(out_root or cfg.output_dir) / name
        try:
            manifests.append(run_config(cfg, root))
        except ScenarioAborted as exc:
            log.error("%s", exc)
            manifests.append(RunManifest(**read_json(root / cfg.name / "manifest.json")))
    return manifests


# ---------------------------------------------------------------------------
# plot tables
# ---------------------------------------------------------------------------


def emit_plotdata(manifest_path, what: str, out_dir=None) -> list:
    """Delimiter-separated tables for plotting; returns the written paths."""
    if what not in PLOTS:
        raise ValueError(f"unknown plot {what!r}; choose from {', '.join(PLOTS)}")
    mpath = Path(manifest_path)
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    man = read_json(mpath)
    rec_path = mpath.parent / man.get("records", "reports.jsonl")
    records = read_records(rec_path) if man["check_outcomes"] or rec_path.exists() else []
    out_dir = Path(out_dir or mpath.parent)
    written = []
    if what == "potential-terms":
        rows = []
        for r in records:
            if r.get("kind") == "potential":
                for t in r["value"]["terms"]:
                    rows.append((r["check"], r["sample"], t["m"], t["capacity"], t["weight"], t["contribution"]))
        rows.sort(key=lambda x: (x[0], x[1], x[2]))
        p = out_dir / "potential-terms.tsv"
        write_table(p, ["check", "sample", "m", "capacity", "weight", "term"], rows)
        written.append(p)
    elif what == "ratio-bands":
        rows = []
        for r in records:
            if r.get("kind") == "report" and r["report"]["check_name"] == "two_sided":
                levels = r["report"]["quantities"].get("levels", {})
                for res in sorted(levels, key=int):
                    lv = levels[res]
                    for i, (u, w, q) in enumerate(zip(lv["U"], lv["W"], lv["ratio"])):
                        rows.append((int(res), i, u, w, q))
        p = out_dir / "ratio-bands.tsv"
        write_table(p, ["resolution", "sample", "U", "W", "ratio"], rows)
        written.append(p)
    else:
        traces = [r for r in records if r.get("kind") == "wiener"]
        if not traces:
            p = out_dir / "wiener-trace.tsv"
            write_table(p, ["dist", "U"], [])
            written.append(p)
        for r in sorted(traces, key=lambda r: r["sample"]):
            tr = sorted(r["verdict"]["solverTrace"], key=lambda t: -t[0])
            p = out_dir / f"wiener-trace-{r['sample']}.tsv"
            write_table(p, ["dist", "U"], [tuple(t) for t in tr])
            written.append(p)
    return written


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capwiener", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output root (default: the config's output_dir)")
    r.add_argument("--workers", type=int, default=None)
    s = sub.add_parser("suite", help="run a bundled suite")
    s.add_argument("name")
    s.add_argument("--out", default=None)
    s.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("plot", help="emit plot tables from a run")
    p.add_argument("manifest")
    p.add_argument("what", choices=PLOTS)
    p.add_argument("--out", default=None)
    c = sub.add_parser("capacity", help="capacity of an inline set")
    c.add_argument("spec", help='e.g. "ball(0,0,0,0.5)"')
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--N", type=int, default=3)
    c.add_argument("--resolution", type=int, default=48)
    c.add_argument("--tolerance", type=float, default=1e-5)
    return ap


def _print_outcomes(man: RunManifest) -> None:
    for name, verdict in man.check_outcomes:
        print(f"{man.name}\t{name}\t{verdict}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            cfg = load_config(args.config)
            if args.workers:
                cfg = replace(cfg, workers=args.workers)
            man = run_config(cfg, args.out)
            _print_outcomes(man)
            return 1 if man.failed else 0
        if args.cmd == "suite":
            mans = run_suite(args.name, args.out, args.workers or default_workers())
            for m in mans:
                _print_outcomes(m)
            if any(v == "ERROR" for m in mans for _, v in m.check_outcomes):
                return 2
            return 1 if any(m.failed for m in mans) else 0
        if args.cmd == "plot":
            for p in emit_plotdata(args.manifest, args.what, args.out):
                print(p)
            return 0
        if args.cmd == "capacity":
            exp = Exponents(args.q, args.N)
            spec = parse_spec(args.spec)
            cfg = CapacityConfig(tolerance=args.tolerance, window_resolution=args.resolution)
            res = capacity(rasterize(spec, cfg.window(exp.N)), exp, cfg)
            print(f"set\t{format_spec(spec)}")
            print(f"capacity\t{res.value!r}")
            print(f"gap\t{res.duality_gap!r}")
            print(f"iterations\t{res.iterations}")
            print(f"converged\t{res.converged}")
            return 0 if res.converged else 1
    except ConfigParse as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CapWienerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
