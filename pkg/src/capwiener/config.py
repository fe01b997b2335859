"""Scenario configuration: a sectioned key/value text file (configparser).

Example::

    [scenario]
    name = ball-suite
    q = 4
    N = 3
    seed = 0
    checks = two_sided, similarity, wiener

    [grid]
    R = 4.0
    resolution = 64

    [set]
    spec = ball(0, 0, 0, 1)

    [samples]
    kind = shell
    count = 20
    r_min = 1.5
    r_max = 2.0

    [check.similarity]
    a = 2

Inline set syntax: primitives separated by ``;``, each ``kind(numbers...)``::

    ball(cx, cy, cz, r)
    box(lx, ly, lz, hx, hy, hz)
    segment(ax, ay, az, bx, by, bz, thickness)
    points(x1, y1, z1, x2, y2, z2, ...)
    cantor(generation, ratio[, cx, cy, cz, half_width])
    ballseq(cx, cy, cz, r, cx, cy, cz, r, ...)
    cap(cx, cy, cz, radius, ax, ay, az, half_angle)
"""
from __future__ import annotations

import configparser
import io
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .capacity import Exponents
from .errors import ConfigParse
from .report import digest
from .setgeom import (
    Ball,
    BallSequence,
    Box,
    DyadicCantor,
    PointCloud,
    Segment,
    SetSpec,
    SphericalCap,
    fibonacci_sphere,
)

WORKERS_ENV = "CAPWIENER_WORKERS"
_NAME = re.compile(r"^[A-Za-z][A-Za-z0-9_.-]*$")
_PRIM = re.compile(r"^\s*([a-z]+)\s*\((.*)\)\s*$")


def _fmt(v: float) -> str:
    return repr(float(v))


def _split(vals, k):
    return [tuple(vals[i:i + k]) for i in range(0, len(vals), k)]


def parse_spec(text: str) -> SetSpec:
    """Inline primitive list to a SetSpec."""
    prims = []
    for chunk in (c for c in text.split(";") if c.strip()):
        m = _PRIM.match(chunk)
        if not m:
            raise ValueError(f"cannot parse primitive {chunk.strip()!r}")
        kind = m.group(1)
        try:
            v = [float(x) for x in m.group(2).split(",") if x.strip()]
        except ValueError as exc:
            raise ValueError(f"non-numeric argument in {chunk.strip()!r}") from exc
        prims.append(_build(kind, v, chunk.strip()))
    return SetSpec(tuple(prims))


def _need(v, n, what):
    if len(v) != n:
        raise ValueError(f"{what} expects {n} numbers, got {len(v)}")


def _build(kind, v, src):
    if kind == "ball":
        _need(v, 4, src)
        return Ball(tuple(v[:3]), v[3])
    if kind == "box":
        _need(v, 6, src)
        return Box(tuple(v[:3]), tuple(v[3:]))
    if kind == "segment":
        _need(v, 7, src)
        return Segment(tuple(v[:3]), tuple(v[3:6]), v[6])
    if kind == "points":
        if not v or len(v) % 3:
            raise ValueError(f"{src} expects a multiple of 3 numbers")
        return PointCloud(tuple(_split(v, 3)))
    if kind == "cantor":
        if len(v) == 2:
            return DyadicCantor(int(v[0]), v[1])
        _need(v, 6, src)
        return DyadicCantor(int(v[0]), v[1], tuple(v[2:5]), v[5])
    if kind == "ballseq":
        if not v or len(v) % 4:
            raise ValueError(f"{src} expects a multiple of 4 numbers")
        rows = _split(v, 4)
        return BallSequence(tuple(r[:3] for r in rows), tuple(r[3] for r in rows))
    if kind == "cap":
        _need(v, 8, src)
        return SphericalCap(tuple(v[:3]), v[3], tuple(v[4:7]), v[7])
    raise ValueError(f"unknown primitive kind {kind!r}")


def format_spec(spec: SetSpec) -> str:
    out = []
    for p in spec.primitives:
        if isinstance(p, Ball):
            v, k = [*p.center, p.radius], "ball"
        elif isinstance(p, Box):
            v, k = [*p.lo, *p.hi], "box"
        elif isinstance(p, Segment):
            v, k = [*p.a, *p.b, p.thickness], "segment"
        elif isinstance(p, PointCloud):
            v, k = [c for pt in p.points for c in pt], "points"
        elif isinstance(p, DyadicCantor):
            v, k = [p.generation, p.ratio, *p.center, p.half_width], "cantor"
        elif isinstance(p, BallSequence):
            v, k = [c for cen, r in zip(p.centers, p.radii) for c in (*cen, r)], "ballseq"
        elif isinstance(p, SphericalCap):
            v, k = [*p.center, p.radius, *p.axis, p.half_angle], "cap"
        else:
            raise TypeError(f"cannot format {type(p).__name__}")
        out.append(f"{k}({', '.join(_fmt(x) for x in v)})")
    return "; ".join(out)


@dataclass(frozen=True)
class GridParams:
    R: float = 4.0
    resolution: int = 64
    refined_resolution: int = 80
    window_resolution: int = 32
    refined_window_resolution: int = 48
    wiener_R: float = 6.0


@dataclass(frozen=True)
class SampleRule:
    """How sample points are produced; ``kind`` is shell, points or none."""

    kind: str = "none"
    count: int = 0
    r_min: float = 1.5
    r_max: float = 2.0
    points: tuple = ()
    jitter: float = 0.0

    def generate(self, seed: int, dimension: int = 3) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((0, dimension))
        if self.kind == "points":
            return np.array(self.points, dtype=float).reshape(-1, dimension)
        rng = np.random.default_rng(seed)
        dirs = fibonacci_sphere(self.count)
        if self.jitter:
            dirs = dirs + self.jitter * rng.normal(size=dirs.shape)
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = np.linspace(self.r_min, self.r_max, self.count) if self.count > 1 else np.array([self.r_min])
        return dirs * rad[:, None]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    q: float
    N: int
    grid: GridParams
    set_spec: SetSpec
    samples: SampleRule
    checks: tuple = ()
    overrides: dict = field(default_factory=dict)
    output_dir: str = "out"
    workers: int = 1
    seed: int = 0

    @property
    def exponents(self) -> Exponents:
        return Exponents(self.q, self.N)

    def sample_points(self) -> np.ndarray:
        return self.samples.generate(self.seed, self.N)

    def semantic(self) -> tuple:
        """Fields that determine the numerical results (workers and output_dir excluded)."""
        ov = tuple(sorted((k, tuple(sorted(v.items()))) for k, v in self.overrides.items()))
        return (self.name, self.q, self.N, self.grid, format_spec(self.set_spec), self.samples, self.checks, ov,
                self.seed)

    def digest(self) -> str:
        return digest(self.semantic())

    def override(self, check: str, key: str, default=None, kind=float):
        raw = self.overrides.get(check, {}).get(key)
        if raw is None:
            return default
        try:
            if kind is list:
                return [float(x) for x in raw.split(",") if x.strip()]
            return kind(raw)
        except ValueError as exc:
            raise ConfigParse(f"bad value {raw!r}", f"check.{check}.{key}") from exc


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _line_of(text: str, section: str, key: str | None):
    cur = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
            if key is None and cur == section:
                return i
            continue
        if cur == section and key is not None and re.match(rf"^{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigParse(str(exc), None, getattr(exc, "lineno", None)) from exc

    def get(section, key, conv, default=None, required=False):
        if not cp.has_option(section, key):
            if required:
                raise ConfigParse(f"missing required field {section}.{key}", f"{section}.{key}",
                                  _line_of(text, section, None))
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigParse(f"bad value {raw!r}: {exc}", f"{section}.{key}", _line_of(text, section, key)) from exc

    if not cp.has_section("scenario"):
        raise ConfigParse("missing [scenario] section", "scenario", None)
    name = get("scenario", "name", str, required=True).strip()
    if not _NAME.match(name):
        raise ConfigParse(f"invalid scenario name {name!r}", "scenario.name", _line_of(text, "scenario", "name"))
    q = get("scenario", "q", float, required=True)
    if not q > 1:
        raise ConfigParse(f"q must exceed 1, got {q}", "scenario.q", _line_of(text, "scenario", "q"))
    N = get("scenario", "N", int, 3)
    if N < 3:
        raise ConfigParse("N must be at least 3", "scenario.N", _line_of(text, "scenario", "N"))
    seed = get("scenario", "seed", int, 0)
    workers = get("scenario", "workers", int, None) or default_workers()
    out = get("scenario", "output_dir", str, "out")
    checks = tuple(c.strip() for c in get("scenario", "checks", str, "").split(",") if c.strip())

    g = GridParams()
    grid = GridParams(
        R=get("grid", "R", float, g.R),
        resolution=get("grid", "resolution", int, g.resolution),
        refined_resolution=get("grid", "refined_resolution", int, g.refined_resolution),
        window_resolution=get("grid", "window_resolution", int, g.window_resolution),
        refined_window_resolution=get("grid", "refined_window_resolution", int, g.refined_window_resolution),
        wiener_R=get("grid", "wiener_R", float, g.wiener_R),
    )
    for key in ("resolution", "refined_resolution", "window_resolution", "refined_window_resolution"):
        if getattr(grid, key) < 16:
            raise ConfigParse(f"{key} must be at least 16", f"grid.{key}", _line_of(text, "grid", key))
    if grid.R <= 0:
        raise ConfigParse("R must be positive", "grid.R", _line_of(text, "grid", "R"))

    spec = get("set", "spec", parse_spec, SetSpec(()))
    if spec.rho > grid.R / 2:
        raise ConfigParse("set escapes B_(R/2)", "set.spec", _line_of(text, "set", "spec"))

    def pts(raw):
        rows = [r for r in raw.split(";") if r.strip()]
        return tuple(tuple(float(x) for x in r.split(",")) for r in rows)

    kind = get("samples", "kind", str, "none").strip()
    if kind not in ("none", "shell", "points"):
        raise ConfigParse(f"unknown sample kind {kind!r}", "samples.kind", _line_of(text, "samples", "kind"))
    rule = SampleRule(
        kind=kind,
        count=get("samples", "count", int, 0),
        r_min=get("samples", "r_min", float, 1.5),
        r_max=get("samples", "r_max", float, 2.0),
        points=get("samples", "points", pts, ()),
        jitter=get("samples", "jitter", float, 0.0),
    )
    overrides = {}
    for sec in cp.sections():
        if sec.startswith("check."):
            overrides[sec[len("check."):]] = dict(cp.items(sec))
    cfg = ScenarioConfig(name, q, N, grid, spec, rule, checks, overrides, out, workers, seed)
    P = cfg.sample_points()
    if P.size:
        if P.shape[1] != N:
            raise ConfigParse("sample dimension differs from N", "samples", _line_of(text, "samples", None))
        if np.any(np.linalg.norm(P, axis=1) > grid.R / 2 + 1e-12):
            raise ConfigParse("samples must lie inside B_(R/2)", "samples", _line_of(text, "samples", None))
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: ScenarioConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["scenario"] = {
        "name": cfg.name, "q": _fmt(cfg.q), "N": str(cfg.N), "seed": str(cfg.seed), "workers": str(cfg.workers),
        "output_dir": cfg.output_dir, "checks": ", ".join(cfg.checks),
    }
    g = cfg.grid
    cp["grid"] = {"R": _fmt(g.R), "resolution": str(g.resolution), "refined_resolution": str(g.refined_resolution),
                  "window_resolution": str(g.window_resolution),
                  "refined_window_resolution": str(g.refined_window_resolution), "wiener_R": _fmt(g.wiener_R)}
    cp["set"] = {"spec": format_spec(cfg.set_spec)}
    s = cfg.samples
    samp = {"kind": s.kind, "count": str(s.count), "r_min": _fmt(s.r_min), "r_max": _fmt(s.r_max),
            "jitter": _fmt(s.jitter)}
    if s.points:
        samp["points"] = "; ".join(", ".join(_fmt(c) for c in p) for p in s.points)
    cp["samples"] = samp
    for name, items in sorted(cfg.overrides.items()):
        cp[f"check.{name}"] = dict(items)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
