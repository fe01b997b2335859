"""Capacitary potentials W_F, W*_F, the thickness functional and the sum-integral profile."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .capacity import CapacityConfig, Exponents, capacity_value
from .report import CheckReport, digest, verdict_of
from .setgeom import SetSpec, dyadic_pieces, rasterize_piece, truncation_indices, without_points


@dataclass(frozen=True)
class PotentialTerm:
    m: int
    annulus_capacity: float
    weight: float
    contribution: float
    gap: float = 0.0
    converged: bool = True


@dataclass
class PotentialValue:
    x: tuple
    variant: str
    terms: list
    total: float
    truncation: tuple
    excluded: int = 0

    def record(self) -> dict:
        i, M = self.truncation
        return {
            "x": list(self.x),
            "variant": self.variant,
            "total": self.total,
            "iOfX": i,
            "MOfX": M,
            "excluded": self.excluded,
            "terms": [
                {"m": t.m, "capacity": t.annulus_capacity, "weight": t.weight, "contribution": t.contribution}
                for t in self.terms
            ],
        }


def truncation_range(spec: SetSpec, x) -> tuple:
    """``(i(x), M(x))``; ``M = inf`` when x lies in F, ``i`` clamped at -8."""
    return truncation_indices(spec, x)


def effective_set(spec: SetSpec, exp: Exponents) -> SetSpec:
    """The set seen by the equation: isolated points are removable for q >= q_c."""
    return without_points(spec) if exp.supercritical else spec


def weight(m: int, exp: Exponents) -> float:
    return 2.0 ** (m * exp.weight_exponent)


def potential(
    spec: SetSpec,
    x,
    variant: str,
    exp: Exponents,
    cfg: CapacityConfig | None = None,
    m_range: tuple | None = None,
) -> PotentialValue:
    """Sum of 2^{2m/(q-1)} C(2^m F_m(x)) over the nonempty rescaled pieces."""
    cfg = cfg or CapacityConfig()
    x = tuple(float(c) for c in np.asarray(x, dtype=float).ravel())
    spec = effective_set(spec, exp)
    if spec.is_empty:
        return PotentialValue(x, variant, [], 0.0, (None, None))
    dec = dyadic_pieces(spec, x, variant, m_range, cfg.window(exp.N))
    terms, excluded, total = [], 0, 0.0
    for e in dec.entries:
        value, gap, _, ok = capacity_value(e.mask, exp, cfg)
        w = weight(e.m, exp)
        if not ok:
            excluded += 1
            terms.append(PotentialTerm(e.m, value, w, 0.0, gap, False))
            continue
        terms.append(PotentialTerm(e.m, value, w, w * value, gap, True))
        total += w * value
    return PotentialValue(x, variant, terms, total, dec.truncation, excluded)


def equivalence_WF_WFstar(
    spec: SetSpec,
    samples,
    exp: Exponents,
    cfg: CapacityConfig | None = None,
    refined: CapacityConfig | None = None,
    tolerance: float = 1e-3,
    stability: float = 0.25,
) -> CheckReport:
    """W_F <= W*_F at every sample, with the largest ratio stable under one window refinement."""
    cfg = cfg or CapacityConfig()
    refined = refined or replace(cfg, window_resolution=int(cfg.window_resolution * 3 // 2))
    out = {}
    flags = 0
    for name, c in (("coarse", cfg), ("fine", refined)):
        ratios, W, Ws = [], [], []
        for x in samples:
            a = potential(spec, x, "annulus", exp, c)
            b = potential(spec, x, "closed-ball", exp, c)
            flags += a.excluded + b.excluded
            W.append(a.total)
            Ws.append(b.total)
            ratios.append(b.total / a.total if a.total > 0 else (1.0 if b.total == 0 else math.inf))
        out[name] = {"W": W, "Wstar": Ws, "ratios": ratios}
    lower_ok = all(
        ws >= w * (1 - tolerance) - 1e-12 for name in out for w, ws in zip(out[name]["W"], out[name]["Wstar"])
    )
    rmax = [max(out[n]["ratios"], default=1.0) for n in ("coarse", "fine")]
    drift = abs(rmax[1] - rmax[0]) / max(rmax[0], 1e-300) if math.isfinite(rmax[0]) else math.inf
    ok = lower_ok and drift < stability and all(math.isfinite(r) for r in rmax)
    return CheckReport(
        "equivalence_WF_WFstar",
        digest(spec, [tuple(np.ravel(s)) for s in samples], exp, cfg, refined),
        {"coarse": out["coarse"], "fine": out["fine"], "max_ratio": rmax, "max_ratio_drift": drift},
        verdict_of(ok, inconclusive=flags > 0),
        {"tolerance": tolerance, "stability": stability},
    )


@dataclass
class ThicknessValue:
    y: tuple
    terms: list
    partial_sums: list
    total: float
    m_max: int
    excluded: int = 0
    pieces: list = field(default_factory=list)


def piece_capacity_unscaled(mask, m: int, exp: Exponents, cfg: CapacityConfig) -> tuple:
    """C(F*_m) at original scale from its 2^m-rescaled mask, via C(tE) = t^{N-2q'} C_{s=t}(E)."""
    t = 2.0 ** (-m)
    value, gap, it, ok = capacity_value(mask, exp, replace(cfg, kernel_scale=t))
    return t ** (exp.N - 2 * exp.qprime) * value, gap, it, ok


def thickness(
    spec: SetSpec, y, exp: Exponents, m_max: int, cfg: CapacityConfig | None = None
) -> ThicknessValue:
    """Partial sum over 0 <= m <= m_max of (2^{2m/(q-1)} C(F*_m(y)))^{q-1}, unrescaled pieces."""
    cfg = cfg or CapacityConfig()
    y = tuple(float(c) for c in np.asarray(y, dtype=float).ravel())
    spec = effective_set(spec, exp)
    if spec.is_empty:
        return ThicknessValue(y, [], [], 0.0, m_max)
    dec = dyadic_pieces(spec, y, "closed-ball", (0, m_max), cfg.window(exp.N))
    terms, sums, total, excluded, pieces = [], [], 0.0, 0, []
    for e in dec.entries:
        c, gap, _, ok = piece_capacity_unscaled(e.mask, e.m, exp, cfg)
        term = (weight(e.m, exp) * c) ** (exp.q - 1)
        if not ok:
            excluded += 1
            term = 0.0
        total += term
        terms.append((e.m, term))
        pieces.append((e.m, c))
        sums.append(total)
    return ThicknessValue(y, terms, sums, total, m_max, excluded, pieces)


def profile(spec: SetSpec, t: float, exp: Exponents, cfg: CapacityConfig) -> float:
    """phi(t) = C(t^{-1}(K ∩ closed ball B_t(0)))."""
    spec = effective_set(spec, exp)
    if spec.is_empty:
        return 0.0
    mask = rasterize_piece(spec, np.zeros(exp.N), t, "closed-ball", cfg.window(exp.N))
    return capacity_value(mask, exp, cfg)[0]


def _sum_int(spec, gamma, i, k, exp, cfg, density):
    r = lambda m: 2.0 ** (-m)
    lower = sum(r(m) ** gamma * profile(spec, r(m), exp, cfg) for m in range(i + 1, k + 1))
    upper = sum(r(m - 1) ** gamma * profile(spec, r(m - 1), exp, cfg) for m in range(i + 1, k + 1))
    du = math.log(2.0) / density
    integral = 0.0
    for m in range(i + 1, k + 1):
        for j in range(density):
            t = r(m) * 2.0 ** ((j + 0.5) / density)
            integral += t**gamma * profile(spec, t, exp, cfg) * du
    return lower, integral, upper


def sum_int_profile(
    spec: SetSpec,
    gamma: float,
    index_range: tuple,
    exp: Exponents,
    cfg: CapacityConfig | None = None,
    density: int = 4,
    stability: float = 0.25,
) -> CheckReport:
    """Compare the dyadic sums of r^gamma phi(r) with the integral of t^gamma phi(t) dt/t."""
    cfg = cfg or CapacityConfig()
    i, k = index_range
    if not i < k:
        raise ValueError("need i < k")
    runs = {}
    for d in (density, 2 * density):
        lower, integral, upper = _sum_int(spec, gamma, i, k, exp, cfg, d)
        if integral > 0:
            c = max(lower / integral, integral / upper, 1.0)
        else:
            c = 1.0 if lower == upper == 0 else math.inf
        runs[d] = {"lower_sum": lower, "integral": integral, "upper_sum": upper, "c": c}
    c1, c2 = runs[density]["c"], runs[2 * density]["c"]
    drift = abs(c2 - c1) / c1 if math.isfinite(c1) else math.inf
    ok = math.isfinite(c1) and math.isfinite(c2) and drift < stability
    return CheckReport(
        "sum_int_profile",
        digest(spec, gamma, index_range, exp, cfg, density),
        {"gamma": gamma, "range": [i, k], "runs": {str(d): v for d, v in runs.items()}, "c": max(c1, c2),
         "c_drift": drift},
        verdict_of(ok),
        {"stability": stability, "density": density},
        "c is the smallest constant making both one-sided inequalities hold",
    )
