"""Named numerical checks of the estimates relating U_F, W_F and capacities.

Every check returns a :class:`CheckReport`.  Theoretical constants are never asserted
numerically: they are fitted from the data and accepted only together with a
stability clause (one grid refinement or a doubled quadrature).
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .capacity import (
    CapacityConfig,
    Exponents,
    MeasureOnGrid,
    bessel_potential,
    capacity,
    capacity_value,
)
from .dyadic import effective_set, potential, thickness
from .errors import NotConverged
from .pde import (
    BoundarySpec,
    SolverConfig,
    ball_domain,
    ball_grid,
    exhaustion_levels,
    green_potential,
    ko_profile,
    large_solution,
    maximal_solution,
    residual,
    solve_semilinear,
)
from .report import FAIL, INCONCLUSIVE, PASS, CheckReport, digest, verdict_of
from .setgeom import (
    Ball,
    GridContext,
    GridMask,
    SetSpec,
    dyadic_pieces,
    fibonacci_sphere,
    rasterize,
    scale_spec,
    union_specs,
)

__all__ = [
    "CheckReport",
    "VerifyConfig",
    "WienerVerdict",
    "two_sided_report",
    "similarity_check",
    "subadditivity_check",
    "removability_check",
    "neighborhood_check",
    "lower_construction_check",
    "sigma_moderate_equality_check",
    "wiener_classify",
    "almost_large_fraction",
    "capacity_continuity_check",
    "ball_sequence_check",
    "ko_slab_check",
    "certification_suite",
]

BLOWUP = "BLOWUP"
BOUNDED = "BOUNDED"


@dataclass(frozen=True)
class VerifyConfig:
    """Resolutions and thresholds shared by the checks.

    ``resolution``/``capacity`` form the coarse level, ``refined_resolution``/
    ``refined_capacity`` the one-step refinement used by stability clauses.
    """

    R: float = 4.0
    resolution: int = 64
    refined_resolution: int = 80
    capacity: CapacityConfig = field(default_factory=lambda: CapacityConfig(window_resolution=32))
    refined_capacity: CapacityConfig = field(default_factory=lambda: CapacityConfig(window_resolution=48))
    solver: SolverConfig = field(default_factory=SolverConfig)
    theta_grow: float = 1.15
    theta_tail: float = 0.05
    m_max: int = 12
    stability: float = 0.25
    discretization_tol: float = 0.02
    blowup_factor: float = 10.0
    wiener_R: float = 6.0
    stop_rel: float = 0.0

    def __post_init__(self):
        if self.m_max < 12:
            raise ValueError("m_max must be at least 12")
        if not 0 < self.theta_tail < 1 < self.theta_grow:
            raise ValueError("need 0 < theta_tail < 1 < theta_grow")

    def levels(self):
        return ((self.resolution, self.capacity), (self.refined_resolution, self.refined_capacity))

    def thresholds(self) -> dict:
        return {"theta_grow": self.theta_grow, "theta_tail": self.theta_tail, "m_max": self.m_max,
                "stability": self.stability, "discretization_tol": self.discretization_tol}


# maximal solutions are reused by several checks on the same scenario
_FIELDS: "OrderedDict[tuple, object]" = OrderedDict()
_FIELDS_SIZE = 12


def _maximal(spec: SetSpec, R: float, exp: Exponents, vcfg: VerifyConfig, resolution: int, grid=None, levels=None):
    grid = grid or ball_grid(R, resolution, exp.N)
    key = (spec.digest(), R, grid.key(), exp.q, exp.N, vcfg.solver, vcfg.stop_rel,
           None if levels is None else tuple(levels))
    if key in _FIELDS:
        _FIELDS.move_to_end(key)
        return _FIELDS[key]
    f = maximal_solution(spec, R, exp, vcfg.solver, grid=grid, stop_rel=vcfg.stop_rel, levels=levels)
    _FIELDS[key] = f
    while len(_FIELDS) > _FIELDS_SIZE:
        _FIELDS.popitem(last=False)
    return f


def clear_fields() -> None:
    _FIELDS.clear()


def _points(samples) -> np.ndarray:
    return np.atleast_2d(np.asarray(samples, dtype=float))


def _check_exterior(spec: SetSpec, pts: np.ndarray, R: float) -> None:
    for x in pts:
        if spec.distance_to(x) <= 0:
            raise ValueError(f"sample {tuple(x)} lies in F")
        if np.linalg.norm(x) > R / 2 + 1e-12:
            raise ValueError(f"sample {tuple(x)} lies outside B_(R/2)")


def _drift(a: float, b: float) -> float:
    if a == b:
        return 0.0
    if not (math.isfinite(a) and math.isfinite(b)) or a <= 0:
        return math.inf
    return abs(b / a - 1.0)


def _mask_capacity(mask: GridMask, exp: Exponents, cfg: CapacityConfig) -> tuple:
    return capacity_value(mask, exp, cfg)


def _pde_mask(spec: SetSpec, grid: GridContext, exp: Exponents) -> GridMask:
    """The blow-up node set used by the maximal solution at its final level."""
    spec = effective_set(spec, exp)
    if spec.is_empty:
        return GridMask(grid, np.zeros(grid.shape, dtype=bool))
    return rasterize(spec, grid)


# ---------------------------------------------------------------------------
# two-sided estimate, similarity, subadditivity
# ---------------------------------------------------------------------------


def two_sided_report(spec: SetSpec, samples, exp: Exponents, vcfg: VerifyConfig | None = None) -> CheckReport:
    """Band of U_F/W_F over the samples at two resolutions."""
    vcfg = vcfg or VerifyConfig()
    pts = _points(samples)
    _check_exterior(spec, pts, vcfg.R)
    levels, flags = {}, 0
    for res, ccfg in vcfg.levels():
        U = _maximal(spec, vcfg.R, exp, vcfg, res).sample(pts)
        pots = [potential(spec, x, "annulus", exp, ccfg) for x in pts]
        flags += sum(p.excluded for p in pots)
        W = np.array([p.total for p in pots])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(W > 0, U / np.where(W > 0, W, 1.0), np.where(U > 0, np.inf, 1.0))
        levels[res] = {"U": U, "W": W, "ratio": ratio,
                       "band": (float(ratio.min()), float(ratio.max())),
                       "far_field": U * np.linalg.norm(pts, axis=1) ** exp.weight_exponent}
    (rc, lc), (rf, lf) = [(r, levels[r]) for r, _ in vcfg.levels()]
    q = {"samples": pts, "levels": {str(k): v for k, v in levels.items()}}
    if effective_set(spec, exp).is_empty or (not np.any(lc["W"]) and not np.any(lc["U"])):
        small = max(float(np.abs(v["U"]).max()) for v in levels.values())
        q["max_U"] = small
        return CheckReport("two_sided", digest(spec, pts, exp, vcfg), q, verdict_of(small <= 1e-8),
                           vcfg.thresholds(), "zero-capacity set: ratio skipped, absolute smallness asserted")
    lo_c, hi_c = lc["band"]
    lo_f, hi_f = lf["band"]
    drift = max(_drift(lo_c, lo_f), _drift(hi_c, hi_f))
    c = max(hi_c, hi_f, 1 / lo_c if lo_c > 0 else math.inf, 1 / lo_f if lo_f > 0 else math.inf)
    q.update({"band_coarse": lc["band"], "band_fine": lf["band"], "c": c, "band_drift": drift})
    ok = math.isfinite(c) and drift < vcfg.stability
    return CheckReport("two_sided", digest(spec, pts, exp, vcfg), q, verdict_of(ok, flags > 0), vcfg.thresholds(),
                       "ratio U/W per sample; band [min, max] at both resolutions")


def similarity_check(
    spec: SetSpec, a: float, samples, exp: Exponents, vcfg: VerifyConfig | None = None, tolerance: float = 0.07
) -> CheckReport:
    """U_F(x) against a^{-2/(q-1)} U_{F/a}(x/a) with the grid scaled along with the set."""
    vcfg = vcfg or VerifyConfig()
    if a <= 0:
        raise ValueError("a must be positive")
    pts = _points(samples)
    _check_exterior(spec, pts, vcfg.R)
    small = scale_spec(spec, a)
    grid = ball_grid(vcfg.R, vcfg.resolution, exp.N)
    grid_a = ball_grid(vcfg.R / a, vcfg.resolution, exp.N)
    lev = exhaustion_levels(grid.h)
    U = _maximal(spec, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid, levels=lev).sample(pts)
    Ua = _maximal(small, vcfg.R / a, exp, vcfg, vcfg.resolution, grid=grid_a,
                  levels=[e / a for e in lev]).sample(pts / a)
    pred = a ** (-exp.weight_exponent) * Ua
    with np.errstate(divide="ignore", invalid="ignore"):
        mism = np.where(U > 0, np.abs(pred - U) / np.where(U > 0, U, 1.0), np.abs(pred))
    worst = float(mism.max()) if mism.size else 0.0
    return CheckReport(
        "similarity",
        digest(spec, a, pts, exp, vcfg),
        {"a": a, "exponent": exp.weight_exponent, "U": U, "predicted": pred, "mismatch": mism, "max_mismatch": worst},
        verdict_of(worst <= tolerance),
        {"tolerance": tolerance, "resolution": vcfg.resolution},
        "matched resolution: the grid spacing of the F/a problem is h/a",
    )


def subadditivity_check(specs, samples, exp: Exponents, vcfg: VerifyConfig | None = None) -> CheckReport:
    """max U_{E_i} <= U_E <= sum U_{E_i}, nodewise on B_{R/2} and at the samples."""
    vcfg = vcfg or VerifyConfig()
    specs = list(specs)
    E = union_specs(specs)
    pts = _points(samples)
    _check_exterior(E, pts, vcfg.R)
    grid = ball_grid(vcfg.R, vcfg.resolution, exp.N)
    UE = _maximal(E, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid)
    parts = [_maximal(s, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid) for s in specs]
    tol, abs_tol = vcfg.discretization_tol, vcfg.solver.newton_tol
    region = UE.domain.indicator & (grid.radius() <= vcfg.R / 2)
    ue = UE.values[region]
    mx = np.max([p.values[region] for p in parts], axis=0)
    sm = np.sum([p.values[region] for p in parts], axis=0)
    lower_viol = int(np.sum(mx > ue * (1 + tol) + abs_tol))
    upper_viol = int(np.sum(ue > sm * (1 + tol) + abs_tol))
    s_ue = UE.sample(pts)
    s_parts = np.array([p.sample(pts) for p in parts])
    s_lower = bool(np.all(s_parts.max(axis=0) <= s_ue * (1 + tol) + abs_tol))
    s_upper = bool(np.all(s_ue <= s_parts.sum(axis=0) * (1 + tol) + abs_tol))
    ok = lower_viol == 0 and upper_viol == 0 and s_lower and s_upper
    return CheckReport(
        "subadditivity",
        digest([s.digest() for s in specs], pts, exp, vcfg),
        {
            "nodes": int(region.sum()),
            "lower_violations": lower_viol,
            "upper_violations": upper_viol,
            "U_E": s_ue,
            "U_parts": s_parts,
            "max_lower_gap": float(np.max(ue - mx)) if ue.size else 0.0,
            "max_upper_gap": float(np.max(sm - ue)) if ue.size else 0.0,
        },
        verdict_of(ok),
        {"relative": tol, "absolute": abs_tol},
    )


# ---------------------------------------------------------------------------
# removability and the neighbourhood bound
# ---------------------------------------------------------------------------


def removability_check(specs, exp: Exponents, vcfg: VerifyConfig | None = None, R: float = 2.5) -> CheckReport:
    """sup over 3/2 < |x| < R of U_{K_j} against the capacity of the same discrete K_j.

    R is smaller than the shared default so that the smallest K_j still covers several nodes.
    """
    vcfg = vcfg or VerifyConfig()
    if R <= 1.5:
        raise ValueError("R must exceed 3/2")
    specs = list(specs)
    for K in specs:
        if K.rho >= 1.0:
            raise ValueError("K_j must lie in B_1")
    out, flags, ratios = {}, 0, []
    mono = True
    for res, ccfg in vcfg.levels():
        grid = ball_grid(R, res, exp.N)
        r = grid.radius()
        ann = (r > 1.5) & (r < R)
        sups, caps = [], []
        for K in specs:
            f = _maximal(K, R, exp, vcfg, res, grid=grid)
            sups.append(float(f.values[ann].max()))
            v, _, _, ok = _mask_capacity(_pde_mask(K, grid, exp), exp, ccfg)
            flags += not ok
            caps.append(v)
        rat = [s / c if c > 0 else (0.0 if s == 0 else math.inf) for s, c in zip(sups, caps)]
        mono &= all(b <= a * (1 + vcfg.discretization_tol) for a, b in zip(sups, sups[1:]))
        mono &= all(b <= a * (1 + vcfg.discretization_tol) for a, b in zip(caps, caps[1:]))
        out[str(res)] = {"sup_U": sups, "capacity": caps, "ratio": rat}
        ratios += [x for x, c in zip(rat, caps) if c > 0]
    if not ratios:
        return CheckReport("removability", digest([s.digest() for s in specs], exp, vcfg), out,
                           verdict_of(all(s == 0 for v in out.values() for s in v["sup_U"])), vcfg.thresholds(),
                           "all sets have zero capacity")
    drift = (max(ratios) - min(ratios)) / min(ratios) if min(ratios) > 0 else math.inf
    out.update({"monotone": mono, "c1": max(ratios), "ratio_drift": drift})
    return CheckReport(
        "removability",
        digest([s.digest() for s in specs], exp, vcfg),
        out,
        verdict_of(mono and drift < vcfg.stability, flags > 0),
        vcfg.thresholds(),
        "capacity is that of the blow-up node set of each solve; drift pools all j and both resolutions",
    )


def neighborhood_check(K: SetSpec, exp: Exponents, vcfg: VerifyConfig | None = None) -> CheckReport:
    """Level set N_K = {eta >= 1 - alpha} of the capacity optimizer; C(N_K) <= 4 C(K) and int U_K off N_K."""
    vcfg = vcfg or VerifyConfig()
    alpha = 1 - 2.0 ** (-1 / exp.qprime)
    if effective_set(K, exp).is_empty:
        return CheckReport("neighborhood", digest(K, exp, vcfg), {"alpha": alpha, "capacity_K": 0.0},
                           PASS, vcfg.thresholds(), "empty set")
    if K.rho >= 1.0:
        raise ValueError("K must lie in B_1")
    out, flags, cs, ok1 = {}, 0, [], True
    for res, ccfg in vcfg.levels():
        grid = ball_grid(vcfg.R, res, exp.N)
        r = grid.radius()
        mask = _pde_mask(K, grid, exp)
        cres = capacity(mask, exp, ccfg)
        cB, _, _, okB = _mask_capacity(rasterize(SetSpec((Ball((0.0,) * exp.N, 1.0),)), grid), exp, ccfg)
        flags += (not cres.converged) + (not okB)
        if cres.value > cB / 8:
            raise ValueError(f"capacity(K)={cres.value:.4g} exceeds capacity(B_1)/8={cB / 8:.4g}")
        eta = bessel_potential(cres.primal_density, ccfg.kernel_scale).values
        NK = ((eta >= 1 - alpha) & (r < 1)) | mask.indicator
        cN, _, _, okN = _mask_capacity(GridMask(grid, NK), exp, ccfg)
        flags += not okN
        U = _maximal(K, vcfg.R, exp, vcfg, res, grid=grid)
        off = (r < 1) & ~NK & U.domain.indicator
        integral = float(U.values[off].sum() * grid.h**exp.N)
        c = integral / cres.value
        ok1 &= cN <= 4 * cres.value * (1 + vcfg.discretization_tol)
        cs.append(c)
        out[str(res)] = {"capacity_K": cres.value, "capacity_B1": cB, "capacity_NK": cN,
                         "NK_nodes": int(NK.sum()), "integral": integral, "c": c}
    drift = _drift(cs[0], cs[1])
    out.update({"alpha": alpha, "c_drift": drift})
    return CheckReport("neighborhood", digest(K, exp, vcfg), out, verdict_of(ok1 and drift < vcfg.stability, flags > 0),
                       vcfg.thresholds(), "eta is the kernel potential of the primal optimizer")


# ---------------------------------------------------------------------------
# lower construction and sigma-moderate solutions
# ---------------------------------------------------------------------------


def _construction_measure(F: SetSpec, grid: GridContext, exp: Exponents, ccfg: CapacityConfig):
    """mu = sum_n 2^{-n(N-2q')} nu_n(2^n .), nu_n the capacitary measure of 2^n F_n(0)."""
    dec = dyadic_pieces(F, np.zeros(exp.N), "annulus", None, ccfg.window(exp.N))
    mu = MeasureOnGrid.zero(grid)
    info, flags = [], 0
    for e in dec.entries:
        if e.m < 0 or e.mask.is_empty:
            continue
        cres = capacity(e.mask, exp, ccfg)
        flags += not cres.converged
        nu = cres.dual_measure
        part = nu.transfer(grid, 2.0 ** (-e.m)).scaled(2.0 ** (-e.m * (exp.N - 2 * exp.qprime)))
        mu = mu + part
        info.append({"n": e.m, "capacity": cres.value, "mass": part.total_mass})
    return mu, info, flags


def lower_construction_check(F: SetSpec, exp: Exponents, vcfg: VerifyConfig | None = None) -> CheckReport:
    """G_D[mu](0), G_D[G_D[mu]^q](0) and u_{eps mu}(0) against W_F(0), D = B_2."""
    vcfg = vcfg or VerifyConfig()
    F = effective_set(F, exp)
    if F.is_empty:
        return CheckReport("lower_construction", digest(F, exp, vcfg),
                           {"G_mu": 0.0, "G_Gq": 0.0, "u_eps": 0.0, "W": 0.0}, PASS, vcfg.thresholds(), "empty set")
    if F.rho >= 1.0:
        raise ValueError("F must lie in B_1")
    origin = np.zeros(exp.N)
    if F.distance_to(origin) <= 0:
        raise ValueError("the evaluation point 0 lies in F")
    out, consts, flags = {}, [], 0
    for res, ccfg in vcfg.levels():
        grid = ball_grid(2.0, res, exp.N)
        dom = ball_domain(grid, 2.0)
        W = potential(F, origin, "annulus", exp, ccfg)
        flags += W.excluded
        mu, pieces, fl = _construction_measure(F, grid, exp, ccfg)
        flags += fl
        G = green_potential(dom, mu, vcfg.solver)
        g0 = float(G.sample(origin[None])[0])
        dens = np.where(dom.indicator, G.values, 0.0) ** exp.q * grid.h**exp.N
        G2 = green_potential(dom, MeasureOnGrid.from_dense(grid, dens), vcfg.solver)
        g2 = float(G2.sample(origin[None])[0])
        c_low, c_up = g0 / W.total, g2 / W.total
        eps = (c_low / (2 * c_up)) ** (1 / (exp.q - 1))
        u = solve_semilinear(dom, exp, mu.scaled(eps), None, vcfg.solver)
        u0 = float(u.sample(origin[None])[0])
        c_prime = u0 / W.total
        consts.append((c_low, c_up, c_prime))
        out[str(res)] = {
            "W": W.total, "G_mu": g0, "G_Gq": g2, "eps": eps, "u_eps": u0,
            "c_low": c_low, "c_up": c_up, "c_prime": c_prime,
            "chain_bound": eps * g0 - eps**exp.q * g2, "pieces": pieces, "mass": mu.total_mass,
        }
    drifts = [_drift(a, b) for a, b in zip(*consts)]
    chain = all(out[str(r)]["u_eps"] >= out[str(r)]["chain_bound"] * (1 - vcfg.discretization_tol)
                for r, _ in vcfg.levels())
    out.update({"drift": {"c_low": drifts[0], "c_up": drifts[1], "c_prime": drifts[2]}, "chain_holds": chain})
    ok = all(d < vcfg.stability for d in drifts) and all(c > 0 for c in consts[0]) and chain
    return CheckReport("lower_construction", digest(F, exp, vcfg), out, verdict_of(ok, flags > 0), vcfg.thresholds(),
                       "eps = (c_low / 2 c_up)^(1/(q-1)) from the fitted constants")


def _tau(compacts, grid, exp, ccfg):
    """tau = sum_n a_n mu_n, a_n = 2^-n / ||mu_n||, mu_n capacitary measure of K_n on the PDE grid."""
    tau = MeasureOnGrid.zero(grid)
    flags = 0
    for n, K in enumerate(compacts, start=1):
        mask = _pde_mask(K, grid, exp)
        if mask.is_empty:
            continue
        cres = capacity(mask, exp, ccfg)
        flags += not cres.converged
        norm = cres.value ** (1 / exp.q)
        tau = tau + cres.dual_measure.scaled(2.0**-n / norm)
    return tau, flags


def sigma_moderate_equality_check(
    F: SetSpec,
    samples,
    exp: Exponents,
    vcfg: VerifyConfig | None = None,
    exhaustion=None,
    delta: float = 0.15,
    k_factor: float = 4.0,
    max_steps: int = 24,
    stop: float = 0.005,
) -> CheckReport:
    """Increasing limit of u_{k tau} against the maximal solution at the samples.

    On the grid an atom of infinite mass drags its neighbours to infinity, so
    u_{k tau} creeps upward without converging; the continuation therefore
    stops once every sample has reached U_F (or the change stalls).
    """
    vcfg = vcfg or VerifyConfig()
    pts = _points(samples)
    _check_exterior(F, pts, vcfg.R)
    grid = ball_grid(vcfg.R, vcfg.resolution, exp.N)
    U = _maximal(F, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid).sample(pts)
    tau, flags = _tau(exhaustion or [F], grid, exp, vcfg.capacity)
    if tau.total_mass == 0:
        ok = float(np.abs(U).max(initial=0.0)) <= 1e-8
        return CheckReport("sigma_moderate_equality", digest(F, pts, exp, vcfg), {"U": U, "limit": np.zeros_like(U)},
                           verdict_of(ok), {"delta": delta}, "zero-capacity set")
    dom = ball_domain(grid, vcfg.R)
    safe_U = np.where(U > 0, U, 1.0)
    k, prev, trace, mono = 1.0, None, [], True
    vals = None
    for _ in range(max_steps):
        f = solve_semilinear(dom, exp, tau.scaled(k), None, vcfg.solver, initial=prev)
        vals = f.sample(pts)
        if prev is not None:
            slack = 10 * vcfg.solver.newton_tol + 1e-9 * np.abs(prev)
            mono &= bool(np.all(f.values >= prev - slack))
        change = None if not trace else float(np.max(np.abs(vals - trace[-1][1]) / np.maximum(vals, 1e-300)))
        trace.append((k, vals))
        prev = f.values
        if np.all(vals >= safe_U) or (change is not None and change < stop):
            break
        k *= k_factor
    ratio = vals / safe_U
    ok = bool(np.all(ratio >= 1 - delta)) and mono
    return CheckReport(
        "sigma_moderate_equality",
        digest(F, pts, exp, vcfg),
        {"U": U, "limit": vals, "ratio": ratio, "min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()),
         "monotone_in_k": mono, "k_final": k, "k_trace": [(kk, v) for kk, v in trace], "tau_mass": tau.total_mass},
        verdict_of(ok, flags > 0),
        {"delta": delta, "stop": stop},
    )


# ---------------------------------------------------------------------------
# Wiener criterion and thickness
# ---------------------------------------------------------------------------


@dataclass
class WienerVerdict:
    y: tuple
    partial_sums: list
    growth_slope: float
    classification: str
    solver_trace: list
    terms: list = field(default_factory=list)
    tail_fraction: float = 0.0
    consistent: bool = True
    thresholds: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "y": list(self.y),
            "partialSums": list(self.partial_sums),
            "growthSlope": self.growth_slope,
            "classification": self.classification,
            "solverTrace": [list(p) for p in self.solver_trace],
            "terms": [list(t) for t in self.terms],
            "tailFraction": self.tail_fraction,
            "consistent": self.consistent,
            "thresholds": self.thresholds,
        }


def _ray_direction(spec: SetSpec, y: np.ndarray, probe: float) -> np.ndarray:
    cand = np.vstack([fibonacci_sphere(200, 1.0, (0.0,) * len(y))])
    if np.linalg.norm(y) > 0:
        cand = np.vstack([y / np.linalg.norm(y), cand])
    d = [spec.distance_to(y + probe * c) for c in cand]
    return cand[int(np.argmax(d))]


def classify_terms(terms, m_max: int, theta_grow: float, theta_tail: float) -> tuple:
    """(classification, growth rate, tail fraction, partial sums) from per-annulus terms."""
    sums, s = [], 0.0
    for _, t in terms:
        s += t
        sums.append(s)
    total = s
    half = m_max / 2
    if total <= 0:
        return BOUNDED, 1.0, 0.0, sums
    tail = sum(t for m, t in terms if m > half)
    head = sum(t for m, t in terms if m <= half)
    span = m_max - half
    rate = (total / head) ** (1 / span) if head > 0 else math.inf
    frac = tail / total
    if rate >= theta_grow:
        return BLOWUP, rate, frac, sums
    if frac < theta_tail:
        return BOUNDED, rate, frac, sums
    return INCONCLUSIVE, rate, frac, sums


def wiener_classify(
    spec: SetSpec, y, exp: Exponents, vcfg: VerifyConfig | None = None, capacity_cfg: CapacityConfig | None = None,
    direction=None,
) -> WienerVerdict:
    """Classify y by the growth of the W_F(y) terms and attach U_F along a ray ending at y."""
    vcfg = vcfg or VerifyConfig()
    ccfg = capacity_cfg or vcfg.capacity
    y = np.asarray(y, dtype=float)
    if spec.distance_to(y) > 1e-12:
        raise ValueError("y must belong to F")
    pot = potential(spec, y, "annulus", exp, ccfg, m_range=(-10**6, vcfg.m_max))
    terms = [(t.m, t.contribution) for t in pot.terms]
    cls, rate, frac, sums = classify_terms(terms, vcfg.m_max, vcfg.theta_grow, vcfg.theta_tail)
    if pot.excluded:
        cls = INCONCLUSIVE
    R = vcfg.wiener_R
    if np.linalg.norm(y) > R / 2:
        raise ValueError("y must lie inside B_(R/2)")
    U = _maximal(spec, R, exp, vcfg, vcfg.resolution)
    h = U.context.h
    n = np.asarray(direction, float) if direction is not None else _ray_direction(effective_set(spec, exp) if not
                                                                             effective_set(spec, exp).is_empty else spec,
                                                                             y, 4 * h)
    n = n / np.linalg.norm(n)
    b = float(y @ n)
    d_far = -b + math.sqrt(b * b - float(y @ y) + (R / 2) ** 2)
    ds = np.unique(np.concatenate([np.geomspace(h / 4, d_far, 40), [4 * h]]))
    vals = U.sample(y[None] + ds[:, None] * n[None])
    trace = [(float(d), float(v)) for d, v in zip(ds, vals)]
    near = float(vals[ds <= 4 * h + 1e-12].max())
    at4h = float(vals[np.argmin(np.abs(ds - 4 * h))])
    far = float(vals[-1])
    if cls == BLOWUP:
        consistent = near >= vcfg.blowup_factor * far
    elif cls == BOUNDED:
        consistent = near < vcfg.blowup_factor * far + 1e-8
    else:
        consistent = True
    return WienerVerdict(
        tuple(float(c) for c in y), sums, rate, cls, trace, terms, frac, bool(consistent),
        {**vcfg.thresholds(), "near": near, "far": far, "at_4h": at4h, "blowup_factor": vcfg.blowup_factor},
    )


def almost_large_fraction(
    spec: SetSpec,
    boundary_samples,
    exp: Exponents,
    vcfg: VerifyConfig | None = None,
    threshold: float = 0.95,
    thickness_samples: int = 10,
    capacity_cfg: CapacityConfig | None = None,
) -> CheckReport:
    """Fraction of boundary samples classified BLOWUP, and Lambda <= c W^min(1,q-1) with c fitted."""
    vcfg = vcfg or VerifyConfig()
    ccfg = capacity_cfg or vcfg.capacity
    pts = _points(boundary_samples)
    verdicts = [wiener_classify(spec, y, exp, vcfg, ccfg) for y in pts]
    n_blow = sum(v.classification == BLOWUP for v in verdicts)
    n_inc = sum(v.classification == INCONCLUSIVE for v in verdicts)
    frac = n_blow / len(verdicts) if verdicts else 0.0
    qt = min(1.0, exp.q - 1)
    fits = {}
    k = min(thickness_samples, len(pts))
    fine = vcfg.refined_capacity
    if capacity_cfg is not None:
        fine = replace(ccfg, window_resolution=ccfg.window_resolution * 3 // 2)
    for name, c in (("coarse", ccfg), ("fine", fine)):
        cs = []
        for y in pts[:k]:
            lam = thickness(spec, y, exp, vcfg.m_max, c).total
            W = potential(spec, y, "annulus", exp, c, m_range=(-10**6, vcfg.m_max)).total
            cs.append(lam / W**qt if W > 0 else (0.0 if lam == 0 else math.inf))
        fits[name] = cs
    c_coarse = max(fits["coarse"], default=0.0)
    c_fine = max(fits["fine"], default=0.0)
    drift = _drift(c_coarse, c_fine)
    thk_ok = k == 0 or (math.isfinite(c_coarse) and drift < vcfg.stability)
    ok = frac >= threshold and thk_ok
    return CheckReport(
        "almost_large",
        digest(spec, pts, exp, vcfg, ccfg),
        {"fraction_blowup": frac, "inconclusive": n_inc, "n": len(verdicts),
         "classifications": [v.classification for v in verdicts],
         "consistent": [v.consistent for v in verdicts],
         "thickness_c": {"coarse": c_coarse, "fine": c_fine}, "thickness_c_per_sample": fits,
         "thickness_c_drift": drift},
        verdict_of(ok),
        {**vcfg.thresholds(), "threshold": threshold},
        "Lambda and W are partial sums up to m_max",
    )


# ---------------------------------------------------------------------------
# continuity with respect to capacity
# ---------------------------------------------------------------------------


def capacity_continuity_check(
    F: SetSpec, subsets, x, exp: Exponents, vcfg: VerifyConfig | None = None, theta_abs: float = 0.1
) -> CheckReport:
    """V_{E_j}(x) should vanish with capacity(E_j) when W_F(x) is finite."""
    vcfg = vcfg or VerifyConfig()
    x = np.asarray(x, dtype=float)
    _check_exterior(F, x[None], vcfg.R)
    W = potential(F, x, "annulus", exp, vcfg.capacity)
    if not math.isfinite(W.total):
        raise ValueError("W_F(x) must be finite")
    grid = ball_grid(vcfg.R, vcfg.resolution, exp.N)
    VF = float(_maximal(F, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid).sample(x[None])[0])
    V, caps, flags = [], [], 0
    for E in subsets:
        V.append(float(_maximal(E, vcfg.R, exp, vcfg, vcfg.resolution, grid=grid).sample(x[None])[0]))
        c, _, _, ok = _mask_capacity(_pde_mask(E, grid, exp), exp, vcfg.capacity)
        flags += not ok
        caps.append(c)
    order = np.argsort(caps)[::-1]
    Vs = np.array(V)[order]
    mono = bool(np.all(Vs[1:] <= Vs[:-1] * (1 + vcfg.discretization_tol) + vcfg.solver.newton_tol))
    slope = float(np.polyfit(caps, V, 1)[0]) if len(V) > 1 else math.nan
    final = V[-1] / VF if VF > 0 else math.inf
    ok = mono and slope > 0 and final < theta_abs
    return CheckReport(
        "capacity_continuity",
        digest(F, [s.digest() for s in subsets], x, exp, vcfg),
        {"W_F": W.total, "V_F": VF, "V": V, "capacity": caps, "slope": slope, "final_fraction": final,
         "monotone": mono},
        verdict_of(ok, flags > 0),
        {"theta_abs": theta_abs, "discretization_tol": vcfg.discretization_tol},
    )


def ball_sequence_check(
    spec: SetSpec, samples, exp: Exponents, vcfg: VerifyConfig | None = None, n_max: int | None = None,
    after: int = 4, ratio: float = 0.7,
) -> CheckReport:
    """Increments of the limit over the prefixes K_n of a BallSequence decay geometrically at the samples."""
    from .pde import sigma_moderate_limit
    from .setgeom import BallSequence

    vcfg = vcfg or VerifyConfig()
    seqs = [p for p in spec.primitives if isinstance(p, BallSequence)]
    if len(seqs) != 1 or len(spec.primitives) != 1:
        raise ValueError("spec must consist of a single BallSequence")
    seq = seqs[0]
    pts = _points(samples)
    _check_exterior(spec, pts, vcfg.R)
    n_max = n_max or len(seq.radii)
    prefixes = [SetSpec((seq.prefix(n),)) for n in range(1, n_max + 1)]
    f = sigma_moderate_limit(spec, prefixes, exp, vcfg.solver, R=vcfg.R, resolution=vcfg.resolution, samples=pts)
    vals = np.array(f.info["sample_trace"])
    inc = np.abs(np.diff(vals, axis=0)).max(axis=1) if len(vals) > 1 else np.zeros(0)
    floor = 10 * vcfg.solver.newton_tol
    # inc[k] is the change from K_{k+1} to K_{k+2}
    checks = []
    for k in range(1, len(inc)):
        n = k + 2
        if n > after:
            checks.append(bool(inc[k] <= ratio * inc[k - 1] + floor))
    ok = all(checks) and bool(f.info["monotone_in_n"])
    return CheckReport(
        "ball_sequence",
        digest(spec, pts, exp, vcfg, n_max),
        {"sample_values": vals, "increments": inc, "ratios": [b / a if a > 0 else 0.0 for a, b in zip(inc, inc[1:])],
         "monotone_in_n": f.info["monotone_in_n"], "radii": seq.radii[:n_max]},
        verdict_of(ok),
        {"ratio": ratio, "after": after, "floor": floor},
        "increment n is the largest change at the samples when ball n joins",
    )


# ---------------------------------------------------------------------------
# solver-level checks
# ---------------------------------------------------------------------------


def ko_slab_check(exp: Exponents, resolution: int = 128, tolerance: float = 0.10, cfg: SolverConfig | None = None,
                  t_max: float = 0.25) -> CheckReport:
    """Large solution of the slab |x_1| < 1 against c_q t^{-2/(q-1)} for t in [4h, t_max]."""
    h = 2.0 / (resolution - 3)
    w = 1 + 1.5 * h
    grid = GridContext((-w, 0.0, 0.0), (w, 16 * h, 16 * h), (resolution, 16, 16), periodic=(1, 2))
    x = grid.axes()[0]
    dom = np.broadcast_to((np.abs(x) < 1)[:, None, None], grid.shape)
    f = large_solution(GridMask(grid, dom), exp, cfg=cfg)
    t = 1 - np.abs(x)
    sel = (t >= 4 * h - 1e-9) & (t <= t_max + 1e-9)
    ratio = f.values[sel, 0, 0] / ko_profile(t[sel], exp)
    worst = float(np.abs(ratio - 1).max())
    return CheckReport(
        "ko_slab",
        digest(exp, resolution, tolerance, t_max),
        {"h": h, "t": t[sel], "ratio": ratio, "max_deviation": worst, "increments": f.info["increments"],
         "schedule_too_short": f.info["schedule_too_short"]},
        verdict_of(worst <= tolerance),
        {"tolerance": tolerance, "t_range": [4 * h, t_max]},
    )


def certification_suite(
    exp: Exponents, instances: int = 8, resolution: int = 16, seed: int = 0, cfg: SolverConfig | None = None
) -> CheckReport:
    """Comparison principle, residuals, Green symmetry and monotone exhaustion on random small problems."""
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(seed)
    grid = GridContext.cube(1.0, resolution, exp.N)
    r = grid.radius()
    results = {"comparison": [], "residual": [], "green_symmetry": [], "exhaustion": []}
    for _ in range(instances):
        # random star-shaped domain inside the box
        dirs = rng.normal(size=(4, exp.N))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        amp = rng.uniform(-0.15, 0.15, 4)
        cos = sum(a * np.clip(sum(d[i] * c for i, c in enumerate(grid.coords())) / np.maximum(r, 1e-12), -1, 1)
                  for a, d in zip(amp, dirs))
        dom = GridMask(grid, r < 0.75 * (1 + cos))
        g1 = rng.uniform(0, 2, grid.shape)
        g2 = g1 + rng.uniform(0, 1, grid.shape)
        idx = np.flatnonzero(dom.indicator)
        pick = rng.choice(idx, size=3, replace=False)
        m1 = MeasureOnGrid(grid, pick, rng.uniform(0, 1e-2, 3))
        m2 = MeasureOnGrid(grid, pick, m1.weights + rng.uniform(0, 1e-2, 3))
        u1 = solve_semilinear(dom, exp, m1, BoundarySpec(g1), cfg)
        u2 = solve_semilinear(dom, exp, m2, BoundarySpec(g2), cfg)
        results["comparison"].append(bool(np.all(u1.values <= u2.values + 10 * cfg.newton_tol)))
        results["residual"].append(max(residual(u1, exp, m1), residual(u2, exp, m2)) <= cfg.newton_tol)
        a, b = rng.choice(idx, size=2, replace=False)
        ga = green_potential(dom, MeasureOnGrid(grid, [a], [1.0]), cfg).values.ravel()
        gb = green_potential(dom, MeasureOnGrid(grid, [b], [1.0]), cfg).values.ravel()
        results["green_symmetry"].append(abs(ga[b] - gb[a]) <= 1e-6 * max(abs(ga[b]), 1e-300))
        c = rng.uniform(-0.1, 0.1, exp.N)
        F = SetSpec((Ball(tuple(c), float(rng.uniform(0.05, 0.2))),))
        U = maximal_solution(F, 0.9, exp, cfg, grid=ball_grid(0.9, resolution, exp.N), stop_rel=0.0)
        results["exhaustion"].append(bool(U.info["monotone_in_n"]))
    rates = {k: sum(v) / len(v) for k, v in results.items()}
    ok = all(r == 1.0 for r in rates.values())
    return CheckReport("certification", digest(exp, instances, resolution, seed, cfg), {"pass_rate": rates,
                       "results": results}, verdict_of(ok), {"newton_tol": cfg.newton_tol, "resolution": resolution})
