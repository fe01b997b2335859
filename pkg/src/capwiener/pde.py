"""Finite-difference solvers for -Δu + u^q = μ on node grids.

The 7-point (2N+1-point) Laplacian on a domain mask gives an M-matrix, so the
discrete problems inherit the comparison principle.  Dirichlet data live on the
non-domain nodes adjacent to the domain; "infinite" data are replaced by the
cap ``ko_profile(h/2)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .capacity import Exponents, MeasureOnGrid
from .errors import DegenerateDomain, InconsistentGrid, LinearSolveStalled, NewtonDiverged
from .setgeom import GridContext, GridField, GridMask, SetSpec, without_points

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_newton: int = 60
    newton_tol: float = 1e-7
    damping: float = 0.7
    lin_tol: float = 1e-10
    max_linear: int = 400
    schedule_tol: float = 0.25

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class BoundarySpec:
    """Dirichlet data on the whole grid; nodes in ``blowup`` take the schedule values instead."""

    dirichlet: np.ndarray | None = None
    blowup: np.ndarray | None = None
    schedule: tuple = ()

    def __post_init__(self):
        s = tuple(float(v) for v in self.schedule)
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("blow-up schedule must be strictly increasing")
        object.__setattr__(self, "schedule", s)

    def data(self, shape, level: int | None = None) -> np.ndarray:
        g = np.zeros(shape) if self.dirichlet is None else np.array(self.dirichlet, dtype=float)
        if self.blowup is not None and self.schedule:
            lev = len(self.schedule) - 1 if level is None else level
            g = np.where(self.blowup, self.schedule[lev], g)
        return g


def ko_constant(exp: Exponents) -> float:
    q = exp.q
    return (2 * (q + 1) / (q - 1) ** 2) ** (1 / (q - 1))


def ko_profile(t, exp: Exponents):
    """Exact half-line blow-up profile c_q t^{-2/(q-1)}."""
    t = np.asarray(t, dtype=float)
    out = ko_constant(exp) * t ** (-2.0 / (exp.q - 1))
    return out if out.ndim else float(out)


def ball_torsion(x, R: float, N: int = 3):
    """Radial solution of -Δφ = 1 in B_R(0), φ = 0 on the sphere: (R² - |x|²)/(2N), zero outside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = np.sum(x**2, axis=1)
    return np.maximum(R * R - r2, 0.0) / (2 * N)


# ---------------------------------------------------------------------------
# discrete operator
# ---------------------------------------------------------------------------


class DiscreteLaplacian:
    """-Δ_h restricted to the domain nodes, with boundary coupling to the other nodes."""

    def __init__(self, domain: GridMask):
        ctx = domain.context
        self.context = ctx
        self.domain = domain
        shape = ctx.shape
        ind = domain.indicator.copy()
        for ax in ctx.periodic:
            sl = [slice(None)] * ind.ndim
            sl[ax] = -1
            ind[tuple(sl)] = False  # last node duplicates node 0
        if not ind.any():
            raise DegenerateDomain("domain has no nodes")
        for ax in range(ind.ndim):
            if ax in ctx.periodic:
                continue
            if np.take(ind, 0, axis=ax).any() or np.take(ind, -1, axis=ax).any():
                raise InconsistentGrid("domain touches the grid faces")
        self.active = ind
        ids = np.flatnonzero(ind)
        self.ids = ids
        index = -np.ones(int(np.prod(shape)), dtype=np.int64)
        index[ids] = np.arange(ids.size)
        coords = np.array(np.unravel_index(ids, shape))
        h2 = ctx.h**2
        rows, cols, b_rows, b_flat = [], [], [], []
        per = np.array(shape)
        for ax in range(ctx.dimension):
            for s in (-1, 1):
                c = coords.copy()
                c[ax] += s
                if ax in ctx.periodic:
                    c[ax] %= per[ax] - 1
                fl = np.ravel_multi_index(tuple(c), shape)
                j = index[fl]
                inside = j >= 0
                rows.append(np.flatnonzero(inside))
                cols.append(j[inside])
                b_rows.append(np.flatnonzero(~inside))
                b_flat.append(fl[~inside])
        n = ids.size
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        off = sp.csr_matrix((np.full(r.size, -1.0 / h2), (r, c)), shape=(n, n))
        self.matrix = (off + sp.identity(n, format="csr") * (2 * ctx.dimension / h2)).tocsr()
        self.b_rows = np.concatenate(b_rows)
        self.b_flat = np.concatenate(b_flat)
        self.n = n

    def boundary_term(self, data: np.ndarray) -> np.ndarray:
        b = np.zeros(self.n)
        np.add.at(b, self.b_rows, data.ravel()[self.b_flat] / self.context.h**2)
        return b

    def boundary_nodes(self) -> np.ndarray:
        out = np.zeros(self.context.shape, dtype=bool)
        out.ravel()[self.b_flat] = True
        return out

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return full.ravel()[self.ids]

    def extend(self, u: np.ndarray, data: np.ndarray) -> np.ndarray:
        out = np.array(data, dtype=float).copy()
        out.ravel()[self.ids] = u
        for ax in self.context.periodic:
            src = [slice(None)] * out.ndim
            dst = [slice(None)] * out.ndim
            src[ax] = 0
            dst[ax] = -1
            out[tuple(dst)] = out[tuple(src)]
        return out


def _linear_solve(A, b, x0, cfg: SolverConfig, rtol: float | None = None):
    """Jacobi-preconditioned CG; smoothed-aggregation AMG takes over if CG stalls."""
    if not np.any(b):
        return np.zeros_like(b)
    rtol = cfg.lin_tol if rtol is None else rtol
    M = sp.diags(1.0 / A.diagonal())
    x, info = cg(A, b, x0=x0, rtol=rtol, maxiter=cfg.max_linear * 10, M=M)
    if info == 0:
        return x
    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
    x = ml.solve(b, x0=x, tol=rtol, accel="cg", maxiter=cfg.max_linear)
    rel = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    if rel > max(10 * rtol, 1e-12):
        raise LinearSolveStalled(f"linear residual {rel:.3g}")
    return x


def _newton(op: DiscreteLaplacian, b: np.ndarray, q: float, u0: np.ndarray, cfg: SolverConfig):
    L = op.matrix
    u = np.maximum(u0, 0.0)
    F = L @ u + u**q - b
    res = [float(np.abs(F).max())]
    # large densities put a rounding floor under the absolute residual
    tol = max(cfg.newton_tol, 1e3 * np.finfo(float).eps * float(np.abs(b).max(initial=0.0)))
    for _ in range(cfg.max_newton):
        if res[-1] <= tol:
            return u, res
        J = (L + sp.diags(q * u ** (q - 1))).tocsr()
        # inexact Newton: the forcing term shrinks with the residual
        rtol = max(cfg.lin_tol, min(1e-3, res[-1] / max(res[0], 1e-300)))
        du = _linear_solve(J, -F, None, cfg, rtol)
        t = 1.0
        norm0 = np.linalg.norm(F)
        while True:
            un = np.maximum(u + t * du, 0.0)
            Fn = L @ un + un**q - b
            if np.linalg.norm(Fn) < norm0 or t < 1e-6:
                break
            t *= cfg.damping
        u, F = un, Fn
        res.append(float(np.abs(F).max()))
        if not np.isfinite(res[-1]):
            raise NewtonDiverged("non-finite residual", res)
    if res[-1] <= tol:
        return u, res
    raise NewtonDiverged(f"residual {res[-1]:.3g} after {cfg.max_newton} Newton steps", res)


def _rhs_density(op: DiscreteLaplacian, rhs: MeasureOnGrid | None) -> np.ndarray:
    if rhs is None or rhs.weights.size == 0:
        return np.zeros(op.n)
    if rhs.context.key() != op.context.key():
        raise InconsistentGrid("measure and domain live on different grids")
    dens = rhs.density()
    outside = dens.ravel()[op.b_flat].sum() + dens[~op.domain.indicator].sum()
    if outside > 0:
        raise InconsistentGrid("measure has atoms outside the domain")
    return op.restrict(dens)


def solve_semilinear(
    domain: GridMask,
    exp: Exponents,
    rhs: MeasureOnGrid | None = None,
    bc: BoundarySpec | None = None,
    cfg: SolverConfig | None = None,
    initial: np.ndarray | None = None,
    level: int | None = None,
    operator: DiscreteLaplacian | None = None,
) -> GridField:
    """Unique nonnegative solution of -Δ_h u + u^q = μ_h with Dirichlet data."""
    cfg = cfg or SolverConfig()
    op = operator or DiscreteLaplacian(domain)
    bc = bc or BoundarySpec()
    data = bc.data(domain.context.shape, level)
    b = op.boundary_term(data) + _rhs_density(op, rhs)
    u0 = np.zeros(op.n) if initial is None else op.restrict(initial)
    u, res = _newton(op, b, exp.q, u0, cfg)
    return GridField(domain.context, op.extend(u, data), domain, {"residuals": res})


def residual(field: GridField, exp: Exponents, rhs: MeasureOnGrid | None = None) -> float:
    """Sup-norm residual of the discrete equation at the domain nodes."""
    op = DiscreteLaplacian(field.domain)
    u = op.restrict(field.values)
    b = op.boundary_term(field.values) + _rhs_density(op, rhs)
    return float(np.abs(op.matrix @ u + u**exp.q - b).max())


def default_schedule(cap: float, levels: int = 4) -> tuple:
    return tuple(cap * 2.0 ** (k - levels + 1) for k in range(levels))


def large_solution(
    domain: GridMask,
    exp: Exponents,
    schedule: tuple | None = None,
    cfg: SolverConfig | None = None,
    blowup: np.ndarray | None = None,
    dirichlet: np.ndarray | None = None,
    rhs: MeasureOnGrid | None = None,
) -> GridField:
    """Continuation in increasing boundary data M_1 < ... < M_K on the blow-up nodes.

    ``info`` holds the per-level increments and ``schedule_too_short`` when the
    last relative increment away from the blow-up boundary exceeds ``cfg.schedule_tol``.
    """
    cfg = cfg or SolverConfig()
    ctx = domain.context
    cap = ko_profile(ctx.h / 2, exp)
    schedule = tuple(schedule) if schedule is not None else default_schedule(cap)
    if schedule[-1] > cap * (1 + 1e-12):
        raise ValueError("largest schedule level exceeds ko_profile(h/2)")
    if blowup is None:
        blowup = ~domain.indicator
    bc = BoundarySpec(dirichlet, blowup, schedule)
    op = DiscreteLaplacian(domain)
    from scipy import ndimage

    far = ndimage.distance_transform_edt(~blowup, sampling=ctx.h) >= 4 * ctx.h
    far &= domain.indicator
    prev = None
    increments, monotone = [], True
    field_ = None
    for k in range(len(schedule)):
        field_ = solve_semilinear(domain, exp, rhs, bc, cfg, initial=prev, level=k, operator=op)
        if prev is not None:
            diff = field_.values - prev
            monotone &= bool(np.all(diff[domain.indicator] >= -1e-9 * max(1.0, np.abs(prev).max())))
            base = np.abs(prev[far]).max() if far.any() else 0.0
            increments.append(float(np.abs(diff[far]).max() / base) if base > 0 else 0.0)
        prev = field_.values
    last = increments[-1] if increments else 0.0
    field_.info.update(
        {"schedule": list(schedule), "increments": increments, "monotone_in_k": monotone,
         "schedule_too_short": last > cfg.schedule_tol, "cap": cap}
    )
    if last > cfg.schedule_tol:
        log.warning("last schedule increment %.3g exceeds %.3g", last, cfg.schedule_tol)
    return field_


def ball_grid(R: float, resolution: int, dimension: int = 3) -> GridContext:
    """Cube grid holding B_R with a two-cell margin."""
    h = 2 * R / (resolution - 4)
    return GridContext.cube(R + 2 * h, resolution, dimension)


def exhaustion_levels(h: float, final_factor: float = 0.5) -> list:
    """eps_n = max(final_factor*h, 2^-n), ending at final_factor*h."""
    eps, n = [], 1
    floor = final_factor * h
    while True:
        e = max(floor, 2.0 ** (-n))
        eps.append(e)
        if e <= floor:
            return eps
        n += 1


def maximal_solution(
    spec: SetSpec,
    R: float,
    exp: Exponents,
    cfg: SolverConfig | None = None,
    resolution: int = 64,
    grid: GridContext | None = None,
    stop_rel: float = 0.01,
    levels: list | None = None,
    final_factor: float = 0.5,
) -> GridField:
    """Maximal solution of the complement of F truncated to B_R (zero data on the sphere).

    Levels D_n = {dist(., F) > eps_n} ∩ B_R with eps_n = max(h/2, 2^-n); each level
    is a large solution on the F side, warm-started from the previous one.
    """
    cfg = cfg or SolverConfig()
    grid = grid or ball_grid(R, resolution, exp.N)
    if spec.rho > R / 2 + 1e-12:
        raise ValueError("F must lie inside B_{R/2}")
    if exp.supercritical:
        spec = without_points(spec)
    h = grid.h
    r = grid.radius()
    if spec.is_empty:
        f = GridField(grid, np.zeros(grid.shape), GridMask(grid, r < R))
        f.info.update({"exhaustion": [], "monotone_in_n": True, "R": R, "cap": ko_profile(h / 2, exp)})
        return f
    dist = spec.distance(grid.coords()) * np.ones(grid.shape)
    inner = r < R
    levels = levels or exhaustion_levels(h, final_factor)
    cap = ko_profile(h / 2, exp)
    trace, prev, prev_dom, field_ = [], None, None, None
    monotone = True
    eval_region = r <= R / 2
    for eps in levels:
        dom = inner & (dist > eps)
        if not dom.any():
            raise DegenerateDomain(f"exhaustion level eps={eps:.3g} is empty")
        blow = dist <= eps
        init = None
        if prev is not None:
            init = np.where(dom & ~prev_dom, cap, prev)
        field_ = large_solution(
            GridMask(grid, dom), exp, (cap,), cfg, blowup=blow, dirichlet=np.zeros(grid.shape)
        ) if init is None else _large_from(GridMask(grid, dom), exp, cap, cfg, blow, init)
        rel = None
        if prev is not None:
            common = prev_dom & eval_region & (dist > eps_prev + 2 * h)
            monotone &= bool(np.all(field_.values[prev_dom] <= prev[prev_dom] + 1e-9 * cap))
            base = np.abs(prev[common]).max() if common.any() else 0.0
            rel = float(np.abs(field_.values[common] - prev[common]).max() / base) if base > 0 else 0.0
        trace.append({"eps": eps, "rel_change": rel, "nodes": int(dom.sum())})
        prev, prev_dom, eps_prev = field_.values, dom, eps
        if rel is not None and rel < stop_rel:
            break
    field_.info.update({"exhaustion": trace, "monotone_in_n": monotone, "R": R, "cap": cap})
    return field_


def _large_from(domain, exp, cap, cfg, blow, init):
    bc = BoundarySpec(np.zeros(domain.context.shape), blow, (cap,))
    f = solve_semilinear(domain, exp, None, bc, cfg, initial=init)
    f.info.update({"schedule": [cap], "increments": [], "cap": cap})
    return f


def green_potential(domain: GridMask, mu: MeasureOnGrid, cfg: SolverConfig | None = None) -> GridField:
    """Solution of -Δ_h G = μ_h with zero boundary data."""
    cfg = cfg or SolverConfig()
    op = DiscreteLaplacian(domain)
    b = _rhs_density(op, mu)
    x = _linear_solve(op.matrix, b, None, cfg)
    if np.any(b) and np.linalg.norm(op.matrix @ x - b) > max(1e3 * cfg.lin_tol, 1e-8) * np.linalg.norm(b):
        raise LinearSolveStalled("Poisson solve did not reach the tolerance")
    return GridField(domain.context, op.extend(x, np.zeros(domain.context.shape)), domain)


def ball_domain(grid: GridContext, R: float, center=None) -> GridMask:
    c = np.zeros(grid.dimension) if center is None else np.asarray(center, dtype=float)
    r = np.sqrt(sum((x - x0) ** 2 for x, x0 in zip(grid.coords(), c)))
    return GridMask(grid, r < R)


def solve_measure_wholebox(
    mu: MeasureOnGrid, exp: Exponents, R: float, cfg: SolverConfig | None = None
) -> GridField:
    """u_μ with zero data on the sphere |x| = R (grid of μ).

    ``info['stabilization_bound']`` is ko_profile(R/2): on B_{R/2} the change
    caused by enlarging R is a subsolution dominated by the large solution of B_R.
    """
    dom = ball_domain(mu.context, R)
    if mu.weights.size and np.any(np.linalg.norm(mu.points(), axis=1) >= R / 2):
        raise ValueError("measure must be supported inside B_{R/2}")
    f = solve_semilinear(dom, exp, mu, None, cfg)
    f.info["stabilization_bound"] = ko_profile(R / 2, exp)
    return f


def sigma_moderate_limit(
    spec: SetSpec,
    exhaustion: list,
    exp: Exponents,
    cfg: SolverConfig | None = None,
    R: float = 4.0,
    resolution: int = 64,
    samples=None,
) -> GridField:
    """Increasing limit of maximal solutions of the compacts K_n ⊂ F."""
    grid = ball_grid(R, resolution, exp.N)
    vals, fields = [], []
    prev = None
    increments, monotone = [], True
    field_ = None
    for K in exhaustion:
        field_ = maximal_solution(K, R, exp, cfg, grid=grid)
        if prev is not None:
            region = (grid.radius() <= R / 2) & field_.domain.indicator & prev.domain.indicator
            monotone &= bool(np.all(field_.values[region] >= prev.values[region] - 1e-8))
            increments.append(float(np.abs(field_.values[region] - prev.values[region]).max()))
        if samples is not None:
            vals.append(field_.sample(samples).tolist())
        prev = field_
    field_.info.update({"increments": increments, "monotone_in_n": monotone, "sample_trace": vals})
    return field_
