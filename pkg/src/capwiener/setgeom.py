"""Symbolic target sets, uniform node grids, rasterization and dyadic pieces.

Every primitive knows its exact Euclidean distance function, so masks are
obtained by thresholding distances instead of by sampling.  Grids are node
grids: an axis with ``n`` cells carries ``n + 1`` nodes ``lo + i*h``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptySet, InconsistentGrid, SpecOutOfBox

# Inner cutoff for the dyadic index; see ``truncation_indices``.
I_CLAMP = -8


def _vec(p) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(-1)


def _norm(coords: Sequence[np.ndarray]) -> np.ndarray:
    return np.sqrt(sum(c * c for c in coords))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius >= 0:
            raise ValueError("Ball radius must be nonnegative")

    def distance(self, coords):
        r = _norm([c - x0 for c, x0 in zip(coords, self.center)])
        return np.maximum(r - self.radius, 0.0)

    def dist_range(self, x):
        d = float(np.linalg.norm(_vec(x) - _vec(self.center)))
        return max(d - self.radius, 0.0), d + self.radius

    def bounds(self):
        c = _vec(self.center)
        return c - self.radius, c + self.radius

    def components(self):
        return [self]

    def mapped(self, a, origin):
        o = _vec(origin)
        return Ball(tuple(o + (_vec(self.center) - o) / a), self.radius / a)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if len(self.lo) != len(self.hi) or any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("Box needs lo <= hi componentwise")

    def distance(self, coords):
        sq = 0.0
        for c, a, b in zip(coords, self.lo, self.hi):
            e = np.maximum(np.maximum(a - c, c - b), 0.0)
            sq = sq + e * e
        return np.sqrt(sq)

    def dist_range(self, x):
        x = _vec(x)
        lo, hi = _vec(self.lo), _vec(self.hi)
        near = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        far = np.maximum(np.abs(x - lo), np.abs(x - hi))
        return float(np.linalg.norm(near)), float(np.linalg.norm(far))

    def bounds(self):
        return _vec(self.lo), _vec(self.hi)

    def components(self):
        return [self]

    def mapped(self, a, origin):
        o = _vec(origin)
        return Box(tuple(o + (_vec(self.lo) - o) / a), tuple(o + (_vec(self.hi) - o) / a))


@dataclass(frozen=True)
class Segment:
    """Closed segment ``[a, b]`` thickened by the tube radius ``thickness``."""

    a: tuple
    b: tuple
    thickness: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(c) for c in self.a))
        object.__setattr__(self, "b", tuple(float(c) for c in self.b))
        object.__setattr__(self, "thickness", float(self.thickness))
        if self.thickness < 0:
            raise ValueError("Segment thickness must be nonnegative")

    def distance(self, coords):
        a, b = _vec(self.a), _vec(self.b)
        ab = b - a
        L2 = float(ab @ ab)
        d = [c - a0 for c, a0 in zip(coords, a)]
        if L2 == 0.0:
            t = 0.0
        else:
            t = np.clip(sum(di * e for di, e in zip(d, ab)) / L2, 0.0, 1.0)
        r = _norm([di - t * e for di, e in zip(d, ab)])
        return np.maximum(r - self.thickness, 0.0)

    def dist_range(self, x):
        x = _vec(x)
        near = float(self.distance([np.array(c) for c in x]))
        far = max(np.linalg.norm(x - _vec(self.a)), np.linalg.norm(x - _vec(self.b)))
        return near, float(far) + self.thickness

    def bounds(self):
        a, b = _vec(self.a), _vec(self.b)
        return np.minimum(a, b) - self.thickness, np.maximum(a, b) + self.thickness

    def components(self):
        return [self]

    def mapped(self, s, origin):
        o = _vec(origin)
        return Segment(
            tuple(o + (_vec(self.a) - o) / s),
            tuple(o + (_vec(self.b) - o) / s),
            self.thickness / s,
        )


@dataclass(frozen=True)
class PointCloud:
    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        object.__setattr__(self, "points", pts)

    def distance(self, coords):
        if not self.points:
            return np.full(np.broadcast(*coords).shape, np.inf)
        if len(self.points) > 64:
            from scipy.spatial import cKDTree

            shape = np.broadcast(*coords).shape
            flat = np.stack([np.broadcast_to(c, shape).ravel() for c in coords], axis=1)
            d, _ = cKDTree(np.array(self.points)).query(flat)
            return d.reshape(shape)
        out = None
        for p in self.points:
            d = _norm([c - x0 for c, x0 in zip(coords, p)])
            out = d if out is None else np.minimum(out, d)
        return out

    def dist_range(self, x):
        d = np.linalg.norm(np.array(self.points) - _vec(x), axis=1)
        return float(d.min()), float(d.max())

    def bounds(self):
        pts = np.array(self.points)
        return pts.min(axis=0), pts.max(axis=0)

    def components(self):
        return [PointCloud((p,)) for p in self.points]

    def mapped(self, a, origin):
        o = _vec(origin)
        return PointCloud(tuple(tuple(o + (_vec(p) - o) / a) for p in self.points))


@dataclass(frozen=True)
class DyadicCantor:
    """Cantor dust: each generation keeps the 2^N corner sub-cubes of relative side ``ratio``.

    Generation 0 is the cube of half-width ``half_width`` around ``center``.
    """

    generation: int
    ratio: float
    center: tuple = (0.0, 0.0, 0.0)
    half_width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "generation", int(self.generation))
        object.__setattr__(self, "ratio", float(self.ratio))
        object.__setattr__(self, "half_width", float(self.half_width))
        if self.generation < 0 or not 0 < self.ratio < 0.5:
            raise ValueError("DyadicCantor needs generation >= 0 and 0 < ratio < 1/2")

    def cubes(self) -> list[Box]:
        dim = len(self.center)
        centers = [_vec(self.center)]
        w = self.half_width
        corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * dim), indexing="ij")).reshape(dim, -1).T
        for _ in range(self.generation):
            w_new = w * self.ratio
            centers = [c + (w - w_new) * s for c in centers for s in corners]
            w = w_new
        return [Box(tuple(c - w), tuple(c + w)) for c in centers]

    def distance(self, coords):
        out = None
        for b in self.cubes():
            d = b.distance(coords)
            out = d if out is None else np.minimum(out, d)
        return out

    def dist_range(self, x):
        r = np.array([b.dist_range(x) for b in self.cubes()])
        return float(r[:, 0].min()), float(r[:, 1].max())

    def bounds(self):
        c = _vec(self.center)
        return c - self.half_width, c + self.half_width

    def components(self):
        return self.cubes()

    def mapped(self, a, origin):
        o = _vec(origin)
        return DyadicCantor(
            self.generation, self.ratio, tuple(o + (_vec(self.center) - o) / a), self.half_width / a
        )


@dataclass(frozen=True)
class BallSequence:
    centers: tuple
    radii: tuple

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(float(c) for c in p) for p in self.centers))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if len(self.centers) != len(self.radii):
            raise ValueError("BallSequence needs one radius per center")
        r = np.array(self.radii)
        if np.any(r <= 0) or np.any(np.diff(r) >= 0):
            raise ValueError("BallSequence radii must be positive and strictly decreasing")

    def balls(self) -> list[Ball]:
        return [Ball(c, r) for c, r in zip(self.centers, self.radii)]

    def prefix(self, n: int) -> "BallSequence":
        return BallSequence(self.centers[:n], self.radii[:n])

    def distance(self, coords):
        out = None
        for b in self.balls():
            d = b.distance(coords)
            out = d if out is None else np.minimum(out, d)
        return out

    def dist_range(self, x):
        r = np.array([b.dist_range(x) for b in self.balls()])
        return float(r[:, 0].min()), float(r[:, 1].max())

    def bounds(self):
        lo = np.min([b.bounds()[0] for b in self.balls()], axis=0)
        hi = np.max([b.bounds()[1] for b in self.balls()], axis=0)
        return lo, hi

    def components(self):
        return self.balls()

    def mapped(self, a, origin):
        o = _vec(origin)
        return BallSequence(
            tuple(tuple(o + (_vec(c) - o) / a) for c in self.centers),
            tuple(r / a for r in self.radii),
        )


@dataclass(frozen=True)
class SphericalCap:
    """Closed cap of the sphere ``|y - center| = radius`` within ``half_angle`` of ``axis``."""

    center: tuple
    radius: float
    axis: tuple
    half_angle: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        ax = _vec(self.axis)
        object.__setattr__(self, "axis", tuple(ax / np.linalg.norm(ax)))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "half_angle", float(self.half_angle))
        if self.radius <= 0 or not 0 <= self.half_angle <= math.pi:
            raise ValueError("SphericalCap needs radius > 0 and half_angle in [0, pi]")

    def _angles(self, coords):
        v = [c - x0 for c, x0 in zip(coords, self.center)]
        rv = _norm(v)
        cos = sum(vi * a for vi, a in zip(v, self.axis)) / np.where(rv > 0, rv, 1.0)
        return rv, np.arccos(np.clip(cos, -1.0, 1.0))

    def _dist(self, rv, ang):
        R = self.radius
        return np.sqrt(np.maximum(rv * rv + R * R - 2 * rv * R * np.cos(ang), 0.0))

    def distance(self, coords):
        rv, th = self._angles(coords)
        return self._dist(rv, np.maximum(th - self.half_angle, 0.0))

    def dist_range(self, x):
        rv, th = self._angles([np.array(c) for c in _vec(x)])
        near = self._dist(rv, max(float(th) - self.half_angle, 0.0))
        far = self._dist(rv, min(float(th) + self.half_angle, math.pi))
        return float(near), float(far)

    def bounds(self):
        c = _vec(self.center)
        return c - self.radius, c + self.radius

    def components(self):
        return [self]

    def mapped(self, a, origin):
        o = _vec(origin)
        return SphericalCap(tuple(o + (_vec(self.center) - o) / a), self.radius / a, self.axis, self.half_angle)


PRIMITIVES = {
    cls.__name__: cls
    for cls in (Ball, Box, Segment, PointCloud, DyadicCantor, BallSequence, SphericalCap)
}


@dataclass(frozen=True)
class SetSpec:
    """Finite union of primitives; ``rho`` bounds every primitive around the origin."""

    primitives: tuple = ()
    rho: float | None = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        object.__setattr__(self, "primitives", prims)
        computed = 0.0
        for p in prims:
            _, far = p.dist_range(np.zeros(self.dimension))
            computed = max(computed, far)
        if self.rho is None:
            object.__setattr__(self, "rho", computed)
        elif computed > self.rho * (1 + 1e-12):
            raise ValueError(f"primitive escapes declared bounding ball rho={self.rho}")

    @property
    def dimension(self) -> int:
        for p in self.primitives:
            lo, _ = p.bounds()
            return len(lo)
        return 3

    @property
    def is_empty(self) -> bool:
        return not any(c for p in self.primitives for c in p.components())

    def components(self) -> list:
        return [c for p in self.primitives for c in p.components()]

    def distance(self, coords) -> np.ndarray:
        """Exact distance to the union, evaluated on broadcastable coordinate arrays."""
        out = None
        for p in self.primitives:
            d = p.distance(coords)
            out = d if out is None else np.minimum(out, d)
        if out is None:
            return np.full(np.broadcast(*coords).shape, np.inf)
        return out

    def distance_to(self, x) -> float:
        return float(self.distance([np.array(c) for c in _vec(x)]))

    def far_distance(self, x) -> float:
        """Supremum of |y - x| over the set (an upper bound for caps is never needed)."""
        return max((c.dist_range(x)[1] for c in self.components()), default=0.0)

    def bounds(self):
        los, his = zip(*(p.bounds() for p in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    def union(self, other: "SetSpec") -> "SetSpec":
        return SetSpec(self.primitives + other.primitives)

    def digest(self) -> str:
        return hashlib.sha256(repr(self.primitives).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridContext:
    """Uniform node grid on an axis-aligned box with equal spacing on every axis."""

    lo: tuple
    hi: tuple
    resolution: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        res = self.resolution
        if np.isscalar(res):
            res = (int(res),) * len(lo)
        res = tuple(int(r) for r in res)
        if not (len(lo) == len(hi) == len(res)):
            raise InconsistentGrid("lo, hi and resolution must share the dimension")
        if min(res) < 16:
            raise InconsistentGrid("resolution must be at least 16 cells per axis")
        hs = [(b - a) / r for a, b, r in zip(lo, hi, res)]
        if min(hs) <= 0 or max(hs) - min(hs) > 1e-9 * max(hs):
            raise InconsistentGrid(f"axis spacings differ or are nonpositive: {hs}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "periodic", tuple(int(a) for a in self.periodic))

    @classmethod
    def cube(cls, half_width: float, resolution: int, dimension: int = 3) -> "GridContext":
        return cls((-half_width,) * dimension, (half_width,) * dimension, resolution)

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @property
    def h(self) -> float:
        return (self.hi[0] - self.lo[0]) / self.resolution[0]

    @property
    def shape(self) -> tuple:
        return tuple(r + 1 for r in self.resolution)

    def axes(self) -> list[np.ndarray]:
        return [a + self.h * np.arange(n) for a, n in zip(self.lo, self.shape)]

    def coords(self) -> list[np.ndarray]:
        """Broadcastable (open-mesh) coordinate arrays."""
        return list(np.meshgrid(*self.axes(), indexing="ij", sparse=True))

    def radius(self) -> np.ndarray:
        return _norm(self.coords())

    def node_of(self, x) -> tuple:
        idx = np.rint((_vec(x) - np.array(self.lo)) / self.h).astype(int)
        return tuple(int(i) for i in idx)

    def point_of(self, idx) -> np.ndarray:
        return np.array(self.lo) + self.h * np.asarray(idx, dtype=float)

    def key(self) -> tuple:
        return (self.lo, self.hi, self.resolution, self.periodic)


@dataclass(frozen=True, eq=False)
class GridMask:
    context: GridContext
    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool)
        if ind.shape != self.context.shape:
            raise InconsistentGrid(f"mask shape {ind.shape} != grid shape {self.context.shape}")
        object.__setattr__(self, "indicator", ind)

    @property
    def count(self) -> int:
        return int(self.indicator.sum())

    @property
    def is_empty(self) -> bool:
        return not self.indicator.any()

    def touches_faces(self) -> bool:
        ind = self.indicator
        for ax in range(ind.ndim):
            if ax in self.context.periodic:
                continue
            if np.take(ind, 0, axis=ax).any() or np.take(ind, -1, axis=ax).any():
                return True
        return False

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.context.key()).encode())
        h.update(np.packbits(self.indicator).tobytes())
        return h.hexdigest()[:20]


@dataclass(frozen=True, eq=False)
class GridField:
    """Nodal scalar field; ``domain`` marks the nodes where an equation holds."""

    context: GridContext
    values: np.ndarray
    domain: GridMask | None = None
    info: dict = field(default_factory=dict)

    def sample(self, points) -> np.ndarray:
        """Trilinear interpolation of nodal values at physical points (shape (M, N))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = (pts - np.array(self.context.lo)) / self.context.h
        return ndimage.map_coordinates(self.values, idx.T, order=1, mode="nearest")

    def at_node(self, x) -> float:
        return float(self.values[self.context.node_of(x)])


# ---------------------------------------------------------------------------
# rasterization and distances
# ---------------------------------------------------------------------------


def rasterize(spec: SetSpec, grid: GridContext) -> GridMask:
    """Mark every node whose distance to the set is at most h/2."""
    h = grid.h
    if spec.is_empty:
        return GridMask(grid, np.zeros(grid.shape, dtype=bool))
    lo_box = np.array(grid.lo) + h
    hi_box = np.array(grid.hi) - h
    for p in spec.primitives:
        blo, bhi = p.bounds()
        for ax in range(grid.dimension):
            if ax in grid.periodic:
                continue
            if blo[ax] < lo_box[ax] - 1e-12 or bhi[ax] > hi_box[ax] + 1e-12:
                raise SpecOutOfBox(f"{type(p).__name__} leaves the grid box minus one cell")
    d = spec.distance(grid.coords())
    return GridMask(grid, d <= 0.5 * h * (1 + 1e-9))


def distance_field(mask: GridMask) -> GridField:
    """Euclidean distance from each node to the nearest marked node."""
    if mask.is_empty:
        raise EmptySet("distance to an empty mask is undefined")
    d = ndimage.distance_transform_edt(~mask.indicator, sampling=mask.context.h)
    return GridField(mask.context, d, None)


def scale_spec(spec: SetSpec, a: float, origin=None) -> SetSpec:
    """Map every primitive by y -> origin + (y - origin)/a."""
    if not a > 0:
        raise ValueError("scale factor must be positive")
    if origin is None:
        origin = np.zeros(spec.dimension)
    if a == 1:
        return spec
    return SetSpec(tuple(p.mapped(a, origin) for p in spec.primitives))


def translate_spec(spec: SetSpec, shift) -> SetSpec:
    """Translate every primitive by ``shift``."""
    s = _vec(shift)
    return SetSpec(tuple(_translate(p, s) for p in spec.primitives))


def _translate(p, s):
    if isinstance(p, Ball):
        return Ball(tuple(_vec(p.center) + s), p.radius)
    if isinstance(p, Box):
        return Box(tuple(_vec(p.lo) + s), tuple(_vec(p.hi) + s))
    if isinstance(p, Segment):
        return Segment(tuple(_vec(p.a) + s), tuple(_vec(p.b) + s), p.thickness)
    if isinstance(p, PointCloud):
        return PointCloud(tuple(tuple(_vec(q) + s) for q in p.points))
    if isinstance(p, DyadicCantor):
        return DyadicCantor(p.generation, p.ratio, tuple(_vec(p.center) + s), p.half_width)
    if isinstance(p, BallSequence):
        return BallSequence(tuple(tuple(_vec(c) + s) for c in p.centers), p.radii)
    if isinstance(p, SphericalCap):
        return SphericalCap(tuple(_vec(p.center) + s), p.radius, p.axis, p.half_angle)
    raise TypeError(type(p))


# ---------------------------------------------------------------------------
# dyadic pieces
# ---------------------------------------------------------------------------


def truncation_indices(spec: SetSpec, x) -> tuple:
    """Return ``(i, M)``: i clamped below at ``I_CLAMP``, ``i = inf`` when F = {x}, ``M = inf`` for x in F."""
    if spec.is_empty:
        return None, None
    far = spec.far_distance(x)
    if far <= 0:
        i = math.inf
    else:
        i = math.floor(-math.log2(far))
        # F inside the closed ball of radius 2^-i; exact powers of two sit on the boundary
        while 2.0 ** (-(i + 1)) >= far:
            i += 1
        while 2.0 ** (-i) < far:
            i -= 1
        i = max(i, I_CLAMP)
    d = spec.distance_to(x)
    if d <= 0:
        return i, math.inf
    m = max(math.floor(-math.log2(d)) + 1, 0)
    while m > 0 and 2.0 ** (-(m - 1)) < d:
        m -= 1
    while 2.0 ** (-m) >= d:
        m += 1
    return i, m


@dataclass(frozen=True, eq=False)
class DyadicEntry:
    m: int
    mask: GridMask


@dataclass(frozen=True, eq=False)
class DyadicDecomposition:
    center: tuple
    variant: str
    entries: tuple
    window: GridContext
    truncation: tuple

    def ms(self) -> list[int]:
        return [e.m for e in self.entries]


def default_window(resolution: int = 96, dimension: int = 3) -> GridContext:
    return GridContext.cube(2.0, resolution, dimension)


def _piece_present(spec: SetSpec, x, m: int, variant: str) -> bool:
    r_out = 2.0 ** (-m)
    r_in = 0.5 * r_out if variant == "annulus" else 0.0
    for c in spec.components():
        near, far = c.dist_range(x)
        if near <= r_out * (1 + 1e-12) and far >= r_in * (1 - 1e-12):
            return True
    return False


def rasterize_piece(spec: SetSpec, x, scale: float, variant: str, window: GridContext) -> GridMask:
    """Rasterize ``(F ∩ A) / scale`` recentred at x, A the shell or ball of radius ``scale``.

    A window node y' is marked when both the set and the shell (or ball) lie
    within h/2 of it in rescaled units.
    """
    x = _vec(x)
    hw = window.h
    rw = window.radius()
    near_unit = rw <= 1.0 + hw
    local = [np.broadcast_to(c, window.shape)[near_unit] for c in window.coords()]
    r_local = rw[near_unit]
    phys = [x[k] + scale * local[k] for k in range(len(x))]
    dF = spec.distance(phys) / scale
    if variant == "annulus":
        dT = np.maximum(np.maximum(r_local - 1.0, 0.5 - r_local), 0.0)
    else:
        dT = np.maximum(r_local - 1.0, 0.0)
    tol = 0.5 * hw * (1 + 1e-9)
    ind = np.zeros(window.shape, dtype=bool)
    ind[near_unit] = (dF <= tol) & (dT <= tol)
    return GridMask(window, ind)


def dyadic_pieces(
    spec: SetSpec,
    x,
    variant: str = "annulus",
    m_range: tuple | None = None,
    window: GridContext | None = None,
) -> DyadicDecomposition:
    """Rasterize ``2^m (F ∩ T_m(x))`` (or the closed-ball piece) on a fixed unit-scale window.

    An entry is present iff the exact intersection is nonempty; a present but
    sub-grid piece may rasterize to an empty mask (its capacity is then 0).
    """
    if variant not in ("annulus", "closed-ball"):
        raise ValueError(f"unknown variant {variant!r}")
    x = _vec(x)
    window = window or default_window(dimension=len(x))
    i, M = truncation_indices(spec, x)
    if i is None:
        return DyadicDecomposition(tuple(x), variant, (), window, (None, None))
    if m_range is None:
        if math.isinf(M):
            raise ValueError("x lies in F: an explicit finite m_range is required")
        m_range = (i, M)
    lo_m = max(m_range[0], i)
    hi_m = min(m_range[1], M)
    entries = []
    if math.isinf(lo_m):
        return DyadicDecomposition(tuple(x), variant, (), window, (i, M))
    for m in range(int(lo_m), int(hi_m) + 1):
        if not _piece_present(spec, x, m, variant):
            continue
        entries.append(DyadicEntry(m, rasterize_piece(spec, x, 2.0 ** (-m), variant, window)))
    return DyadicDecomposition(tuple(x), variant, tuple(entries), window, (i, M))


def sample_sphere(n: int, rng: np.random.Generator, radius=1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``n`` uniformly random points on a sphere."""
    v = rng.normal(size=(n, len(center)))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + radius * v


def fibonacci_sphere(n: int, radius=1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Deterministic, nearly uniform points on a 2-sphere."""
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = math.pi * (1 + 5**0.5) * k
    rr = np.sqrt(1 - z * z)
    pts = np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)
    return np.asarray(center) + radius * pts


def union_specs(specs: Iterable[SetSpec]) -> SetSpec:
    prims = ()
    for s in specs:
        prims = prims + s.primitives
    return SetSpec(prims)


def without_points(spec: SetSpec) -> SetSpec:
    """Drop PointCloud primitives; points carry zero capacity when q >= q_c."""
    return SetSpec(tuple(p for p in spec.primitives if not isinstance(p, PointCloud)))


def boundary_samples(spec: SetSpec, n: int) -> np.ndarray:
    """``n`` points of ∂F, found by bisection along rays cast from the component centers.

    Rays cycle over the components; isolated points are returned as they are.
    """
    comps = spec.components()
    if not comps or n <= 0:
        return np.zeros((0, spec.dimension))
    dirs = fibonacci_sphere(n)
    out = []
    for k, d in enumerate(dirs):
        c = comps[k % len(comps)]
        if isinstance(c, PointCloud):
            out.append(_vec(c.points[0]))
            continue
        lo_b, hi_b = c.bounds()
        x0 = (_vec(lo_b) + _vec(hi_b)) / 2
        if spec.distance_to(x0) > 0:
            raise ValueError("component center lies outside F; boundary rays need star-shaped components")
        a, b = 0.0, float(np.linalg.norm(_vec(hi_b) - _vec(lo_b))) + 1.0
        for _ in range(60):
            mid = (a + b) / 2
            if spec.distance_to(x0 + mid * d) > 0:
                b = mid
            else:
                a = mid
        out.append(x0 + a * d)
    return np.array(out)
