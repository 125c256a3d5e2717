"""Polytopes, polyunions and simplicial tessellations of annular regions.

Points are plain float arrays of shape (n,). All objects are immutable after
construction and all operations are pure, so everything here is safe to share
across threads.

Conventions:
    * halfspace normals are unit length, so ``normals @ x - offsets`` is a
      signed distance per facet (positive outside),
    * scaling is always about the origin (the equilibrium is fixed at 0),
    * tessellations cover closure(X \\ A) with pairwise disjoint cell
      interiors; boundary edges of X and A are edges of the tessellation.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, cKDTree

TOL_GEO = 1e-9    # absolute tolerance for point-in-set / coincidence tests
VOL_MIN = 1e-12   # simplices thinner than this are rejected


class GeometryError(ValueError):
    """Raised when a geometric construction cannot satisfy its postconditions."""


# ---------------------------------------------------------------------------
# polytopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded convex polytope with consistent V- and H-representations.

    ``vertices`` are the extreme points, counterclockwise in 2D. The
    H-representation is ``normals @ x <= offsets`` with unit-norm rows.
    ``degenerate`` flags hulls of less than full affine dimension.
    """

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def max_slack(self, p) -> float:
        """Largest signed facet distance; <= 0 means inside."""
        return float(np.max(self.normals @ np.asarray(p, float) - self.offsets))

    def contains(self, p, tol: float = TOL_GEO) -> bool:
        return self.max_slack(p) <= tol

    def volume(self) -> float:
        if self.degenerate:
            return 0.0
        return float(ConvexHull(self.vertices).volume)

    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))


def _dedupe_rows(rows: np.ndarray, decimals: int = 9) -> np.ndarray:
    _, idx = np.unique(np.round(rows, decimals), axis=0, return_index=True)
    return rows[np.sort(idx)]


def _degenerate_hull(points: np.ndarray) -> Polytope:
    """Lower-dimensional hull: a point or a segment, flagged degenerate."""
    n = points.shape[1]
    center = points.mean(axis=0)
    shifted = points - center
    u, s, vt = np.linalg.svd(shifted, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0] if len(s) else 1.0)))
    normals, offsets = [], []
    if rank == 0:
        verts = center[None, :]
    else:
        # keep the two extreme points along the principal direction
        axis = vt[0]
        t = shifted @ axis
        verts = np.vstack([center + t.min() * axis, center + t.max() * axis])
        normals += [axis, -axis]
        offsets += [float(axis @ center + t.max()), float(-(axis @ center + t.min()))]
    for k in range(rank, n):
        a = vt[k]
        normals += [a, -a]
        offsets += [float(a @ center), float(-(a @ center))]
    return Polytope(verts, np.asarray(normals, float), np.asarray(offsets, float),
                    degenerate=True)


def convex_hull(points) -> Polytope:
    """Convex hull with minimal V-representation and consistent H-representation.

    Fewer than n+1 affinely independent points yield a lower-dimensional hull
    flagged ``degenerate``.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.size == 0:
        raise GeometryError("convex hull of empty point set")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite coordinates in hull input")
    pts = _dedupe_rows(pts, decimals=12)
    if len(pts) == 1:
        return _degenerate_hull(pts)
    try:
        hull = ConvexHull(pts)
    except Exception:
        return _degenerate_hull(pts)
    verts = pts[hull.vertices]            # CCW in 2D
    eq = _dedupe_rows(hull.equations)
    normals = eq[:, :-1]
    offsets = -eq[:, -1]
    scale_ = np.linalg.norm(normals, axis=1)
    return Polytope(verts, normals / scale_[:, None], offsets / scale_)


def box_polytope(lo, hi) -> Polytope:
    """Axis-aligned box with 2n halfspaces and 2^n vertices."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("lo/hi must be equal-length vectors")
    if np.any(lo >= hi):
        raise ValueError("box requires lo < hi componentwise")
    n = len(lo)
    if n == 2:
        verts = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    else:
        verts = np.array(list(itertools.product(*zip(lo, hi))), float)
    eye = np.eye(n)
    normals = np.vstack([eye, -eye])
    offsets = np.concatenate([hi, -lo])
    return Polytope(verts, normals, offsets)


# ---------------------------------------------------------------------------
# polyunions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polyunion:
    """Bounded finite union of polytopes; parts overlap only on null sets."""

    parts: tuple

    def __init__(self, parts):
        object.__setattr__(self, "parts", tuple(parts))
        if not self.parts:
            raise GeometryError("empty polyunion")

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def contains(self, p, tol: float = TOL_GEO) -> bool:
        return any(part.max_slack(p) <= tol for part in self.parts)

    def min_slack(self, p) -> float:
        """Signed halfspace distance to the nearest part (<= 0 inside)."""
        return min(part.max_slack(p) for part in self.parts)

    def volume(self) -> float:
        if self.dim == 2:
            return to_shapely(self).area
        return sum(part.volume() for part in self.parts)

    def radius(self) -> float:
        return max(part.radius() for part in self.parts)

    def all_vertices(self) -> np.ndarray:
        return np.vstack([part.vertices for part in self.parts])


def as_polyunion(shape) -> Polyunion:
    if isinstance(shape, Polyunion):
        return shape
    if isinstance(shape, Polytope):
        return Polyunion([shape])
    raise TypeError(f"expected Polytope or Polyunion, got {type(shape)!r}")


def to_shapely(shape):
    """2D shapely geometry for robust area/boundary measures."""
    import shapely
    from shapely.geometry import Polygon

    pu = as_polyunion(shape)
    if pu.dim != 2:
        raise GeometryError("shapely conversion is 2D only")
    return shapely.union_all([Polygon(part.vertices) for part in pu.parts])


def scale(shape, beta: float):
    """Scale about the origin: every vertex v maps to beta*v."""
    if beta <= 0:
        raise ValueError("scale factor must be positive")
    if isinstance(shape, Polytope):
        return Polytope(shape.vertices * beta, shape.normals, shape.offsets * beta,
                        shape.degenerate)
    pu = as_polyunion(shape)
    return Polyunion([scale(part, beta) for part in pu.parts])


def contains(shape, p, tol: float = TOL_GEO) -> bool:
    """True iff p is within halfspace distance tol of the shape."""
    return as_polyunion(shape).contains(p, tol)


def _chebyshev_radius(normals: np.ndarray, offsets: np.ndarray) -> float:
    """Radius of the largest inscribed ball of {x : N x <= o} (-inf if empty)."""
    n = normals.shape[1]
    norms = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([normals, norms[:, None]])
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=a_ub, b_ub=offsets,
                  bounds=[(None, None)] * n + [(None, None)], method="highs")
    if res.status == 2:       # infeasible
        return -math.inf
    if not res.success:
        raise GeometryError(f"emptiness LP failed: {res.message}")
    return float(-res.fun)


def _covered(normals, offsets, outer_parts, tol) -> bool:
    """True iff {Nx<=o} \\ union(outer_parts) is empty (recursive splitting)."""
    if _chebyshev_radius(normals, offsets) <= tol:
        return True
    if not outer_parts:
        return False
    q = outer_parts[0]
    rest = outer_parts[1:]
    cur_n, cur_o = normals, offsets
    for a, b in zip(q.normals, q.offsets):
        out_n = np.vstack([cur_n, -a])
        out_o = np.r_[cur_o, -b]
        if _chebyshev_radius(out_n, out_o) > tol and not _covered(out_n, out_o, rest, tol):
            return False
        cur_n = np.vstack([cur_n, a])
        cur_o = np.r_[cur_o, b]
    return True


def polyunion_subset(inner, outer, tol: float = TOL_GEO) -> bool:
    """Exact set inclusion: inner \\ outer empty up to tol.

    Implemented by recursive halfspace splitting of each inner part against
    the outer parts (polytope differencing), with emptiness decided by
    Chebyshev-radius LPs; no sampling.
    """
    inner = as_polyunion(inner)
    outer = as_polyunion(outer)
    if inner.dim != outer.dim:
        raise ValueError("dimension mismatch")
    return all(_covered(p.normals, p.offsets, list(outer.parts), tol)
               for p in inner.parts)


# ---------------------------------------------------------------------------
# tessellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    """Simplex cell: n+1 distinct global vertex ids."""

    id: int
    vertex_ids: tuple


@dataclass(eq=False)
class Tessellation:
    """Simplicial cover with global deduplicated vertices.

    ``cell_array`` is the (C, n+1) vertex-id table. ``domain``/``hole`` record
    the annulus (X, A) the mesh was built for, when known; they are metadata
    used by refinement, not part of the serialized schema.
    """

    vertices: np.ndarray
    cell_array: np.ndarray
    domain: object = None
    hole: object = None
    _incidence: dict = field(default=None, repr=False)
    _cell_normals: np.ndarray = field(default=None, repr=False)
    _cell_offsets: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float)
        self.cell_array = np.asarray(self.cell_array, int)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cell_array)

    @property
    def cells(self):
        return [Cell(i, tuple(row)) for i, row in enumerate(self.cell_array)]

    @property
    def incidence(self) -> dict:
        if self._incidence is None:
            inc = {i: set() for i in range(self.n_vertices)}
            for c, row in enumerate(self.cell_array):
                for v in row:
                    inc[int(v)].add(c)
            self._incidence = {v: frozenset(cs) for v, cs in inc.items()}
        return self._incidence

    def cell_points(self) -> np.ndarray:
        return self.vertices[self.cell_array]          # (C, n+1, n)

    def cell_volumes(self) -> np.ndarray:
        pts = self.cell_points()
        edges = pts[:, 1:, :] - pts[:, :1, :]
        return np.abs(np.linalg.det(edges)) / math.factorial(self.dim)

    def cell_diameters(self) -> np.ndarray:
        pts = self.cell_points()
        m = pts.shape[1]
        diam = np.zeros(len(pts))
        for i in range(m):
            for j in range(i + 1, m):
                diam = np.maximum(diam, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        return diam

    def centroids(self) -> np.ndarray:
        return self.cell_points().mean(axis=1)

    def _halfspaces(self):
        # per-cell unit-normal facet form, for tolerance-aware point location
        if self._cell_normals is None:
            pts = self.cell_points()                   # (C, n+1, n)
            C, m, n = pts.shape
            normals = np.zeros((C, m, n))
            offsets = np.zeros((C, m))
            for f in range(m):
                face = np.delete(pts, f, axis=1)       # (C, n, n)
                opp = pts[:, f, :]
                if n == 2:
                    d = face[:, 1] - face[:, 0]
                    nor = np.stack([d[:, 1], -d[:, 0]], axis=1)
                else:
                    nor = np.zeros((C, n))
                    for c in range(C):
                        e = face[c, 1:] - face[c, 0]
                        _, _, vt = np.linalg.svd(e)
                        nor[c] = vt[-1]
                nor /= np.linalg.norm(nor, axis=1, keepdims=True)
                off = np.einsum("cn,cn->c", nor, face[:, 0])
                flip = np.einsum("cn,cn->c", nor, opp) > off
                nor[flip] *= -1.0
                off = np.einsum("cn,cn->c", nor, face[:, 0])
                normals[:, f, :] = nor
                offsets[:, f] = off
            self._cell_normals = normals
            self._cell_offsets = offsets
        return self._cell_normals, self._cell_offsets

    def locate(self, points, tol: float = TOL_GEO) -> np.ndarray:
        """Cell index containing each point within tol, or -1."""
        pts = np.atleast_2d(np.asarray(points, float))
        normals, offsets = self._halfspaces()
        out = np.full(len(pts), -1, dtype=int)
        chunk = max(1, int(2_000_000 / max(1, self.n_cells * (self.dim + 1))))
        for s in range(0, len(pts), chunk):
            block = pts[s:s + chunk]                   # (p, n)
            slack = np.einsum("cfn,pn->pcf", normals, block) - offsets[None]
            inside = np.all(slack <= tol, axis=2)      # (p, C)
            hit = inside.argmax(axis=1)
            hit[~inside.any(axis=1)] = -1
            out[s:s + chunk] = hit
        return out

    def boundary_edges(self) -> set:
        """Edges belonging to exactly one cell (2D)."""
        count = {}
        for row in self.cell_array:
            for i in range(len(row)):
                e = tuple(sorted((int(row[i]), int(row[(i + 1) % len(row)]))))
                count[e] = count.get(e, 0) + 1
        return {e for e, c in count.items() if c == 1}

    def edges(self) -> set:
        es = set()
        for row in self.cell_array:
            m = len(row)
            for i in range(m):
                for j in range(i + 1, m):
                    es.add(tuple(sorted((int(row[i]), int(row[j])))))
        return es


def _merge_close_points(points: np.ndarray, tol: float = TOL_GEO) -> np.ndarray:
    if len(points) < 2:
        return points
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol)
    if not pairs:
        return points
    drop = set()
    for i, j in sorted(pairs):
        if i not in drop:
            drop.add(j)
    keep = [i for i in range(len(points)) if i not in drop]
    return points[keep]


def delaunay_triangulate(points) -> Tessellation:
    """Delaunay triangulation of a full-dimensional point set."""
    pts = _merge_close_points(np.asarray(points, float))
    n = pts.shape[1]
    if len(pts) < n + 1:
        raise GeometryError("need at least n+1 points")
    try:
        tri = Delaunay(pts)
    except Exception as exc:
        raise GeometryError(f"degenerate point set: {exc}") from exc
    cells = tri.simplices
    vols = np.abs(np.linalg.det(pts[cells][:, 1:] - pts[cells][:, :1])) / math.factorial(n)
    cells = cells[vols > VOL_MIN]
    tess = Tessellation(pts, cells, domain=Polyunion([convex_hull(pts)]))
    return _prune_unused(tess)


def _prune_unused(tess: Tessellation) -> Tessellation:
    used = np.unique(tess.cell_array)
    if len(used) == tess.n_vertices:
        return tess
    remap = -np.ones(tess.n_vertices, dtype=int)
    remap[used] = np.arange(len(used))
    return Tessellation(tess.vertices[used], remap[tess.cell_array],
                        domain=tess.domain, hole=tess.hole)


def _part_edges(part: Polytope):
    """Boundary segments of a 2D polytope as (start, end) vertex pairs."""
    v = part.vertices
    return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


def _points_on_segment(points, a, b, tol=TOL_GEO):
    """Indices of points within tol of segment [a, b], with their parameters."""
    d = b - a
    L2 = float(d @ d)
    t = np.clip((points - a) @ d / L2, 0.0, 1.0)
    proj = a + t[:, None] * d
    near = np.linalg.norm(points - proj, axis=1) <= tol
    idx = np.nonzero(near)[0]
    return idx, t[idx]


def tessellate_annulus(X, A, seed_points=(), boundary_h=None) -> Tessellation:
    """Constrained Delaunay triangulation of closure(X \\ A).

    Boundary edges of X and A are honored as constraint chains (split until
    every subsegment appears as a mesh edge); triangles whose interior lies in
    int(A) are discarded by centroid test. ``boundary_h`` sets the boundary
    subdivision length (float, or callable on the edge midpoint); by default
    it adapts to the seed spacing.
    """
    X = as_polyunion(X)
    A = as_polyunion(A)
    if not polyunion_subset(A, X):
        raise GeometryError("A must be contained in X")
    if not A.contains(np.zeros(A.dim), -TOL_GEO):
        raise GeometryError("origin must lie in the interior of A")
    if X.dim != 2:
        raise GeometryError("annulus tessellation implemented for 2D")

    seeds = np.asarray(list(seed_points), float).reshape(-1, 2)
    for p in seeds:
        if not X.contains(p, 1e-7):
            raise GeometryError(f"seed point {p.tolist()} outside X")
    if len(seeds):
        inside_a = np.array([A.min_slack(p) < -TOL_GEO for p in seeds])
        seeds = seeds[~inside_a]

    # boundary subdivision target
    if boundary_h is None:
        if len(seeds) >= 2:
            d, _ = cKDTree(seeds).query(seeds, k=2)
            h_default = float(np.median(d[:, 1]))
        else:
            h_default = 0.25 * X.radius()
        h_of = lambda mid: h_default
    elif callable(boundary_h):
        h_of = boundary_h
    else:
        h_of = lambda mid: float(boundary_h)

    points = [seeds] if len(seeds) else []
    constraint_segments = []      # (a, b) endpoints of original boundary edges
    for shape in (X, A):
        for part in shape.parts:
            for a, b in _part_edges(part):
                constraint_segments.append((a, b))
                h = max(h_of(0.5 * (a + b)), 1e-6)
                k = max(1, int(math.ceil(np.linalg.norm(b - a) / h)))
                ts = np.linspace(0.0, 1.0, k + 1)
                points.append(a + ts[:, None] * (b - a))
    pts = _merge_close_points(np.vstack(points), TOL_GEO)

    # chains: ordered point ids along each constraint segment
    def build_chains(pts):
        chains = []
        for a, b in constraint_segments:
            idx, t = _points_on_segment(pts, a, b)
            order = np.argsort(t)
            chains.append([int(i) for i in idx[order]])
        return chains

    for _ in range(40):
        chains = build_chains(pts)
        tri = Delaunay(pts)
        edge_set = set()
        for row in tri.simplices:
            for i in range(3):
                edge_set.add(tuple(sorted((int(row[i]), int(row[(i + 1) % 3])))))
        missing_mids = []
        for chain in chains:
            for u, v in zip(chain[:-1], chain[1:]):
                if tuple(sorted((u, v))) not in edge_set:
                    missing_mids.append(0.5 * (pts[u] + pts[v]))
        if not missing_mids:
            break
        pts = _merge_close_points(np.vstack([pts, np.asarray(missing_mids)]), TOL_GEO)
    else:
        raise GeometryError("boundary recovery did not converge")

    cells = tri.simplices
    cen = pts[cells].mean(axis=1)
    keep = np.array([
        A.min_slack(c) >= -TOL_GEO and X.contains(c, TOL_GEO) for c in cen
    ])
    cells = cells[keep]
    vols = np.abs(np.linalg.det(pts[cells][:, 1:] - pts[cells][:, :1])) / 2.0
    cells = cells[vols > VOL_MIN]
    tess = _prune_unused(Tessellation(pts, cells, domain=X, hole=A))

    target = to_shapely(X).difference(to_shapely(A)).area
    got = float(tess.cell_volumes().sum())
    if abs(got - target) > 1e-6 * max(1.0, target):
        raise GeometryError(
            f"annulus coverage mismatch: cells sum to {got}, expected {target}")
    return tess


def refine(tess: Tessellation, region, factor: float) -> Tessellation:
    """Densify inside ``region`` by longest-edge midpoint insertion.

    New vertices are inserted (and the mesh re-triangulated, honoring the
    original annulus constraints) until the vertex count inside the region is
    at least ``factor`` times the previous count; vertices outside the region
    are untouched.
    """
    if factor <= 1:
        raise ValueError("refinement factor must exceed 1")
    region = as_polyunion(region)

    def count_in(points):
        return sum(1 for p in points if region.contains(p, TOL_GEO))

    start = count_in(tess.vertices)
    if start == 0:
        raise GeometryError("region does not intersect the tessellation vertices")
    target = factor * start
    current = tess
    for _ in range(60):
        n_in = count_in(current.vertices)
        if n_in >= target:
            return current
        edges = []
        verts = current.vertices
        for u, v in current.edges():
            mid = 0.5 * (verts[u] + verts[v])
            if region.contains(mid, TOL_GEO):
                edges.append((float(np.linalg.norm(verts[u] - verts[v])), u, v))
        if not edges:
            raise GeometryError("no edges to split inside region")
        edges.sort(reverse=True)
        n_new = max(1, int(math.ceil(0.34 * n_in)), int(math.ceil(target - n_in)))
        mids = np.array([0.5 * (verts[u] + verts[v]) for _, u, v in edges[:n_new]])
        seeds = np.vstack([verts, mids])
        if current.domain is not None and current.hole is not None:
            nxt = tessellate_annulus(current.domain, current.hole, seeds,
                                     boundary_h=1e30)  # keep existing boundary points
        else:
            nxt = delaunay_triangulate(seeds)
        current = nxt
    raise GeometryError("refinement did not reach the requested density")


def shared_vertex_map(tess: Tessellation, tol: float = TOL_GEO):
    """All (vertex id, cell, cell') with the vertex in both cells.

    Pairs are unordered and emitted once per vertex; membership is the
    geometric test v in Y_c within tol (which, on conforming meshes, matches
    the incidence table).
    """
    normals, offsets = tess._halfspaces()
    out = []
    verts = tess.vertices
    chunk = max(1, int(2_000_000 / max(1, tess.n_cells * (tess.dim + 1))))
    members = [None] * tess.n_vertices
    for s in range(0, tess.n_vertices, chunk):
        block = verts[s:s + chunk]
        slack = np.einsum("cfn,pn->pcf", normals, block) - offsets[None]
        inside = np.all(slack <= tol, axis=2)
        for i in range(len(block)):
            members[s + i] = np.nonzero(inside[i])[0]
    for v, cells in enumerate(members):
        for a, b in itertools.combinations(map(int, cells), 2):
            out.append((v, a, b))
    return out


def on_boundary_mask(points, shape, tol: float = TOL_GEO) -> np.ndarray:
    """Boolean mask of points lying on the boundary of a 2D polyunion."""
    pu = as_polyunion(shape)
    pts = np.atleast_2d(np.asarray(points, float))
    if pu.dim == 2:
        import shapely
        boundary = to_shapely(pu).boundary
        return np.array([
            boundary.distance(shapely.geometry.Point(p)) <= tol for p in pts
        ])
    return np.array([abs(pu.min_slack(p)) <= tol for p in pts])


# ---------------------------------------------------------------------------
# ray geometry and graded seed generation (star-shaped annuli about 0)
# ---------------------------------------------------------------------------

def ray_exit(shape, direction) -> float:
    """Largest t >= 0 with t*direction in the shape (star-shaped about 0)."""
    pu = as_polyunion(shape)
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    best = 0.0
    for part in pu.parts:
        proj = part.normals @ d
        pos = proj > 1e-14
        if not np.any(pos):
            continue
        t = float(np.min(part.offsets[pos] / proj[pos]))
        if t > 0 and part.contains(t * d, 1e-7):
            best = max(best, t)
    if best <= 0:
        raise GeometryError("ray from origin does not exit the shape")
    return best


def inradius(shape) -> float:
    """Distance from the origin to the nearest facet (0 must be inside)."""
    pu = as_polyunion(shape)
    r = max(float(part.offsets.min()) for part in pu.parts)
    if r <= 0:
        raise GeometryError("origin is not inside the shape")
    return r


def annulus_step_floor(X, A, floor_frac: float) -> float:
    """Edge-length floor for graded annulus meshes: a fraction of the outer
    radius, but never more than half the hole's inradius (so the cells
    touching the hole boundary stay smaller than the hole itself)."""
    return min(floor_frac * as_polyunion(X).radius(), 0.5 * inradius(A))


def annulus_seed_points(X, A, grading: float = 0.2, floor_frac: float = 0.03,
                        cap: float = math.inf) -> np.ndarray:
    """Radially graded interior seed points for closure(X \\ A) (2D).

    Rays from the origin through uniform angles plus every corner of X and A;
    along each ray, radii step geometrically (step ~ grading * r, floored at
    annulus_step_floor and capped at ``cap``) strictly between the two
    boundaries. Deterministic.
    """
    X = as_polyunion(X)
    A = as_polyunion(A)
    corners = np.vstack([X.all_vertices(), A.all_vertices()])
    angles = {round(math.atan2(p[1], p[0]), 9) for p in corners
              if np.linalg.norm(p) > TOL_GEO}
    r_max = X.radius()
    d_theta = min(grading, cap / r_max)
    n_dirs = max(8, int(math.ceil(2 * math.pi / d_theta)))
    angles |= {round(2 * math.pi * i / n_dirs - math.pi, 9) for i in range(n_dirs)}
    h_floor = annulus_step_floor(X, A, floor_frac)

    def step(r):
        return min(max(grading * r, h_floor), cap)

    pts = []
    for th in sorted(angles):
        d = np.array([math.cos(th), math.sin(th)])
        r_in = ray_exit(A, d)
        r_out = ray_exit(X, d)
        r = r_in + 0.85 * step(r_in)
        while r < r_out - 0.45 * step(r):
            pts.append(r * d)
            r += step(r)
    return np.asarray(pts) if pts else np.zeros((0, 2))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def polyunion_to_dict(shape) -> dict:
    pu = as_polyunion(shape)
    return {"parts": [{"vertices": part.vertices.tolist()} for part in pu.parts]}


def polyunion_from_dict(data: dict) -> Polyunion:
    return Polyunion([convex_hull(np.asarray(p["vertices"], float))
                      for p in data["parts"]])


def mesh_to_dict(tess: Tessellation) -> dict:
    return {"vertices": tess.vertices.tolist(),
            "cells": [list(map(int, row)) for row in tess.cell_array]}


def mesh_from_dict(data: dict) -> Tessellation:
    return Tessellation(np.asarray(data["vertices"], float),
                        np.asarray(data["cells"], int))


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
