import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roacert import geometry as geo


def boxes(lo, hi):
    return geo.Polyunion([geo.box_polytope(lo, hi)])


# ---------------------------------------------------------------- box / hull

def test_box_table_one_scale():
    X = geo.box_polytope([-1, -1], [1, 1])
    assert sorted(map(tuple, X.vertices.tolist())) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    A = geo.box_polytope([-0.1, -0.1], [0.1, 0.1])
    assert np.allclose(np.abs(A.vertices), 0.1)
    assert len(X.normals) == 4 and len(X.vertices) == 4


def test_box_contains_and_errors():
    b = geo.box_polytope([0, 0], [1, 1])
    assert b.contains([0.5, 0.5]) and not b.contains([2, 0])
    with pytest.raises(ValueError):
        geo.box_polytope([0, 0], [1, 0])
    with pytest.raises(ValueError):
        geo.box_polytope([0, 0, 0], [1, 1])


def test_hull_removes_interior_point():
    p = geo.convex_hull([[0, 0], [1, 0], [0, 1], [0.2, 0.2]])
    assert len(p.vertices) == 3
    assert sorted(map(tuple, p.vertices.tolist())) == [(0, 0), (0, 1), (1, 0)]


def test_hull_diamond():
    p = geo.convex_hull([[1, 0], [-1, 0], [0, 1], [0, -1]])
    assert len(p.vertices) == 4
    for x in ([0.49, 0.49], [0, 0.99]):
        assert p.contains(x)
    assert not p.contains([0.6, 0.6])


def test_hull_random_disk_brute_force():
    # oracle: hull vertices are input points; every input lies inside every
    # halfplane spanned by consecutive hull vertices
    rng = np.random.default_rng(7)
    r = np.sqrt(rng.uniform(0, 1, 50))
    th = rng.uniform(0, 2 * np.pi, 50)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    hull = geo.convex_hull(pts)
    for v in hull.vertices:
        assert np.min(np.linalg.norm(pts - v, axis=1)) < 1e-12
    m = len(hull.vertices)
    for i in range(m):
        a, b = hull.vertices[i], hull.vertices[(i + 1) % m]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        assert np.all(cross >= -1e-9)


def test_hull_degenerate_flag():
    p = geo.convex_hull([[0, 0], [1, 1], [2, 2]])
    assert p.degenerate
    with pytest.raises(geo.GeometryError):
        geo.convex_hull(np.zeros((0, 2)))


def test_polytope_representation_invariants():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pts = rng.normal(size=(12, 2))
        p = geo.convex_hull(pts)
        # every vertex satisfies all halfspaces
        assert all(p.max_slack(v) <= geo.TOL_GEO for v in p.vertices)
        # every halfspace is tight at >= n vertices
        for a, b in zip(p.normals, p.offsets):
            tight = np.sum(np.abs(p.vertices @ a - b) <= 1e-9)
            assert tight >= 2


# ------------------------------------------------------------------- scale

def test_scale_examples():
    sq = boxes([-1, -1], [1, 1])
    assert np.allclose(geo.scale(sq, 1.0).parts[0].vertices, sq.parts[0].vertices)
    small = boxes([-0.2, -0.2], [0.2, 0.2])
    big = geo.scale(small, 2.5)
    assert np.allclose(np.abs(big.parts[0].vertices), 0.5)
    d = geo.convex_hull([[1, 0], [-1, 0], [0, 1], [0, -1]])
    scaled = geo.scale(d, 1.98)
    assert np.allclose(np.linalg.norm(scaled.vertices, axis=1),
                       1.98 * np.linalg.norm(d.vertices, axis=1), atol=1e-12)
    with pytest.raises(ValueError):
        geo.scale(d, 0.0)


@pytest.mark.parametrize("a", [0.5, 2.0, 3.0])
def test_scale_roundtrip(a):
    p = geo.convex_hull([[1, 0.2], [-1, 0.1], [0.3, 1], [0, -1]])
    rt = geo.scale(geo.scale(p, a), 1.0 / a)
    assert np.max(np.abs(rt.vertices - p.vertices)) < 1e-10


# ----------------------------------------------------------------- contains

def test_contains_boundary_tolerance():
    sq = boxes([-1, -1], [1, 1])
    assert geo.contains(sq, [0, 0])
    assert geo.contains(sq, [1 + 1e-12, 0], tol=1e-9)
    assert not geo.contains(sq, [1 + 1e-6, 0], tol=1e-9)


def test_contains_l_shape_notch():
    # L-shape from two unit squares; the concave notch is outside
    l_shape = geo.Polyunion([geo.box_polytope([0, 0], [1, 1]),
                             geo.box_polytope([1, 0], [2, 0.5])])
    notch = np.array([1.5, 0.75])
    assert not geo.contains(l_shape, notch)
    # oracle: direct halfspace evaluation on each part
    assert all(part.max_slack(notch) > 0 for part in l_shape.parts)
    assert geo.contains(l_shape, [1.5, 0.25])


# --------------------------------------------------------- polyunion_subset

def test_subset_boxes():
    small, big = boxes([-0.1, -0.1], [0.1, 0.1]), boxes([-1, -1], [1, 1])
    assert geo.polyunion_subset(small, big)
    assert not geo.polyunion_subset(big, small)


def test_subset_diamond_square():
    d = geo.Polyunion([geo.convex_hull([[1, 0], [-1, 0], [0, 1], [0, -1]])])
    s = boxes([-1, -1], [1, 1])
    assert geo.polyunion_subset(d, s)
    assert not geo.polyunion_subset(s, d)
    # oracle: vertex containment agrees
    assert all(geo.contains(s, v) for v in d.parts[0].vertices)
    assert not all(geo.contains(d, v) for v in s.parts[0].vertices)


def test_subset_nonconvex_union_cover():
    # two squares cover a rectangle spanning both
    cover = geo.Polyunion([geo.box_polytope([0, 0], [1, 1]),
                           geo.box_polytope([1, 0], [2, 1])])
    inner = boxes([0.25, 0.25], [1.75, 0.75])
    assert geo.polyunion_subset(inner, cover)
    assert not geo.polyunion_subset(boxes([0.25, 0.25], [2.25, 0.75]), cover)


@given(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=3, max_size=3))
@settings(max_examples=20, deadline=None)
def test_subset_partial_order_on_nested_boxes(sizes):
    a, b, c = sorted(sizes)
    pa, pb, pc = (boxes([-s, -s], [s, s]) for s in (a, b, c))
    assert geo.polyunion_subset(pa, pa)                       # reflexive
    assert geo.polyunion_subset(pa, pb) and geo.polyunion_subset(pb, pc)
    assert geo.polyunion_subset(pa, pc)                       # transitive
    if b - a > 1e-6:
        assert not geo.polyunion_subset(pb, pa)               # antisymmetric


# ----------------------------------------------------------------- delaunay

def test_delaunay_square_corners():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert t.n_cells == 2
    shared = set(t.cell_array[0]) & set(t.cell_array[1])
    assert len(shared) == 2


def test_delaunay_square_with_center():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    assert t.n_cells == 4
    center_id = int(np.argmin(np.linalg.norm(t.vertices - [0.5, 0.5], axis=1)))
    assert all(center_id in row for row in t.cell_array)


def circumcircle(p0, p1, p2):
    ax, ay = p0
    bx, by = p1
    cx, cy = p2
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay)
          + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx)
          + (cx**2 + cy**2) * (bx - ax)) / d
    center = np.array([ux, uy])
    return center, np.linalg.norm(p0 - center)


def assert_empty_circumcircle(tess):
    for row in tess.cell_array:
        center, radius = circumcircle(*tess.vertices[row])
        dist = np.linalg.norm(tess.vertices - center, axis=1)
        others = np.setdiff1d(np.arange(tess.n_vertices), row)
        assert np.all(dist[others] >= radius - 1e-7)


def test_delaunay_empty_circumcircle_brute_force():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, size=(100, 2))
    t = geo.delaunay_triangulate(pts)
    assert_empty_circumcircle(t)


def test_delaunay_collinear_rejected():
    with pytest.raises(geo.GeometryError):
        geo.delaunay_triangulate([[0, 0], [1, 1], [2, 2], [3, 3]])


# --------------------------------------------------------- tessellate_annulus

@pytest.fixture(scope="module")
def annulus():
    X = geo.Polyunion([geo.box_polytope([-1, -1], [1, 1])])
    A = geo.Polyunion([geo.box_polytope([-0.1, -0.1], [0.1, 0.1])])
    seeds = geo.annulus_seed_points(X, A, grading=0.3, floor_frac=0.05)
    tess = geo.tessellate_annulus(X, A, seeds,
                                  boundary_h=lambda m: max(0.3 * np.linalg.norm(m), 0.07))
    return X, A, seeds, tess


def test_annulus_area(annulus):
    _, _, _, tess = annulus
    assert abs(float(tess.cell_volumes().sum()) - (4 - 0.04)) < 1e-9


def test_annulus_disjoint_interiors(annulus):
    from shapely.geometry import Polygon
    _, _, _, tess = annulus
    polys = [Polygon(tess.vertices[row]) for row in tess.cell_array]
    rng = np.random.default_rng(0)
    idx = rng.choice(len(polys), size=min(len(polys), 40), replace=False)
    for i, j in itertools.combinations(idx, 2):
        assert polys[i].intersection(polys[j]).area < 1e-12


def test_annulus_vertex_provenance(annulus):
    X, A, seeds, tess = annulus
    on_x = geo.on_boundary_mask(tess.vertices, X)
    on_a = geo.on_boundary_mask(tess.vertices, A)
    if len(seeds):
        from scipy.spatial import cKDTree
        d, _ = cKDTree(seeds).query(tess.vertices)
        is_seed = d <= geo.TOL_GEO
    else:
        is_seed = np.zeros(tess.n_vertices, bool)
    assert np.all(on_x | on_a | is_seed)


def test_annulus_includes_all_corner_vertices(annulus):
    X, A, _, tess = annulus
    for v in np.vstack([X.all_vertices(), A.all_vertices()]):
        assert np.min(np.linalg.norm(tess.vertices - v, axis=1)) <= geo.TOL_GEO


def test_annulus_boundary_edges_on_constraints(annulus):
    # every hole-boundary edge of the mesh lies on the A boundary
    X, A, _, tess = annulus
    for u, v in tess.boundary_edges():
        mid = 0.5 * (tess.vertices[u] + tess.vertices[v])
        assert geo.on_boundary_mask([mid], X)[0] or geo.on_boundary_mask([mid], A)[0]


def test_annulus_circumcircle(annulus):
    # Delaunay property on constrained annulus meshes of modest size holds
    # away from the constraint boundaries; check interior triangles only
    _, A, _, tess = annulus
    interior = [row for row in tess.cell_array
                if np.linalg.norm(tess.vertices[row].mean(axis=0)) > 0.35]
    sub = geo.Tessellation(tess.vertices, np.array(interior))
    for row in sub.cell_array[:50]:
        center, radius = circumcircle(*tess.vertices[row])
        dist = np.linalg.norm(tess.vertices - center, axis=1)
        others = np.setdiff1d(np.arange(tess.n_vertices), row)
        assert np.all(dist[others] >= radius - 1e-7)


def test_annulus_rejects_bad_inputs():
    X = geo.Polyunion([geo.box_polytope([-1, -1], [1, 1])])
    A = geo.Polyunion([geo.box_polytope([-0.1, -0.1], [0.1, 0.1])])
    with pytest.raises(geo.GeometryError):
        geo.tessellate_annulus(A, X, [])          # A not inside X
    with pytest.raises(geo.GeometryError):
        geo.tessellate_annulus(X, A, [[5.0, 5.0]])  # seed outside X


# ------------------------------------------------------------------- refine

def test_refine_doubles_region_count(annulus):
    X, A, _, tess = annulus
    region = geo.Polyunion([geo.box_polytope([-0.5, -0.5], [0.5, 0.5])])
    fine = geo.refine(tess, region, 2.0)
    count = lambda t: sum(1 for p in t.vertices if region.contains(p))
    assert count(fine) >= 2 * count(tess)
    # coverage and disjointness survive refinement
    assert abs(float(fine.cell_volumes().sum()) - (4 - 0.04)) < 1e-6
    with pytest.raises(ValueError):
        geo.refine(tess, region, 1.0)


def test_refine_shrinks_max_diameter(annulus):
    _, _, _, tess = annulus
    region = geo.Polyunion([geo.box_polytope([-0.5, -0.5], [0.5, 0.5])])

    def max_diam(t):
        cen = t.centroids()
        mask = np.array([region.contains(c) for c in cen])
        return float(t.cell_diameters()[mask].max())

    fine = geo.refine(tess, region, 2.0)
    assert max_diam(fine) < max_diam(tess)


# -------------------------------------------------------- shared_vertex_map

def test_shared_vertex_map_two_triangles():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [1, 1], [0, 1]])
    entries = geo.shared_vertex_map(t)
    assert len(entries) == 2
    assert all(c != cp for _, c, cp in entries)


def test_shared_vertex_map_fan():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    entries = geo.shared_vertex_map(t)
    center_id = int(np.argmin(np.linalg.norm(t.vertices - [0.5, 0.5], axis=1)))
    center_pairs = [e for e in entries if e[0] == center_id]
    assert len(center_pairs) == 6                 # C(4, 2)


def test_shared_vertex_map_consistency_oracle():
    # pinning one cell and propagating the continuity equalities reaches every
    # cell and yields a single-valued function at shared vertices
    rng = np.random.default_rng(5)
    t = geo.delaunay_triangulate(rng.uniform(-1, 1, size=(40, 2)))
    entries = geo.shared_vertex_map(t)
    parent = list(range(t.n_cells))

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for _, c, cp in entries:
        parent[find(c)] = find(cp)
    assert len({find(c) for c in range(t.n_cells)}) == 1
    # fit each cell's affine piece through a nonlinear function's vertex
    # values; every mapped pair then satisfies the continuity equation,
    # i.e. the map's vertex really lies in both cells
    f = lambda p: np.sin(p[:, 0]) + p[:, 1] ** 2
    g = np.zeros((t.n_cells, 2))
    b = np.zeros(t.n_cells)
    for c, row in enumerate(t.cell_array):
        pts = t.vertices[row]
        coef = np.linalg.solve(np.column_stack([pts, np.ones(3)]), f(pts))
        g[c], b[c] = coef[:2], coef[2]
    for v, c, cp in entries:
        x = t.vertices[v]
        assert abs((g[c] - g[cp]) @ x - (b[cp] - b[c])) < 1e-9


# ------------------------------------------------------------- serialization

def test_polyunion_json_roundtrip(tmp_path):
    pu = geo.Polyunion([geo.convex_hull([[1, 0], [-1, 0.3], [0, 1], [0.2, -1]])])
    path = tmp_path / "pu.json"
    geo.save_json(geo.polyunion_to_dict(pu), path)
    back = geo.polyunion_from_dict(geo.load_json(path))
    assert np.max(np.abs(np.sort(back.parts[0].vertices, axis=0)
                         - np.sort(pu.parts[0].vertices, axis=0))) < 1e-15


def test_mesh_json_roundtrip(tmp_path, annulus):
    _, _, _, tess = annulus
    path = tmp_path / "mesh.json"
    geo.save_json(geo.mesh_to_dict(tess), path)
    back = geo.mesh_from_dict(geo.load_json(path))
    assert np.array_equal(back.cell_array, tess.cell_array)
    assert np.max(np.abs(back.vertices - tess.vertices)) < 1e-15
