"""Piecewise-affine Lyapunov candidates on simplicial tessellations.

A candidate assigns an affine piece g_c^T x + b_c to every cell; continuity is
required across shared vertices, and a per-cell ``certified`` mask records
where the data-driven decrease certificate holds. The function's values exist
on every cell (continuity is global); only the certificate is patchy, so
sublevel sets are plain value sets extended by the exclusion neighborhood A.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (TOL_GEO, Polyunion, Tessellation, as_polyunion,
                       on_boundary_mask)

TOL_CONT = 1e-8   # admissible value jump across shared vertices / facets


@dataclass(eq=False)
class PwaFunction:
    """Per-cell affine pieces (g_c, b_c) with a certification mask."""

    tess: Tessellation
    g: np.ndarray          # (C, n)
    b: np.ndarray          # (C,)
    certified: np.ndarray  # (C,) bool

    def __post_init__(self):
        self.g = np.asarray(self.g, float)
        self.b = np.asarray(self.b, float)
        self.certified = np.asarray(self.certified, bool)
        C = self.tess.n_cells
        if self.g.shape != (C, self.tess.dim) or self.b.shape != (C,):
            raise ValueError("piece arrays do not match the tessellation")

    def vertex_values(self) -> np.ndarray:
        """Canonical value per vertex (taken from the lowest incident cell)."""
        vals = np.full(self.tess.n_vertices, np.nan)
        for c in range(self.tess.n_cells - 1, -1, -1):
            row = self.tess.cell_array[c]
            vals[row] = self.tess.vertices[row] @ self.g[c] + self.b[c]
        return vals

    def continuity_defect(self) -> float:
        """Worst value jump over all (vertex, cell, cell') incidences."""
        worst = 0.0
        verts = self.tess.vertices
        for v, cells in self.tess.incidence.items():
            cells = sorted(cells)
            vals = [verts[v] @ self.g[c] + self.b[c] for c in cells]
            if vals:
                worst = max(worst, max(vals) - min(vals))
        return worst


NOT_IN_DOMAIN = None   # sentinel returned by evaluate_pwa outside the mesh


def evaluate_pwa(V: PwaFunction, x, tol: float = TOL_GEO):
    """Value of V at x, or None when x lies outside every cell.

    On shared facets any owning cell gives the same value within TOL_CONT.
    """
    cell = int(V.tess.locate(np.asarray(x, float)[None, :], tol)[0])
    if cell < 0:
        return NOT_IN_DOMAIN
    return float(np.asarray(x, float) @ V.g[cell] + V.b[cell])


def evaluate_pwa_batch(V: PwaFunction, points, tol: float = TOL_GEO):
    """Vectorized evaluation: (values, in_domain mask, owning cell)."""
    pts = np.atleast_2d(np.asarray(points, float))
    cells = V.tess.locate(pts, tol)
    ok = cells >= 0
    vals = np.full(len(pts), np.nan)
    if np.any(ok):
        c = cells[ok]
        vals[ok] = np.einsum("pn,pn->p", pts[ok], V.g[c]) + V.b[c]
    return vals, ok, cells


def pwa_interpolate(func, tess: Tessellation) -> PwaFunction:
    """Unique per-cell affine match of ``func`` at the n+1 cell vertices."""
    verts = tess.vertices
    fvals = np.array([float(func(v)) for v in verts])
    if not np.all(np.isfinite(fvals)):
        raise ValueError("function is not finite on all vertices")
    return _fit_from_vertex_values(tess, fvals)


def _fit_from_vertex_values(tess: Tessellation, fvals: np.ndarray) -> PwaFunction:
    pts = tess.cell_points()                         # (C, n+1, n)
    C, m, n = pts.shape
    mats = np.concatenate([pts, np.ones((C, m, 1))], axis=2)
    rhs = fvals[tess.cell_array]
    try:
        coef = np.linalg.solve(mats, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"degenerate simplex in interpolation: {exc}") from exc
    return PwaFunction(tess, coef[:, :n], coef[:, n], np.ones(C, bool))


# ------------------------------------------------------------- level logic

@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric positive definite Q for V_Q(x) = 0.5 x^T Q x."""

    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, float))
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if np.any(np.linalg.eigvalsh(self.Q) <= 0):
            raise ValueError("Q must be positive definite")

    def __call__(self, x):
        x = np.asarray(x, float)
        return 0.5 * float(x @ self.Q @ x)


def certified_level(V: PwaFunction, X, A):
    """Largest alpha with A inside L_alpha inside X, or None.

    Since V is affine per cell and the mesh boundary edges lie on the region
    boundaries, the extremes over the boundaries are attained at mesh
    vertices: alpha* = min V over vertices on the X boundary; no valid level
    exists (None) when alpha* does not exceed max V over the A boundary.
    """
    if not np.any(V.certified):
        raise ValueError("candidate has no certified cells")
    X = as_polyunion(X)
    A = as_polyunion(A)
    vals = V.vertex_values()
    on_x = on_boundary_mask(V.tess.vertices, X)
    if not np.any(on_x):
        raise ValueError("tessellation has no vertices on the X boundary")
    alpha = float(vals[on_x].min())
    on_a = on_boundary_mask(V.tess.vertices, A)
    if np.any(on_a) and alpha <= float(vals[on_a].max()):
        return None
    return alpha


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Strict sublevel set {x : V(x) < alpha} of a PWA candidate."""

    owner: PwaFunction
    alpha: float

    def contains(self, p, A=None) -> bool:
        if A is not None and as_polyunion(A).contains(p, TOL_GEO):
            return True
        val = evaluate_pwa(self.owner, p)
        return val is not NOT_IN_DOMAIN and val < self.alpha


def _boundary_samples(part, h_chk: float) -> np.ndarray:
    """Part vertices plus a midpoint-refined sampling of the boundary edges."""
    verts = part.vertices
    out = [verts]
    m = len(verts)
    for i in range(m):
        a, b = verts[i], verts[(i + 1) % m]
        k = int(np.ceil(np.linalg.norm(b - a) / max(h_chk, 1e-12)))
        if k > 1:
            ts = np.linspace(0.0, 1.0, k + 1)[1:-1]
            out.append(a + ts[:, None] * (b - a))
    return np.vstack(out)


def sublevel_contains(V: PwaFunction, alpha: float, S, A, C=None,
                      h_chk: float = None) -> bool:
    """True iff S lies inside the sublevel set {V < alpha} extended by A.

    Membership of a point p: inside if p is in A, else V(p) < alpha where V is
    defined, else outside. The test set is every part vertex of S plus a
    boundary sampling at resolution ``h_chk`` (default: 1/50 of S's diameter).
    The C argument (the uncertified hull) is accepted for interface
    compatibility; V has values on every cell, so no hole extension is needed.
    """
    S = as_polyunion(S)
    A = as_polyunion(A)
    if S.dim != V.tess.dim:
        raise ValueError("dimension mismatch")
    if h_chk is None:
        all_v = S.all_vertices()
        diam = float(np.max(np.linalg.norm(all_v[:, None, :] - all_v[None], axis=2)))
        h_chk = diam / 50.0 if diam > 0 else 1.0
    for part in S.parts:
        pts = _boundary_samples(part, h_chk)
        vals, ok, _ = evaluate_pwa_batch(V, pts)
        inside = np.array([A.contains(p, TOL_GEO) for p in pts])
        inside |= ok & (vals < alpha)
        if not np.all(inside):
            return False
    return True


# ------------------------------------------------------------ model oracles

def decrease_margin(V: PwaFunction, field_, n_samples: int, rng_seed: int) -> float:
    """Max of g_c^T f(x) over random interior points of certified cells.

    Model-based testing oracle: a certified candidate must give a strictly
    negative value. Samples stay at least TOL_GEO away from cell facets.
    """
    cert = np.nonzero(V.certified)[0]
    if len(cert) == 0:
        raise ValueError("candidate has no certified cells")
    rng = np.random.default_rng(rng_seed)
    vols = V.tess.cell_volumes()[cert]
    pick = rng.choice(len(cert), size=n_samples, p=vols / vols.sum())
    cells = cert[pick]
    w = rng.dirichlet(np.ones(V.tess.dim + 1), size=n_samples)
    # nudge barycentric weights off the facets (distance >= TOL_GEO)
    w = (1.0 - 3e-6) * w + 1e-6
    pts = np.einsum("pm,pmn->pn", w, V.tess.cell_points()[cells])
    fx = field_(pts)
    return float(np.max(np.einsum("pn,pn->p", V.g[cells], fx)))


def sanity_check(field_, Q: QuadraticForm, tess: Tessellation):
    """Model-based existence check for a PWA Lyapunov candidate.

    Interpolates V_Q on the tessellation and requires, for every cell c and
    vertex v of c, the Lipschitz-robust decrease certificate
    g_c^T f(v) + M ||g_c|| h_c < 0 with h_c the cell diameter. Sufficient, not
    necessary: a coarse mesh may fail without contradiction.
    """
    M = field_.lipschitz_bound
    if M is None:
        raise ValueError("sanity check needs the field's Lipschitz bound")
    vq = pwa_interpolate(Q, tess)
    h = tess.cell_diameters()
    gnorm = np.linalg.norm(vq.g, axis=1)
    fvals = field_(tess.vertices)                     # (V, n)
    worst = -np.inf
    for c, row in enumerate(tess.cell_array):
        bound = fvals[row] @ vq.g[c] + M * gnorm[c] * h[c]
        worst = max(worst, float(bound.max()))
    return worst < 0.0, vq


# ------------------------------------------------------- level set polylines

def level_polylines(V: PwaFunction, alpha: float):
    """Polylines of {V = alpha} marched over cell edges (exact for PWA).

    Returns a list of (m, 2) arrays; closed loops repeat their first vertex.
    """
    if V.tess.dim != 2:
        raise ValueError("level polylines are 2D only")
    verts = V.tess.vertices
    segments = []
    for c, row in enumerate(V.tess.cell_array):
        vals = verts[row] @ V.g[c] + V.b[c] - alpha
        pts = []
        for i in range(3):
            a, b = row[i], row[(i + 1) % 3]
            va, vb = vals[i], vals[(i + 1) % 3]
            if va == 0.0 and vb == 0.0:
                pts += [verts[a], verts[b]]
            elif (va < 0 <= vb) or (vb < 0 <= va):
                t = va / (va - vb)
                pts.append(verts[a] + t * (verts[b] - verts[a]))
        uniq = []
        for p in pts:
            if not any(np.linalg.norm(p - q) < 1e-12 for q in uniq):
                uniq.append(p)
        if len(uniq) == 2:
            segments.append((uniq[0], uniq[1]))

    # chain segments into polylines by matching endpoints
    def key(p):
        return (round(float(p[0]), 9), round(float(p[1]), 9))

    adj = {}
    for i, (a, b) in enumerate(segments):
        adj.setdefault(key(a), []).append(i)
        adj.setdefault(key(b), []).append(i)
    used = [False] * len(segments)

    def grow(path, at_head):
        while True:
            k = key(path[0] if at_head else path[-1])
            i = next((j for j in adj.get(k, []) if not used[j]), None)
            if i is None:
                return
            used[i] = True
            sa, sb = segments[i]
            new = sb if key(sa) == k else sa
            path.insert(0, new) if at_head else path.append(new)

    lines = []
    for s in range(len(segments)):
        if used[s]:
            continue
        used[s] = True
        path = [segments[s][0], segments[s][1]]
        grow(path, at_head=False)
        grow(path, at_head=True)
        lines.append(np.asarray(path))
    return lines
