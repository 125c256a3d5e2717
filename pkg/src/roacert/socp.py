"""Conic assembly of the Lyapunov learning problem and its verification.

The decision variables per cell c are the affine piece (g_c, b_c), data
multipliers gamma_{d,c} for each selected datum, epigraph scalars
t_{d,c} >= ||gamma_{d,c}||, and one slack s_{i,c} per cell vertex. The
constraints are:

    objective      min sum s_{i,c}
    slack floor    s_{i,c} >= -mu
    continuity     (g_c - g_c')^T v = b_c' - b_c   for shared vertices v
    gradient sum   sum_d gamma_{d,c} = g_c
    decrease       sum_d gamma^T f_d + M sum_d ||v - x_d|| t_{d,c} <= s_{i,c}
    cones          t_{d,c} >= ||gamma_{d,c}||

encoded in the standard form  min c^T x  s.t.  b - A x in K  with K an
ordered product of ZERO, NONNEG and SOC blocks. One extra ZERO row pins
b_0 = 0 (the offsets are otherwise only determined up to a global shift).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import Dataset
from .geometry import Tessellation, shared_vertex_map
from .lyapunov import PwaFunction, _fit_from_vertex_values

log = logging.getLogger(__name__)

TOL_FEAS = 1e-6
TOL_OBJ = 1e-7

OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
NUMERICAL_FAILURE = "NUMERICAL_FAILURE"


class SolverError(RuntimeError):
    """Conic backend failed outright (import/setup errors)."""


# --------------------------------------------------------------- selection

def select_data(tess: Tessellation, data: Dataset, k_nearest: int):
    """Per-cell data index lists: k nearest to the centroid by distance.

    The selection always keeps the learnability property of the cell: for a
    cell vertex not covered by any selected datum's ball, the best covering
    datum (largest r_d - ||v - x_d||) is added, so the per-cell variable count
    stays O(k + |Y_c|). ``k_nearest = len(data)`` reproduces the full all-data
    formulation."""
    if k_nearest < 1:
        raise ValueError("k_nearest must be >= 1")
    if len(data) == 0:
        raise ValueError("empty dataset")
    cen = tess.centroids()
    r = data.radii()
    k = min(k_nearest, len(data))
    out = []
    for c in range(tess.n_cells):
        d = np.linalg.norm(data.xs - cen[c], axis=1)
        near = np.argpartition(d, k - 1)[:k]
        sel = set(int(i) for i in near)
        for v in tess.vertices[tess.cell_array[c]]:
            margins = r - np.linalg.norm(data.xs - v, axis=1)
            if not any(margins[i] > 0 for i in sel):
                best = int(np.argmax(margins))
                if margins[best] > 0:
                    sel.add(best)
        out.append(sorted(sel))
    return out


@dataclass(eq=False)
class ProblemSpec:
    """Inputs of one optimization instance."""

    tess: Tessellation
    data: Dataset
    mu: float
    M: float
    data_selection: list

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.M <= 0:
            raise ValueError("M must be positive")
        if len(self.data_selection) != self.tess.n_cells:
            raise ValueError("data_selection must list indices per cell")
        if any(len(sel) == 0 for sel in self.data_selection):
            raise ValueError("data_selection has an empty cell")


def continuity_rows(tess: Tessellation):
    """Spanning subset of the shared-vertex pairs: per vertex, a chain over
    its sorted member cells. Equivalent to the full pair set (transitivity)
    but full-rank. Sorted by (vertex, cell, cell)."""
    by_vertex = {}
    for v, c, cp in shared_vertex_map(tess):
        by_vertex.setdefault(v, set()).update((c, cp))
    out = []
    for v in sorted(by_vertex):
        cells = sorted(by_vertex[v])
        out.extend((v, cells[i], cells[i + 1]) for i in range(len(cells) - 1))
    return out


def make_problem_spec(tess, data, mu, k_nearest=60) -> ProblemSpec:
    spec = ProblemSpec(tess, data, mu, data.M, select_data(tess, data, k_nearest))
    # per-cell learnability on the selected data is a warning, not an error
    r = data.radii()
    bad = 0
    for c, sel in enumerate(spec.data_selection):
        for v in tess.vertices[tess.cell_array[c]]:
            if not np.any(np.linalg.norm(data.xs[sel] - v, axis=1) < r[sel]):
                bad += 1
    if bad:
        log.warning("selected data leaves %d cell-vertex pairs uncovered", bad)
    return spec


# ---------------------------------------------------------------- assembly

@dataclass(eq=False)
class VariableMap:
    """Column layout: per cell [g (n), b, (gamma (n), t) per selected datum],
    then all slacks s_{i,c} ordered by (cell, local vertex)."""

    n: int
    n_cells: int
    selection: list
    cell_offset: np.ndarray
    slack_offset: int
    size: int

    @classmethod
    def build(cls, n, selection):
        n_cells = len(selection)
        widths = [n + 1 + (n + 1) * len(sel) for sel in selection]
        offs = np.concatenate([[0], np.cumsum(widths)])
        slack0 = int(offs[-1])
        size = slack0 + (n + 1) * n_cells
        return cls(n, n_cells, selection, offs[:-1], slack0, size)

    def g(self, c):
        o = int(self.cell_offset[c])
        return np.arange(o, o + self.n)

    def b(self, c):
        return int(self.cell_offset[c]) + self.n

    def gamma(self, c, j):
        o = int(self.cell_offset[c]) + self.n + 1 + (self.n + 1) * j
        return np.arange(o, o + self.n)

    def t(self, c, j):
        return int(self.cell_offset[c]) + self.n + 1 + (self.n + 1) * j + self.n

    def s(self, c, i):
        return self.slack_offset + (self.n + 1) * c + i


@dataclass(eq=False)
class ConicProblem:
    """Standard conic form: min objective @ x  s.t.  rhs - matrix @ x in cones."""

    objective: np.ndarray
    matrix: sp.csc_matrix
    rhs: np.ndarray
    cones: list                      # ("zero"|"nonneg"|"soc", m) in row order
    vars: VariableMap
    spec: ProblemSpec = field(repr=False, default=None)

    @property
    def n_rows(self):
        return self.matrix.shape[0]

    @property
    def n_vars(self):
        return self.matrix.shape[1]


def assemble(spec: ProblemSpec) -> ConicProblem:
    """Encode the problem; rows are deterministically ordered by
    (constraint family, cell id, vertex id, datum id)."""
    tess = spec.tess
    n = tess.dim
    m_loc = n + 1
    sel = spec.data_selection
    for c, s_ in enumerate(sel):
        if any(d < 0 or d >= len(spec.data) for d in s_):
            raise ValueError(f"cell {c}: datum index out of range")
    vmap = VariableMap.build(n, sel)
    rows_i, cols_i, vals = [], [], []
    rhs = []
    row = 0

    def put(r, cols, coefs):
        rows_i.extend([r] * len(cols))
        cols_i.extend(int(c) for c in cols)
        vals.extend(float(v) for v in coefs)

    # ZERO block: gauge, continuity, gradient sums -----------------------
    put(row, [vmap.b(0)], [1.0])
    rhs.append(0.0)
    row += 1

    # continuity: per-vertex spanning chains over the incident cells; the
    # remaining shared-vertex pairs hold by transitivity, and dropping them
    # keeps the equality block full-rank (interior-point conditioning)
    for v, c, cp in continuity_rows(tess):
        x = tess.vertices[v]
        put(row, vmap.g(c), x)
        put(row, vmap.g(cp), -x)
        put(row, [vmap.b(c), vmap.b(cp)], [1.0, -1.0])
        rhs.append(0.0)
        row += 1

    for c in range(tess.n_cells):
        for k in range(n):
            cols = [vmap.gamma(c, j)[k] for j in range(len(sel[c]))]
            put(row, cols + [vmap.g(c)[k]], [1.0] * len(cols) + [-1.0])
            rhs.append(0.0)
            row += 1
    n_zero = row

    # NONNEG block: slack floors then decrease rows ----------------------
    for c in range(tess.n_cells):
        for i in range(m_loc):
            put(row, [vmap.s(c, i)], [-1.0])      # mu + s >= 0
            rhs.append(spec.mu)
            row += 1
    fsel = [spec.data.fs[sel[c]] for c in range(tess.n_cells)]
    xsel = [spec.data.xs[sel[c]] for c in range(tess.n_cells)]
    for c in range(tess.n_cells):
        vlocal = tess.vertices[tess.cell_array[c]]
        for i in range(m_loc):
            dist = np.linalg.norm(vlocal[i] - xsel[c], axis=1)
            cols, coefs = [], []
            for j in range(len(sel[c])):
                cols.extend(vmap.gamma(c, j))
                coefs.extend(fsel[c][j])
                cols.append(vmap.t(c, j))
                coefs.append(spec.M * dist[j])
            cols.append(vmap.s(c, i))
            coefs.append(-1.0)
            put(row, cols, coefs)                 # 0 - (.) >= 0
            rhs.append(0.0)
            row += 1
    n_nonneg = row - n_zero

    # SOC blocks: (t, gamma) per (cell, datum) ----------------------------
    cones = [("zero", n_zero), ("nonneg", n_nonneg)]
    for c in range(tess.n_cells):
        for j in range(len(sel[c])):
            put(row, [vmap.t(c, j)], [-1.0])
            rhs.append(0.0)
            row += 1
            for k in range(n):
                put(row, [vmap.gamma(c, j)[k]], [-1.0])
                rhs.append(0.0)
                row += 1
            cones.append(("soc", n + 1))

    objective = np.zeros(vmap.size)
    objective[vmap.slack_offset:] = 1.0
    matrix = sp.csc_matrix(
        (vals, (rows_i, cols_i)), shape=(row, vmap.size))
    return ConicProblem(objective, matrix, np.asarray(rhs), cones, vmap, spec)


def conic_residuals(problem: ConicProblem, x: np.ndarray) -> dict:
    """Worst violation per cone family of b - A x in K (for oracles/tests)."""
    slack = problem.rhs - problem.matrix @ x
    out = {"zero": 0.0, "nonneg": 0.0, "soc": 0.0}
    at = 0
    for kind, m in problem.cones:
        block = slack[at:at + m]
        if kind == "zero":
            out["zero"] = max(out["zero"], float(np.abs(block).max(initial=0)))
        elif kind == "nonneg":
            out["nonneg"] = max(out["nonneg"], float(np.maximum(-block, 0).max(initial=0)))
        else:
            out["soc"] = max(out["soc"],
                             float(np.linalg.norm(block[1:]) - block[0]))
        at += m
    return out


# ------------------------------------------------------------------ solving

@dataclass(eq=False)
class ConicSolution:
    status: str
    x: np.ndarray = None
    objective: float = None
    solve_time: float = 0.0
    solver_stats: dict = field(default_factory=dict)

    def gamma(self, problem, c, j):
        return self.x[problem.vars.gamma(c, j)]

    def g(self, problem, c):
        return self.x[problem.vars.g(c)]

    def b(self, problem, c):
        return float(self.x[problem.vars.b(c)])

    def slacks(self, problem) -> np.ndarray:
        n1 = problem.vars.n + 1
        return self.x[problem.vars.slack_offset:].reshape(problem.vars.n_cells, n1)


class ClarabelSolver:
    """Bundled interior-point backend (clarabel); accepts the block structure
    directly and returns primal values plus a status."""

    def __init__(self, tol: float = 1e-9, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, problem: ConicProblem) -> ConicSolution:
        try:
            import clarabel
        except ImportError as exc:                     # pragma: no cover
            raise SolverError("clarabel is not installed") from exc
        kinds = {"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
                 "soc": clarabel.SecondOrderConeT}
        cones = [kinds[k](m) for k, m in problem.cones]
        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.max_iter = self.max_iter
        settings.tol_feas = self.tol
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        # a stalled but feasible iterate is returned as AlmostSolved; the
        # solve() wrapper screens its actual residuals before accepting it
        settings.reduced_tol_feas = 1e-7
        settings.reduced_tol_gap_abs = 1e-2
        settings.reduced_tol_gap_rel = 1e-3
        settings.reduced_tol_ktratio = 1e-3
        P = sp.csc_matrix((problem.n_vars, problem.n_vars))
        solver = clarabel.DefaultSolver(P, problem.objective,
                                        problem.matrix, problem.rhs, cones, settings)
        res = solver.solve()
        status = str(res.status)
        if status in ("Solved", "AlmostSolved"):
            x = np.asarray(res.x)
            return ConicSolution(OPTIMAL, x, float(res.obj_val), res.solve_time,
                                 {"iterations": res.iterations, "status": status})
        if "Infeasible" in status and "Dual" not in status:
            return ConicSolution(INFEASIBLE, solver_stats={"status": status})
        return ConicSolution(NUMERICAL_FAILURE, solver_stats={"status": status})


def default_solver() -> ClarabelSolver:
    return ClarabelSolver()


def solve(problem: ConicProblem, solver=None) -> ConicSolution:
    """Run the backend; OPTIMAL results additionally pass a conic residual
    screen so downstream certification never trusts a sloppy status."""
    solver = solver or default_solver()
    sol = solver.solve(problem)
    if sol.status == OPTIMAL:
        res = conic_residuals(problem, sol.x)
        if max(res.values()) > 100 * TOL_FEAS:
            log.warning("solver reported optimal but residuals are %s", res)
            return ConicSolution(NUMERICAL_FAILURE, sol.x,
                                 solver_stats={**sol.solver_stats, "residuals": res})
        recomputed = float(problem.objective @ sol.x)
        if abs(recomputed - sol.objective) > max(TOL_OBJ, 1e-7 * abs(recomputed)) + 1e-6:
            log.warning("objective mismatch: %s vs %s", recomputed, sol.objective)
        sol.objective = recomputed
    return sol


# ------------------------------------------------------------ verification

@dataclass(frozen=True)
class VerificationReport:
    """Independent re-check of every constraint in its original form."""

    residuals: dict
    ok: bool

    @property
    def worst(self) -> float:
        return max(self.residuals.values())


def _direct_lhs(spec: ProblemSpec, gammas, c: int) -> np.ndarray:
    """Decrease-constraint left-hand sides for all vertices of cell c,
    using exact norms ||gamma_{d,c}||."""
    sel = spec.data_selection[c]
    fd = spec.data.fs[sel]
    xd = spec.data.xs[sel]
    gam = gammas[c]                                    # (|sel|, n)
    base = float(np.sum(gam * fd))
    norms = np.linalg.norm(gam, axis=1)
    verts = spec.tess.vertices[spec.tess.cell_array[c]]
    dist = np.linalg.norm(verts[:, None, :] - xd[None], axis=2)
    return base + spec.M * dist @ norms


def verify_solution(spec: ProblemSpec, sol: ConicSolution,
                    tol_feas: float = TOL_FEAS) -> VerificationReport:
    """Evaluate Eq-style constraints by direct substitution, solver-agnostic."""
    if sol.status != OPTIMAL:
        raise ValueError("can only verify OPTIMAL solutions")
    problem_vars = VariableMap.build(spec.tess.dim, spec.data_selection)
    x = sol.x
    g = np.stack([x[problem_vars.g(c)] for c in range(spec.tess.n_cells)])
    b = np.array([x[problem_vars.b(c)] for c in range(spec.tess.n_cells)])
    gammas = [np.stack([x[problem_vars.gamma(c, j)]
                        for j in range(len(spec.data_selection[c]))])
              for c in range(spec.tess.n_cells)]
    s = x[problem_vars.slack_offset:].reshape(spec.tess.n_cells, spec.tess.dim + 1)

    r_slack = float(np.maximum(-spec.mu - s, 0).max(initial=0))
    r_cont = 0.0
    for v, c, cp in shared_vertex_map(spec.tess):
        pv = spec.tess.vertices[v]
        r_cont = max(r_cont, abs((g[c] - g[cp]) @ pv - (b[cp] - b[c])))
    r_grad = max(float(np.abs(gammas[c].sum(axis=0) - g[c]).max())
                 for c in range(spec.tess.n_cells))
    r_dec = 0.0
    for c in range(spec.tess.n_cells):
        lhs = _direct_lhs(spec, gammas, c)
        r_dec = max(r_dec, float(np.maximum(lhs - s[c], 0).max()))
    residuals = {"slack_lower_bound": r_slack, "continuity": r_cont,
                 "gradient_sum": r_grad, "decrease": r_dec}
    return VerificationReport(residuals, all(v <= tol_feas for v in residuals.values()))


# ------------------------------------------------------------- extraction

def extract_candidate(spec: ProblemSpec, sol: ConicSolution):
    """PwaFunction plus per-(cell, vertex) slack array.

    The pieces are polished for exact continuity (vertex values averaged over
    incident cells, then refit per cell); gamma is re-projected so the
    gradient-sum constraint holds exactly for the refit g, and the
    certification slacks are recomputed by direct substitution,
    s = max(-mu, LHS), which is the optimum's exact value. A cell is certified
    iff every one of its vertex slacks is strictly negative.
    """
    if sol.status != OPTIMAL:
        raise ValueError("can only extract from OPTIMAL solutions")
    tess = spec.tess
    vmap = VariableMap.build(tess.dim, spec.data_selection)
    x = sol.x
    g_raw = np.stack([x[vmap.g(c)] for c in range(tess.n_cells)])
    b_raw = np.array([x[vmap.b(c)] for c in range(tess.n_cells)])

    # snap: average the vertex values over incident cells, refit pieces
    sums = np.zeros(tess.n_vertices)
    counts = np.zeros(tess.n_vertices)
    for c, row in enumerate(tess.cell_array):
        vals = tess.vertices[row] @ g_raw[c] + b_raw[c]
        np.add.at(sums, row, vals)
        np.add.at(counts, row, 1.0)
    snapped = _fit_from_vertex_values(tess, sums / np.maximum(counts, 1.0))

    slack_map = np.zeros((tess.n_cells, tess.dim + 1))
    certified = np.zeros(tess.n_cells, bool)
    for c in range(tess.n_cells):
        sel = spec.data_selection[c]
        gam = np.stack([x[vmap.gamma(c, j)] for j in range(len(sel))])
        # re-project so the gradient sum matches the refit g exactly
        gam = gam + (snapped.g[c] - gam.sum(axis=0)) / len(sel)
        fd = spec.data.fs[sel]
        xd = spec.data.xs[sel]
        base = float(np.sum(gam * fd))
        norms = np.linalg.norm(gam, axis=1)
        verts = tess.vertices[tess.cell_array[c]]
        dist = np.linalg.norm(verts[:, None, :] - xd[None], axis=2)
        lhs = base + spec.M * dist @ norms
        slack_map[c] = np.maximum(-spec.mu, lhs)
        certified[c] = bool(np.all(slack_map[c] < 0))
    V = PwaFunction(tess, snapped.g, snapped.b, certified)
    return V, slack_map


def vertex_slack_view(tess: Tessellation, slack_map: np.ndarray) -> np.ndarray:
    """Worst slack per global vertex over all incident (cell, vertex) slots."""
    worst = np.full(tess.n_vertices, -np.inf)
    for c, row in enumerate(tess.cell_array):
        np.maximum.at(worst, row, slack_map[c])
    return worst


# ---------------------------------------------------------------- export

def export_problem(problem: ConicProblem, path) -> None:
    """Documented sparse text export (see README: conic export format)."""
    mat = problem.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write("roa-conic-export 1\n")
        fh.write(f"vars {problem.n_vars}\n")
        fh.write(f"rows {problem.n_rows}\n")
        fh.write("cones " + " ".join(f"{k}:{m}" for k, m in problem.cones) + "\n")
        nz = np.nonzero(problem.objective)[0]
        fh.write(f"objective {len(nz)}\n")
        for i in nz:
            fh.write(f"{i} {problem.objective[i]:.17g}\n")
        fh.write(f"rhs {problem.n_rows}\n")
        for v in problem.rhs:
            fh.write(f"{v:.17g}\n")
        fh.write(f"matrix {mat.nnz}\n")
        for i, j, v in zip(mat.row, mat.col, mat.data):
            fh.write(f"{i} {j} {v:.17g}\n")
