"""Iterative certification driver: zoom into the uncertified region.

Each iteration tessellates the current annulus, generates a dataset that
passes the learnability check, solves the conic problem, extracts the patchy
candidate and its uncertified hull C, finds the certified level alpha, and
either terminates (no uncertified vertices, or C inside the exclusion zone)
or rescales the problem to X' = beta * C with a shrunk exclusion zone. Failed
iterations restart at the same index with a refined tessellation and more
data. Records persist everything needed to re-verify the chain of inclusions
offline.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import socp
from .dynamics import (Dataset, VectorField, check_learnability,
                       generate_dataset, merge_datasets)
from .geometry import (GeometryError, Polyunion, Tessellation, annulus_seed_points,
                       as_polyunion, box_polytope, convex_hull, mesh_from_dict,
                       mesh_to_dict, on_boundary_mask, polyunion_from_dict,
                       polyunion_to_dict, polyunion_subset, scale,
                       tessellate_annulus, refine as refine_mesh)
from .lyapunov import PwaFunction, certified_level, sublevel_contains

log = logging.getLogger(__name__)

TOL_BETA = 1e-3
BETA_MAX = 64.0
MAX_RESTARTS = 3

CERTIFIED = "CERTIFIED"
MAX_ITER = "MAX_ITER"
FAILED = "FAILED"

STEP_OK = "STEP_OK"
STEP_CERTIFIED = "STEP_CERTIFIED"
ITERATION_FAILED = "ITERATION_FAILED"


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Flat run parameters (the config-file keys mirror these fields)."""

    l_X: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    l_A: tuple = ((-0.1, 0.1), (-0.1, 0.1))
    mu: float = 5.0
    M: float = 2.5
    k_max: int = 10
    seed: int = 0
    shrink_rho: float = 0.5
    refine_factor: float = 1.5
    data_count: int = 300
    k_nearest: int = 60
    field: str = "pendulum"
    mesh_grading: float = 0.25
    mesh_floor_frac: float = 0.04

    def __post_init__(self):
        lx = np.asarray(self.l_X, float)
        la = np.asarray(self.l_A, float)
        if lx.shape != la.shape or lx.ndim != 2 or lx.shape[1] != 2:
            raise ConfigError("l_X/l_A must be per-dimension [lo, hi] pairs")
        if np.any(lx[:, 0] >= lx[:, 1]) or np.any(la[:, 0] >= la[:, 1]):
            raise ConfigError("box bounds need lo < hi")
        if np.any(la[:, 0] <= lx[:, 0]) or np.any(la[:, 1] >= lx[:, 1]):
            raise ConfigError("l_A must be strictly inside l_X")
        if not (0 < self.shrink_rho < 1):
            raise ConfigError("shrink_rho must lie in (0, 1)")
        if self.refine_factor <= 1:
            raise ConfigError("refine_factor must exceed 1")
        if self.mu < 0 or self.M <= 0 or self.k_max < 0 or self.data_count < 1 \
                or self.k_nearest < 1:
            raise ConfigError("mu >= 0, M > 0, k_max >= 0, counts >= 1 required")

    def boxes(self):
        lx = np.asarray(self.l_X, float)
        la = np.asarray(self.l_A, float)
        X = Polyunion([box_polytope(lx[:, 0], lx[:, 1])])
        A = Polyunion([box_polytope(la[:, 0], la[:, 1])])
        return X, A

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"l_X": [list(map(float, r)) for r in np.asarray(self.l_X, float)],
                "l_A": [list(map(float, r)) for r in np.asarray(self.l_A, float)],
                "mu": self.mu, "M": self.M, "k_max": self.k_max, "seed": self.seed,
                "shrink_rho": self.shrink_rho, "refine_factor": self.refine_factor,
                "data_count": self.data_count, "k_nearest": self.k_nearest,
                "field": self.field, "mesh_grading": self.mesh_grading,
                "mesh_floor_frac": self.mesh_floor_frac}


@dataclass(eq=False)
class IterationState:
    """Everything one iteration produced (inputs and, once solved, outputs)."""

    k: int
    X: Polyunion
    A: Polyunion
    data: Dataset = None
    tess: Tessellation = None
    V: PwaFunction = None
    alpha: float = None
    C: Polyunion = None
    beta: float = None          # upscaling that produced this X (k >= 1)
    slacks: np.ndarray = None   # (C, n+1) recomputed certification slacks
    objective: float = None
    verification: dict = None
    restarts: int = 0


@dataclass(eq=False)
class RunRecord:
    config: RunConfig
    states: list
    verdict: str
    failures: list = field(default_factory=list)

    @property
    def certified_level_sets(self):
        return [(s.V, s.alpha) for s in self.states if s.V is not None
                and s.alpha is not None]


# ------------------------------------------------------------- Eq. 5 hull

def uncertified_region(slacks: np.ndarray, tess: Tessellation, A) -> Polyunion:
    """conv(A union {vertices with any slack >= 0}); A itself when none."""
    A = as_polyunion(A)
    worst = socp.vertex_slack_view(tess, slacks)
    bad = np.nonzero(worst >= 0)[0]
    if len(bad) == 0:
        return A
    pts = np.vstack([A.all_vertices(), tess.vertices[bad]])
    return Polyunion([convex_hull(pts)])


# --------------------------------------------------------------- beta search

def find_beta(C, V: PwaFunction, alpha: float, A):
    """Highest beta >= 1 with scale(C, beta) inside the certified sublevel set.

    Bisection to TOL_BETA after doubling the upper bound until exclusion
    (capped at BETA_MAX); None when even beta = 1 fails.
    """
    C = as_polyunion(C)
    A = as_polyunion(A)

    def ok(beta):
        return sublevel_contains(V, alpha, scale(C, beta), A, C)

    if not ok(1.0):
        return None
    hi = 2.0
    while hi <= BETA_MAX and ok(hi):
        hi *= 2.0
    if hi > BETA_MAX:
        return BETA_MAX
    lo = hi / 2.0
    while hi - lo > TOL_BETA:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def shrink_A(A, rho: float):
    """Strictly smaller exclusion zone, scaled about the origin."""
    if not (0 < rho < 1):
        raise ValueError("rho must lie in (0, 1)")
    return scale(as_polyunion(A), rho)


# -------------------------------------------------------------------- step

@dataclass(eq=False)
class StepResult:
    status: str
    state: IterationState
    next_state: IterationState = None
    reason: str = None


def _seed_rng(config: RunConfig, k: int, attempt: int, purpose: int) -> int:
    base = np.random.SeedSequence([int(config.seed), k, attempt, purpose])
    return int(base.generate_state(1)[0])


def _build_mesh(state: IterationState, config: RunConfig) -> Tessellation:
    from .geometry import annulus_step_floor
    g = config.mesh_grading
    floor = annulus_step_floor(state.X, state.A, config.mesh_floor_frac)
    seeds = annulus_seed_points(state.X, state.A, grading=g,
                                floor_frac=config.mesh_floor_frac)
    return tessellate_annulus(
        state.X, state.A, seeds,
        boundary_h=lambda m: max(g * float(np.linalg.norm(m)), floor))


def _build_dataset(state, config, source, rng_seed, count):
    if isinstance(source, VectorField):
        carry = None
        if state.data is not None and len(state.data):
            sampling_region = scale(state.X, 1.2)
            keep = np.array([sampling_region.contains(p) for p in state.data.xs])
            if np.any(keep):
                carry = Dataset(state.data.xs[keep], state.data.fs[keep],
                                state.data.M)
        return generate_dataset(source, state.tess, "augmented", count,
                                rng_seed, initial=carry)
    data = source
    sampling_region = scale(state.X, 1.2)
    keep = np.array([sampling_region.contains(p) for p in data.xs])
    if not np.any(keep):
        raise GeometryError("stored dataset has no samples near the region")
    return Dataset(data.xs[keep], data.fs[keep], data.M)


def step(state: IterationState, config: RunConfig, source,
         prev_C=None, data_count: int = None, solver=None) -> StepResult:
    """One Algorithm-1 loop body at iteration state.k.

    Returns STEP_CERTIFIED (terminal success), STEP_OK with the k+1 input
    state, or ITERATION_FAILED with a reason in {COVERAGE, DATA_INSUFFICIENT,
    SOLVER, VERIFY, NO_LEVEL, CHAIN, NO_BETA}.
    """
    k = state.k
    count = data_count or config.data_count
    if state.tess is None:
        state.tess = _build_mesh(state, config)
    state.data = _build_dataset(state, config, source,
                                _seed_rng(config, k, state.restarts, 1), count)
    report = check_learnability(state.tess, state.data)
    if not report.covered:
        return StepResult(ITERATION_FAILED, state, reason="COVERAGE")

    spec = socp.make_problem_spec(state.tess, state.data, config.mu,
                                  k_nearest=config.k_nearest)
    problem = socp.assemble(spec)
    sol = socp.solve(problem, solver)
    if sol.status == socp.INFEASIBLE:
        return StepResult(ITERATION_FAILED, state, reason="DATA_INSUFFICIENT")
    if sol.status != socp.OPTIMAL:
        return StepResult(ITERATION_FAILED, state, reason="SOLVER")
    verification = socp.verify_solution(spec, sol)
    if not verification.ok:
        return StepResult(ITERATION_FAILED, state, reason="VERIFY")

    state.V, state.slacks = socp.extract_candidate(spec, sol)
    state.objective = sol.objective
    state.verification = verification.residuals
    state.C = uncertified_region(state.slacks, state.tess, state.A)
    n_bad = int(np.sum(socp.vertex_slack_view(state.tess, state.slacks) >= 0))

    try:
        state.alpha = certified_level(state.V, state.X, state.A)
    except ValueError:
        state.alpha = None
    if state.alpha is None:
        return StepResult(ITERATION_FAILED, state, reason="NO_LEVEL")

    # Theorem chain: the previous uncertified hull must sit inside the new
    # certified sublevel set (vacuous at k = 0); checked on every branch so a
    # CERTIFIED verdict always satisfies the theorem hypotheses
    if prev_C is not None and not sublevel_contains(
            state.V, state.alpha, prev_C, state.A, state.C):
        return StepResult(ITERATION_FAILED, state, reason="CHAIN")

    if n_bad == 0:
        return StepResult(STEP_CERTIFIED, state)
    if polyunion_subset(state.C, state.A):
        return StepResult(STEP_CERTIFIED, state)

    beta = find_beta(state.C, state.V, state.alpha, state.A)
    if beta is None:
        return StepResult(ITERATION_FAILED, state, reason="NO_BETA")

    next_state = IterationState(k + 1, scale(state.C, beta),
                                shrink_A(state.A, config.shrink_rho),
                                data=state.data, beta=beta)
    return StepResult(STEP_OK, state, next_state=next_state)


# --------------------------------------------------------------------- run

def run(config: RunConfig, source, solver=None) -> RunRecord:
    """Drive step() to a verdict. Deterministic per config.seed."""
    X0, A0 = config.boxes()
    states = []
    failures = []
    current = IterationState(0, X0, A0)
    prev_C = None
    data_count = config.data_count
    verdict = MAX_ITER
    k = 0
    while k < config.k_max:
        result = step(current, config, source, prev_C=prev_C,
                      data_count=data_count, solver=solver)
        if result.status == ITERATION_FAILED:
            failures.append({"k": k, "attempt": current.restarts,
                             "reason": result.reason,
                             "n_vertices": getattr(result.state.tess, "n_vertices", 0),
                             "n_data": len(result.state.data or ())})
            if current.restarts >= MAX_RESTARTS:
                verdict = FAILED
                break
            log.info("k=%d failed (%s); restarting with refinement", k, result.reason)
            refined = _restart_mesh(result.state, config)
            current = IterationState(k, current.X, current.A, data=result.state.data,
                                     tess=refined, beta=current.beta,
                                     restarts=current.restarts + 1)
            data_count = int(math.ceil(1.25 * data_count))
            continue
        states.append(result.state)
        if result.status == STEP_CERTIFIED:
            verdict = CERTIFIED
            break
        # run-level stop: uncertified hull already inside the original A
        if polyunion_subset(result.state.C, A0):
            verdict = CERTIFIED
            break
        prev_C = result.state.C
        current = result.next_state
        k += 1
    return RunRecord(config, states, verdict, failures)


def _restart_mesh(state: IterationState, config: RunConfig) -> Tessellation:
    """Refine the failed attempt's mesh inside its problem region."""
    if state.tess is None:
        return None
    region = state.C if state.C is not None else state.X
    try:
        return refine_mesh(state.tess, region, config.refine_factor)
    except GeometryError:
        return refine_mesh(state.tess, state.X, config.refine_factor)


# ---------------------------------------------------------- theorem checking

def check_theorem(record: RunRecord):
    """Re-verify the chain of inclusions from persisted data only.

    Checks, for every consecutive pair, C_{k-1} in L^{V_k}_{alpha_k} in X_k in
    L^{V_{k-1}}_{alpha_{k-1}}, plus A_k in L^{V_k}_{alpha_k}, and the final
    condition (no uncertified vertex, or C_K inside A_0). Returns
    (ok, violations).
    """
    states = [s for s in record.states if s.V is not None]
    if not states:
        return False, ["no solved iterations in record"]
    violations = []
    A0 = states[0].A
    for i, s in enumerate(states):
        vals = s.V.vertex_values()
        on_x = on_boundary_mask(s.tess.vertices, s.X)
        if not np.any(on_x) or s.alpha > float(vals[on_x].min()) + 1e-9:
            violations.append(f"L^V{s.k} not within X_{s.k}")
        on_a = on_boundary_mask(s.tess.vertices, s.A)
        if np.any(on_a) and s.alpha <= float(vals[on_a].max()):
            violations.append(f"A_{s.k} not within L^V{s.k}_a{s.k}")
        if i > 0:
            p = states[i - 1]
            if not sublevel_contains(s.V, s.alpha, p.C, s.A, s.C):
                violations.append(f"C_{p.k} not within L^V{s.k}_a{s.k}")
            if not sublevel_contains(p.V, p.alpha, s.X, p.A, p.C):
                violations.append(f"X_{s.k} not within L^V{p.k}_a{p.k}")
    last = states[-1]
    no_bad = bool(np.all(socp.vertex_slack_view(last.tess, last.slacks) < 0))
    if not no_bad and not polyunion_subset(last.C, A0):
        violations.append(f"C_{last.k} neither empty nor within A_0")
    return len(violations) == 0, violations


# ------------------------------------------------------------- persistence

RECORD_SCHEMA = "roa-run-record/1"


def record_to_dict(record: RunRecord) -> dict:
    states = []
    for s in record.states:
        entry = {"k": s.k,
                 "X": polyunion_to_dict(s.X),
                 "A": polyunion_to_dict(s.A),
                 "restarts": s.restarts}
        if s.tess is not None:
            entry["tess"] = mesh_to_dict(s.tess)
        if s.data is not None:
            entry["dataset"] = {"xs": s.data.xs.tolist(),
                                "fs": s.data.fs.tolist(), "M": s.data.M}
        if s.V is not None:
            entry["pieces"] = [{"g": list(map(float, s.V.g[c])),
                                "b": float(s.V.b[c]),
                                "certified": bool(s.V.certified[c])}
                               for c in range(s.tess.n_cells)]
            entry["slacks"] = s.slacks.tolist()
            entry["objective"] = s.objective
            entry["verification"] = s.verification
        if s.alpha is not None:
            entry["alpha"] = s.alpha
        if s.C is not None:
            entry["C"] = polyunion_to_dict(s.C)
        if s.beta is not None:
            entry["beta"] = s.beta
        states.append(entry)
    return {"schema": RECORD_SCHEMA, "config": record.config.to_dict(),
            "verdict": record.verdict, "failures": record.failures,
            "states": states}


def record_from_dict(raw: dict) -> RunRecord:
    if raw.get("schema") != RECORD_SCHEMA:
        raise ValueError(f"unsupported record schema {raw.get('schema')!r}")
    config = RunConfig.from_dict(raw["config"])
    states = []
    for entry in raw["states"]:
        s = IterationState(int(entry["k"]),
                           polyunion_from_dict(entry["X"]),
                           polyunion_from_dict(entry["A"]),
                           restarts=int(entry.get("restarts", 0)))
        if "tess" in entry:
            s.tess = mesh_from_dict(entry["tess"])
        if "dataset" in entry:
            d = entry["dataset"]
            s.data = Dataset(np.asarray(d["xs"]), np.asarray(d["fs"]), float(d["M"]))
        if "pieces" in entry:
            g = np.array([p["g"] for p in entry["pieces"]])
            b = np.array([p["b"] for p in entry["pieces"]])
            cert = np.array([p["certified"] for p in entry["pieces"]], bool)
            s.V = PwaFunction(s.tess, g, b, cert)
            s.slacks = np.asarray(entry["slacks"], float)
            s.objective = entry.get("objective")
            s.verification = entry.get("verification")
        s.alpha = entry.get("alpha")
        if "C" in entry:
            s.C = polyunion_from_dict(entry["C"])
        s.beta = entry.get("beta")
        states.append(s)
    return RunRecord(config, states, raw["verdict"], raw.get("failures", []))


def save_record(record: RunRecord, path) -> None:
    with open(path, "w") as fh:
        json.dump(record_to_dict(record), fh)


def load_record(path) -> RunRecord:
    with open(path) as fh:
        return record_from_dict(json.load(fh))
