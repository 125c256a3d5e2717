"""Vector fields, sampled datasets, the learnability check and RK4 simulation.

Vector-field evaluators are pure functions; datasets are immutable after
construction. Data radii r_d = ||f_d|| / M convert point samples into balls of
certified knowledge, and the learnability condition requires every
tessellation vertex to lie strictly inside some ball.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import TOL_GEO, Polyunion, as_polyunion, box_polytope, scale

log = logging.getLogger(__name__)


class SimulationDiverged(RuntimeError):
    """Trajectory produced a non-finite state."""


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent samples."""


@dataclass(frozen=True, eq=False)
class VectorField:
    """Point-wise evaluable right-hand side of x' = f(x).

    ``lipschitz_bound`` is the a-priori bound M valid on ``domain`` (when
    declared); evaluation outside the declared domain is allowed but flagged
    once through the module logger.
    """

    dim: int
    func: object                      # callable, vectorized over (..., dim)
    lipschitz_bound: float = None
    name: str = ""
    domain: object = None
    _flagged: list = field(default_factory=list, repr=False)

    def __call__(self, x):
        x = np.asarray(x, float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"field {self.name or '?'} expects dim {self.dim}")
        if self.domain is not None and not self._flagged:
            pts = np.atleast_2d(x)
            if any(not self.domain.contains(p, 1e-9) for p in pts):
                log.warning("field %s evaluated outside its declared domain of "
                            "validity for M=%s", self.name, self.lipschitz_bound)
                self._flagged.append(True)
        out = np.asarray(self.func(x), float)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"field {self.name or '?'} returned non-finite values")
        return out


def evaluate(field_: VectorField, x) -> np.ndarray:
    """f(x) for a single point."""
    return field_(np.asarray(x, float))


def pendulum() -> VectorField:
    """Damped pendulum: (theta, omega) -> (omega, -sin(theta) - 2*omega)."""

    def f(x):
        x = np.asarray(x, float)
        return np.stack([x[..., 1], -np.sin(x[..., 0]) - 2.0 * x[..., 1]], axis=-1)

    return VectorField(2, f, lipschitz_bound=2.5, name="pendulum",
                       domain=box_polytope([-1, -1], [1, 1]))


def vanderpol() -> VectorField:
    """Time-reversed Van der Pol oscillator (stable origin), mu = 1."""

    def f(x):
        x = np.asarray(x, float)
        return np.stack([-x[..., 1], x[..., 0] - (1.0 - x[..., 0] ** 2) * x[..., 1]],
                        axis=-1)

    # M valid on the 1.2-dilated box used by augmented sampling (sup ~3.91)
    return VectorField(2, f, lipschitz_bound=4.0, name="vanderpol",
                       domain=box_polytope([-1, -1], [1, 1]))


def linear_field(dim: int = 2) -> VectorField:
    """Globally contracting linear benchmark f(x) = -x (M = 1)."""
    return VectorField(dim, lambda x: -np.asarray(x, float),
                       lipschitz_bound=1.0, name="linear")


_BUILTINS = {"pendulum": pendulum, "vanderpol": vanderpol, "linear": linear_field}


def field_from_name(name: str):
    """Resolve a --field argument: builtin name or ``csv:<path>`` dataset."""
    if name in _BUILTINS:
        return _BUILTINS[name]()
    if name.startswith("csv:"):
        raise ValueError("csv datasets need a Lipschitz bound; "
                         "use load_dataset(path, lipschitz_bound)")
    raise ValueError(f"unknown field {name!r}; choose from "
                     f"{sorted(_BUILTINS)} or csv:<path>")


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples (x_d, f_d) of the unknown field plus the Lipschitz bound M."""

    xs: np.ndarray
    fs: np.ndarray
    M: float

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, float))
        fs = np.atleast_2d(np.asarray(self.fs, float))
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "fs", fs)
        if xs.shape != fs.shape:
            raise DatasetError("sample/value shape mismatch")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(fs))):
            raise DatasetError("non-finite dataset entries")
        if self.M <= 0:
            raise DatasetError("Lipschitz bound must be positive")
        if len(xs) > 1:
            from scipy.spatial import cKDTree
            pairs = cKDTree(xs).query_pairs(TOL_GEO)
            if pairs:
                raise DatasetError(f"duplicate sample points: {sorted(pairs)[:3]}")

    def __len__(self):
        return len(self.xs)

    @property
    def dim(self):
        return self.xs.shape[1]

    def radii(self) -> np.ndarray:
        """Ball radii r_d = ||f_d|| / M."""
        return np.linalg.norm(self.fs, axis=1) / self.M


def _dedupe_against(xs, existing, tol=TOL_GEO):
    if len(existing) == 0 or len(xs) == 0:
        return xs
    from scipy.spatial import cKDTree
    d, _ = cKDTree(existing).query(xs)
    return xs[d > tol]


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Union of samples (b's near-duplicates of a dropped); M from a."""
    if len(b) == 0:
        return a
    from scipy.spatial import cKDTree
    d, _ = cKDTree(a.xs).query(b.xs)
    keep = d > TOL_GEO
    if not np.any(keep):
        return a
    return Dataset(np.vstack([a.xs, b.xs[keep]]), np.vstack([a.fs, b.fs[keep]]), a.M)


@dataclass(frozen=True)
class CoverageReport:
    """Result of the learnability check: strict ball coverage of all vertices."""

    covered: bool
    uncovered_vertices: tuple
    margin: float


def check_learnability(tess, data: Dataset) -> CoverageReport:
    """Eq.-style coverage: vertex v is covered iff some ||v - x_d|| < r_d.

    margin = min over vertices of max over d of (r_d - ||v - x_d||); strict
    coverage means margin > 0 (margin 0 counts as uncovered).
    """
    r = data.radii()
    verts = tess.vertices
    best = np.full(len(verts), -np.inf)
    chunk = max(1, int(4_000_000 / max(1, len(data))))
    for s in range(0, len(verts), chunk):
        d = np.linalg.norm(verts[s:s + chunk, None, :] - data.xs[None], axis=2)
        best[s:s + chunk] = np.max(r[None, :] - d, axis=1)
    uncovered = tuple(int(i) for i in np.nonzero(best <= 0)[0])
    return CoverageReport(len(uncovered) == 0, uncovered, float(best.min()))


class Sampling(str, Enum):
    UNIFORM = "uniform"
    ON_VERTICES = "on_vertices"
    AUGMENTED = "augmented"


def _bbox(tess):
    return tess.vertices.min(axis=0), tess.vertices.max(axis=0)


def _tess_region(tess) -> Polyunion:
    if tess.domain is not None:
        return as_polyunion(tess.domain)
    lo, hi = _bbox(tess)
    return Polyunion([box_polytope(lo, hi)])


def generate_dataset(field_: VectorField, tess, strategy, count: int,
                     rng_seed: int, initial: Dataset = None) -> Dataset:
    """Deterministic sampling of the field over (and around) a tessellation.

    UNIFORM draws ``count`` points from the tessellation's bounding box;
    ON_VERTICES samples exactly the tessellation vertices; AUGMENTED starts
    from UNIFORM plus vertex samples plus carried-over ``initial`` samples and
    keeps adding a ring of samples outside the tessellation (up to dilation
    1.2) until the learnability check passes or the size cap 4*count is hit.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    M = field_.lipschitz_bound
    if M is None:
        raise ValueError("field needs a declared Lipschitz bound to build datasets")
    strategy = Sampling(strategy)
    rng = np.random.default_rng(rng_seed)
    lo, hi = _bbox(tess)

    def uniform(k):
        return rng.uniform(lo, hi, size=(k, tess.dim))

    if strategy is Sampling.UNIFORM:
        xs = uniform(count)
    elif strategy is Sampling.ON_VERTICES:
        xs = tess.vertices.copy()
    else:
        parts = [tess.vertices.copy(), uniform(count)]
        if initial is not None and len(initial):
            parts.insert(0, initial.xs)
        xs = parts[0]
        for p in parts[1:]:
            xs = np.vstack([xs, _dedupe_against(p, xs)])
        region = _tess_region(tess)
        dilated = scale(region, 1.2)
        cap = max(4 * count, len(xs))
        while True:
            data = Dataset(xs, field_(xs), M)
            if check_learnability(tess, data).covered or len(xs) >= cap:
                break
            ring = rng.uniform(1.2 * lo, 1.2 * hi, size=(count, tess.dim))
            keep = np.array([dilated.contains(p) and not region.contains(p, -1e-9)
                             for p in ring])
            extra = _dedupe_against(ring[keep], xs)
            if len(extra) == 0:
                extra = _dedupe_against(uniform(count // 2 + 1), xs)
            if len(extra) == 0:
                break
            xs = np.vstack([xs, extra])[:cap]
    return Dataset(xs, field_(xs), M)


# ------------------------------------------------------------- simulation

def simulate_trajectory(field_: VectorField, x0, dt: float, t_end: float) -> np.ndarray:
    """Classical RK4 path sampled every dt (includes the initial state)."""
    if dt <= 0 or t_end <= dt:
        raise ValueError("need dt > 0 and t_end > dt")
    steps = int(round(t_end / dt))
    out = np.empty((steps + 1, field_.dim))
    x = np.asarray(x0, float)
    out[0] = x
    f = field_.func
    for i in range(1, steps + 1):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(f"non-finite state at t={i * dt:g}")
        out[i] = x
    return out


# ---------------------------------------------------------------- file io

def save_dataset(data: Dataset, path) -> None:
    """CSV with header x1..xn,f1..fn, one sample per row, 17 significant digits."""
    n = data.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i+1}" for i in range(n)] + [f"f{i+1}" for i in range(n)])
        for x, f in zip(data.xs, data.fs):
            writer.writerow([f"{v:.17g}" for v in np.r_[x, f]])


def load_dataset(path, lipschitz_bound: float) -> Dataset:
    """Parse the documented CSV schema; malformed rows are rejected by number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(header) % 2 or not header[0].startswith("x"):
            raise DatasetError(f"{path}: bad header {header!r}")
        n = len(header) // 2
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 * n:
                raise DatasetError(f"{path}:{lineno}: expected {2*n} columns")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric entry") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{path}:{lineno}: non-finite entry")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    arr = np.asarray(rows, float)
    return Dataset(arr[:, :n], arr[:, n:], lipschitz_bound)
