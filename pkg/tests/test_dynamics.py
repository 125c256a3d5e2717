import numpy as np
import pytest

from roacert import dynamics as dyn
from roacert import geometry as geo


@pytest.fixture(scope="module")
def small_mesh():
    X = geo.Polyunion([geo.box_polytope([-1, -1], [1, 1])])
    A = geo.Polyunion([geo.box_polytope([-0.1, -0.1], [0.1, 0.1])])
    seeds = geo.annulus_seed_points(X, A, grading=0.45, floor_frac=0.1)
    return geo.tessellate_annulus(X, A, seeds,
                                  boundary_h=lambda m: max(0.45 * np.linalg.norm(m), 0.14))


# ------------------------------------------------------------- vector fields

def test_pendulum_equilibrium_and_values():
    f = dyn.pendulum()
    assert np.allclose(dyn.evaluate(f, [0, 0]), [0, 0])
    assert np.allclose(dyn.evaluate(f, [1, 0]), [0, -np.sin(1.0)])
    assert np.allclose(dyn.evaluate(f, [0, 1]), [1, -2])
    assert f.lipschitz_bound == 2.5


def test_pendulum_lipschitz_bound_dominates_jacobian_grid():
    # dense grid of spectral norms of [[0,1],[-cos th,-2]] over [-1,1]^2
    worst = max(np.linalg.norm(np.array([[0, 1], [-np.cos(t), -2.0]]), 2)
                for t in np.linspace(-1, 1, 401))
    assert worst < 2.5


def test_linear_field_evaluate():
    f = dyn.linear_field()
    assert np.allclose(dyn.evaluate(f, [0.3, -0.4]), [-0.3, 0.4])


@pytest.mark.parametrize("maker", [dyn.pendulum, dyn.vanderpol, dyn.linear_field])
def test_lipschitz_property_random_pairs(maker):
    f = maker()
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1, 1, size=(1000, 2))
    ys = rng.uniform(-1, 1, size=(1000, 2))
    lhs = np.linalg.norm(f(xs) - f(ys), axis=1)
    rhs = f.lipschitz_bound * np.linalg.norm(xs - ys, axis=1)
    assert np.all(lhs <= rhs + 1e-12)


def test_field_rejects_bad_input():
    f = dyn.pendulum()
    with pytest.raises(ValueError):
        f(np.zeros(3))
    with pytest.raises(ValueError):
        dyn.field_from_name("nosuch")


# ------------------------------------------------------------------ datasets

def test_dataset_rejects_duplicates_and_nonfinite():
    with pytest.raises(dyn.DatasetError):
        dyn.Dataset([[0, 0], [0, 0]], [[1, 1], [1, 1]], 1.0)
    with pytest.raises(dyn.DatasetError):
        dyn.Dataset([[0, np.nan]], [[1, 1]], 1.0)
    with pytest.raises(dyn.DatasetError):
        dyn.Dataset([[0, 0]], [[1, 1]], 0.0)


def test_generate_on_vertices(small_mesh):
    data = dyn.generate_dataset(dyn.pendulum(), small_mesh, "on_vertices", 10, 0)
    assert len(data) == small_mesh.n_vertices
    assert np.allclose(np.sort(data.xs, axis=0), np.sort(small_mesh.vertices, axis=0))


def test_generate_deterministic(small_mesh):
    a = dyn.generate_dataset(dyn.pendulum(), small_mesh, "augmented", 50, 123)
    b = dyn.generate_dataset(dyn.pendulum(), small_mesh, "augmented", 50, 123)
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.fs, b.fs)
    c = dyn.generate_dataset(dyn.pendulum(), small_mesh, "uniform", 50, 7)
    d = dyn.generate_dataset(dyn.pendulum(), small_mesh, "uniform", 50, 7)
    assert np.array_equal(c.xs, d.xs)


def test_generate_augmented_covers(small_mesh):
    data = dyn.generate_dataset(dyn.pendulum(), small_mesh, "augmented", 100, 1)
    report = dyn.check_learnability(small_mesh, data)
    assert report.covered and report.margin > 0


# --------------------------------------------------------------- learnability

def test_learnability_zero_radius_uncovered():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [0, 1], [1, 1]])
    data = dyn.Dataset([[0.0, 0.0]], [[0.0, 0.0]], 1.0)   # equilibrium only
    rep = dyn.check_learnability(t, data)
    assert not rep.covered and 0 in rep.uncovered_vertices


def test_learnability_vertex_sample_covers():
    t = geo.delaunay_triangulate([[0, 0], [1, 0], [0, 1], [1, 1]])
    xs = t.vertices
    fs = np.ones_like(xs)
    rep = dyn.check_learnability(t, dyn.Dataset(xs, fs, 1.0))
    assert rep.covered


def test_learnability_pendulum_arithmetic():
    # r_d = ||(0, -sin 1)|| / 2.5 at x_d = (1, 0): vertex (0.7, 0) is inside,
    # vertex (0.6, 0) is not
    f = dyn.pendulum()
    r = np.linalg.norm(f(np.array([1.0, 0.0]))) / 2.5
    assert abs(r - np.sin(1.0) / 2.5) < 1e-15
    assert np.linalg.norm([0.7 - 1.0, 0.0]) < r
    assert np.linalg.norm([0.6 - 1.0, 0.0]) > r
    t = geo.delaunay_triangulate([[0.7, 0], [0.6, 0], [0.65, 0.1], [0.65, -0.1]])
    data = dyn.Dataset([[1.0, 0.0]], [f(np.array([1.0, 0.0]))], 2.5)
    rep = dyn.check_learnability(t, data)
    v06 = int(np.argmin(np.linalg.norm(t.vertices - [0.6, 0], axis=1)))
    v07 = int(np.argmin(np.linalg.norm(t.vertices - [0.7, 0], axis=1)))
    assert v06 in rep.uncovered_vertices and v07 not in rep.uncovered_vertices


def test_learnability_monotone_under_samples(small_mesh):
    f = dyn.pendulum()
    rng = np.random.default_rng(2)
    xs = rng.uniform(-1, 1, size=(60, 2))
    small = dyn.Dataset(xs[:30], f(xs[:30]), 2.5)
    big = dyn.Dataset(xs, f(xs), 2.5)
    rep_small = dyn.check_learnability(small_mesh, small)
    rep_big = dyn.check_learnability(small_mesh, big)
    assert set(rep_big.uncovered_vertices) <= set(rep_small.uncovered_vertices)
    assert rep_big.margin >= rep_small.margin


# ---------------------------------------------------------------- simulation

def test_rk4_linear_decay():
    f = dyn.linear_field()
    path = dyn.simulate_trajectory(f, [1.0, 0.0], 0.01, 10.0)
    assert np.linalg.norm(path[-1]) <= np.exp(-10) + 1e-4


def test_rk4_pendulum_converges():
    path = dyn.simulate_trajectory(dyn.pendulum(), [0.5, 0.5], 0.01, 20.0)
    assert np.linalg.norm(path[-1]) < 0.01


def test_rk4_richardson_order():
    f = dyn.pendulum()
    coarse = dyn.simulate_trajectory(f, [0.5, 0.5], 0.02, 2.0)[-1]
    fine = dyn.simulate_trajectory(f, [0.5, 0.5], 0.01, 2.0)[-1]
    finest = dyn.simulate_trajectory(f, [0.5, 0.5], 0.005, 2.0)[-1]
    e1 = np.linalg.norm(coarse - finest)
    e2 = np.linalg.norm(fine - finest)
    assert e2 < e1 / 8          # 4th order: halving dt cuts error by ~16
    assert np.linalg.norm(fine - coarse) < 1e-6


def test_rk4_divergence_detected():
    blowup = dyn.VectorField(1, lambda x: np.asarray(x, float) ** 2, 1.0, "blowup")
    with pytest.raises(dyn.SimulationDiverged), np.errstate(over="ignore"):
        dyn.simulate_trajectory(blowup, [3.0], 0.1, 10.0)
    with pytest.raises(ValueError):
        dyn.simulate_trajectory(dyn.pendulum(), [0, 0], -0.1, 1.0)


# ------------------------------------------------------------------- file io

def test_dataset_roundtrip(tmp_path, small_mesh):
    data = dyn.generate_dataset(dyn.pendulum(), small_mesh, "uniform", 40, 5)
    path = tmp_path / "data.csv"
    dyn.save_dataset(data, path)
    back = dyn.load_dataset(path, 2.5)
    assert np.max(np.abs(back.xs - data.xs)) < 1e-15
    assert np.max(np.abs(back.fs - data.fs)) < 1e-15
    assert len(back) == len(data)


def test_load_rejects_nan_with_row_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,f1,f2\n0,0,1,1\n0.5,nan,1,1\n")
    with pytest.raises(dyn.DatasetError) as err:
        dyn.load_dataset(path, 1.0)
    assert ":3:" in str(err.value)


def test_load_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,f1,f2\n0,0,1\n")
    with pytest.raises(dyn.DatasetError):
        dyn.load_dataset(path, 1.0)
    path.write_text("x1,x2,f1,f2\n0,0,1,oops\n")
    with pytest.raises(dyn.DatasetError):
        dyn.load_dataset(path, 1.0)


def test_merge_datasets_dedupes():
    a = dyn.Dataset([[0, 0], [1, 1]], [[1, 0], [0, 1]], 1.0)
    b = dyn.Dataset([[1, 1], [2, 2]], [[0, 1], [1, 1]], 1.0)
    merged = dyn.merge_datasets(a, b)
    assert len(merged) == 3
