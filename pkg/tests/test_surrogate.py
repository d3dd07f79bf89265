import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfohist.core import BudgetExhausted, Bounds, CompositeProblem, CountingOracle, SolverConfig, make_rng
from dfohist.problems import LeastSquaresOuter
from dfohist.surrogate import (
    APPROX,
    CACHED,
    EXACT,
    LINEAR_SCAN_BELOW,
    HistoryFormatError,
    HistoryStore,
    NeighborSet,
    approximate_or_evaluate,
    kappa_app,
    point_values,
    regress,
    score_candidates,
)


def neighbors(theta, phi, center=None):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    c = np.zeros(theta.shape[1]) if center is None else np.asarray(center, dtype=float)
    return NeighborSet(theta, np.asarray(phi, dtype=float), c, 1.0, np.arange(theta.shape[0]))


def toy_problem(p=2, n_w=1, shared=True):
    W = np.arange(p * n_w, dtype=float).reshape(p, n_w)

    def element(i, x):
        return float(np.sum(x) + W[i].sum())

    return CompositeProblem(2, p, element, LeastSquaresOuter(np.zeros(p)), Bounds([0.0, 0.0], [5.0, 5.0]),
                            features=W, shared_history=shared)


def test_record_and_dedup():
    s = HistoryStore(2, 1)
    assert len(s) == 0
    s.record([0.0, 1.0], [2.0], 3.0)
    assert len(s) == 1
    s.record([0.0, 1.0], [2.0], 4.0)
    assert len(s) == 1 and s.exact([0.0, 1.0], [2.0]) == 4.0
    s.record([0.0, 1.0], [2.5], 4.0)
    assert len(s) == 2
    with pytest.raises(ValueError):
        s.record([0.0], [2.0], 1.0)
    with pytest.raises(ValueError):
        s.record([0.0, math.nan], [2.0], 1.0)


def test_store_grows_past_capacity():
    s = HistoryStore(1, 0)
    for j in range(5000):
        s.record([float(j)], [], float(j))
    assert len(s) == 5000
    assert s.exact([4321.0], []) == 4321.0


def test_query_closed_ball_and_zero_radius():
    s = HistoryStore(1, 1)
    s.record([0.0], [0.0], 1.0)
    s.record([0.3], [0.4], 2.0)  # distance exactly 0.5
    assert len(s.query_neighbors([0.0], [0.0], 0.5)) == 2
    nb = s.query_neighbors([0.0], [0.0], 0.0)
    assert len(nb) == 1 and nb.phi[0] == 1.0
    assert len(s.query_neighbors([1e-300], [0.0], 0.0)) == 0
    with pytest.raises(ValueError):
        s.query_neighbors([0.0], [0.0], -1.0)


@pytest.mark.parametrize("n_rec", [100, 1000, 3000])
def test_query_matches_linear_scan(n_rec):
    rng = make_rng(20, n_rec)
    s = HistoryStore(3, 2)
    pts = rng.uniform(-2, 2, (n_rec // 4, 3))
    for j in range(n_rec):
        s.record(pts[j % pts.shape[0]], rng.uniform(-1, 1, 2), rng.standard_normal())
    assert (len(s) >= LINEAR_SCAN_BELOW) == (n_rec >= 1000)
    for _ in range(100):
        q = rng.uniform(-2, 2, 3)
        w = rng.uniform(-1, 1, 2)
        r = float(rng.uniform(0, 1.5))
        limit = int(rng.integers(0, len(s) + 1)) if rng.random() < 0.3 else None
        got = s.query_neighbors(q, w, r, limit=limit).rows
        assert np.array_equal(np.sort(got), s.linear_scan(q, w, r, limit=limit))


def test_partitioned_store_keeps_elements_apart():
    s = HistoryStore(1, 0, partitioned=True)
    s.record([0.0], [], 1.0, group=0)
    s.record([0.0], [], 2.0, group=1)
    assert len(s) == 2
    assert s.exact([0.0], [], 1) == 2.0
    assert len(s.query_neighbors([0.0], [], 1.0, group=0)) == 1


def test_regress_examples():
    r = regress(neighbors([[1.0, 2.0]], [7.0]), np.array([1.5, 2.0]), 1e-6)
    assert r.value == pytest.approx(7.0) and np.allclose(r.beta, [1.0])
    r = regress(neighbors([[-1.0, 0.0], [1.0, 0.0]], [1.0, 3.0]), np.zeros(2), 1e-6)
    assert np.allclose(r.beta, [0.5, 0.5]) and r.value == pytest.approx(2.0)
    rng = make_rng(21)
    T = rng.standard_normal((6, 3))
    phi = rng.standard_normal(6)
    r = regress(neighbors(T, phi), rng.standard_normal(3), 1e12)
    assert np.allclose(r.beta, 1 / 6, atol=1e-10)
    assert r.value == pytest.approx(phi.mean(), abs=1e-10)


def test_regress_zero_ridge_singular():
    with pytest.raises(np.linalg.LinAlgError):
        regress(neighbors([[0.0, 0.0], [1.0, 0.0]], [1.0, 2.0]), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        regress(neighbors(np.zeros((0, 2)), []), np.zeros(2), 1e-6)


def test_regress_exact_on_affine_data():
    rng = make_rng(22)
    a = rng.standard_normal(3)
    T = rng.standard_normal((10, 3))
    q = rng.standard_normal(3)
    assert regress(neighbors(T, T @ a + 2.0), q, 1e-12).value == pytest.approx(q @ a + 2.0, abs=1e-8)


def uncentered_beta(T, q, lam):
    """Weights from the normal equations with a leading ones column and an
    unpenalised intercept."""
    N, d = T.shape
    M = np.hstack([np.ones((N, 1)), T])
    Ibar = np.eye(d + 1)
    Ibar[0, 0] = 0.0
    coef = np.linalg.solve(M.T @ M + lam * Ibar, np.concatenate([[1.0], q]))
    return M @ coef


def test_regress_matches_uncentered_oracle():
    rng = make_rng(23)
    for _ in range(500):
        N = int(rng.integers(1, 15))
        d = int(rng.integers(1, 6))
        T = rng.standard_normal((N, d))
        q = rng.standard_normal(d)
        lam = float(10 ** rng.uniform(-3, 1))
        got = regress(neighbors(T, rng.standard_normal(N)), q, lam).beta
        assert np.allclose(got, uncentered_beta(T, q, lam), atol=1e-8 * (1 + np.abs(got).max()))


@given(st.integers(0, 100_000))
@settings(max_examples=300)
def test_regress_weights_sum_to_one_and_translate(seed):
    rng = make_rng(seed)
    N = int(rng.integers(1, 20))
    d = int(rng.integers(1, 8))
    T = rng.standard_normal((N, d))
    phi = rng.standard_normal(N)
    q = rng.standard_normal(d)
    lam = float(10 ** rng.uniform(-6, 0))
    r = regress(neighbors(T, phi), q, lam)
    assert abs(r.beta.sum() - 1.0) <= 1e-10
    shift = rng.standard_normal(d) * 10
    r2 = regress(neighbors(T + shift, phi), q + shift, lam)
    assert r2.value == pytest.approx(r.value, rel=1e-8, abs=1e-8)


def lipschitz_function(rng, d):
    """Random function with a known Lipschitz constant in the 2-norm."""
    kind = int(rng.integers(0, 3))
    a = rng.standard_normal(d)
    if kind == 0:
        z = rng.standard_normal(d)
        return (lambda t: float(a @ t + np.linalg.norm(t - z))), float(np.linalg.norm(a) + 1.0)
    if kind == 1:
        c = rng.standard_normal(d)
        return (lambda t: float(a @ t + np.sin(c @ t))), float(np.linalg.norm(a) + np.linalg.norm(c))
    A = rng.standard_normal((3, d))
    return (lambda t: float(np.max(A @ t))), float(np.max(np.linalg.norm(A, axis=1)))


def ball_points(rng, center, delta, N):
    d = center.size
    u = rng.standard_normal((N, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return center + delta * u * rng.random((N, 1)) ** (1.0 / d)


def test_error_bound_on_lipschitz_functions():
    rng = make_rng(24)
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        N = int(rng.integers(1, 21))
        delta = float(10 ** rng.uniform(-3, 0))
        lam = float(10 ** rng.uniform(-6, -1))
        fn, L = lipschitz_function(rng, d)
        q = rng.standard_normal(d)
        T = ball_points(rng, q, delta, N)
        nb = neighbors(T, [fn(t) for t in T])
        err = abs(regress(nb, q, lam).value - fn(q))
        assert err <= kappa_app(nb, lam, L, delta) * delta * (1 + 1e-9) + 1e-14


def test_approximate_or_evaluate_paths():
    prob = toy_problem()
    store = HistoryStore(2, 1)
    oracle = CountingOracle(prob)
    cfg = SolverConfig()
    x = np.array([1.0, 1.0])
    v, src = approximate_or_evaluate(oracle, 0, x, 0.1, store, cfg)
    assert src == EXACT and v == 2.0 and len(store) == 1 and oracle.count == 1
    v, src = approximate_or_evaluate(oracle, 0, x, 0.1, store, cfg)
    assert src == CACHED and oracle.count == 1
    # a different x with a neighbour at (x, w_0) within the radius
    v, src = approximate_or_evaluate(oracle, 0, x + [0.0, 1e-3], 0.1, store, cfg)
    assert src == APPROX and v == pytest.approx(2.0) and oracle.count == 1
    v, src = approximate_or_evaluate(oracle, 0, x + [0.0, 1e-3], 0.1, store, cfg, allow_approx=False)
    assert src == EXACT and oracle.count == 2
    with pytest.raises(ValueError):
        approximate_or_evaluate(oracle, 0, np.array([-1.0, 0.0]), 0.1, store, cfg)


def test_point_values_budget_checked_up_front():
    prob = toy_problem(p=3)
    store = HistoryStore(2, 1)
    oracle = CountingOracle(prob, budget=5)
    cfg = SolverConfig()
    vals, src = point_values(oracle, np.zeros(2), 0.0, store, cfg, exact_only=True)
    assert src == [EXACT] * 3 and oracle.count == 3
    with pytest.raises(BudgetExhausted):
        point_values(oracle, np.ones(2), 0.0, store, cfg, exact_only=True)
    assert oracle.count == 3 and len(store) == 3
    vals2, src2 = point_values(oracle, np.zeros(2), 0.0, store, cfg)
    assert src2 == [CACHED] * 3 and np.array_equal(vals, vals2)


def test_point_values_respects_limit():
    prob = toy_problem(p=1)
    store = HistoryStore(2, 1)
    oracle = CountingOracle(prob)
    cfg = SolverConfig()
    point_values(oracle, np.zeros(2), 0.0, store, cfg, exact_only=True)
    _, src = point_values(oracle, np.array([0.0, 1e-3]), 0.1, store, cfg, limit=0)
    assert src == [EXACT]
    _, src = point_values(oracle, np.array([0.0, 2e-3]), 0.1, store, cfg, limit=1)
    assert src == [APPROX]


def test_score_candidates_examples():
    b = Bounds.unbounded(2)
    W = np.array([[0.0], [1.0]])
    empty = HistoryStore(2, 1)
    pts, sc = score_candidates(empty, np.zeros(2), 1.0, 0.1, b, W, 1)
    assert pts.shape == (0, 2)
    s = HistoryStore(2, 1)
    s.record([0.1, 0.0], [0.0], 1.0)
    s.record([0.1, 0.0], [1.0], 1.0)
    s.record([0.05, 0.0], [0.0], 1.0)
    s.record([0.0, 0.0], [0.0], 1.0)  # x_k itself
    s.record([3.0, 0.0], [0.0], 1.0)  # outside the region
    pts, sc = score_candidates(s, np.zeros(2), 1.0, 0.0, b, W, 1)
    assert np.array_equal(pts, [[0.05, 0.0], [0.1, 0.0]])
    assert list(sc) == [1, 2]
    pts, sc = score_candidates(s, np.zeros(2), 1.0, 0.0, b, W, 2)
    assert np.array_equal(pts, [[0.1, 0.0]]) and list(sc) == [2]
    # with a positive radius the w=1 neighbour of (0.1, 0) also counts for (0.05, 0)
    pts, sc = score_candidates(s, np.zeros(2), 1.0, 0.1, b, W, 2)
    assert len(pts) == 2 and list(sc) == [2, 2]
    pts, _ = score_candidates(s, np.zeros(2), 1.0, 0.1, Bounds([0.07, -1.0], [1.0, 1.0]), W, 1)
    assert np.array_equal(pts, [[0.1, 0.0]])


def test_save_load_round_trip(tmp_path):
    rng = make_rng(25)
    s = HistoryStore(3, 2)
    for _ in range(50):
        s.record(rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal() * 1e-7)
    path = tmp_path / "h.txt"
    s.save(path)
    t = HistoryStore.load(path)
    assert [tuple(map(np.ndarray.tobytes, r[:2])) + r[2:] for r in s.records()] == \
        [tuple(map(np.ndarray.tobytes, r[:2])) + r[2:] for r in t.records()]


def test_save_empty_and_partitioned(tmp_path):
    path = tmp_path / "e.txt"
    HistoryStore(2, 1).save(path)
    assert path.read_text().count("\n") == 1
    assert len(HistoryStore.load(path)) == 0
    s = HistoryStore(1, 0, partitioned=True)
    s.record([0.5], [], 1.0, 3)
    s.save(path)
    t = HistoryStore.load(path)
    assert t.partitioned and t.exact([0.5], [], 3) == 1.0


def test_load_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("DFOHIST v1 n_x=1 n_w=0\n0.5 1.0\n0.5 oops\n")
    with pytest.raises(HistoryFormatError) as exc:
        HistoryStore.load(path)
    assert exc.value.lineno == 3 and ":3:" in str(exc.value)
    path.write_text("DFOHIST v1 n_x=1 n_w=0\n0.5\n")
    with pytest.raises(HistoryFormatError) as exc:
        HistoryStore.load(path)
    assert exc.value.lineno == 2
    path.write_text("garbage\n")
    with pytest.raises(HistoryFormatError) as exc:
        HistoryStore.load(path)
    assert exc.value.lineno == 1


def test_kappa_app_single_point():
    nb = neighbors([[0.0, 0.0]], [1.0])
    assert kappa_app(nb, 1e-6, 2.0, 0.1) == pytest.approx(2.0 * (1 + 0.2 / 1e-6))
