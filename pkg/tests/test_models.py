import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfohist.core import L2, LINF, Bounds, make_rng
from dfohist.models import (
    CauchyDecreaseError,
    ElementModels,
    MasterModel,
    StationarityResult,
    cauchy_bound,
    curvature_bound,
    fit_linear_elements,
    master_model,
    solve_tr_subproblem,
    stationarity,
)
from dfohist.problems import LeastSquaresOuter


def _random_box(rng, n, x):
    # some bounds close enough to x to be active inside the unit region
    lo = x - rng.exponential(0.6, n)
    hi = x + rng.exponential(0.6, n)
    lo[rng.random(n) < 0.25] = -math.inf
    hi[rng.random(n) < 0.25] = math.inf
    at_lo = rng.random(n) < 0.15
    lo[at_lo] = x[at_lo]
    return Bounds(lo, hi)


def test_fit_divided_difference():
    elem = fit_linear_elements(np.array([[0.25]]), np.array([[1.0, 2.0]]))
    assert elem.gradients[0, 0] == pytest.approx(4.0)
    assert elem.values[0] == 1.0


def test_fit_forward_difference_gradient():
    rng = make_rng(10)
    n, p, delta = 4, 3, 1e-2
    A = rng.standard_normal((p, n))
    b = rng.standard_normal(p)
    F = np.column_stack([b] + [b + A @ (delta * e) for e in np.eye(n)])
    elem = fit_linear_elements(delta * np.eye(n), F)
    assert np.allclose(elem.gradients, A.T, atol=1e-10)


def test_fit_interpolates_random_sets():
    rng = make_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        p = int(rng.integers(1, 5))
        D = rng.standard_normal((n, n))
        F = rng.standard_normal((p, n + 1))
        elem = fit_linear_elements(D, F)
        for j in range(n):
            assert np.allclose(elem(D[:, j]), F[:, j + 1], atol=1e-8 * (1 + np.abs(F).max()) * np.linalg.cond(D))
        assert np.array_equal(elem(np.zeros(n)), F[:, 0])


def test_fit_singular_raises():
    with pytest.raises(np.linalg.LinAlgError):
        fit_linear_elements(np.array([[1.0, 2.0], [2.0, 4.0]]), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        fit_linear_elements(np.eye(2), np.zeros((1, 2)))


def test_fit_matches_taylor_for_linear_elements():
    rng = make_rng(12)
    A = rng.standard_normal((3, 2))
    D = 0.1 * rng.standard_normal((2, 2))
    F = np.column_stack([np.zeros(3), A @ D[:, 0], A @ D[:, 1]])
    elem = fit_linear_elements(D, F)
    s = rng.standard_normal(2)
    assert np.allclose(elem(s), A @ s)


def test_master_model_scalar_example():
    elem = ElementModels(np.array([2.0]), np.array([[1.0]]))
    M = master_model(elem, LeastSquaresOuter(np.array([0.0])))
    for s in (-1.0, 0.0, 0.3, 2.0):
        assert M.value([s]) == pytest.approx(2 + 2 * s + 0.5 * s * s)


def test_master_model_zero_outer_gradient():
    elem = ElementModels(np.array([1.0, -1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]))
    M = master_model(elem, LeastSquaresOuter(np.array([1.0, -1.0])))
    assert np.array_equal(M.g, np.zeros(2))


def test_master_model_gauss_newton_form():
    rng = make_rng(13)
    G = rng.standard_normal((3, 5))
    c = rng.standard_normal(5)
    y = rng.standard_normal(5)
    M = master_model(ElementModels(c, G), LeastSquaresOuter(y))
    assert np.allclose(M.g, G @ (c - y))
    assert np.allclose(M.H, G @ G.T)
    assert M.f0 == pytest.approx(0.5 * np.sum((c - y) ** 2))


def test_model_decrease_consistent_with_value():
    rng = make_rng(14)
    A = rng.standard_normal((3, 3))
    M = MasterModel(1.5, rng.standard_normal(3), A @ A.T)
    s = rng.standard_normal(3)
    assert M.decrease(s) == pytest.approx(M.value(np.zeros(3)) - M.value(s))
    assert np.allclose(M.gradient(s), M.g + M.H @ s)


def test_stationarity_examples():
    g = np.array([1.0, -2.0])
    r = stationarity(g, np.zeros(2), Bounds.unbounded(2), LINF)
    assert r.pi == pytest.approx(3.0) and np.array_equal(r.direction, [-1.0, 1.0])
    r = stationarity(g, np.zeros(2), Bounds.unbounded(2), L2)
    assert r.pi == pytest.approx(math.sqrt(5))
    assert np.allclose(r.direction, -g / math.sqrt(5), atol=1e-9)
    r = stationarity(g, np.zeros(2), Bounds([0.0, -math.inf], [math.inf, math.inf]), LINF)
    assert r.pi == pytest.approx(2.0)


def test_stationarity_errors():
    with pytest.raises(ValueError):
        stationarity(np.ones(1), np.array([2.0]), Bounds([0.0], [1.0]))
    with pytest.raises(ValueError):
        stationarity(np.ones(1), np.zeros(1), Bounds.unbounded(1), "l1")


def sampled_stationarity(g, x, bounds, kind, rng, m):
    """Best g @ d over random feasible points of the unit region intersected with the box."""
    n = g.size
    lo = bounds.lower - x
    hi = bounds.upper - x
    u = rng.standard_normal((m, n))
    if kind == L2:
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        u *= rng.random((m, 1)) ** (1.0 / n)
    else:
        u = rng.uniform(-1, 1, (m, n))
    u = u[np.all((u >= lo) & (u <= hi), axis=1)]
    return -float(np.min(u @ g, initial=0.0))


def enumerated_stationarity(g, x, bounds, kind):
    """Exact optimum by enumerating which coordinates sit on a box face.

    Free coordinates lie on the unit sphere along -g (L2) or at +/-1 (Linf).
    """
    n = g.size
    lo = np.maximum(bounds.lower - x, -1.0)
    hi = np.minimum(bounds.upper - x, 1.0)
    best = 0.0
    for code in itertools.product((None, "lo", "hi"), repeat=n):
        d = np.zeros(n)
        fixed = np.array([c is not None for c in code])
        for j, c in enumerate(code):
            if c == "lo":
                d[j] = lo[j]
            elif c == "hi":
                d[j] = hi[j]
        free = ~fixed
        if kind == L2:
            rest = 1.0 - float(d[fixed] @ d[fixed])
            if rest < 0:
                continue
            gf = g[free]
            ng = np.linalg.norm(gf)
            if ng > 0:
                d[free] = -gf / ng * math.sqrt(rest)
        elif free.any():
            continue
        if np.all(d >= lo - 1e-12) and np.all(d <= hi + 1e-12):
            best = max(best, -float(g @ d))
    return best


def test_stationarity_vs_oracles():
    rng = make_rng(15)
    for trial in range(200):
        n = int(rng.integers(1, 4))
        kind = (L2, LINF)[trial % 2]
        x = rng.standard_normal(n)
        b = _random_box(rng, n, x)
        g = rng.standard_normal(n)
        r = stationarity(g, x, b, kind)
        assert r.pi == pytest.approx(enumerated_stationarity(g, x, b, kind), abs=1e-8)
        assert r.pi >= sampled_stationarity(g, x, b, kind, rng, 20_000) - 1e-12
        d = r.direction
        assert np.all(x + d >= b.lower - 1e-15) and np.all(x + d <= b.upper + 1e-15)
        size = np.linalg.norm(d) if kind == L2 else np.max(np.abs(d), initial=0.0)
        assert size <= 1 + 1e-9


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
@settings(max_examples=100)
def test_stationarity_homogeneous(seed, alpha):
    rng = make_rng(seed)
    n = int(rng.integers(1, 4))
    x = rng.standard_normal(n)
    b = _random_box(rng, n, x)
    g = rng.standard_normal(n)
    for kind in (L2, LINF):
        r1 = stationarity(g, x, b, kind)
        r2 = stationarity(alpha * g, x, b, kind)
        assert r2.pi == pytest.approx(alpha * r1.pi, rel=1e-8, abs=1e-12)
        assert np.allclose(r1.direction, r2.direction, atol=1e-6)


def test_curvature_examples():
    M0 = MasterModel(0.0, np.zeros(2), np.zeros((2, 2)))
    assert curvature_bound(M0) == 1.0
    M = MasterModel(0.0, np.zeros(2), np.diag([3.0, 1.0]))
    assert curvature_bound(M) == pytest.approx(3.0, rel=1e-12)


def test_curvature_matches_eigenvalues():
    rng = make_rng(16)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        A = rng.standard_normal((n, n)) * 10 ** rng.uniform(-1, 2)
        H = A @ A.T if rng.random() < 0.5 else A + A.T
        M = MasterModel(0.0, np.zeros(n), H)
        top = float(np.max(np.abs(np.linalg.eigvalsh(H))))
        assert curvature_bound(M) == pytest.approx(max(1.0, top), rel=1e-8)
        # over the unit infinity ball |d H d| can reach n * top
        assert curvature_bound(M, LINF) >= top * (1 - 1e-8)
        d = rng.choice([-1.0, 1.0], (50, n))
        assert curvature_bound(M, LINF) >= np.max(np.abs(np.einsum("ij,jk,ik->i", d, H, d))) * (1 - 1e-8)


def test_tr_linear_full_step():
    M = MasterModel(0.0, np.array([1.0, 0.0]), np.zeros((2, 2)))
    stat = stationarity(M.g, np.zeros(2), Bounds.unbounded(2), LINF)
    s = solve_tr_subproblem(M, np.zeros(2), 1.0, Bounds.unbounded(2), 0.5, stat, LINF)
    assert s[0] == pytest.approx(-1.0)
    assert M.decrease(s) == pytest.approx(1.0)
    assert M.decrease(s) >= cauchy_bound(stat.pi, 1.0, 1.0, 0.5)


def test_tr_one_dimensional_calculus():
    M = MasterModel(0.0, np.array([-1.0]), np.array([[2.0]]))
    stat = stationarity(M.g, np.zeros(1), Bounds.unbounded(1))
    s = solve_tr_subproblem(M, np.zeros(1), 1.0, Bounds.unbounded(1), 0.5, stat)
    assert s[0] == pytest.approx(0.5)
    assert M.decrease(s) == pytest.approx(0.25)


def test_tr_requires_positive_pi():
    M = MasterModel(0.0, np.zeros(1), np.eye(1))
    with pytest.raises(ValueError):
        solve_tr_subproblem(M, np.zeros(1), 1.0, Bounds.unbounded(1), 0.5,
                            StationarityResult(0.0, np.zeros(1)))


def test_tr_detects_cauchy_failure():
    # a wrong stationarity result promises more than any step can deliver
    M = MasterModel(0.0, np.array([1.0]), np.eye(1))
    fake = StationarityResult(100.0, np.array([-1.0]))
    with pytest.raises(CauchyDecreaseError):
        solve_tr_subproblem(M, np.zeros(1), 1.0, Bounds.unbounded(1), 0.5, fake)


def grid_tr_optimum(M, x, delta, bounds, kind, m=801):
    lo = np.maximum(bounds.lower - x, -delta)
    hi = np.minimum(bounds.upper - x, delta)
    a = np.linspace(lo[0], hi[0], m)
    b = np.linspace(lo[1], hi[1], m)
    S = np.stack(np.meshgrid(a, b), axis=-1).reshape(-1, 2)
    if kind == L2:
        S = S[np.linalg.norm(S, axis=1) <= delta]
    dec = -(S @ M.g + 0.5 * np.sum((S @ M.H) * S, axis=1))
    return float(dec.max())


def random_tr_instance(rng, n, convex=True):
    A = rng.standard_normal((n, n))
    H = A @ A.T if convex else A + A.T
    M = MasterModel(0.0, rng.standard_normal(n) * 10 ** rng.uniform(-2, 1), H * 10 ** rng.uniform(-2, 1))
    x = rng.standard_normal(n)
    return M, x, _random_box(rng, n, x), float(10 ** rng.uniform(-2, 0.7))


def test_tr_within_five_percent_of_grid():
    rng = make_rng(17)
    for trial in range(100):
        kind = (L2, LINF)[trial % 2]
        M, x, b, delta = random_tr_instance(rng, 2)
        stat = stationarity(M.g, x, b, kind)
        if stat.pi <= 0:
            continue
        s = solve_tr_subproblem(M, x, delta, b, 0.5, stat, kind)
        best = grid_tr_optimum(M, x, delta, b, kind)
        assert M.decrease(s) >= 0.95 * best


def test_tr_cauchy_on_random_instances():
    rng = make_rng(18)
    for trial in range(10_000):
        n = int(rng.integers(1, 6))
        kind = (L2, LINF)[trial % 2]
        M, x, b, delta = random_tr_instance(rng, n, convex=trial % 3 != 0)
        stat = stationarity(M.g, x, b, kind)
        if stat.pi <= 0:
            continue
        s = solve_tr_subproblem(M, x, delta, b, 0.5, stat, kind)  # raises on violation
        size = np.linalg.norm(s) if kind == L2 else np.max(np.abs(s))
        assert size <= delta * (1 + 1e-12)
        assert np.all(x + s >= b.lower - 1e-12) and np.all(x + s <= b.upper + 1e-12)
        kap = curvature_bound(M, kind)
        assert M.decrease(s) >= cauchy_bound(stat.pi, kap, delta, 0.5) * (1 - 1e-10)
