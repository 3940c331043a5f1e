import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pollcontract.errors import ModelInputError
from pollcontract.producers import (
    MarketParams,
    PiecewiseLinearFn,
    ProducerSpec,
    QuadraticEffort,
    SocialCost,
    TabulatedEffort,
    best_effort,
    cara_utility,
    certainty_equivalent,
    eval_piecewise,
    generator_f,
    scan_inner_z,
)

from conftest import linear_producer, toy_params


def _grid_best_effort(h, z, p, a_max, step=1e-6):
    a = np.arange(0.0, a_max + step / 2, step)
    return a[np.argmin(h(a) - z * (1 - a) * p)]


def test_eval_piecewise_chilean(chilean):
    c1 = chilean.producers[0].cost
    p3 = chilean.producers[2].pollution
    assert eval_piecewise(c1, 3600) == pytest.approx(72000)
    assert eval_piecewise(c1, 4000) == pytest.approx(80 * 400 + 72000)
    assert eval_piecewise(p3, 5402) == pytest.approx(0.5 * (5402 - 3600) + 1200)
    assert eval_piecewise(c1, 0) == 0
    with pytest.raises(ModelInputError):
        eval_piecewise(c1, -1)


def test_piecewise_validation():
    with pytest.raises(ModelInputError):
        PiecewiseLinearFn([1, 2], [1, 1])
    with pytest.raises(ModelInputError):
        PiecewiseLinearFn([0, 2, 2], [1, 1, 1])
    f = PiecewiseLinearFn([0, 1], [2, -1])
    assert not f.nondecreasing
    assert f.sup_on(3) == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 5), min_size=1, max_size=4), st.lists(st.floats(0, 3), min_size=4, max_size=4), st.floats(0, 20))
def test_piecewise_continuous_at_knots(widths, slopes, x):
    b = np.concatenate([[0], np.cumsum(widths)])
    f = PiecewiseLinearFn(b, slopes[: b.size] + [1.0] * max(0, b.size - len(slopes)))
    eps = 1e-9
    for k in b[1:]:
        assert abs(f(k + eps) - f(k - eps)) < 1e-6
    assert f(x) >= 0


def test_best_effort_quadratic_oracle():
    prod = ProducerSpec(PiecewiseLinearFn([0], [0]), PiecewiseLinearFn([0], [1]), QuadraticEffort(1, 0.3), 1)
    h = prod.effort
    assert best_effort(prod, 1.0, -0.25) == pytest.approx(_grid_best_effort(h, -0.25, 1.0, 0.3), abs=1e-6)
    assert best_effort(prod, 1.0, -0.25) == pytest.approx(0.25, abs=1e-12)
    assert best_effort(prod, 1.0, -0.5) == pytest.approx(0.3, abs=1e-12)
    assert best_effort(prod, 1.0, 0.0) == 0.0
    with pytest.raises(ModelInputError):
        best_effort(prod, 2.0, -0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.05, 1), st.floats(-3, 0.5), st.floats(0.1, 3))
def test_best_effort_quadratic_random_oracle(hc, a_max, z, p):
    eff = QuadraticEffort(hc, a_max)
    exact = float(eff.best_effort(z, p))
    assert exact == pytest.approx(float(np.clip(-z * p / hc, 0, a_max)), abs=1e-15)
    assert exact == pytest.approx(_grid_best_effort(eff, z, p, a_max, 1e-5), abs=2e-5)


def test_best_effort_tabulated_oracle():
    eff = TabulatedEffort([0, 0.1, 0.2, 0.3, 0.4], [0, 0.05, 0.15, 0.3, 0.5])
    for z in (-0.1, -0.4, -0.8, -1.3, -3.0):
        a = float(eff.best_effort(z, 1.0))
        # oracle: 1e-6 grid; ties at kinks resolve upward
        fine = np.arange(0, 0.4 + 5e-7, 1e-6)
        vals = eff(fine) - z * (1 - fine)
        assert eff(a) - z * (1 - a) <= vals.min() + 1e-10


def test_generic_golden_best_effort_matches_closed_form():
    # function-value search on a smooth minimum resolves ~sqrt(machine eps)
    from pollcontract.producers import EffortCost

    q = QuadraticEffort(2.0, 0.6)
    for z, p in [(-0.3, 1.0), (-2.0, 1.5), (0.1, 1.0), (-0.7, 0.4)]:
        generic = float(EffortCost.best_effort(q, z, p))
        assert generic == pytest.approx(float(q.best_effort(z, p)), abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 0), st.floats(-5, 0), st.floats(0.1, 3))
def test_best_effort_nonincreasing_in_z(z1, z2, p):
    eff = QuadraticEffort(1.5, 0.7)
    tab = TabulatedEffort([0, 0.2, 0.5, 0.7], [0, 0.1, 0.5, 1.0])
    lo, hi = min(z1, z2), max(z1, z2)
    for e in (eff, tab):
        assert e.best_effort(lo, p) >= e.best_effort(hi, p)


def test_best_effort_continuous():
    eff = QuadraticEffort(1.5, 0.7)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z, p = -rng.uniform(0, 3), rng.uniform(0.1, 2)
        for eps in (1e-3, 1e-6, 1e-9):
            assert abs(eff.best_effort(z + eps, p + eps) - eff.best_effort(z, p)) <= 5 * eps * (1 + 3) / 1.5


def test_tabulated_validation():
    with pytest.raises(ModelInputError):
        TabulatedEffort([0, 0.5, 1.0], [0, 1, 1.5])  # concave
    with pytest.raises(ModelInputError):
        TabulatedEffort([0.1, 0.5, 1.0], [0, 1, 3])
    with pytest.raises(ModelInputError):
        QuadraticEffort(1, 1.5)


def test_generator_examples():
    prod = linear_producer(p=1.0, c=0.0, h=1.0, a_max=1.0)
    params = toy_params()
    f = generator_f([prod], params, [[1.0]], [[-0.5]])
    assert f[0, 0] == pytest.approx(0.5, abs=1e-15)
    prod3 = linear_producer(p=1.0, c=0.0, h=1.0, a_max=0.3)
    f3 = generator_f([prod3], params, [[1.0]], [[-0.5]])
    assert f3[0, 0] == pytest.approx(0.5 * 0.09 + 0.5 * 0.7 + 0.125)


def test_generator_zero_z_is_production_cost(chilean):
    q = np.array([3600, 1000, 5402.39])
    f = generator_f(chilean.producers, chilean.params, q, np.zeros(3))
    assert np.allclose(f, [p.cost(x) for p, x in zip(chilean.producers, q)])


def test_generator_symmetry():
    prods = [linear_producer(p=2.0, c=1.0, h=3.0, capacity=5.0)] * 2
    f = generator_f(prods, toy_params(), [2.0, 2.0], [-0.3, -0.3])
    assert f[0] == f[1]
    with pytest.raises(ModelInputError):
        generator_f(prods, toy_params(), [2.0], [-0.3, -0.3])


def test_cara_round_trip():
    assert cara_utility(1.0, 0.0) == -1.0
    assert certainty_equivalent(0.2, cara_utility(0.2, 3.7)) == pytest.approx(3.7, abs=1e-12)
    assert certainty_equivalent(1.0, -1.0) == 0.0
    with pytest.raises(ModelInputError):
        certainty_equivalent(1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(0.01, 3))
def test_cara_inverse_property(x, rho):
    assert certainty_equivalent(rho, cara_utility(rho, x)) == pytest.approx(x, abs=1e-12 * max(1, abs(x)) * 10)


def test_market_params_validation():
    with pytest.raises(ModelInputError):
        toy_params(rho=0.0)
    with pytest.raises(ModelInputError):
        toy_params(reservations=(0.5,))
    with pytest.raises(ModelInputError):
        SocialCost("quadratic", 1.0)
    p = toy_params(reservations=())
    assert np.array_equal(p.initial_certainty_equivalents(2), [0.0, 0.0])
    rect = SocialCost("rectified", 5.0)
    assert rect(-1.0) == 0 and rect(2.0) == 10 and rect.slope(0.0) == 0


def test_scan_inner_z_matches_exact_solutions():
    quad = QuadraticEffort(1.0, 0.9)
    tab = TabulatedEffort([0, 0.1, 0.2, 0.3, 0.4], [0, 0.05, 0.15, 0.3, 0.5])
    alpha = np.linspace(0, 4, 9)[:, None]
    p = np.array([0.0, 0.3, 1.0, 2.5])
    for eff in (quad, tab):
        _, _, exact = eff.inner_z(alpha, p, 0.7)
        _, _, scanned = scan_inner_z(eff, alpha, p, 0.7)
        assert np.allclose(exact, scanned, rtol=1e-8, atol=1e-12)
