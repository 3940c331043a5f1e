import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pollcontract.errors import InfeasibleError, ModelInputError
from pollcontract.network import (
    EdgeSpec,
    NetworkSpec,
    NodeSpec,
    Plan,
    balance_residual,
    flow_grid,
    induced_production,
    is_feasible,
    min_cost_dispatch,
    plan_grid,
    total_losses,
)
from pollcontract.producers import PiecewiseLinearFn, ProducerSpec, QuadraticEffort

REFERENCE_DISPATCH_Q = np.array([3600, 1000.4, 5402])
REFERENCE_DISPATCH_PHI = np.array([198, 401, 198])


def _producer(slope, capacity=100.0):
    return ProducerSpec(PiecewiseLinearFn([0], [slope]), PiecewiseLinearFn([0], [1.0]), QuadraticEffort(1, 0.5), capacity)


def test_induced_production_hand_value(two_node_net):
    # half of r phi^2 = 0.05 is charged to each endpoint
    assert np.allclose(induced_production(two_node_net, [1.0]), [6.05, 9.05], atol=1e-12)
    net = NetworkSpec([NodeSpec(1, 5, 20), NodeSpec(2, 10, 20)], [EdgeSpec(1, 2, 0.01, 0, 10)])
    assert np.allclose(induced_production(net, [1.0]), [6.005, 9.005], atol=1e-12)


def test_zero_flow_gives_demand(chilean):
    assert np.array_equal(induced_production(chilean.net, np.zeros(3)), chilean.net.demand)


def test_induced_production_chilean_dispatch(chilean):
    q = induced_production(chilean.net, REFERENCE_DISPATCH_PHI)
    assert np.allclose(q, REFERENCE_DISPATCH_Q, rtol=1e-3)


def test_induced_production_dimension_error(chilean):
    with pytest.raises(ModelInputError):
        induced_production(chilean.net, [1.0, 2.0])


def test_balance_residual_hand_value(two_node_net):
    assert np.allclose(balance_residual(two_node_net, Plan([6, 9], [1])), [-0.05, -0.05], atol=1e-12)


def test_balance_residual_of_reference_dispatch(chilean):
    plan = Plan(induced_production(chilean.net, REFERENCE_DISPATCH_PHI), REFERENCE_DISPATCH_PHI)
    assert np.max(np.abs(balance_residual(chilean.net, plan))) <= 1e-6
    # rounded published values sit within 0.5 MWh of exact balance
    assert np.max(np.abs(balance_residual(chilean.net, Plan(REFERENCE_DISPATCH_Q, REFERENCE_DISPATCH_PHI)))) < 0.5


def test_is_feasible_violations(chilean):
    phi = REFERENCE_DISPATCH_PHI.astype(float)
    q = induced_production(chilean.net, phi)
    assert is_feasible(chilean.net, Plan(q, phi))
    bad_q = q.copy()
    bad_q[0] = chilean.net.capacity[0] + 1
    assert not is_feasible(chilean.net, Plan(bad_q, phi))
    phi_hi = np.array([5000 + 1e-3, 0, 0])
    assert not is_feasible(chilean.net, Plan(induced_production(chilean.net, phi_hi), phi_hi))
    with pytest.raises(ModelInputError):
        is_feasible(chilean.net, Plan(q, phi), tol=0)


def test_spec_validation():
    with pytest.raises(ModelInputError):
        NodeSpec(1, -1, 2)
    with pytest.raises(ModelInputError):
        EdgeSpec(1, 1, 0.1, 0, 1)
    with pytest.raises(ModelInputError):
        EdgeSpec(1, 2, 0.1, 3, 1)
    with pytest.raises(ModelInputError):
        NetworkSpec([NodeSpec(2, 1, 1)])
    with pytest.raises(ModelInputError):
        NetworkSpec([NodeSpec(1, 1, 1)], [EdgeSpec(1, 2, 0.1, 0, 1)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5000), min_size=3, max_size=3))
def test_balance_identity_property(phi):
    net = NetworkSpec(
        [NodeSpec(1, 3000, 6000), NodeSpec(2, 1000, 2000), NodeSpec(3, 6000, 12000)],
        [EdgeSpec(1, 2, 1e-5, 0, 5000), EdgeSpec(1, 3, 1e-5, 0, 5000), EdgeSpec(2, 3, 1e-5, 0, 5000)],
    )
    plan = Plan(induced_production(net, phi), phi)
    assert np.max(np.abs(balance_residual(net, plan))) <= 1e-9
    # quadratic losses make total production cover total demand
    assert plan.q.sum() >= net.demand.sum() - 1e-9
    assert np.isclose(plan.q.sum() - net.demand.sum(), total_losses(net, plan), rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 12.0), st.floats(1e-9, 1e-3), st.floats(0.0, 1.0))
def test_feasibility_monotone_in_tolerance(phi, tol1, extra):
    net = NetworkSpec([NodeSpec(1, 5, 20), NodeSpec(2, 10, 20)], [EdgeSpec(1, 2, 0.1, 0, 10)])
    plan = Plan(induced_production(net, [phi]) + tol1 / 2, [phi])
    if is_feasible(net, plan, tol1):
        assert is_feasible(net, plan, tol1 + extra)


def test_plan_grid_contracts(chilean, two_node_net):
    single = NetworkSpec([NodeSpec(1, 2, 3)])
    plans = plan_grid(single, 5)
    assert len(plans) == 1 and np.array_equal(plans[0].q, [2.0]) and plans[0].phi.size == 0
    plans = plan_grid(two_node_net, 3)
    assert 1 <= len(plans) <= 3 and all(is_feasible(two_node_net, p) for p in plans)
    plans = plan_grid(chilean.net, 25)
    assert plans and all(is_feasible(chilean.net, p, 1e-6) for p in plans)
    phis = [tuple(p.phi) for p in plans]
    assert phis == sorted(phis)
    with pytest.raises(ModelInputError):
        flow_grid(two_node_net, 1)


def test_dispatch_single_node():
    net = NetworkSpec([NodeSpec(1, 4, 10)])
    plan = min_cost_dispatch(net, [_producer(1.0)])
    assert np.array_equal(plan.q, [4.0]) and plan.phi.size == 0


def test_dispatch_infeasible():
    net = NetworkSpec([NodeSpec(1, 4, 1)])
    with pytest.raises(InfeasibleError):
        min_cost_dispatch(net, [_producer(1.0)])


def _brute_force(net, producers, step):
    axes = [np.arange(lo, hi + step / 2, step) for lo, hi in zip(net.flow_min, net.flow_max)]
    phi = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    q = induced_production(net, phi)
    ok = np.all((q >= -1e-9) & (q <= net.capacity + 1e-9), axis=1)
    cost = sum(p.cost(np.clip(q[ok, i], 0, None)) for i, p in enumerate(producers))
    return cost.min()


def test_dispatch_free_generator_matches_exhaustive_1d():
    # node 2 is free, so node 1 only covers what the line cannot bring in
    net = NetworkSpec([NodeSpec(1, 5, 30), NodeSpec(2, 10, 30)], [EdgeSpec(2, 1, 0.02, 0, 20)])
    producers = [_producer(3.0), _producer(0.0)]
    plan = min_cost_dispatch(net, producers)
    best = _brute_force(net, producers, 0.01)
    cost = sum(float(p.cost(q)) for p, q in zip(producers, plan.q))
    assert cost <= best + 1e-9
    assert is_feasible(net, plan)
    assert plan.q[0] == pytest.approx(0.0, abs=1e-6)


def test_dispatch_two_edges_matches_exhaustive():
    net = NetworkSpec(
        [NodeSpec(1, 2, 30), NodeSpec(2, 6, 8), NodeSpec(3, 5, 9)],
        [EdgeSpec(1, 2, 0.01, 0, 10), EdgeSpec(1, 3, 0.02, 0, 10)],
    )
    producers = [
        ProducerSpec(PiecewiseLinearFn([0, 4], [1, 4]), PiecewiseLinearFn([0], [1]), QuadraticEffort(1, 0.5), 30),
        _producer(2.0, 8),
        _producer(2.5, 9),
    ]
    plan = min_cost_dispatch(net, producers)
    cost = sum(float(p.cost(q)) for p, q in zip(producers, plan.q))
    assert cost <= _brute_force(net, producers, 0.02) + 1e-9


def test_dispatch_beats_every_grid_plan(chilean):
    plan = min_cost_dispatch(chilean.net, chilean.producers)
    cost = sum(float(p.cost(q)) for p, q in zip(chilean.producers, plan.q))
    grid_costs = [sum(float(p.cost(q)) for p, q in zip(chilean.producers, pl.q)) for pl in plan_grid(chilean.net, 25)]
    assert cost <= min(grid_costs) + 1e-9


def test_plan_is_hashable_and_frozen():
    a = Plan([1, 2], [0.5])
    b = Plan(np.array([1.0, 2.0]), [0.5])
    assert a == b and hash(a) == hash(b)
    with pytest.raises(ValueError):
        a.q[0] = 3
