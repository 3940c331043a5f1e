import numpy as np
import pytest

from pollcontract.closed_form import ExplicitSpec
from pollcontract.config import load_scenario
from pollcontract.network import EdgeSpec, NetworkSpec, NodeSpec
from pollcontract.producers import MarketParams, PiecewiseLinearFn, ProducerSpec, QuadraticEffort, SocialCost


def linear_producer(p=1.0, c=0.0, h=1.0, a_max=0.9, capacity=1.0):
    return ProducerSpec(PiecewiseLinearFn([0], [c]), PiecewiseLinearFn([0], [p]), QuadraticEffort(h, a_max), capacity)


@pytest.fixture(scope="session")
def chilean():
    return load_scenario("chilean")


@pytest.fixture(scope="session")
def toy():
    """Single-node toy in the explicit regime: lam=p=q=h=sigma=rho=T=1, A=[0, 0.9]."""
    return load_scenario("linear_toy")


@pytest.fixture(scope="session")
def two_node():
    return load_scenario("two_node_toy")


@pytest.fixture(scope="session")
def toy_spec():
    return ExplicitSpec([1.0], [1.0], [1.0], [0.9], lam=1.0, sigma=1.0, rho=1.0, T=1.0, ell0=10.0)


@pytest.fixture
def two_node_net():
    """D=(5, 10), one line 1->2 with r=0.1."""
    return NetworkSpec([NodeSpec(1, 5, 20), NodeSpec(2, 10, 20)], [EdgeSpec(1, 2, 0.1, 0, 10)])


def toy_params(sigma=1.0, rho=1.0, lam=1.0, kind="linear", ell0=10.0, T=1.0, reservations=(-1.0,)):
    return MarketParams(rho, sigma, SocialCost(kind, lam), ell0, T, reservations)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome.upper()[:4], props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for crit, status, detail in sorted(lines):
            terminalreporter.write_line(f"{crit:<4} {status}  {detail}")
