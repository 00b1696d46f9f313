import numpy as np
import pytest

from reachcert.func_approx import RbfClassConfig, two_scale_centers
from reachcert.fvi import FviConfig, run_fvi
from reachcert.model import benchmark_spec, thermal_process, uniform_eta
from reachcert.oracle import dp_optimal


@pytest.fixture(scope="session")
def process():
    return thermal_process()


@pytest.fixture(scope="session")
def spec10():
    return benchmark_spec(horizon=10)


@pytest.fixture(scope="session")
def eta(spec10):
    return uniform_eta(spec10.safe, spec10.target)


@pytest.fixture(scope="session")
def rbf50(spec10):
    return RbfClassConfig(centers=two_scale_centers(spec10.safe, spec10.target, 50),
                          width=0.7, ridge=1e-8)


@pytest.fixture(scope="session")
def oracle180(process, spec10):
    """Fine-grid ground truth shared across tests (aligned resolution)."""
    return dp_optimal(process, spec10, 180)


@pytest.fixture(scope="session")
def spec4():
    return benchmark_spec(horizon=4)


@pytest.fixture(scope="session")
def small_run(process, spec4, eta, spec10):
    """A small but realistic fitted run for certification tests."""
    rbf = RbfClassConfig(centers=two_scale_centers(spec4.safe, spec4.target, 18),
                         width=0.7, ridge=1e-8)
    eta4 = uniform_eta(spec4.safe, spec4.target)
    cfg = FviConfig(n_base=150, m_succ=300, m_init=500, rbf=rbf, eta=eta4, seed=11)
    return cfg, run_fvi(process, spec4, cfg)
