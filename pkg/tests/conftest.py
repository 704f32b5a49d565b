import pytest

from seqexp.presets import (example1_instance, fig4_model, FIG1_ACTIONS,
                            table1_experiments)
from seqexp.model import Instance
from seqexp.solver import BeliefGrid, solve


@pytest.fixture(scope="session")
def example1():
    return example1_instance()


@pytest.fixture(scope="session")
def grid3():
    return BeliefGrid(1e-3)


@pytest.fixture(scope="session")
def example1_solved(example1, grid3):
    return solve(example1, grid3, 1e-3)


@pytest.fixture(scope="session")
def fig4_instance():
    return Instance(actions=FIG1_ACTIONS, experiments=table1_experiments()[:1],
                    lam=8.0, r=1.0)


@pytest.fixture(scope="session")
def fig4_composed(fig4_instance):
    from seqexp.diffusion import compose_value
    return compose_value(fig4_instance, fig4_model())
