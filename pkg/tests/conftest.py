import pytest

from builders import make_chain_mdp


@pytest.fixture
def chain_mdp():
    return make_chain_mdp()
