import numpy as np
import pytest

from ehwsn.mdp_core import MdpModel
from ehwsn.sim_env import (
    ArrivalModel,
    ChannelModel,
    EnvConfig,
    SystemModel,
    paper_channel,
    poisson_pmf,
    two_point_energy_pmf,
)


def tiny_model() -> SystemModel:
    """Two nodes, two memoryless channel states, buffers of size 2, short arrival supports."""
    cfg = EnvConfig(N=2, Q_max=2, B_max=2, omega=(1.0, 1.5))
    ch = ChannelModel.iid(("B", "G"), [2e-13, 6e-13], [0.4, 0.6])
    arr = (
        ArrivalModel(np.array([0.5, 0.5]), np.array([0.5, 0.0, 0.5])),
        ArrivalModel(np.array([0.6, 0.3, 0.1]), np.array([0.3, 0.7])),
    )
    return SystemModel(cfg, ch, arr)


def default_model(lam_a=1.0, lam_e=1.2, a_max=13, **cfg_kw) -> SystemModel:
    cfg = EnvConfig(**cfg_kw)
    return SystemModel(cfg, paper_channel(), ArrivalModel(poisson_pmf(lam_a, a_max), two_point_energy_pmf(lam_e)))


@pytest.fixture(scope="session")
def tiny_mdp():
    return MdpModel(tiny_model())


@pytest.fixture(scope="session")
def default_mdp():
    return MdpModel(default_model())
