import numpy as np
import pytest
import torch

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch import policy as pol


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def van_der_pol():
    return dyn.benchmark("van_der_pol")


@pytest.fixture(scope="session")
def pendulum():
    return dyn.benchmark("pendulum")


@pytest.fixture(scope="session")
def trig_3d():
    return dyn.benchmark("trig_3d")


@pytest.fixture(scope="session")
def saddle():
    # unstable flow: L_f(x1^2 + x2^2) = 4 x1 x2 > 0 on open quadrants
    return dyn.DynamicalSystem("saddle", (ex.var(2), ex.var(1)),
                               dyn.Domain.cube(1.0, 2))


def sq(i: int) -> ex.Expr:
    return ex.mul(ex.var(i), ex.var(i))


@pytest.fixture(scope="session")
def quad2():
    return ex.add(sq(1), sq(2))


@pytest.fixture(scope="session")
def pendulum_energy():
    # 2*(1 - cos(x1)) + x2^2
    return ex.add(ex.mul(ex.const(2.0), ex.sub(ex.const(1.0), ex.cos(ex.var(1)))),
                  sq(2))


@pytest.fixture(scope="session")
def trig_textbook_v():
    # 1 - cos(x1)^2 + x2^2 + sin(x3)^2
    return ex.add(
        ex.add(ex.sub(ex.const(1.0), ex.mul(ex.cos(ex.var(1)), ex.cos(ex.var(1)))),
               sq(2)),
        ex.mul(ex.sin(ex.var(3)), ex.sin(ex.var(3))),
    )


@pytest.fixture(scope="session")
def tiny_arch():
    return pol.ArchConfig(embed_dim=32, num_heads=2, dyn_layers=1, tree_layers=1,
                          dec_layers=1, latent_p=32, latent_k=32, ffn_dim=64)


@pytest.fixture
def tiny_policy(tiny_arch):
    torch.manual_seed(99)
    return pol.PolicyNet(pol.Vocab(2), tiny_arch)
