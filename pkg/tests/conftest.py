import math

import numpy as np
import pytest

from polyjump.generator import GeneratorSpec, JumpStream, MarkJumpSpec, PointMasses, linear_sde_spec
from polyjump.polyalg import Poly


def ou_spec(kappa=1.0, theta=0.0, sigma=math.sqrt(2.0)):
    return linear_sde_spec([kappa * theta], [[-kappa]], [[sigma]], [[[0.0]]])


def sym_jump_kernel(rate=1.0):
    """Compound Poisson with marks +-1 (prob 1/2) and size u."""
    return MarkJumpSpec((JumpStream.scalar(rate, PointMasses(((1.0,), (-1.0,)), (0.5, 0.5)), [1.0]),), 1, 1)


@pytest.fixture
def ou():
    return ou_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
