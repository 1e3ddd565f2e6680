import numpy as np
import pytest

from boris_sdc.fields import ParticleEnsemble, PenningForce, PenningParams

# Single classical particle in the trap: the reference setup used across
# the experiment suite (alpha 1, omega_e 4.9, omega_b 25, t_end 16).
TABLE1 = dict(
    params=PenningParams(alpha=1.0, omega_e=4.9, omega_b=25.0, epsilon=-1),
    x0=np.array([10.0, 0.0, 0.0]),
    v0=np.array([100.0, 0.0, 100.0]),
    t_end=16.0,
)


@pytest.fixture
def table1():
    return TABLE1


@pytest.fixture
def single_model():
    ens = ParticleEnsemble.single(TABLE1["x0"], TABLE1["v0"])
    return PenningForce(TABLE1["params"], ens)
