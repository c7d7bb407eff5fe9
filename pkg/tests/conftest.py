import numpy as np
import pytest

from cpcal import microstructure, polycrystal, slipcrystal


@pytest.fixture(scope="session")
def table3():
    return slipcrystal.table_params()


@pytest.fixture(scope="session")
def warm_kernels(table3):
    """Trigger JIT compilation once so timed tests measure compute only."""
    ens = microstructure.sample_ensemble({"mean": 23.37, "sd": 19.2}, 4, 0.0,
                                         seed=0)
    program = polycrystal.LoadingProgram(amplitude=0.001, cycles=1,
                                         steps_per_quarter=2)
    polycrystal.run_uniaxial(ens, table3, program)
    return True


@pytest.fixture(scope="session")
def small_ensemble():
    return microstructure.sample_ensemble({"mean": 23.37, "sd": 19.2}, 50,
                                          0.0, seed=11)


@pytest.fixture(scope="session")
def small_run(small_ensemble, table3):
    program = polycrystal.LoadingProgram(amplitude=0.005, cycles=3,
                                         steps_per_quarter=25)
    run = polycrystal.run_uniaxial(small_ensemble, table3, program)
    assert not run.failed
    return run


@pytest.fixture(scope="session")
def single_grain_ensemble():
    grain = microstructure.GrainRecord(
        id=0, orientation=microstructure.Orientation.identity(),
        diameter_3d=20.0, volume_fraction=1.0)
    return microstructure.Ensemble(grains=[grain], seed=0)


def rng(seed=0):
    return np.random.default_rng(seed)
