import pytest

from fleetchain.harness import verify_world, write_outputs
from fleetchain.localization import _kernels
from fleetchain.scenario import default_scenario


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation happens once here, never inside timed test bodies
    _kernels.warmup()


@pytest.fixture(scope="session")
def default_world():
    """One full default-scenario mission, shared by read-only tests."""
    from fleetchain.fleetsim import World

    world = World(default_scenario())
    world.run()
    assert verify_world(world) == []
    return world


@pytest.fixture(scope="session")
def default_out(default_world, tmp_path_factory):
    """Output files of the shared default run."""
    out = tmp_path_factory.mktemp("default_out")
    write_outputs(default_world, out)
    return out
