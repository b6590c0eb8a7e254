import numpy as np
import pytest

from ibcsim.model import BeamformerSet, ChannelSet, Dimensions
from ibcsim.scenario import Scenario, ScenarioConfig, generate_scenario


def scalar_pair(h00, h11, h10, h01, noise=0.1, power=1.0):
    """Two single-antenna links.  ``h10`` is the gain from TX 1 to RX 0."""
    H = np.zeros((2, 2, 1, 1), complex)
    H[0, 0], H[1, 1], H[1, 0], H[0, 1] = h00, h11, h10, h01
    return Scenario.from_matrices(H, noise, [0, 1], power)


def random_scenario(seed, num_tx=2, rx_per_tx=2, tx_antennas=3, rx_antennas=2, streams=1,
                    noise=0.1, power=1.0):
    """Unit-variance Rayleigh channels without pathloss (moderate SNR)."""
    rng = np.random.default_rng(seed)
    dims = Dimensions.regular(num_tx, rx_per_tx, tx_antennas, rx_antennas, streams)
    shape = (dims.num_tx, dims.num_rx, rx_antennas, tx_antennas)
    H = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return Scenario(dims, ChannelSet(H, np.full(dims.num_rx, noise), np.array(dims.serving)), power)


def random_beams(scenario, seed):
    rng = np.random.default_rng(seed)
    beams = BeamformerSet.zeros(scenario.dims)
    beams.tx = rng.standard_normal(beams.tx.shape) + 1j * rng.standard_normal(beams.tx.shape)
    beams.rx = rng.standard_normal(beams.rx.shape) + 1j * rng.standard_normal(beams.rx.shape)
    return beams


@pytest.fixture(scope="session")
def desk_drop():
    return generate_scenario(ScenarioConfig.desk_scale(seed=7))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
