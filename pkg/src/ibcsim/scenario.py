"""Random network drops: node geometry, pathloss and Rayleigh fading.

Large-scale fading is a log-distance law ``PL0 + 10 n log10(d)``, clamped
below at ``min_pair_distance``; small-scale fading is i.i.d. CN(0, 1) per
antenna pair.  A drop is fully determined by its config and seed.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .model import ChannelSet, Dimensions

__all__ = [
    "ConfigError", "ScenarioConfig", "Topology", "Scenario", "dbm_to_watt",
    "pathloss_db", "generate_topology", "draw_channels", "generate_scenario",
    "drop_seed",
]

_MAX_REDRAWS = 100_000


class ConfigError(ValueError):
    """Invalid or geometrically impossible scenario configuration."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of a random drop.

    Powers are in dBm, distances in meters.  Defaults follow the evaluation
    setup: 10 transmitters with 2 receivers each, 8 and 4 antennas, a
    400 m drop radius and a 35 dBm power budget per transmitter.
    """
    dims: Dimensions = field(default_factory=lambda: Dimensions.regular(10, 2, 8, 4))
    drop_radius: float = 400.0
    min_pair_distance: float = 3.0
    tx_power_dbm: float = 35.0
    noise_power_dbm: float = -100.0
    pathloss_ref_db: float = 41.0
    pathloss_exponent: float = 3.5
    seed: int = 0

    def __post_init__(self):
        if not self.drop_radius > 0:
            raise ConfigError("drop_radius must be positive")
        if not self.min_pair_distance > 0:
            raise ConfigError("min_pair_distance must be positive")
        if not self.pathloss_exponent >= 2:
            raise ConfigError("pathloss_exponent must be at least 2")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def desk_scale(cls, **overrides):
        """Small preset: 3 transmitters, 2 receivers each, 4x2 antennas, one stream."""
        return cls(dims=Dimensions.regular(3, 2, 4, 2), **overrides)

    @property
    def tx_power_w(self):
        return float(dbm_to_watt(self.tx_power_dbm))

    @property
    def noise_power_w(self):
        return float(dbm_to_watt(self.noise_power_dbm))

    def to_dict(self):
        d = asdict(self)
        d["dims"] = asdict(self.dims)
        d["dims"]["streams_per_rx"] = list(self.dims.streams_per_rx)
        d["dims"]["serving"] = list(self.dims.serving)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "dims" in d and not isinstance(d["dims"], Dimensions):
            dims = dict(d["dims"])
            if "rx_per_tx" in dims:
                dims = asdict(Dimensions.regular(
                    dims["num_tx"], dims["rx_per_tx"], dims["tx_antennas"],
                    dims["rx_antennas"], dims.get("streams", 1)))
            d["dims"] = Dimensions(**dims)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Topology:
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    serving: np.ndarray


@dataclass(eq=False)
class Scenario:
    """One drop: geometry (optional for hand-built fixtures), channels and budgets.

    ``power_budget`` is the per-transmitter budget ``P_b`` in Watts.
    """
    dims: Dimensions
    channels: ChannelSet
    power_budget: np.ndarray
    config: Optional[ScenarioConfig] = None
    tx_positions: Optional[np.ndarray] = None
    rx_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        self.power_budget = np.broadcast_to(
            np.asarray(self.power_budget, dtype=float), (self.dims.num_tx,)).copy()
        ch = self.channels
        if ch.H.shape != (self.dims.num_tx, self.dims.num_rx,
                          self.dims.rx_antennas, self.dims.tx_antennas):
            raise ConfigError("channel tensor does not match the dimensions")
        if tuple(ch.serving.tolist()) != self.dims.serving:
            raise ConfigError("channel serving map does not match the dimensions")
        if np.any(self.power_budget <= 0):
            raise ConfigError("power budget must be positive")

    @classmethod
    def from_matrices(cls, H, noise_power, serving, power_budget, streams_per_rx=None):
        """Build a fixture directly from channel matrices ``H[b, u]``."""
        H = np.asarray(H, dtype=complex)
        B, U, n_r, n_t = H.shape
        streams = (1,) * U if streams_per_rx is None else tuple(streams_per_rx)
        noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (U,))
        dims = Dimensions(B, U, n_t, n_r, streams, tuple(serving))
        return cls(dims, ChannelSet(H, noise, np.asarray(serving)), power_budget)

    @property
    def serving(self):
        return self.channels.serving

    def to_json(self):
        """JSON document with positions, serving map and ``[re, im]`` channel entries."""
        H = self.channels.H
        doc = {
            "config": None if self.config is None else self.config.to_dict(),
            "dims": asdict(self.dims),
            "power_budget_w": self.power_budget.tolist(),
            "noise_power_w": self.channels.noise_power.tolist(),
            "serving": self.channels.serving.tolist(),
            "tx_positions": None if self.tx_positions is None else self.tx_positions.tolist(),
            "rx_positions": None if self.rx_positions is None else self.rx_positions.tolist(),
            "channel_shape": list(H.shape),
            "channels": np.stack([H.real, H.imag], axis=-1).reshape(-1, 2).tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        shape = tuple(doc["channel_shape"])
        pairs = np.asarray(doc["channels"], dtype=float).reshape(shape + (2,))
        H = pairs[..., 0] + 1j * pairs[..., 1]
        dims = Dimensions(**doc["dims"])
        channels = ChannelSet(H, doc["noise_power_w"], doc["serving"])
        config = None if doc["config"] is None else ScenarioConfig.from_dict(doc["config"])
        pos = lambda key: None if doc[key] is None else np.asarray(doc[key], dtype=float)
        return cls(dims, channels, doc["power_budget_w"], config,
                   pos("tx_positions"), pos("rx_positions"))


def pathloss_db(distance, config: ScenarioConfig):
    """Log-distance pathloss in dB, distance clamped at ``min_pair_distance``."""
    d = np.maximum(np.asarray(distance, dtype=float), config.min_pair_distance)
    out = config.pathloss_ref_db + 10.0 * config.pathloss_exponent * np.log10(d)
    return float(out) if out.ndim == 0 else out


def _uniform_disc(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _streams(config):
    ss = np.random.SeedSequence(int(config.seed))
    return ss.spawn(2)


def generate_topology(config: ScenarioConfig, rng=None) -> Topology:
    """Drop transmitters uniformly in the disc, then their receivers.

    Receivers are re-drawn until they are at least ``min_pair_distance``
    from their serving transmitter.
    """
    if config.min_pair_distance >= 2.0 * config.drop_radius:
        raise ConfigError("min_pair_distance >= 2 * drop_radius: no receiver can be placed")
    if rng is None:
        rng = np.random.default_rng(_streams(config)[0])
    dims = config.dims
    serving = np.asarray(dims.serving)
    tx = _uniform_disc(rng, dims.num_tx, config.drop_radius)
    rx = np.empty((dims.num_rx, 2))
    for u in range(dims.num_rx):
        for _ in range(_MAX_REDRAWS):
            p = _uniform_disc(rng, 1, config.drop_radius)[0]
            if np.hypot(*(p - tx[serving[u]])) >= config.min_pair_distance:
                rx[u] = p
                break
        else:
            raise ConfigError(f"could not place receiver {u} after {_MAX_REDRAWS} draws")
    return Topology(tx, rx, serving)


def draw_channels(topology: Topology, config: ScenarioConfig, rng=None) -> ChannelSet:
    """``H[b, u] = 10^(-PL/20) * G`` with i.i.d. CN(0, 1) entries in ``G``."""
    if rng is None:
        rng = np.random.default_rng(_streams(config)[1])
    dims = config.dims
    diff = topology.tx_positions[:, None, :] - topology.rx_positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])                 # (B, U)
    amplitude = 10.0 ** (-pathloss_db(dist, config) / 20.0)
    shape = (dims.num_tx, dims.num_rx, dims.rx_antennas, dims.tx_antennas)
    fading = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    H = amplitude[:, :, None, None] * fading
    noise = np.full(dims.num_rx, config.noise_power_w)
    return ChannelSet(H, noise, topology.serving)


def generate_scenario(config: ScenarioConfig) -> Scenario:
    topo_ss, chan_ss = _streams(config)
    topo = generate_topology(config, np.random.default_rng(topo_ss))
    channels = draw_channels(topo, config, np.random.default_rng(chan_ss))
    return Scenario(config.dims, channels, np.full(config.dims.num_tx, config.tx_power_w),
                    config, topo.tx_positions, topo.rx_positions)


def drop_seed(base_seed: int, index: int) -> int:
    """64-bit seed of drop ``index``, mixed from the campaign's base seed."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=int(seed))
