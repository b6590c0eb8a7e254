"""Signal model of the MIMO interference broadcast channel.

Channels are stored as one tensor ``H[b, u]`` holding the ``N_R x N_T``
matrix from transmitter ``b`` to receiver ``u``.  Streams are flattened:
stream ``k`` belongs to receiver ``owner[k]`` and is that receiver's
``layer[k]``-th stream, so a stream can be addressed either by its flat
index or by the pair ``(u, s)``.

Data symbols have unit power and are mutually independent; they are never
materialized.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

__all__ = [
    "ModelError", "Dimensions", "ChannelSet", "BeamformerSet",
    "effective_channels", "received_covariance", "compute_sinr", "all_sinr",
    "stream_rate", "user_rates", "mmse_receiver", "mmse_receivers",
    "stream_mse", "all_mse", "SYMBOL_POWER",
]

#: Power of every transmitted data symbol, E[|x|^2].
SYMBOL_POWER = 1.0

StreamKey = Union[int, Tuple[int, int]]


class ModelError(ValueError):
    """Raised on inconsistent dimensions or inputs outside the model's domain."""


@dataclass(frozen=True)
class Dimensions:
    """Sizes of an IBC system and the receiver-to-transmitter association.

    Parameters
    ----------
    num_tx, num_rx : int
        Number of transmitters ``B`` and receivers ``U``.
    tx_antennas, rx_antennas : int
        ``N_T`` and ``N_R``.
    streams_per_rx : tuple of int
        ``S_u`` for every receiver.
    serving : tuple of int
        Serving transmitter ``b_u`` of every receiver.
    """
    num_tx: int
    num_rx: int
    tx_antennas: int
    rx_antennas: int
    streams_per_rx: Tuple[int, ...]
    serving: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "streams_per_rx", tuple(int(s) for s in self.streams_per_rx))
        object.__setattr__(self, "serving", tuple(int(b) for b in self.serving))
        for name in ("num_tx", "num_rx", "tx_antennas", "rx_antennas"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be a positive integer")
        if len(self.streams_per_rx) != self.num_rx or len(self.serving) != self.num_rx:
            raise ModelError("streams_per_rx and serving need one entry per receiver")
        max_streams = min(self.tx_antennas, self.rx_antennas)
        if any(s < 1 or s > max_streams for s in self.streams_per_rx):
            raise ModelError(f"every S_u must lie in [1, {max_streams}]")
        if any(b < 0 or b >= self.num_tx for b in self.serving):
            raise ModelError("serving transmitter index out of range")

    @classmethod
    def regular(cls, num_tx, rx_per_tx, tx_antennas, rx_antennas, streams=1):
        """Every transmitter serves ``rx_per_tx`` consecutive receivers."""
        num_rx = num_tx * rx_per_tx
        return cls(num_tx, num_rx, tx_antennas, rx_antennas,
                   (streams,) * num_rx, tuple(u // rx_per_tx for u in range(num_rx)))

    @property
    def num_streams(self):
        return sum(self.streams_per_rx)

    @property
    def stream_owner(self):
        return np.repeat(np.arange(self.num_rx), self.streams_per_rx)

    def served_by(self, b):
        """Receivers served by transmitter ``b``."""
        return [u for u, bu in enumerate(self.serving) if bu == b]


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Channel matrices, noise powers and serving map.

    Attributes
    ----------
    H : ndarray, shape (B, U, N_R, N_T), complex
    noise_power : ndarray, shape (U,)
        Noise variance sigma_u^2 in Watts.
    serving : ndarray, shape (U,), int
    """
    H: np.ndarray
    noise_power: np.ndarray
    serving: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        noise = np.asarray(self.noise_power, dtype=float).reshape(-1)
        serving = np.asarray(self.serving, dtype=int).reshape(-1)
        if H.ndim != 4:
            raise ModelError("H must have shape (B, U, N_R, N_T)")
        B, U = H.shape[:2]
        if noise.shape != (U,) or serving.shape != (U,):
            raise ModelError("noise_power and serving need one entry per receiver")
        if not np.all(np.isfinite(H)):
            raise ModelError("channel matrices must be finite")
        if np.any(noise <= 0):
            raise ModelError("noise power must be positive")
        if np.any((serving < 0) | (serving >= B)):
            raise ModelError("serving transmitter index out of range")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "noise_power", noise)
        object.__setattr__(self, "serving", serving)

    @property
    def num_tx(self):
        return self.H.shape[0]

    @property
    def num_rx(self):
        return self.H.shape[1]

    @property
    def rx_antennas(self):
        return self.H.shape[2]

    @property
    def tx_antennas(self):
        return self.H.shape[3]


@dataclass(eq=False)
class BeamformerSet:
    """Transmit vectors ``m`` and receive vectors ``w`` of every stream.

    ``tx[k]`` and ``rx[k]`` belong to stream ``k``; ``owner[k]`` is its
    receiver and ``layer[k]`` its index among that receiver's streams.
    """
    tx: np.ndarray
    rx: np.ndarray
    owner: np.ndarray
    layer: np.ndarray

    @classmethod
    def zeros(cls, dims: Dimensions):
        K = dims.num_streams
        owner = dims.stream_owner
        layer = np.concatenate([np.arange(s) for s in dims.streams_per_rx])
        return cls(np.zeros((K, dims.tx_antennas), complex),
                   np.zeros((K, dims.rx_antennas), complex), owner, layer)

    @property
    def num_streams(self):
        return self.tx.shape[0]

    @property
    def streams(self):
        return list(zip(self.owner.tolist(), self.layer.tolist()))

    def index(self, stream: StreamKey) -> int:
        """Flat index of ``stream`` given as ``k`` or ``(u, s)``."""
        if isinstance(stream, (int, np.integer)):
            k = int(stream)
            if not 0 <= k < self.num_streams:
                raise ModelError(f"stream {k} does not exist")
            return k
        u, s = stream
        hits = np.flatnonzero((self.owner == u) & (self.layer == s))
        if hits.size != 1:
            raise ModelError(f"stream {stream!r} does not exist")
        return int(hits[0])

    def copy(self):
        return BeamformerSet(self.tx.copy(), self.rx.copy(), self.owner.copy(), self.layer.copy())

    def tx_power(self, serving, num_tx):
        """Total transmit power of every transmitter."""
        per_stream = np.sum(np.abs(self.tx) ** 2, axis=1)
        return np.bincount(np.asarray(serving)[self.owner], weights=per_stream, minlength=num_tx)


def _check(channels: ChannelSet, beams: BeamformerSet):
    if beams.tx.shape[1:] != (channels.tx_antennas,) or beams.rx.shape[1:] != (channels.rx_antennas,):
        raise ModelError("beamformer lengths do not match the antenna counts")
    if beams.tx.shape[0] != beams.rx.shape[0] or beams.owner.shape[0] != beams.tx.shape[0]:
        raise ModelError("transmit and receive beamformers cover different streams")
    if beams.owner.size and (beams.owner.min() < 0 or beams.owner.max() >= channels.num_rx):
        raise ModelError("stream owner out of range")


def effective_channels(channels: ChannelSet, tx: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Effective vectors ``G[u, k] = H[b_{owner[k]}, u] @ m_k``, shape (U, K, N_R)."""
    Hk = channels.H[channels.serving[owner]]          # (K, U, N_R, N_T)
    return np.einsum("kurt,kt->ukr", Hk, tx)


def received_covariance(G: np.ndarray, noise_power: np.ndarray) -> np.ndarray:
    """Received covariance ``sum_k G G^H + sigma^2 I`` of every receiver."""
    n_r = G.shape[2]
    R = np.einsum("ukr,ukq->urq", G, G.conj())
    R += noise_power[:, None, None] * np.eye(n_r)
    return R


def _sinr(G, rx, owner, noise_power, allow_zero=False):
    Gown = G[owner]                                    # (K, K', N_R): at stream k's receiver
    X = np.einsum("kr,kjr->kj", rx.conj(), Gown)
    P = np.abs(X) ** 2
    desired = np.diagonal(P).copy()
    np.fill_diagonal(P, 0.0)
    wnorm = np.sum(np.abs(rx) ** 2, axis=1)
    denom = P.sum(axis=1) + noise_power[owner] * wnorm
    zero = wnorm == 0
    if np.any(zero) and not allow_zero:
        raise ModelError("receive vector must not be the zero vector")
    out = np.zeros_like(desired)
    np.divide(desired, denom, out=out, where=~zero & (denom > 0))
    return out


def all_sinr(channels: ChannelSet, beams: BeamformerSet, allow_zero=False) -> np.ndarray:
    """SINR of every stream.

    With ``allow_zero`` a zero receive vector yields SINR 0 instead of an
    error (a stream whose transmit vector has collapsed to zero).
    """
    _check(channels, beams)
    G = effective_channels(channels, beams.tx, beams.owner)
    return _sinr(G, beams.rx, beams.owner, channels.noise_power, allow_zero)


def compute_sinr(channels: ChannelSet, beams: BeamformerSet, stream: StreamKey) -> float:
    """SINR of one stream at the output of its receive filter.

    Desired power over the leakage of every other stream plus the filtered
    noise ``sigma_u^2 ||w||^2``.  Invariant to scaling of ``w``.
    """
    _check(channels, beams)
    k = beams.index(stream)
    u = beams.owner[k]
    w = beams.rx[k]
    wnorm = np.vdot(w, w).real
    if wnorm == 0:
        raise ModelError("receive vector must not be the zero vector")
    Hk = channels.H[channels.serving[beams.owner], u]   # (K, N_R, N_T)
    g = np.einsum("krt,kt->kr", Hk, beams.tx)
    p = np.abs(g @ w.conj()) ** 2
    interference = np.sum(np.delete(p, k))
    return float(p[k] / (interference + channels.noise_power[u] * wnorm))


def stream_rate(sinr):
    """Shannon rate ``log2(1 + sinr)`` in bits/s/Hz; works elementwise."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0) or np.any(np.isnan(sinr)):
        raise ModelError("SINR must be nonnegative")
    out = np.log1p(sinr) / np.log(2.0)
    return float(out) if out.ndim == 0 else out


def user_rates(per_stream_rate: np.ndarray, owner: np.ndarray, num_rx: int) -> np.ndarray:
    """Per-user rate ``r_u``: sum of the user's stream rates."""
    return np.bincount(owner, weights=per_stream_rate, minlength=num_rx)


def _mmse(G, owner, noise_power):
    R = received_covariance(G, noise_power)
    K = owner.shape[0]
    rhs = G[owner, np.arange(K)]                       # (K, N_R)
    return np.linalg.solve(R[owner], rhs[..., None])[..., 0]


def mmse_receivers(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    """MMSE receive vectors of every stream, shape (K, N_R)."""
    _check(channels, beams)
    G = effective_channels(channels, beams.tx, beams.owner)
    return _mmse(G, beams.owner, channels.noise_power)


def mmse_receiver(channels: ChannelSet, tx_beams: BeamformerSet, stream: StreamKey) -> np.ndarray:
    """MMSE receive vector ``R_u^{-1} H_{b_u,u} m_{u,s}`` of one stream.

    ``R_u`` is the full received covariance at receiver ``u`` (all streams
    plus noise).  Only the transmit part of ``tx_beams`` is used.
    """
    k = tx_beams.index(stream)
    return mmse_receivers(channels, tx_beams)[k]


def _mse(G, rx, owner, noise_power):
    X = np.einsum("kr,kjr->kj", rx.conj(), G[owner])
    cross = np.diagonal(X)
    wnorm = np.sum(np.abs(rx) ** 2, axis=1)
    return (SYMBOL_POWER - 2.0 * cross.real + np.sum(np.abs(X) ** 2, axis=1)
            + noise_power[owner] * wnorm)


def all_mse(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    """Mean square error of every stream for the stored receive vectors."""
    _check(channels, beams)
    G = effective_channels(channels, beams.tx, beams.owner)
    return _mse(G, beams.rx, beams.owner, channels.noise_power)


def stream_mse(channels: ChannelSet, beams: BeamformerSet, stream: StreamKey) -> float:
    """MSE ``E|w^H y - x|^2`` of one stream.

    ``1 - 2 Re(w^H H m) + sum over all streams |w^H H_{b_i,u} m_{i,j}|^2
    + sigma_u^2 ||w||^2``.
    """
    k = beams.index(stream)
    return float(all_mse(channels, beams)[k])
