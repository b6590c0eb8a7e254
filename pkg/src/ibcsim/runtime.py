"""Decentralized message-passing execution of the relaxation algorithm.

Each frame has three signaling phases:

* FORWARD: every TX sends precoded pilots; each RX observes the effective
  vectors ``H_{b,u} m_k`` of all streams at its antennas.
* BACKWARD: every RX sends pilots precoded with ``sqrt(t_k) w_k``; through
  the reciprocal channel each TX observes ``sqrt(t_k) H_{b,u}^H w_k``.  The
  serving TX also receives the RX's control values (lambda, d, t).
* INTER_TX: TXs share their streams' ``(u, s, t, lambda)`` tuples over the
  backhaul.

Nodes only ever see :class:`Observation` slices addressed to them, never
another node's channel matrices.  A global evaluator (not a node) computes
the objective on the true channels for the stopping rule and the report.
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .algorithms import (AlgorithmParams, AlgorithmState, Mode, STALL_ITERS,
                         finish, init_state, multiplier_rule, mrt_vectors,
                         penalized_objective, relaxation_rule,
                         solve_power_constrained, update_receivers_and_mse,
                         update_relaxation, weight_rule)
from .model import BeamformerSet
from .scenario import Scenario

__all__ = [
    "ProtocolError", "Phase", "Kind", "NodeId", "ForwardPilot",
    "BackwardPilot", "InterTxWeights", "Message", "Observation", "Medium",
    "TxNodeState", "RxNodeState", "EventTrace", "run_frame_phase", "deliver",
    "init_nodes", "rx_step", "tx_report", "tx_step", "run_decentralized",
]


class ProtocolError(RuntimeError):
    """Signaling phases executed out of order or with missing inputs."""


class Phase(str, Enum):
    FORWARD = "FORWARD"
    BACKWARD = "BACKWARD"
    INTER_TX = "INTER_TX"


class Kind(str, Enum):
    TX = "TX"
    RX = "RX"


@dataclass(frozen=True)
class NodeId:
    kind: Kind
    index: int


def _frozen(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ForwardPilot:
    """Effective vectors of the sender's streams at each RX, ``rx -> (n, N_R)``."""
    streams: Tuple[int, ...]
    observed: Dict[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class BackwardPilot:
    """Weighted filters of the sender's streams at each TX, ``tx -> (n, N_T)``.

    ``control`` (multiplier, relaxation, stream weights) is readable only
    by the serving TX ``control_to``.
    """
    streams: Tuple[int, ...]
    observed: Dict[int, np.ndarray]
    control_to: int
    control: dict


@dataclass(frozen=True, eq=False)
class InterTxWeights:
    """``(u, s, t, lambda)`` tuples delivered to ``recipients``."""
    tuples: Tuple[Tuple[int, int, float, float], ...]
    recipients: frozenset


_PAYLOADS = {Phase.FORWARD: ForwardPilot, Phase.BACKWARD: BackwardPilot,
             Phase.INTER_TX: InterTxWeights}


@dataclass(frozen=True, eq=False)
class Message:
    phase: Phase
    sender: NodeId
    payload: object
    payload_bytes: int

    def __post_init__(self):
        if not isinstance(self.payload, _PAYLOADS[self.phase]):
            raise ProtocolError(f"{type(self.payload).__name__} cannot travel in {self.phase.value}")

    def view(self, node: NodeId) -> Optional["Observation"]:
        """The part of this message observable by ``node``, or None."""
        p = self.payload
        if self.phase is Phase.FORWARD and node.kind is Kind.RX:
            return Observation(self.phase, self.sender, p.streams, p.observed[node.index])
        if self.phase is Phase.BACKWARD and node.kind is Kind.TX:
            control = p.control if p.control_to == node.index else None
            return Observation(self.phase, self.sender, p.streams, p.observed[node.index], control)
        if self.phase is Phase.INTER_TX and node.kind is Kind.TX and node.index in p.recipients:
            return Observation(self.phase, self.sender, (), None, tuples=p.tuples)
        return None


@dataclass(frozen=True, eq=False)
class Observation:
    phase: Phase
    sender: NodeId
    streams: Tuple[int, ...]
    vectors: Optional[np.ndarray]
    control: Optional[dict] = None
    tuples: Tuple = ()


def deliver(messages: List[Message], node: NodeId) -> List[Observation]:
    """Everything ``node`` can observe from ``messages``."""
    views = (m.view(node) for m in messages)
    return [v for v in views if v is not None]


class Medium:
    """Over-the-air channel and backhaul between the nodes.

    Holds the true channels; pilots pick up i.i.d. CN(0, ``pilot_noise_var``)
    estimation noise per observed entry.  ``neighbor_radius`` limits which
    TXs hear an INTER_TX broadcast (None: all TXs).
    """

    _NEXT = {None: Phase.FORWARD, Phase.FORWARD: Phase.BACKWARD,
             Phase.BACKWARD: Phase.INTER_TX, Phase.INTER_TX: Phase.FORWARD}

    def __init__(self, scenario: Scenario, pilot_noise_var=0.0, seed=0, neighbor_radius=None):
        if pilot_noise_var < 0:
            raise ValueError("pilot noise variance must be nonnegative")
        self.channels = scenario.channels
        self.pilot_noise_var = float(pilot_noise_var)
        self.rng = np.random.default_rng(seed)
        self.last_phase = None
        B = scenario.dims.num_tx
        if neighbor_radius is None or scenario.tx_positions is None:
            self.neighbors = [frozenset(range(B))] * B
        else:
            pos = scenario.tx_positions
            dist = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
            self.neighbors = [frozenset(np.flatnonzero(dist[b] <= neighbor_radius).tolist())
                              for b in range(B)]

    def advance(self, phase: Phase):
        if self._NEXT[self.last_phase] is not phase:
            raise ProtocolError(f"{phase.value} cannot follow {getattr(self.last_phase, 'value', 'start')}")
        self.last_phase = phase

    def noisy(self, x):
        if self.pilot_noise_var == 0:
            return _frozen(x)
        noise = self.rng.standard_normal(x.shape + (2,)) @ np.array([1.0, 1j])
        return _frozen(x + np.sqrt(self.pilot_noise_var / 2.0) * noise)


@dataclass
class TxNodeState:
    index: int
    streams: Tuple[int, ...]
    power_budget: float
    tx: np.ndarray
    weights: np.ndarray
    multipliers: Dict[int, float] = field(default_factory=dict)
    neighbor_weights: Tuple = ()
    mu: float = 0.0


@dataclass
class RxNodeState:
    """Receiver state.  ``effective`` holds filtered vectors ``H m_k``, never matrices."""
    index: int
    streams: Tuple[int, ...]
    layers: Tuple[int, ...]
    noise_power: float
    qos: float
    priority: float
    multiplier_cap: float
    effective: Optional[np.ndarray] = None
    rx: Optional[np.ndarray] = None
    mse: Optional[np.ndarray] = None
    rate: float = 0.0
    multiplier: float = 0.0
    relaxation: float = 0.0
    weights: Optional[np.ndarray] = None


def _payload_bytes(*parts):
    return int(sum(np.asarray(p).nbytes for p in parts))


def run_frame_phase(phase: Phase, emissions: Dict[NodeId, object], medium: Medium) -> List[Message]:
    """Carry every node's emission of ``phase`` through the medium.

    ``emissions`` maps a sender to what it puts on the air: FORWARD
    ``(streams, precoders)``, BACKWARD ``(streams, weighted_filters,
    control)``, INTER_TX a tuple of ``(u, s, t, lambda)``.
    """
    phase = Phase(phase)
    medium.advance(phase)
    H = medium.channels.H
    B, U = H.shape[:2]
    out = []
    for sender in sorted(emissions, key=lambda n: (n.kind.value, n.index)):
        em = emissions[sender]
        if phase is Phase.FORWARD:
            if sender.kind is not Kind.TX:
                raise ProtocolError("only TXs send forward pilots")
            streams, m = em
            m = np.asarray(m).reshape(len(streams), -1)
            observed = {u: medium.noisy(m @ H[sender.index, u].T) for u in range(U)}
            payload, size = ForwardPilot(tuple(streams), observed), _payload_bytes(m)
        elif phase is Phase.BACKWARD:
            if sender.kind is not Kind.RX:
                raise ProtocolError("only RXs send backward pilots")
            streams, f, control = em
            f = np.asarray(f).reshape(len(streams), -1)
            # reciprocity: the uplink channel is H^H
            observed = {b: medium.noisy(f @ H[b, sender.index].conj()) for b in range(B)}
            serving = int(medium.channels.serving[sender.index])
            payload = BackwardPilot(tuple(streams), observed, serving, dict(control))
            size = _payload_bytes(f, control["weights"]) + 16
        else:
            if sender.kind is not Kind.TX:
                raise ProtocolError("only TXs use the inter-TX link")
            tuples = tuple(tuple(t) for t in em)
            payload = InterTxWeights(tuples, medium.neighbors[sender.index])
            size = 32 * len(tuples)
        out.append(Message(phase, sender, payload, size))
    return out


def init_nodes(scenario: Scenario, params: AlgorithmParams):
    """Nodes at the start of the iteration; TXs hold their MRT precoders.

    MRT uses each TX's own served links only (its local CSI).
    """
    dims, ch = scenario.dims, scenario.channels
    owner = dims.stream_owner
    tx_of = ch.serving[owner]
    n_streams = np.bincount(tx_of, minlength=dims.num_tx)
    txs = []
    for b in range(dims.num_tx):
        ks = tuple(np.flatnonzero(tx_of == b).tolist())
        m = np.zeros((len(ks), dims.tx_antennas), complex)
        for u in dims.served_by(b):
            pos = [i for i, k in enumerate(ks) if owner[k] == u]
            m[pos] = mrt_vectors(ch.H[b, u], len(pos), scenario.power_budget[b] / n_streams[b])
        txs.append(TxNodeState(b, ks, float(scenario.power_budget[b]), m, np.zeros(len(ks))))
    qos = params.qos_vector(dims.num_rx)
    beta = params.priority_vector(dims.num_rx)
    cap = params.multiplier_cap(dims.num_rx)
    rxs = []
    for u in range(dims.num_rx):
        ks = tuple(np.flatnonzero(owner == u).tolist())
        rxs.append(RxNodeState(u, ks, tuple(range(len(ks))), float(ch.noise_power[u]),
                               float(qos[u]), float(beta[u]), float(cap[u])))
    return txs, rxs


def rx_step(rx: RxNodeState, observations: List[Observation], params: AlgorithmParams):
    """Receiver update from its forward-pilot observations.

    Estimates the effective vectors, computes MMSE receivers, MSEs and the
    rate, updates the multiplier, relaxation and stream weights, and
    returns the new state with its backward emission.
    """
    fwd = [o for o in observations if o.phase is Phase.FORWARD]
    if not fwd:
        raise ProtocolError("receiver step needs forward pilot observations")
    K = max(max(o.streams) for o in fwd if o.streams) + 1
    G = np.zeros((K, fwd[0].vectors.shape[1]), complex)
    for o in fwd:
        G[list(o.streams)] = o.vectors
    own = list(rx.streams)
    R = G.T @ G.conj() + rx.noise_power * np.eye(G.shape[1])
    W = np.linalg.solve(R[None], G[own][..., None])[..., 0]
    X = np.abs(W.conj() @ G.T) ** 2                           # (n, K)
    desired = X[np.arange(len(own)), own].copy()
    X[np.arange(len(own)), own] = 0.0
    wnorm = np.sum(np.abs(W) ** 2, axis=1)
    denom = X.sum(axis=1) + rx.noise_power * wnorm
    sinr = np.zeros(len(own))
    np.divide(desired, denom, out=sinr, where=(wnorm > 0) & (denom > 0))
    mse = 1.0 / (1.0 + sinr)
    rate = float(np.sum(np.log1p(sinr)) / np.log(2.0))

    if params.mode is Mode.WMMSE:
        lam, d = 0.0, 0.0
    else:
        lam = float(multiplier_rule(rx.multiplier, rx.qos, rate, params.multiplier_step, rx.multiplier_cap))
        d = float(relaxation_rule(rx.qos, rate)) if params.mode is Mode.PROPOSED else 0.0
    t = weight_rule(rx.priority + lam, mse)
    rx = replace(rx, effective=G, rx=W, mse=mse, rate=rate, multiplier=lam, relaxation=d, weights=t)
    control = {"user": rx.index, "multiplier": lam, "relaxation": d, "weights": t}
    return rx, (rx.streams, np.sqrt(t)[:, None] * W, control)


def tx_report(tx: TxNodeState, observations: List[Observation], layer_of: Dict[int, Tuple[int, int]]):
    """Take in the control values of the TX's own receivers; return the
    state and its INTER_TX tuples."""
    weights = tx.weights.copy()
    multipliers = dict(tx.multipliers)
    for o in observations:
        if o.phase is Phase.BACKWARD and o.control is not None:
            for k, t in zip(o.streams, o.control["weights"]):
                weights[tx.streams.index(k)] = t
            multipliers[o.control["user"]] = o.control["multiplier"]
    tx = replace(tx, weights=weights, multipliers=multipliers)
    tuples = tuple((*layer_of[k], float(t), float(multipliers[layer_of[k][0]]))
                   for k, t in zip(tx.streams, weights))
    return tx, tuples


def tx_step(tx: TxNodeState, observations: List[Observation], power_tol=1e-6):
    """Transmitter update from backward pilots and inter-TX weights.

    The weighted covariance is the sum of outer products of all observed
    backward vectors ``v = sqrt(t) H^H w``; the right-hand side of an own
    stream is ``sqrt(t) v``.  Returns the state and its next forward emission.
    """
    back = [o for o in observations if o.phase is Phase.BACKWARD]
    inter = [o for o in observations if o.phase is Phase.INTER_TX]
    if not back or not inter:
        raise ProtocolError("transmitter step needs backward pilots and inter-TX weights")
    V = {}
    for o in back:
        for k, v in zip(o.streams, o.vectors):
            V[k] = v
    order = sorted(V)
    Vm = np.array([V[k] for k in order])
    A = Vm.T @ Vm.conj()
    rhs = np.array([np.sqrt(t) * V[k] for k, t in zip(tx.streams, tx.weights)])
    if rhs.size:
        m, mu = solve_power_constrained(A, rhs, tx.power_budget, power_tol)
    else:
        m, mu = tx.tx, 0.0
    tuples = tuple(t for o in inter for t in o.tuples)
    tx = replace(tx, tx=m, mu=mu, neighbor_weights=tuples)
    return tx, (tx.streams, m)


@dataclass
class EventTrace:
    """Audit log of every message: one record per sender per phase."""
    records: List[dict] = field(default_factory=list)

    def record(self, iteration, messages):
        for m in messages:
            self.records.append({"iter": iteration, "phase": m.phase.value,
                                 "sender_kind": m.sender.kind.value,
                                 "sender_index": m.sender.index,
                                 "payload_bytes": m.payload_bytes})

    def __len__(self):
        return len(self.records)

    def to_ndjson(self):
        return "".join(json.dumps(r) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_ndjson())


def _evaluate(scenario, params, template: BeamformerSet, txs, state: AlgorithmState):
    """Global (non-node) evaluation of the current transmit vectors."""
    beams = template.copy()
    for tx in txs:
        beams.tx[list(tx.streams)] = tx.tx
    state = replace(state, beams=beams)
    state = update_receivers_and_mse(state, scenario)
    return update_relaxation(state, params)


def run_decentralized(scenario: Scenario, params: AlgorithmParams, pilot_noise_var=0.0,
                      seed=0, neighbor_radius=None, record_beams=False):
    """Run the algorithm as TX/RX nodes exchanging messages.

    Uses the same stopping rule as :func:`ibcsim.algorithms.run`.  With
    noiseless pilots the trajectory reproduces the centralized one.

    Returns
    -------
    result : AllocationResult
        Rates are evaluated on the true channels with MMSE receivers.
    trace : EventTrace
    """
    medium = Medium(scenario, pilot_noise_var, seed, neighbor_radius)
    dims = scenario.dims
    txs, rxs = init_nodes(scenario, params)
    template = BeamformerSet.zeros(dims)
    layer_of = {k: (int(u), int(s)) for k, (u, s) in enumerate(template.streams)}
    beams = template.copy()
    for tx in txs:
        beams.tx[list(tx.streams)] = tx.tx
    state = init_state(scenario, params, beams=beams)
    trace = EventTrace()
    tx_ids = [NodeId(Kind.TX, b) for b in range(dims.num_tx)]
    rx_ids = [NodeId(Kind.RX, u) for u in range(dims.num_rx)]
    power_history, beam_history = [], ([] if record_beams else None)
    stall, converged = 0, False
    for it in range(int(params.max_iters)):
        fwd = run_frame_phase(Phase.FORWARD, {i: (tx.streams, tx.tx) for i, tx in zip(tx_ids, txs)}, medium)
        back_em = {}
        for n, (i, rx) in enumerate(zip(rx_ids, rxs)):
            rxs[n], back_em[i] = rx_step(rx, deliver(fwd, i), params)
        back = run_frame_phase(Phase.BACKWARD, back_em, medium)
        inter_em = {}
        for n, i in enumerate(tx_ids):
            txs[n], inter_em[i] = tx_report(txs[n], deliver(back, i), layer_of)
        inter = run_frame_phase(Phase.INTER_TX, inter_em, medium)
        for n, i in enumerate(tx_ids):
            txs[n], _ = tx_step(txs[n], deliver(back + inter, i), params.power_tol)
        trace.record(it, fwd + back + inter)

        lam = np.array([rx.multiplier for rx in rxs])
        state = _evaluate(scenario, params, template, txs, replace(state, multipliers=lam))
        obj = penalized_objective(state, scenario, params)
        state = replace(state, iter=it + 1, objective_history=state.objective_history + [obj])
        power_history.append(state.beams.tx_power(scenario.serving, dims.num_tx))
        if record_beams:
            beam_history.append(state.beams.tx.copy())
        h = state.objective_history
        stall = stall + 1 if abs(h[-1] - h[-2]) < params.obj_tol else 0
        if stall >= STALL_ITERS:
            converged = True
            break
    state.tx_power = power_history[-1] if power_history else None
    return finish(state, params, converged, power_history, beam_history), trace
