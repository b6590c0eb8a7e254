"""Iterative transceiver solvers: WMMSE, hard-QoS WMMSE and QoS relaxation.

All three share one block-coordinate loop.  Per iteration:

1. QoS multipliers ``lambda_u`` take a projected subgradient step on
   ``qos_u - r_u``.
2. Relaxations ``d_u`` are set to ``clamp(qos_u - r_u, 0, qos_u)``.
3. Stream weights ``t = (beta_u + lambda_u) / (e ln 2)``.
4. Every transmitter solves its weighted-MSE precoder problem under its
   power budget (bisection on the power multiplier).
5. MMSE receivers, MSEs and rates are refreshed and the objective
   ``sum_u beta_u (r_u - rho d_u)`` is recorded.

The modes differ only in the multiplier cap: 0 for WMMSE, ``beta_u rho``
for PROPOSED (beyond it relaxing the requirement is cheaper than chasing
it) and effectively unbounded for QOS_HARD.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from .model import (BeamformerSet, _mmse, _sinr, effective_channels,
                    stream_rate, user_rates)
from .scenario import Scenario

__all__ = [
    "Mode", "NumericalError", "AlgorithmParams", "AlgorithmState",
    "AllocationResult", "LAMBDA_BIG", "SAT_TOL", "STALL_ITERS", "is_deactivated",
    "multiplier_rule", "relaxation_rule", "weight_rule", "mrt_vectors",
    "init_beamformers_mrt", "init_state", "iterate", "update_receivers_and_mse",
    "update_stream_weights", "update_relaxation", "update_multipliers",
    "backward_vectors", "transmit_covariance", "solve_power_constrained",
    "transmit_update", "penalized_objective", "run",
]

#: Multiplier cap standing in for "no cap" in QOS_HARD mode.
LAMBDA_BIG = 1e6
#: Tolerance of the satisfaction test ``r_u >= qos_u - SAT_TOL``.
SAT_TOL = 1e-6
#: Consecutive small objective changes needed to declare convergence.
STALL_ITERS = 5
_MAX_DOUBLINGS = 128
_LN2 = math.log(2.0)


class Mode(str, Enum):
    WMMSE = "WMMSE"
    QOS_HARD = "QOS_HARD"
    PROPOSED = "PROPOSED"


def is_deactivated(rates, eps):
    """``r < eps``; with ``eps == 0`` only exactly-zero rates count."""
    rates = np.asarray(rates, dtype=float)
    return rates < eps if eps > 0 else rates <= 0.0


class NumericalError(ArithmeticError):
    """Broken numerical state (non-positive MSE, unbracketable power multiplier)."""


def _per_user(value, num_rx, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(num_rx, float(arr))
    if arr.shape != (num_rx,):
        raise ValueError(f"{name} needs one entry per receiver ({num_rx})")
    return arr.copy()


@dataclass(frozen=True)
class AlgorithmParams:
    """Solver configuration.

    ``priorities`` and ``qos`` accept a scalar (same for every user) or one
    value per user.  ``qos`` is in bits/s/Hz and ignored in WMMSE mode.
    """
    mode: Mode = Mode.PROPOSED
    priorities: object = 1.0
    qos: object = 0.0
    penalty_slope: float = 4.0
    multiplier_step: float = 0.05
    max_iters: int = 200
    obj_tol: float = 1e-4
    power_tol: float = 1e-6
    deactivation_eps: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.penalty_slope > 0:
            raise ValueError("penalty_slope must be positive")
        if not self.multiplier_step > 0:
            raise ValueError("multiplier_step must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be a positive integer")
        if not (self.obj_tol > 0 and self.power_tol > 0 and self.deactivation_eps >= 0):
            raise ValueError("tolerances must be positive")
        if np.any(np.asarray(self.priorities, dtype=float) <= 0):
            raise ValueError("priorities must be positive")
        if np.any(np.asarray(self.qos, dtype=float) < 0):
            raise ValueError("qos must be nonnegative")

    def priority_vector(self, num_rx):
        return _per_user(self.priorities, num_rx, "priorities")

    def qos_vector(self, num_rx):
        return _per_user(self.qos, num_rx, "qos")

    def multiplier_cap(self, num_rx):
        if self.mode is Mode.PROPOSED:
            return self.priority_vector(num_rx) * self.penalty_slope
        if self.mode is Mode.QOS_HARD:
            return np.full(num_rx, LAMBDA_BIG)
        return np.zeros(num_rx)


@dataclass
class AlgorithmState:
    beams: BeamformerSet
    mse: np.ndarray
    rates: np.ndarray
    weights: np.ndarray
    multipliers: np.ndarray
    relaxations: np.ndarray
    iter: int = 0
    objective_history: List[float] = field(default_factory=list)
    tx_power: Optional[np.ndarray] = None


@dataclass
class AllocationResult:
    """Outcome of one solver run."""
    mode: Mode
    rates: np.ndarray
    qos: np.ndarray
    relaxations: np.ndarray
    multipliers: np.ndarray
    satisfied: np.ndarray
    deactivated: np.ndarray
    sum_rate: float
    penalized_objective: float
    iterations_used: int
    converged: bool
    objective_history: np.ndarray
    power_history: np.ndarray
    beams: BeamformerSet
    beam_history: Optional[list] = None

    def to_dict(self):
        return {
            "mode": self.mode.value,
            "rates": self.rates.tolist(),
            "qos": self.qos.tolist(),
            "relaxations": self.relaxations.tolist(),
            "multipliers": self.multipliers.tolist(),
            "satisfied": self.satisfied.tolist(),
            "deactivated": self.deactivated.tolist(),
            "sum_rate": self.sum_rate,
            "penalized_objective": self.penalized_objective,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "objective_history": self.objective_history.tolist(),
        }


def _phase_align(v):
    mag = np.abs(v)
    i = int(np.argmax(mag > 1e-12 * mag.max()))
    return v * (np.conj(v[i]) / mag[i])


def mrt_vectors(H, num_streams, power):
    """Dominant right singular vectors of one link, each with power ``power``.

    The phase is fixed so that the first nonzero entry is real and positive.
    """
    _, _, vh = np.linalg.svd(H)
    return np.array([math.sqrt(power) * _phase_align(vh[s].conj()) for s in range(num_streams)])


def init_beamformers_mrt(scenario: Scenario, params: Optional[AlgorithmParams] = None) -> BeamformerSet:
    """Maximum-ratio initialization along the dominant right singular vectors.

    Each transmitter splits its budget evenly over its streams.  Receive
    vectors are the MMSE receivers of the resulting transmit vectors.
    """
    dims, ch = scenario.dims, scenario.channels
    beams = BeamformerSet.zeros(dims)
    n_streams = np.bincount(ch.serving[beams.owner], minlength=dims.num_tx)
    for u in range(dims.num_rx):
        b = ch.serving[u]
        ks = np.flatnonzero(beams.owner == u)
        beams.tx[ks] = mrt_vectors(ch.H[b, u], ks.size, scenario.power_budget[b] / n_streams[b])
    G = effective_channels(ch, beams.tx, beams.owner)
    beams.rx = _mmse(G, beams.owner, ch.noise_power)
    return beams


def update_receivers_and_mse(state: AlgorithmState, scenario: Scenario) -> AlgorithmState:
    """MMSE receivers for the current transmit vectors, then MSEs and rates.

    With MMSE receivers the MSE equals ``1 / (1 + SINR)``; it is evaluated
    that way because the expanded quadratic form cancels badly at high SINR.
    """
    ch = scenario.channels
    beams = state.beams.copy()
    G = effective_channels(ch, beams.tx, beams.owner)
    beams.rx = _mmse(G, beams.owner, ch.noise_power)
    sinr = _sinr(G, beams.rx, beams.owner, ch.noise_power, allow_zero=True)
    rates = user_rates(stream_rate(sinr), beams.owner, ch.num_rx)
    return replace(state, beams=beams, mse=1.0 / (1.0 + sinr), rates=rates)


def multiplier_rule(multipliers, qos, rates, step, cap):
    """Projected subgradient step ``clamp(lambda + step (qos - r), 0, cap)``."""
    return np.clip(multipliers + step * (qos - rates), 0.0, cap)


def relaxation_rule(qos, rates):
    """Tight relaxation ``clamp(qos - r, 0, qos)``."""
    return np.clip(qos - rates, 0.0, qos)


def weight_rule(alpha, mse):
    """Stream weight ``alpha / (e ln 2)``."""
    if np.any(~(np.asarray(mse) > 0)):
        raise NumericalError("stream MSE must be positive")
    return alpha / (mse * _LN2)


def update_multipliers(state: AlgorithmState, params: AlgorithmParams) -> AlgorithmState:
    U = state.rates.shape[0]
    if params.mode is Mode.WMMSE:
        return replace(state, multipliers=np.zeros(U))
    lam = multiplier_rule(state.multipliers, params.qos_vector(U), state.rates,
                          params.multiplier_step, params.multiplier_cap(U))
    return replace(state, multipliers=lam)


def update_relaxation(state: AlgorithmState, params: AlgorithmParams) -> AlgorithmState:
    """``d_u`` made tight against the current rate (PROPOSED only, else zero)."""
    U = state.rates.shape[0]
    if params.mode is not Mode.PROPOSED:
        return replace(state, relaxations=np.zeros(U))
    return replace(state, relaxations=relaxation_rule(params.qos_vector(U), state.rates))


def update_stream_weights(state: AlgorithmState, params: AlgorithmParams) -> AlgorithmState:
    U = state.rates.shape[0]
    lam = np.zeros(U) if params.mode is Mode.WMMSE else state.multipliers
    alpha = params.priority_vector(U) + lam
    return replace(state, weights=weight_rule(alpha[state.beams.owner], state.mse))


def backward_vectors(channels, rx, weights, owner):
    """``V[b, k] = sqrt(t_k) H_{b, u_k}^H w_k``: stream k's weighted filter seen at TX b."""
    Hk = channels.H[:, owner]                                   # (B, K, N_R, N_T)
    V = np.einsum("bkrt,kr->bkt", Hk.conj(), rx)
    return V * np.sqrt(weights)[None, :, None]


def transmit_covariance(V):
    """``A_b = sum_k V[b, k] V[b, k]^H`` for every transmitter."""
    return np.einsum("bki,bkj->bij", V, V.conj())


def _power_at(eig, cpow, mu):
    return sum(c / (e + mu) ** 2 for e, c in zip(eig, cpow))


def _bisect_one(eig, cpow, budget, power_tol):
    """Smallest ``mu >= 0`` with ``sum cpow / (eig + mu)^2 <= budget``.

    Bisection on a bracket ``[lo, hi]`` with ``power(hi) <= budget``.  When
    the Newton step on ``1 / sqrt(power)`` (close to linear in ``mu``) lands
    strictly inside the bracket it replaces the midpoint.
    """
    top = max(eig)
    live = [e > 1e-13 * top for e in eig] if top > 0 else [False] * len(eig)
    p0 = sum(c / e ** 2 for e, c, ok in zip(eig, cpow, live) if ok)
    total = sum(cpow)
    if p0 <= budget or total == 0.0:
        return 0.0
    s = math.sqrt(total / budget)
    lo = max(s - top, 0.0)
    hi = max(s - min(eig), 1e-300)
    for _ in range(_MAX_DOUBLINGS):
        if _power_at(eig, cpow, hi) <= budget:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError("power multiplier could not be bracketed")
    target = 1.0 / math.sqrt(budget)
    x = lo if lo + min(eig) > 0 else hi
    for _ in range(200):
        px = _power_at(eig, cpow, x)
        slope = px ** -1.5 * sum(c / (e + x) ** 3 for e, c in zip(eig, cpow))
        step = x - (px ** -0.5 - target) / slope if slope > 0 else hi
        x = step if lo < step < hi else 0.5 * (lo + hi)
        if _power_at(eig, cpow, x) <= budget:
            hi = x
        else:
            lo = x
            # probe just above an infeasible Newton point to close the bracket
            probe = x * (1.0 + 1e-13) + 1e-300
            if probe < hi and _power_at(eig, cpow, probe) <= budget:
                hi = probe
        if hi - lo <= 1e-12 * hi or _power_at(eig, cpow, hi) >= budget * (1.0 - 1e-12):
            break
    if _power_at(eig, cpow, hi) > budget * (1.0 + power_tol):
        raise NumericalError("power bisection did not converge")
    return hi


def _bisect_multiplier(eig, cpow, budget, power_tol):
    return np.array([_bisect_one(e.tolist(), c.tolist(), float(P), power_tol)
                     for e, c, P in zip(eig, cpow, budget)])


def _precoders(Q, eig, C, mu):
    use = (eig > 1e-13 * max(eig.max(), np.finfo(float).tiny)) | (mu > 0)
    denom = np.where(use, eig + mu, 1.0)
    scaled = np.where(use[:, None], C / denom[:, None], 0.0)
    return (Q @ scaled).T


def solve_power_constrained(A, rhs, budget, power_tol=1e-6):
    """Solve ``(A + mu I) m_k = rhs_k`` for one transmitter under a total power budget.

    Parameters
    ----------
    A : ndarray, shape (N_T, N_T)
        Hermitian PSD weighted covariance.
    rhs : ndarray, shape (n, N_T)
        One right-hand side per served stream.
    budget : float
        Power budget ``P_b``.

    Returns
    -------
    m : ndarray, shape (n, N_T)
    mu : float
        Zero when the unconstrained (minimum-norm) solution fits the budget.
    """
    eig, Q = np.linalg.eigh(A)
    eig = np.clip(eig, 0.0, None)
    C = Q.conj().T @ np.asarray(rhs).T                         # (N_T, n)
    cpow = np.sum(np.abs(C) ** 2, axis=1)
    mu = _bisect_multiplier(eig[None], cpow[None], np.array([float(budget)]), power_tol)[0]
    return _precoders(Q, eig, C, mu), float(mu)


def transmit_update(state: AlgorithmState, scenario: Scenario, params: AlgorithmParams) -> AlgorithmState:
    """Weighted-MSE precoder update of every transmitter under its power budget."""
    ch = scenario.channels
    beams = state.beams.copy()
    owner = beams.owner
    V = backward_vectors(ch, beams.rx, state.weights, owner)
    A = transmit_covariance(V)
    eig, Q = np.linalg.eigh(A)
    eig = np.clip(eig, 0.0, None)
    tx_of_stream = ch.serving[owner]
    sqrt_t = np.sqrt(state.weights)
    B, N = eig.shape
    Cs, cpow = [], np.zeros((B, N))
    for b in range(B):
        ks = np.flatnonzero(tx_of_stream == b)
        rhs = sqrt_t[ks, None] * V[b, ks]
        C = Q[b].conj().T @ rhs.T
        Cs.append((ks, C))
        cpow[b] = np.sum(np.abs(C) ** 2, axis=1)
    mu = _bisect_multiplier(eig, cpow, scenario.power_budget, params.power_tol)
    for b, (ks, C) in enumerate(Cs):
        if ks.size:
            beams.tx[ks] = _precoders(Q[b], eig[b], C, mu[b])
    power = beams.tx_power(ch.serving, B)
    return replace(state, beams=beams, tx_power=power)


def penalized_objective(state: AlgorithmState, scenario: Scenario, params: AlgorithmParams) -> float:
    """``sum_u beta_u (r_u - rho d_u)`` with a linear relaxation penalty."""
    U = state.rates.shape[0]
    beta = params.priority_vector(U)
    penalty = params.penalty_slope * state.relaxations if params.mode is Mode.PROPOSED else 0.0
    return float(np.sum(beta * (state.rates - penalty)))


def init_state(scenario: Scenario, params: AlgorithmParams, beams: Optional[BeamformerSet] = None) -> AlgorithmState:
    """MRT start (unless ``beams`` given) with receivers, rates and relaxations filled in."""
    U, K = scenario.dims.num_rx, scenario.dims.num_streams
    if beams is None:
        beams = init_beamformers_mrt(scenario, params)
    state = AlgorithmState(beams, np.ones(K), np.zeros(U), np.zeros(K), np.zeros(U), np.zeros(U))
    state = update_receivers_and_mse(state, scenario)
    state = update_relaxation(state, params)
    state.objective_history = [penalized_objective(state, scenario, params)]
    return state


def iterate(state: AlgorithmState, scenario: Scenario, params: AlgorithmParams) -> AlgorithmState:
    """One full iteration, starting from current receivers and rates."""
    state = update_multipliers(state, params)
    state = update_relaxation(state, params)
    state = update_stream_weights(state, params)
    state = transmit_update(state, scenario, params)
    state = update_receivers_and_mse(state, scenario)
    state = update_relaxation(state, params)
    history = state.objective_history + [penalized_objective(state, scenario, params)]
    return replace(state, iter=state.iter + 1, objective_history=history)


def finish(state: AlgorithmState, params: AlgorithmParams, converged, power_history, beam_history=None):
    U = state.rates.shape[0]
    qos = params.qos_vector(U)
    rates = state.rates
    return AllocationResult(
        mode=params.mode,
        rates=rates.copy(),
        qos=qos,
        relaxations=state.relaxations.copy(),
        multipliers=state.multipliers.copy(),
        satisfied=rates >= qos - SAT_TOL,
        deactivated=is_deactivated(rates, params.deactivation_eps),
        sum_rate=float(rates.sum()),
        penalized_objective=state.objective_history[-1],
        iterations_used=state.iter,
        converged=converged,
        objective_history=np.asarray(state.objective_history),
        power_history=np.asarray(power_history, dtype=float).reshape(len(power_history), -1),
        beams=state.beams,
        beam_history=beam_history,
    )


def run(scenario: Scenario, params: AlgorithmParams, record_beams=False,
        beams: Optional[BeamformerSet] = None) -> AllocationResult:
    """Iterate until ``max_iters`` or ``STALL_ITERS`` consecutive objective
    changes below ``obj_tol``.  Not converging is reported, not raised."""
    state = init_state(scenario, params, beams)
    power_history, beam_history = [], ([] if record_beams else None)
    stall, converged = 0, False
    for _ in range(int(params.max_iters)):
        state = iterate(state, scenario, params)
        power_history.append(state.tx_power)
        if record_beams:
            beam_history.append(state.beams.tx.copy())
        h = state.objective_history
        stall = stall + 1 if abs(h[-1] - h[-2]) < params.obj_tol else 0
        if stall >= STALL_ITERS:
            converged = True
            break
    return finish(state, params, converged, power_history, beam_history)
