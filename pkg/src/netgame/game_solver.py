"""Truncated zero-sum stochastic game over the holding time.

The game is held in a small array form (:class:`FiniteGame`): for every
``(state, nu, a)`` two successor states with their probabilities and the
stage cost realized on each.  Shapley value iteration, Nash Q-learning and
the verification routines all work on that form.  At a ``forced`` state both
players act deterministically (transmit, attack); the holding-time game
forces its aggregated last state ``N-1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _core_py
from ._backend import kernels
from .lti_model import ConvergenceError

log = logging.getLogger(__name__)

CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class FiniteGame:
    succ: np.ndarray  # (S, 2, 2, 2) int64
    prob: np.ndarray  # (S, 2, 2, 2)
    cost: np.ndarray  # (S, 2, 2, 2), stage cost realized on each successor
    forced: np.ndarray  # (S,) uint8
    eta: float
    initial_state: int = 0

    def __post_init__(self):
        succ = np.ascontiguousarray(self.succ, dtype=np.int64)
        prob = np.ascontiguousarray(self.prob, dtype=float)
        cost = np.ascontiguousarray(self.cost, dtype=float)
        forced = np.ascontiguousarray(self.forced, dtype=np.uint8)
        S = succ.shape[0]
        if succ.shape != (S, 2, 2, 2) or prob.shape != succ.shape or cost.shape != succ.shape:
            raise ValueError("succ/prob/cost must all have shape (S, 2, 2, 2)")
        if forced.shape != (S,):
            raise ValueError("forced must have shape (S,)")
        if succ.min() < 0 or succ.max() >= S:
            raise ValueError("successor index out of range")
        if np.abs(prob.sum(axis=-1) - 1.0).max() > 1e-12 or prob.min() < 0.0:
            raise ValueError("transition probabilities must be nonnegative and sum to one")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        object.__setattr__(self, "succ", succ)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "forced", forced)
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def n_states(self):
        return self.succ.shape[0]

    def expected_cost(self):
        return (self.prob * self.cost).sum(axis=-1)

    def q_from_values(self, V):
        """One-step lookahead ``Q = r + eta * E[V(next)]``, same operation order as the kernels."""
        eta = self.eta
        return self.expected_cost() + eta * self.prob[..., 0] * V[self.succ[..., 0]] + eta * self.prob[..., 1] * V[
            self.succ[..., 1]
        ]

    def transition_matrix(self, pi_c, pi_a):
        """State-to-state kernel under stationary mixes (forced states override them)."""
        pi_c, pi_a = self.effective_policies(pi_c, pi_a)
        S = self.n_states
        P = np.zeros((S, S))
        for s in range(S):
            for nu in range(2):
                wn = pi_c[s] if nu else 1.0 - pi_c[s]
                for a in range(2):
                    w = wn * (pi_a[s] if a else 1.0 - pi_a[s])
                    if w == 0.0:
                        continue
                    for k in range(2):
                        P[s, self.succ[s, nu, a, k]] += w * self.prob[s, nu, a, k]
        return P

    def action_weights(self, pi_c, pi_a):
        """``(S, 2, 2)`` joint action probabilities per state."""
        pi_c, pi_a = self.effective_policies(pi_c, pi_a)
        pc = np.stack([1.0 - pi_c, pi_c], axis=1)
        pa = np.stack([1.0 - pi_a, pi_a], axis=1)
        return pc[:, :, None] * pa[:, None, :]

    def effective_policies(self, pi_c, pi_a):
        pi_c = np.array(pi_c, dtype=float)
        pi_a = np.array(pi_a, dtype=float)
        f = self.forced.astype(bool)
        pi_c[f] = 1.0
        pi_a[f] = 1.0
        return pi_c, pi_a


def holding_time_game(spec):
    """Array form of the truncated holding-time game described by ``spec``."""
    N = spec.N
    succ = np.zeros((N, 2, 2, 2), dtype=np.int64)
    prob = np.zeros((N, 2, 2, 2))
    cost = np.zeros((N, 2, 2, 2))
    for tau in range(N):
        fail = spec.next_failure_state(tau)
        for nu in range(2):
            for a in range(2):
                p = spec.channel.success_prob(nu, a)
                succ[tau, nu, a] = (0, fail)
                prob[tau, nu, a] = (p, 1.0 - p)
                cost[tau, nu, a] = (stage_cost(0, nu, a, spec), stage_cost(fail, nu, a, spec))
    forced = np.zeros(N, dtype=np.uint8)
    forced[N - 1] = 1
    return FiniteGame(succ, prob, cost, forced, spec.eta, initial_state=0)


def stage_cost(tau_next, nu, a, spec):
    """``tr(M_inf f^{tau_next}(Pbar)) + c_s nu - c_a a``.

    The covariance term uses the holding time after this step's channel
    outcome.
    """
    if not 0 <= tau_next <= spec.N - 1:
        raise ValueError(f"tau_next={tau_next} outside 0..{spec.N - 1}")
    return float(spec.trace_costs[tau_next]) + spec.c_s * nu - spec.c_a * a


@dataclass(frozen=True, eq=False)
class StageGame:
    payoff: np.ndarray
    tau: int

    def solve(self):
        return solve_matrix_game_2x2(self.payoff)


def stage_game(tau, V, game):
    """2x2 game at state ``tau`` given continuation values ``V``."""
    return StageGame(game.q_from_values(np.asarray(V, dtype=float))[tau], tau)


def solve_matrix_game_2x2(payoff):
    """Minimax value of a 2x2 zero-sum game; rows minimize, columns maximize.

    Returns ``(value, row_mix, col_mix)`` where ``row_mix`` is the
    probability of row 1 and ``col_mix`` the probability of column 1.  A pure
    saddle is found by comparing minimax and maximin exactly; otherwise the
    unique mixed equilibrium is returned in closed form.  A player with two
    optimal pure actions mixes 0.5/0.5.
    """
    m = np.asarray(payoff, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"payoff must be 2x2, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("payoff has non-finite entries")
    return _core_py.saddle(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))


@dataclass(frozen=True, eq=False)
class QTable:
    q: np.ndarray  # (N, 2, 2) indexed [tau, nu, a]
    visits: np.ndarray = field(default=None, repr=False)

    def state_values(self, forced):
        return _core_py.saddle_values(self.q, np.asarray(forced, dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class PolicyPair:
    """Per-state probabilities of transmitting (``pi_c``) and attacking (``pi_a``)."""

    pi_c: np.ndarray
    pi_a: np.ndarray

    def __post_init__(self):
        pc = np.array(self.pi_c, dtype=float)
        pa = np.array(self.pi_a, dtype=float)
        if pc.shape != pa.shape or pc.ndim != 1:
            raise ValueError("pi_c and pi_a must be 1-D arrays of equal length")
        if pc.min() < 0 or pc.max() > 1 or pa.min() < 0 or pa.max() > 1:
            raise ValueError("policy probabilities must lie in [0, 1]")
        object.__setattr__(self, "pi_c", pc)
        object.__setattr__(self, "pi_a", pa)

    @property
    def N(self):
        return self.pi_c.shape[0]

    def extended(self, N_ref):
        """Embed into a longer truncation: transmit and attack for every ``tau >= N-1``."""
        if N_ref < self.N:
            raise ValueError("reference horizon shorter than policy")
        pc = np.ones(N_ref)
        pa = np.ones(N_ref)
        pc[: self.N - 1] = self.pi_c[: self.N - 1]
        pa[: self.N - 1] = self.pi_a[: self.N - 1]
        return PolicyPair(pc, pa)

    @classmethod
    def uniform(cls, N):
        p = np.full(N, 0.5)
        p[-1] = 1.0
        return cls(p, p.copy())

    def to_dict(self):
        return {"pi_c": self.pi_c.tolist(), "pi_a": self.pi_a.tolist()}


def extract_policies(q, forced=None):
    """Per-state saddle mixes of a Q table; the last state is set to (1, 1)."""
    qa = q.q if isinstance(q, QTable) else np.asarray(q, dtype=float)
    N = qa.shape[0]
    if forced is None:
        forced = np.zeros(N, dtype=bool)
        forced[N - 1] = True
    pc = np.empty(N)
    pa = np.empty(N)
    for s in range(N):
        if forced[s]:
            pc[s] = pa[s] = 1.0
        else:
            _, pc[s], pa[s] = solve_matrix_game_2x2(qa[s])
    return PolicyPair(pc, pa)


@dataclass(frozen=True, eq=False)
class ShapleyResult:
    V: np.ndarray
    qtable: QTable
    policies: PolicyPair
    iterations: int
    residual: float

    def __iter__(self):
        return iter((self.V, self.qtable, self.policies))


def solve_finite_game(game, tol=1e-12, max_iter=1_000_000, V0=None):
    """Shapley value iteration on a :class:`FiniteGame`.

    ``tol`` is relative: iteration stops when the sup-norm Bellman step is
    at most ``tol * max(1, |V|_inf)``.
    """
    V = np.zeros(game.n_states) if V0 is None else np.array(V0, dtype=float)
    r = np.ascontiguousarray(game.expected_cost())
    it, res, ok = kernels.shapley_iterate(r, game.succ, game.prob, game.forced, game.eta, V, tol, max_iter)
    if not ok:
        raise ConvergenceError(
            f"Shapley iteration did not converge in {max_iter} sweeps (step {res:.3e})",
            iterations=it,
            residual=res,
        )
    Q = game.q_from_values(V)
    qt = QTable(Q)
    return ShapleyResult(V, qt, extract_policies(qt, game.forced.astype(bool)), int(it), float(res))


def shapley_value_iteration(spec, tol=1e-12, max_iter=1_000_000):
    """Exact equilibrium of the truncated game: ``(V, QTable, PolicyPair)``."""
    return solve_finite_game(holding_time_game(spec), tol=tol, max_iter=max_iter)


@dataclass(frozen=True)
class LearningSchedule:
    """Step size and exploration for Nash Q-learning.

    The step size for the ``n``-th visit of ``(tau, nu, a)`` is
    ``(1 + alpha_scale * (n - 1)) ** -alpha_exponent``; ``alpha_scale=None``
    means ``1 - eta``.  ``alpha_scale=1`` gives ``n ** -alpha_exponent``.
    Each player explores uniformly with probability
    ``max(epsilon_floor, epsilon_decay ** t)`` at global step ``t``.
    """

    alpha_exponent: float = 0.75
    alpha_scale: float | None = None
    epsilon_floor: float = 0.5
    epsilon_decay: float = 0.9999
    steps_per_episode: int = 200

    def __post_init__(self):
        if not 0.5 < self.alpha_exponent <= 1.0:
            raise ValueError("alpha_exponent must lie in (0.5, 1] for Robbins-Monro step sizes")
        if self.alpha_scale is not None and self.alpha_scale <= 0:
            raise ValueError("alpha_scale must be positive")
        if not 0.0 <= self.epsilon_floor <= 1.0:
            raise ValueError("epsilon_floor must lie in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be positive")

    def resolved_scale(self, eta):
        return 1.0 - eta if self.alpha_scale is None else float(self.alpha_scale)


@dataclass(frozen=True, eq=False)
class LearningResult:
    qtable: QTable
    policies: PolicyPair
    history: list  # [(updates, state values)] at requested checkpoints

    def __iter__(self):
        return iter((self.qtable, self.policies))


def learn_finite_game(game, schedule, updates, rng, checkpoints=(), backend=None):
    """Nash Q-learning on a :class:`FiniteGame` for ``updates`` steps.

    Randomness is drawn from ``rng`` in fixed-size blocks of five uniforms
    per step, so the result depends only on the seed, never on the backend
    or on the checkpoints.
    """
    k = kernels if backend is None else backend
    S = game.n_states
    Q = np.zeros((S, 2, 2))
    visits = np.zeros((S, 2, 2), dtype=np.int64)
    carry = np.array([game.initial_state, 0], dtype=np.int64)
    scale = schedule.resolved_scale(game.eta)
    stops = sorted({int(c) for c in checkpoints if 0 < c <= updates} | {int(updates)})
    history = []
    done = 0
    buf = np.empty((0, 5))
    pos = 0
    for stop in stops:
        while done < stop:
            if pos == buf.shape[0]:
                # fixed block size: checkpoints never change the random stream
                buf = rng.random((CHUNK, 5))
                pos = 0
            n = min(buf.shape[0] - pos, stop - done)
            uni = buf[pos:pos + n]
            pos += n
            k.qlearn_chunk(
                game.succ, game.prob, game.cost, game.forced, game.eta, Q, visits, carry, uni,
                float(schedule.alpha_exponent), scale, float(schedule.epsilon_floor),
                float(schedule.epsilon_decay), int(schedule.steps_per_episode), int(game.initial_state),
            )
            done += n
        if stop in checkpoints:
            history.append((stop, QTable(Q.copy()).state_values(game.forced)))
    qt = QTable(Q, visits)
    return LearningResult(qt, extract_policies(qt, game.forced.astype(bool)), history)


def nash_q_learning(spec, schedule, episodes, rng, checkpoints=(), backend=None):
    """Learn the minimax Q table of the truncated game from sampled transitions.

    ``episodes * schedule.steps_per_episode`` updates are performed; every
    episode restarts at ``tau = 0``.
    """
    updates = int(episodes) * schedule.steps_per_episode
    return learn_finite_game(holding_time_game(spec), schedule, updates, rng, checkpoints, backend)


def value_vs_horizon(spec, horizons, tol=1e-12):
    """Shapley game value at ``tau = 0`` for each truncation horizon."""
    return [(int(N), float(shapley_value_iteration(spec.with_horizon(N), tol=tol).V[0])) for N in horizons]
