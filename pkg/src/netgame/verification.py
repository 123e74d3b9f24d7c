"""Certificates for policy pairs: occupation measures, values, best-response gaps.

Values are computed two independent ways (through the discounted occupation
measure, and by solving the policy-evaluation equations directly) and both
linear solves use iterative refinement with extended-precision residuals,
because with a discount close to one the systems are ill-conditioned.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .game_solver import FiniteGame, PolicyPair, holding_time_game, solve_finite_game
from .lti_model import f_apply, steady_state_filter_riccati

log = logging.getLogger(__name__)

BR_TOL = 1e-10
DEFAULT_N_REF = 40


def _solve_refined(M, b, sweeps=4):
    """Solve ``M x = b`` in float64 and refine with long-double residuals."""
    x = np.linalg.solve(M, b).astype(np.longdouble)
    Ml = M.astype(np.longdouble)
    bl = b.astype(np.longdouble)
    for _ in range(sweeps):
        r = bl - Ml @ x
        x = x + np.linalg.solve(M, r.astype(float)).astype(np.longdouble)
    return x


def _as_game(spec_or_game):
    if isinstance(spec_or_game, FiniteGame):
        return spec_or_game
    return holding_time_game(spec_or_game)


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    omega: np.ndarray  # (S, 2, 2) indexed [tau, nu, a]
    state_weights: np.ndarray
    balance_residual: float

    @property
    def total(self):
        return float(self.omega.sum())


def balance_residual(omega, game):
    """Max violation of the discounted flow-balance constraints (initial state pinned)."""
    S = game.n_states
    inflow = np.zeros(S)
    for k in range(2):
        np.add.at(inflow, game.succ[..., k].ravel(), (omega * game.prob[..., k]).ravel())
    rhs = np.zeros(S)
    rhs[game.initial_state] = 1.0 - game.eta
    lhs = omega.sum(axis=(1, 2)) - game.eta * inflow
    return float(np.abs(lhs - rhs).max())


def occupation_measure(policies, spec):
    """Discounted state-action visitation weights from the initial state.

    ``omega[tau, nu, a] = (1 - eta) * sum_k eta^k P(tau_k = tau) * pi_c * pi_a``,
    obtained from the transposed balance system.
    """
    game = _as_game(spec)
    P = game.transition_matrix(policies.pi_c, policies.pi_a)
    S = game.n_states
    rhs = np.zeros(S)
    rhs[game.initial_state] = 1.0 - game.eta
    d = _solve_refined((np.eye(S) - game.eta * P).T, rhs)
    omega = np.asarray(d, dtype=float)[:, None, None] * game.action_weights(policies.pi_c, policies.pi_a)
    omega = np.where(omega < 0.0, 0.0, omega)  # rounding only; the exact measure is nonnegative
    return OccupationMeasure(omega, np.asarray(d, dtype=float), balance_residual(omega, game))


def discounted_value(policies, spec):
    """Expected discounted cost from the initial state, via the occupation measure."""
    game = _as_game(spec)
    om = occupation_measure(policies, game)
    r = game.expected_cost()
    total = (om.omega.astype(np.longdouble) * r.astype(np.longdouble)).sum()
    return float(total / np.longdouble(1.0 - game.eta))


def policy_evaluation(policies, spec):
    """Per-state discounted values ``V = (I - eta P)^{-1} r`` under the pair."""
    game = _as_game(spec)
    P = game.transition_matrix(policies.pi_c, policies.pi_a)
    w = game.action_weights(policies.pi_c, policies.pi_a)
    r = (w * game.expected_cost()).sum(axis=(1, 2))
    return np.asarray(_solve_refined(np.eye(game.n_states) - game.eta * P, r), dtype=float)


def _marginalized(game, responder, opponent):
    """Single-agent game where the opponent's mix is folded into transitions and costs.

    Both columns (or rows) of the result are identical, so the minimax value
    at each state is the responder's optimum.
    """
    pi = np.array(opponent, dtype=float)
    pi[game.forced.astype(bool)] = 1.0
    succ, prob, cost = game.succ, game.prob, game.cost
    if responder == "controller":
        axis = 2
        if not np.array_equal(succ[:, :, 0], succ[:, :, 1]):
            raise ValueError("opponent actions must share successor states")
    elif responder == "attacker":
        axis = 1
        if not np.array_equal(succ[:, 0], succ[:, 1]):
            raise ValueError("opponent actions must share successor states")
    else:
        raise ValueError(f"responder must be 'controller' or 'attacker', got {responder!r}")
    wts = np.stack([1.0 - pi, pi], axis=1)  # (S, 2)
    shape = [game.n_states, 1, 1, 1]
    shape[axis] = 2
    wts = wts.reshape(shape)
    pm = (wts * prob).sum(axis=axis, keepdims=True)
    flow = (wts * prob * cost).sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cm = np.where(pm > 0.0, flow / np.where(pm > 0.0, pm, 1.0), 0.0)
    rep = [1, 1, 1, 1]
    rep[axis] = 2
    return FiniteGame(
        np.take(succ, [0, 0], axis=axis),
        np.tile(pm, rep),
        np.tile(cm, rep),
        game.forced,
        game.eta,
        game.initial_state,
    )


@dataclass(frozen=True, eq=False)
class BestResponse:
    policy: np.ndarray
    value: float
    iterations: int

    def __iter__(self):
        return iter((self.policy, self.value))


def best_response(side, opponent_policy, spec, tol=BR_TOL):
    """Deterministic best response of ``side`` ("controller" or "attacker").

    The opponent's per-state mix is held fixed.  The resulting single-agent
    MDP is solved by value iteration to relative tolerance ``tol``; the
    returned value is the exact discounted value of the greedy policy.
    """
    game = _as_game(spec)
    mg = _marginalized(game, side, opponent_policy)
    sol = solve_finite_game(mg, tol=tol)
    Q = game.q_from_values(sol.V)
    opp = np.array(opponent_policy, dtype=float)
    if side == "controller":
        qc = Q[:, :, 0] * (1.0 - opp)[:, None] + Q[:, :, 1] * opp[:, None]
        policy = (qc[:, 1] < qc[:, 0]).astype(float)
        pair = PolicyPair(policy, opp)
    else:
        pc = opp
        qa = Q[:, 0, :] * (1.0 - pc)[:, None] + Q[:, 1, :] * pc[:, None]
        policy = (qa[:, 1] > qa[:, 0]).astype(float)
        pair = PolicyPair(opp, policy)
    policy[game.forced.astype(bool)] = 1.0
    value = float(policy_evaluation(pair, game)[game.initial_state])
    return BestResponse(policy, value, sol.iterations)


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    value: float
    controller_gap: float
    attacker_gap: float
    epsilon: float
    controller_response: np.ndarray = field(repr=False, default=None)
    attacker_response: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "value": self.value,
            "controller_gap": self.controller_gap,
            "attacker_gap": self.attacker_gap,
            "epsilon": self.epsilon,
        }


def epsilon_gap(policies, spec):
    """How much either player gains by deviating unilaterally from ``policies``."""
    game = _as_game(spec)
    J = discounted_value(policies, game)
    brc = best_response("controller", policies.pi_a, game)
    bra = best_response("attacker", policies.pi_c, game)
    cg = J - brc.value
    ag = bra.value - J
    return EquilibriumReport(J, cg, ag, max(cg, ag, 0.0), brc.policy, bra.policy)


def reference_epsilon(policies, spec, N_ref=DEFAULT_N_REF):
    """Gap of truncated policies inside a longer reference truncation.

    The policies are extended by transmit/attack for every holding time at
    or beyond their own last state.
    """
    ref = spec.with_horizon(N_ref)
    return epsilon_gap(policies.extended(N_ref), ref)


# -- Monte Carlo check of the estimation-error facts -------------------------


@dataclass(frozen=True, eq=False)
class MomentCheck:
    name: str
    estimate: np.ndarray
    expected: np.ndarray
    stderr: np.ndarray
    samples: int
    passed: bool

    def to_dict(self):
        return {
            "name": self.name,
            "estimate": self.estimate.tolist(),
            "expected": self.expected.tolist(),
            "stderr": self.stderr.tolist(),
            "samples": self.samples,
            "passed": self.passed,
        }


@dataclass(frozen=True, eq=False)
class MomentReport:
    checks: list
    skipped_bins: list
    sigmas: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def clause_passed(self, clause):
        return all(c.passed for c in self.checks if c.name.startswith(clause))

    def to_dict(self):
        return {
            "passed": self.passed,
            "sigmas": self.sigmas,
            "clauses": {c: self.clause_passed(c) for c in ("a", "b", "c")},
            "checks": [c.to_dict() for c in self.checks],
            "skipped_bins": self.skipped_bins,
        }


def _batch_stderr(products, batches):
    """Batch-means standard error of the mean of ``products`` (time-ordered rows)."""
    n = products.shape[0]
    b = min(batches, n)
    size = n // b
    means = products[: b * size].reshape(b, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


def _moment_check(name, prods, expected, sigmas, batches):
    est = prods.mean(axis=0)
    se = _batch_stderr(prods, batches)
    ok = bool(np.all(np.abs(est - expected.ravel()) <= sigmas * se + 1e-300))
    shape = expected.shape
    return MomentCheck(name, est.reshape(shape), expected, se.reshape(shape), prods.shape[0], ok)


def lemma1_monte_carlo(model, gain, policies, spec, samples, rng, *, Kbar=None, burn_in=500,
                       episodes=4, sigmas=4.0, min_bin=1000, batches=50, x0_cov=None, threads=1):
    """Closed-loop Monte Carlo of the three conditional-moment facts.

    With ``xbar_k = A xhat_{k-1} + B u_{k-1}``:

    * (a) ``E[(x_k - xbar_k) xbar_k'] = 0``
    * (b) ``E[(xhat^s_k - xbar_k) xbar_k'] = 0``
    * (c) ``Cov(xhat^s_k - xbar_k | tau_{k-1} = t) = f^{t+1}(Pbar) - Pbar``

    Samples come from ``episodes`` independent runs after ``burn_in`` steps.
    Standard errors use batch means because consecutive samples are
    correlated; each entry must lie within ``sigmas`` standard errors.
    Holding-time bins with fewer than ``min_bin`` samples are skipped.
    Episodes may run on ``threads`` workers; they are combined in seed order.
    """
    from .simulation import run_episode  # simulation imports this module at load time

    Pbar = spec.Pbar
    if Kbar is None:
        _, Kbar = steady_state_filter_riccati(model)
    per = int(np.ceil(samples / episodes))
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=episodes)]

    def job(seed):
        return run_episode(model, gain, policies, spec, per + burn_in, seed, Kbar=Kbar, x0_cov=x0_cov)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(job, seeds))
    else:
        traces = [job(s) for s in seeds]
    xs_, xbar_, x_, taup_ = [], [], [], []
    for tr in traces:
        xbar = tr.xbar()
        tau_prev = np.concatenate([[0], tr.tau[:-1]])
        sl = slice(burn_in, None)
        xs_.append(tr.xhat_s[sl])
        xbar_.append(xbar[sl])
        x_.append(tr.x[sl])
        taup_.append(tau_prev[sl])
    xs = np.concatenate(xs_)
    xbar = np.concatenate(xbar_)
    x = np.concatenate(x_)
    taup = np.concatenate(taup_)
    n = model.n_x

    def outer(u, v):
        return (u[:, :, None] * v[:, None, :]).reshape(u.shape[0], -1)

    zero = np.zeros((n, n))
    checks = [
        _moment_check("a", outer(x - xbar, xbar), zero, sigmas, batches),
        _moment_check("b", outer(xs - xbar, xbar), zero, sigmas, batches),
    ]
    skipped = []
    d = xs - xbar
    for t in np.unique(taup):
        mask = taup == t
        cnt = int(mask.sum())
        if cnt < min_bin:
            skipped.append({"tau": int(t), "samples": cnt})
            continue
        expected = f_apply(Pbar, int(t) + 1, model) - Pbar
        checks.append(_moment_check(f"c[tau={int(t)}]", outer(d[mask], d[mask]), expected, sigmas, batches))
    return MomentReport(checks, skipped, sigmas)
