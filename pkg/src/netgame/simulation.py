"""Closed-loop Monte Carlo: plant, sensor filter, attacked channel, remote estimator, controller.

Randomness comes from a ``numpy`` ``PCG64`` generator.  Gaussian noise is
drawn with ``standard_normal`` and scaled by a square-root factor of the
covariance; uniforms drive the players' actions and the channel.  Draws
happen in fixed-size chunks in a fixed order, so a trace depends only on
the seed and the horizon, never on the kernel backend.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .control import solve_control
from .estimation import RemoteEstimatorState, remote_update
from .game_solver import (
    CHUNK,
    LearningSchedule,
    PolicyPair,
    holding_time_game,
    nash_q_learning,
    shapley_value_iteration,
)
from .lti_model import steady_state_filter_riccati
from .verification import epsilon_gap

log = logging.getLogger(__name__)

GENERATOR = f"numpy-{np.__version__}/PCG64/standard_normal(ziggurat)"

CSV_COLUMNS = (
    "c_s",
    "c_a",
    "tx_freq",
    "attack_freq",
    "log_quad_cost",
    "discounted_cost",
    "game_value",
    "epsilon_gap",
    "seed",
)


def _sqrt_factor(S):
    """Factor ``F`` with ``F F' = S`` for a symmetric PSD matrix (Cholesky when possible)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class EpisodeTrace:
    """Per-step records; row ``k`` holds values at step ``k`` after the channel outcome.

    ``x[k]`` is the plant state at step ``k``, ``xhat[k]`` the controller
    estimate used for ``u[k] = L xhat[k]`` and ``tau[k]`` the holding time
    after the step's channel outcome.
    """

    x: np.ndarray
    xhat_s: np.ndarray
    xhat: np.ndarray
    u: np.ndarray
    nu: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    stage_cost: np.ndarray
    seed: int
    generator: str = GENERATOR
    A: np.ndarray = field(default=None, repr=False)
    B: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.x.shape[0]

    def xbar(self):
        """Open-loop predictions ``A xhat[k-1] + B u[k-1]`` (zero history before step 0)."""
        xh_prev = np.vstack([np.zeros((1, self.xhat.shape[1])), self.xhat[:-1]])
        u_prev = np.vstack([np.zeros((1, self.u.shape[1])), self.u[:-1]])
        return xh_prev @ self.A.T + u_prev @ self.B.T


def run_episode(model, gain, policies, spec, horizon, seed, *, weights=None, Kbar=None, x0_cov=None, backend=None):
    """Simulate ``horizon`` closed-loop steps under ``policies``.

    The sensor runs the steady-state filter, the players sample their
    actions from the policy row ``min(tau, N-1)`` of the current holding
    time, and the controller applies ``u = gain @ xhat``.  ``x0`` is drawn
    from ``N(0, x0_cov)`` (identity by default).  The same seed always
    yields the same trace, bit for bit.  ``weights`` only enters the
    logged stage cost (identity ``W`` and ``U`` when omitted).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    k = kernels if backend is None else backend
    if Kbar is None:
        _, Kbar = steady_state_filter_riccati(model)
    nx, nu_dim, ny = model.n_x, model.n_u, model.n_y
    L = np.array(np.atleast_2d(gain), dtype=float, order="C")
    if L.shape != (nu_dim, nx):
        raise ValueError(f"gain must have shape {(nu_dim, nx)}, got {L.shape}")
    Fw = _sqrt_factor(model.Q)
    Fv = _sqrt_factor(model.R)
    F0 = _sqrt_factor(np.eye(nx) if x0_cov is None else x0_cov)
    rng = np.random.Generator(np.random.PCG64(seed))

    x = F0 @ rng.standard_normal(nx)
    xs = np.zeros(nx)
    xh = np.zeros(nx)
    u = np.zeros(nu_dim)
    tau = np.zeros(1, dtype=np.int64)
    X = np.empty((horizon, nx))
    XS = np.empty((horizon, nx))
    XH = np.empty((horizon, nx))
    UO = np.empty((horizon, nu_dim))
    NU = np.empty(horizon, dtype=np.int8)
    AT = np.empty(horizon, dtype=np.int8)
    GAM = np.empty(horizon, dtype=np.int8)
    TAU = np.empty(horizon, dtype=np.int64)
    COST = np.empty(horizon)

    mats = [np.array(m, dtype=float, order="C") for m in (model.A, model.B, model.C)]
    Kc = np.array(Kbar, dtype=float, order="C")
    W = np.array(np.eye(nx) if weights is None else weights.W, dtype=float, order="C")
    U = np.array(np.eye(nu_dim) if weights is None else weights.U, dtype=float, order="C")
    pc = np.array(policies.pi_c, dtype=float)
    pa = np.array(policies.pi_a, dtype=float)
    ch = spec.channel
    done = 0
    while done < horizon:
        # full-size draws keep a shorter run an exact prefix of a longer one
        n = min(CHUNK, horizon - done)
        w = np.ascontiguousarray((rng.standard_normal((CHUNK, nx)) @ Fw.T)[:n])
        v = np.ascontiguousarray((rng.standard_normal((CHUNK, ny)) @ Fv.T)[:n])
        uni = rng.random((CHUNK, 3))[:n]
        sl = slice(done, done + n)
        k.simulate_chunk(
            *mats, L, Kc, W, U, spec.c_s, spec.c_a, pc, pa, ch.lam, ch.lam_a,
            w, v, uni, x, xs, xh, u, tau,
            X[sl], XS[sl], XH[sl], UO[sl], NU[sl], AT[sl], GAM[sl], TAU[sl], COST[sl],
        )
        done += n
    return EpisodeTrace(X, XS, XH, UO, NU, AT, GAM, TAU, COST, int(seed), GENERATOR, mats[0], mats[1])


@dataclass(frozen=True)
class Metrics:
    empirical_control_perf: float
    tx_freq: float
    attack_freq: float
    discounted_cost: float

    def to_dict(self):
        return {
            "empirical_control_perf": self.empirical_control_perf,
            "tx_freq": self.tx_freq,
            "attack_freq": self.attack_freq,
            "discounted_cost": self.discounted_cost,
        }


def quadratic_costs(trace, weights):
    """Per-step ``x' W x + u' U u``."""
    W = np.asarray(weights.W, dtype=float)
    U = np.asarray(weights.U, dtype=float)
    return np.einsum("ki,ij,kj->k", trace.x, W, trace.x) + np.einsum("ki,ij,kj->k", trace.u, U, trace.u)


def metrics(trace, weights, spec):
    """Summary statistics of a trace.

    * ``empirical_control_perf``: log of the average quadratic cost
    * ``tx_freq`` and ``attack_freq``: fraction of steps with ``nu = 1`` and ``a = 1``
    * ``discounted_cost``: ``sum_k eta^k (x'Wx + u'Uu + c_s nu - c_a a)``
    """
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    quad = quadratic_costs(trace, weights)
    stage = quad + spec.c_s * trace.nu - spec.c_a * trace.a
    disc = spec.eta ** np.arange(n)
    return Metrics(
        float(np.log(quad.mean())),
        float(trace.nu.mean(dtype=float)),
        float(trace.a.mean(dtype=float)),
        float(np.dot(disc, stage)),
    )


def replay_remote(trace, model):
    """Re-run the controller estimator on the logged channel outcomes.

    Returns ``(xhat, tau)`` arrays; a consistent trace reproduces its own
    ``xhat`` and ``tau`` columns.
    """
    state = RemoteEstimatorState.initial(model)
    n = len(trace)
    xh = np.empty_like(trace.xhat)
    tau = np.empty(n, dtype=np.int64)
    u_prev = np.zeros(model.n_u)
    for k in range(n):
        delivered = int(trace.nu[k]) * int(trace.gamma[k]) == 1
        state = remote_update(state, trace.nu[k], trace.gamma[k], trace.xhat_s[k] if delivered else None, u_prev, model)
        xh[k] = state.xhat
        tau[k] = state.tau
        u_prev = trace.u[k]
    return xh, tau


def holding_time_returns(policies, spec, episodes, rng):
    """Discounted game cost of independent holding-time chains started at ``tau = 0``.

    Each episode is stopped at an independent geometric time with
    continuation probability ``eta``, so the undiscounted sum up to the stop
    is an unbiased sample of the discounted value.  Returns the per-episode
    sums and the total number of simulated steps.
    """
    game = holding_time_game(spec)
    pc, pa = game.effective_policies(policies.pi_c, policies.pi_a)
    out = np.empty(episodes)
    steps = 0
    for e in range(episodes):
        length = int(rng.geometric(1.0 - spec.eta))
        u = rng.random((length, 3))
        s = game.initial_state
        total = 0.0
        for k in range(length):
            nu = int(u[k, 0] < pc[s])
            a = int(u[k, 1] < pa[s])
            j = 0 if u[k, 2] < game.prob[s, nu, a, 0] else 1
            total += game.cost[s, nu, a, j]
            s = int(game.succ[s, nu, a, j])
        out[e] = total
        steps += length
    return out, steps


def point_seed(base_seed, c_s, c_a):
    """Deterministic 63-bit seed for a sweep point."""
    h = hashlib.sha256(f"{int(base_seed)}|{float(c_s)!r}|{float(c_a)!r}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True, eq=False)
class SweepRow:
    c_s: float
    c_a: float
    seed: int
    metrics: Metrics = None
    game_value: float = float("nan")
    epsilon_gap: float = float("nan")
    policies: PolicyPair = None
    error: str = None

    @property
    def ok(self):
        return self.error is None

    def csv_values(self):
        m = self.metrics
        nan = float("nan")
        return {
            "c_s": self.c_s,
            "c_a": self.c_a,
            "tx_freq": m.tx_freq if m else nan,
            "attack_freq": m.attack_freq if m else nan,
            "log_quad_cost": m.empirical_control_perf if m else nan,
            "discounted_cost": m.discounted_cost if m else nan,
            "game_value": self.game_value,
            "epsilon_gap": self.epsilon_gap,
            "seed": self.seed,
        }


def _equilibrium(spec, solver, schedule, episodes, seed):
    if solver == "shapley":
        V, _, pol = shapley_value_iteration(spec)
        return pol, float(V[0])
    if solver == "qlearn":
        rng = np.random.Generator(np.random.PCG64(seed))
        res = nash_q_learning(spec, schedule or LearningSchedule(), episodes, rng)
        vals = res.qtable.state_values(holding_time_game(spec).forced)
        return res.policies, float(vals[0])
    raise ValueError(f"unknown solver {solver!r}")


def sweep_point(c_s, c_a, base_spec, model, weights, iter, base_seed, *, gain, Kbar=None, x0_cov=None,
                solver="shapley", schedule=None, episodes=0):
    seed = point_seed(base_seed, c_s, c_a)
    try:
        spec = base_spec.with_costs(c_s, c_a)
        pol, value = _equilibrium(spec, solver, schedule, episodes, seed)
        eps = epsilon_gap(pol, spec).epsilon
        tr = run_episode(model, gain, pol, spec, iter, seed, weights=weights, Kbar=Kbar, x0_cov=x0_cov)
        return SweepRow(float(c_s), float(c_a), seed, metrics(tr, weights, spec), value, eps, pol)
    except Exception as exc:  # recorded in the row; the sweep goes on
        log.warning("sweep point (%s, %s) failed: %s", c_s, c_a, exc)
        return SweepRow(float(c_s), float(c_a), seed, error=f"{type(exc).__name__}: {exc}")


def sweep(cost_grid, base_spec, model, weights, iter, seed, *, gain=None, Kbar=None, x0_cov=None,
          solver="shapley", schedule=None, episodes=0, threads=1):
    """Equilibrium policies and closed-loop metrics for every ``(c_s, c_a)``.

    The feedback gain does not depend on the costs, so it is computed once
    and reused.  Rows come back in grid order whatever ``threads`` is.
    """
    grid = [(float(c), float(a)) for c, a in cost_grid]
    if not grid:
        raise ValueError("cost grid is empty")
    if gain is None:
        gain = solve_control(model, weights).L
    if Kbar is None:
        _, Kbar = steady_state_filter_riccati(model)

    def job(pt):
        return sweep_point(pt[0], pt[1], base_spec, model, weights, iter, seed, gain=gain, Kbar=Kbar,
                           x0_cov=x0_cov, solver=solver, schedule=schedule, episodes=episodes)

    if threads <= 1:
        return [job(pt) for pt in grid]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, grid))


def format_number(x):
    return format(x, ".10g")


def rows_to_csv(rows):
    """CSV text for sweep rows: one header, numbers with 10 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        vals = r.csv_values()
        w.writerow([vals["seed"] if c == "seed" else format_number(vals[c]) for c in CSV_COLUMNS])
    return buf.getvalue()
