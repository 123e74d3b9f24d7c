"""Compiled kernels against the pure-Python fallback on the reference setup.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
timed on both backends with identical inputs; outputs are compared bit for bit
before the timings are reported.
"""
import argparse
import time

import numpy as np

from netgame import _core_py
from netgame.config import ExperimentConfig
from netgame.control import solve_control
from netgame.game_solver import LearningSchedule, holding_time_game, learn_finite_game, shapley_value_iteration
from netgame.lti_model import steady_state_filter_riccati
from netgame.simulation import run_episode

try:
    from netgame import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sim-steps", type=int, default=20_000)
    ap.add_argument("--updates", type=int, default=200_000)
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")

    cfg = ExperimentConfig.from_document()
    model, weights = cfg.model(), cfg.weights()
    _, Kbar = steady_state_filter_riccati(model)
    control = solve_control(model, weights)
    spec = cfg.game_spec(model, weights, control=control)
    game = holding_time_game(spec)
    pol = shapley_value_iteration(spec).policies
    r = np.ascontiguousarray(game.expected_cost())

    def shapley(k):
        V = np.zeros(game.n_states)
        k.shapley_iterate(r, game.succ, game.prob, game.forced, game.eta, V, 1e-12, 10**6)
        return V

    def qlearn(k):
        res = learn_finite_game(game, LearningSchedule(), args.updates, np.random.default_rng(0), backend=k)
        return res.qtable.q

    def simulate(k):
        tr = run_episode(model, control.L, pol, spec, args.sim_steps, 0, weights=weights, Kbar=Kbar, backend=k)
        return tr.x

    cases = [
        ("shapley value iteration (N=10)", shapley),
        (f"nash q-learning ({args.updates} updates)", qlearn),
        (f"closed-loop simulation ({args.sim_steps} steps)", simulate),
    ]
    print(f"{'kernel':<44}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}  identical")
    for name, fn in cases:
        tc, oc = best_of(lambda: fn(_core), args.repeat)
        tp, op = best_of(lambda: fn(_core_py), args.repeat)
        same = np.array_equal(oc, op)
        print(f"{name:<44}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
