"""``netgame`` command line: solve, learn, verify, simulate and sweep pipelines.

Every artifact embeds the config hash and seed and is written with sorted
keys and no timestamps, so identical inputs give byte-identical files.

Exit codes: 0 success, 2 config error, 3 solver non-convergence,
4 verification gate failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .control import solve_control
from .game_solver import (
    PolicyPair,
    holding_time_game,
    nash_q_learning,
    shapley_value_iteration,
    value_vs_horizon,
)
from .lti_model import ConvergenceError, ModelError, stability_margin, steady_state_filter_riccati
from .simulation import GENERATOR, format_number, metrics, rows_to_csv, run_episode, sweep
from .verification import epsilon_gap, lemma1_monte_carlo, occupation_measure, reference_epsilon

log = logging.getLogger("netgame")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_GATE = 4


class GateFailure(RuntimeError):
    """A verification threshold was exceeded."""


def _plain(obj):
    """Convert numpy values to JSON-ready Python objects; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Artifacts:
    """Writes result files under one directory, stamping hash and seed into each."""

    def __init__(self, out_dir, cfg):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.written = []

    def stamp(self):
        return {"config_hash": self.cfg.hash, "seed": self.cfg.seed}

    def json(self, name, payload):
        doc = {**self.stamp(), **payload}
        text = json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
        return self._write(name, text)

    def csv(self, name, body):
        head = f"# config_hash={self.cfg.hash} seed={self.cfg.seed}\n"
        return self._write(name, head + body)

    def _write(self, name, text):
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.written.append(str(path))
        log.info("wrote %s", path)
        return path


# -- shared pipeline pieces ---------------------------------------------------


def _plant(cfg):
    model = cfg.model()
    weights = cfg.weights()
    Pbar, Kbar = steady_state_filter_riccati(model)
    control = solve_control(model, weights)
    return model, weights, Pbar, Kbar, control


def _load_policies(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        pol = doc.get("policies", doc)
        return PolicyPair(pol["pi_c"], pol["pi_a"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from None


def _policies_and_spec(cfg, args, model, weights, Pbar, control):
    spec = cfg.game_spec(model, weights, Pbar=Pbar, control=control)
    if getattr(args, "policy", None):
        pol = _load_policies(args.policy)
        if pol.N != spec.N:
            spec = spec.with_horizon(pol.N)
        return pol, spec, "file"
    g = cfg.section("game")
    _, _, pol = shapley_value_iteration(spec, tol=g["tol"], max_iter=g["max_iter"])
    return pol, spec, "shapley"


# -- subcommands --------------------------------------------------------------


def cmd_solve(cfg, args, out):
    model, weights, Pbar, Kbar, control = _plant(cfg)
    margin = stability_margin(model, weights.eta)
    lam_a = cfg.section("channel")["lambda_a"]
    out.json(
        "solve.json",
        {
            "Pbar": Pbar,
            "Kbar": Kbar,
            "S_inf": control.S_inf,
            "L": control.L,
            "M_inf": control.M_inf,
            "stability_threshold": margin,
            "lambda_a": lam_a,
            "stability_satisfied": bool(lam_a > margin),
        },
    )
    return EXIT_OK


def cmd_learn(cfg, args, out):
    model, weights, Pbar, _, control = _plant(cfg)
    spec = cfg.game_spec(model, weights, Pbar=Pbar, control=control)
    g = cfg.section("game")
    oracle = shapley_value_iteration(spec, tol=g["tol"], max_iter=g["max_iter"])
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    episodes = cfg.section("learning")["episodes"]
    learned = nash_q_learning(spec, cfg.schedule(), episodes, rng)
    game = holding_time_game(spec)
    learned_V = learned.qtable.state_values(game.forced)
    rel = float(np.abs(learned_V - oracle.V).max() / np.abs(oracle.V).max()) if np.abs(oracle.V).max() > 0 else 0.0
    horizons = g.get("horizons") or [spec.N]
    vvn = value_vs_horizon(spec, horizons, tol=g["tol"])
    out.json(
        "learn.json",
        {
            "N": spec.N,
            "updates": int(episodes) * cfg.section("learning")["steps_per_episode"],
            "qtable": learned.qtable.q,
            "visits": learned.qtable.visits,
            "learned_values": learned_V,
            "policies": learned.policies.to_dict(),
            "oracle": {
                "values": oracle.V,
                "qtable": oracle.qtable.q,
                "policies": oracle.policies.to_dict(),
                "iterations": oracle.iterations,
                "residual": oracle.residual,
            },
            "relative_sup_error": rel,
            "value_vs_N": [{"N": n, "value": v} for n, v in vvn],
        },
    )
    out.json("policies.json", {"N": spec.N, "source": "nash_q_learning", "policies": learned.policies.to_dict()})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "value"])
    for n, v in vvn:
        w.writerow([n, format_number(v)])
    out.csv("value_vs_N.csv", buf.getvalue())
    return EXIT_OK


def cmd_verify(cfg, args, out):
    model, weights, Pbar, Kbar, control = _plant(cfg)
    pol, spec, source = _policies_and_spec(cfg, args, model, weights, Pbar, control)
    vs = cfg.verify_settings()
    threshold = float(vs.get("epsilon_threshold", 1e-6))
    report = epsilon_gap(pol, spec)
    om = occupation_measure(pol, spec)
    n_ref = int(vs.get("n_ref", 40))
    ref = reference_epsilon(pol, spec, n_ref) if n_ref >= spec.N else None
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    lemma = lemma1_monte_carlo(
        model, control.L, pol, spec, int(vs.get("lemma1_samples", 200_000)), rng,
        Kbar=Kbar, burn_in=int(vs.get("burn_in", 500)), x0_cov=cfg.x0_cov(), threads=args.threads,
    )
    gate = report.epsilon <= threshold
    out.json(
        "verify.json",
        {
            "policy_source": source,
            "policies": pol.to_dict(),
            "equilibrium": report.to_dict(),
            "occupation": {
                "total": om.total,
                "min": float(om.omega.min()),
                "balance_residual": om.balance_residual,
            },
            "reference": None if ref is None else {"n_ref": n_ref, **ref.to_dict()},
            "lemma1": lemma.to_dict(),
            "epsilon_threshold": threshold,
            "gate_passed": gate,
        },
    )
    if not gate:
        raise GateFailure(f"epsilon {report.epsilon:.3e} exceeds threshold {threshold:.3e}")
    return EXIT_OK


def cmd_simulate(cfg, args, out):
    model, weights, Pbar, Kbar, control = _plant(cfg)
    pol, spec, source = _policies_and_spec(cfg, args, model, weights, Pbar, control)
    horizon = cfg.section("sim")["iter"]
    tr = run_episode(model, control.L, pol, spec, horizon, cfg.seed, weights=weights, Kbar=Kbar, x0_cov=cfg.x0_cov())
    m = metrics(tr, weights, spec)
    out.json(
        "simulate.json",
        {
            "policy_source": source,
            "policies": pol.to_dict(),
            "iter": horizon,
            "generator": GENERATOR,
            "metrics": m.to_dict(),
        },
    )
    if args.trace:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nx, nu_dim = model.n_x, model.n_u
        w.writerow(
            ["k"] + [f"x{i}" for i in range(nx)] + [f"xhat_s{i}" for i in range(nx)]
            + [f"xhat{i}" for i in range(nx)] + [f"u{i}" for i in range(nu_dim)]
            + ["nu", "a", "gamma", "tau", "stage_cost"]
        )
        for k in range(len(tr)):
            nums = list(tr.x[k]) + list(tr.xhat_s[k]) + list(tr.xhat[k]) + list(tr.u[k])
            w.writerow(
                [k] + [format_number(v) for v in nums]
                + [int(tr.nu[k]), int(tr.a[k]), int(tr.gamma[k]), int(tr.tau[k]), format_number(tr.stage_cost[k])]
            )
        out.csv("trace.csv", buf.getvalue())
    return EXIT_OK


def cmd_sweep(cfg, args, out):
    grid = cfg.cost_grid()
    model, weights, Pbar, Kbar, control = _plant(cfg)
    spec = cfg.game_spec(model, weights, Pbar=Pbar, control=control)
    sw = cfg.section("sweep")
    rows = sweep(
        grid, spec, model, weights, cfg.section("sim")["iter"], cfg.seed,
        gain=control.L, Kbar=Kbar, x0_cov=cfg.x0_cov(), solver=sw.get("solver", "shapley"),
        schedule=cfg.schedule(), episodes=cfg.section("learning")["episodes"], threads=args.threads,
    )
    out.csv("sweep.csv", rows_to_csv(rows))
    out.json(
        "sweep.json",
        {
            "solver": sw.get("solver", "shapley"),
            "iter": cfg.section("sim")["iter"],
            "generator": GENERATOR,
            "points": [
                {
                    "c_s": r.c_s,
                    "c_a": r.c_a,
                    "seed": r.seed,
                    "game_value": r.game_value,
                    "epsilon_gap": r.epsilon_gap,
                    "policies": None if r.policies is None else r.policies.to_dict(),
                    "error": r.error,
                }
                for r in rows
            ],
        },
    )
    failed = sum(not r.ok for r in rows)
    if failed:
        log.warning("%d of %d sweep points failed", failed, len(rows))
    if failed == len(rows):
        raise ConvergenceError("every sweep point failed")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "learn": cmd_learn,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override sim.seed")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")

    parser = argparse.ArgumentParser(
        prog="netgame",
        parents=[common],
        description="Control and transmission scheduling under DoS attack as a zero-sum stochastic game.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("solve", parents=[common], help="filter and control Riccati solutions, stability threshold")
    sub.add_parser("learn", parents=[common], help="Nash Q-learning vs the Shapley oracle, value vs N")
    p = sub.add_parser("verify", parents=[common], help="epsilon-Nash gaps, occupation measure, Monte Carlo moments")
    p.add_argument("--policy", metavar="FILE", help="policy JSON (default: Shapley equilibrium)")
    p = sub.add_parser("simulate", parents=[common], help="closed-loop episode metrics")
    p.add_argument("--policy", metavar="FILE", help="policy JSON (default: Shapley equilibrium)")
    p.add_argument("--trace", action="store_true", help="also write the per-step trace CSV")
    sub.add_parser("sweep", parents=[common], help="metrics over a grid of transmission and attack costs")
    return parser


def _configure_logging():
    level = os.environ.get("NETGAME_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", None)
    args.out = getattr(args, "out", ".")
    args.threads = max(1, getattr(args, "threads", 1))
    try:
        cfg = ExperimentConfig.load(args.config, seed=args.seed)
        out = Artifacts(args.out, cfg)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, ModelError) as exc:
        print(f"netgame: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"netgame: no convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except GateFailure as exc:
        print(f"netgame: verification gate failed: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
