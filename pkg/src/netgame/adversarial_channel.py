"""Lossy link under DoS attack and the induced holding-time chain."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .control import solve_control
from .lti_model import f_powers, satisfies_stability, stability_margin, steady_state_filter_riccati

log = logging.getLogger(__name__)


class StabilityWarning(UserWarning):
    """The attacked delivery rate does not satisfy the boundedness condition."""


@dataclass(frozen=True)
class ChannelConfig:
    """Delivery probability without (``lam``) and under (``lam_a``) attack."""

    lam: float
    lam_a: float

    def __post_init__(self):
        if not 0.0 < self.lam_a <= self.lam <= 1.0:
            raise ValueError(f"need 0 < lambda_a <= lambda <= 1, got lambda={self.lam}, lambda_a={self.lam_a}")

    def success_prob(self, nu, a):
        if not nu:
            return 0.0
        return self.lam_a if a else self.lam


def sample_delivery(nu, a, cfg, rng, size=None):
    """Draw the acknowledgment bit ``gamma`` for actions ``(nu, a)``."""
    p = cfg.success_prob(nu, a)
    if size is None:
        return int(rng.random() < p)
    return (rng.random(size) < p).astype(np.int8)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Truncated holding-time game: channel, costs, discount and stage weights.

    States are ``tau in {0, ..., N-1}``; ``N-1`` aggregates every longer
    holding time.  ``trace_costs[t]`` caches ``tr(M_inf f^t(Pbar))``.
    """

    channel: ChannelConfig
    c_s: float
    c_a: float
    eta: float
    N: int
    M_inf: np.ndarray
    Pbar: np.ndarray
    model: object = None
    trace_costs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "c_s", float(self.c_s))
        object.__setattr__(self, "c_a", float(self.c_a))
        M = np.atleast_2d(np.asarray(self.M_inf, dtype=float))
        P = np.atleast_2d(np.asarray(self.Pbar, dtype=float))
        object.__setattr__(self, "M_inf", M)
        object.__setattr__(self, "Pbar", P)
        if self.trace_costs is None:
            if self.model is None:
                raise ValueError("GameSpec needs either a model or precomputed trace_costs")
            covs = f_powers(P, self.N, self.model)
            tc = np.einsum("ij,tji->t", M, covs)
            object.__setattr__(self, "trace_costs", tc)
        else:
            tc = np.asarray(self.trace_costs, dtype=float)
            if tc.shape != (self.N,):
                raise ValueError(f"trace_costs must have length N={self.N}")
            object.__setattr__(self, "trace_costs", tc)
        if self.model is not None and not satisfies_stability(self.model, self.eta, self.channel.lam_a):
            msg = (
                f"lambda_a={self.channel.lam_a} does not exceed the boundedness threshold "
                f"{stability_margin(self.model, self.eta):.6f}"
            )
            log.warning(msg)
            warnings.warn(msg, StabilityWarning, stacklevel=2)

    @classmethod
    def build(cls, model, weights, channel, c_s, c_a, N, Pbar=None, control=None):
        """Derive ``Pbar`` and ``M_inf`` from the plant and weights."""
        if Pbar is None:
            Pbar, _ = steady_state_filter_riccati(model)
        if control is None:
            control = solve_control(model, weights)
        return cls(channel, c_s, c_a, weights.eta, N, control.M_inf, Pbar, model)

    def with_costs(self, c_s, c_a):
        return replace(self, c_s=c_s, c_a=c_a, trace_costs=self.trace_costs)

    def with_horizon(self, N):
        if self.model is None:
            raise ValueError("changing N requires the plant model")
        return replace(self, N=N, trace_costs=None)

    def next_failure_state(self, tau):
        return min(tau + 1, self.N - 1)


def transition_dist(tau, nu, a, spec):
    """Distribution of the next holding time as ``{state: probability}``."""
    if not 0 <= tau <= spec.N - 1:
        raise ValueError(f"tau={tau} outside 0..{spec.N - 1}")
    fail = spec.next_failure_state(tau)
    p = spec.channel.success_prob(nu, a)
    if p == 0.0:
        return {fail: 1.0}
    if p == 1.0:
        return {0: 1.0}
    return {0: p, fail: 1.0 - p}
