"""Relax-then-truncate scheduling of K sensors under a per-slot command budget.

The per-slot budget ``sum_k a_k(t) <= N`` is relaxed to a time-average one
and dualised with a multiplier ``mu`` charged per command.  The relaxed
problem splits into independent single-sensor problems with command cost
``c(z, 1) + mu``; ``mu`` is found by bisection on the aggregate long-run
command rate.  Online, sensors that the relaxed policies want to command are
cut down to a uniformly random subset of size ``N``.

Sensors sharing a harvesting rate share a solve, so the cost of the relaxed
step grows with the number of distinct rates, not with ``K``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .baselines import exact_battery_kernel
from .belief import choose_M, enumerate_truncated_space
from .model import ModelParams
from .simulator import EpisodeConfig, env_draws, episode_seeds
from .solver import (
    build_kernel,
    empty_probability,
    evaluate_policy,
    policy_iteration_warm_start,
    rvia_solve,
)

POLICY_KINDS = ("relax-truncate", "greedy-N", "lower-bound", "exact-battery-relax-truncate")


def cycling_rates(K: int) -> tuple:
    """Harvesting rates cycling 0.01, 0.02, ..., 0.1 over sensor ids."""
    return tuple(round(0.01 * (1 + k % 10), 10) for k in range(K))


@dataclass(frozen=True)
class MultiModel:
    """K sensors with their own harvesting rates and a shared request rate."""

    lams: tuple
    p: float
    B: int
    delta_max: int
    N: int
    M: int | None = None          # None: per-rate choose_M(eps), capped at m_cap
    m_eps: float = 1e-4
    m_cap: int = 64
    theta: float = 1e-6

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ValueError("need K >= 1 sensors and a budget N >= 1")
        for lam in self.lams:
            ModelParams(lam, self.p, self.B, self.delta_max, 1, self.theta)

    @classmethod
    def from_gamma(cls, K: int, gamma: float, lams=None, **kw) -> "MultiModel":
        """Budget ``N = floor(gamma * K)`` (at least one)."""
        N = max(1, math.floor(gamma * K + 1e-9))
        return cls(tuple(lams) if lams is not None else cycling_rates(K), N=N, **kw)

    @property
    def K(self) -> int:
        return len(self.lams)

    @property
    def gamma(self) -> float:
        return self.N / self.K

    @property
    def rates(self) -> tuple:
        return tuple(sorted(set(self.lams)))

    @property
    def sensor_type(self) -> np.ndarray:
        rates = self.rates
        return np.array([rates.index(lam) for lam in self.lams], dtype=np.int64)

    @property
    def type_counts(self) -> np.ndarray:
        return np.bincount(self.sensor_type, minlength=len(self.rates))

    def depth(self, lam: float) -> int:
        if self.M is not None:
            return self.M
        return min(choose_M(lam, self.B, self.m_eps), self.m_cap)

    def params(self, lam: float) -> ModelParams:
        return ModelParams(lam, self.p, self.B, self.delta_max, self.depth(lam), self.theta)


@dataclass
class _SensorProblem:
    """Cached single-sensor kernel plus the last solution (warm start)."""

    params: ModelParams
    exact: bool
    kernel: object = None
    empty: np.ndarray = None
    h: np.ndarray = None
    policy: np.ndarray = None
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.exact:
            self.kernel = exact_battery_kernel(self.params)
        else:
            space = enumerate_truncated_space(self.params)
            self.kernel = build_kernel(space, self.params)
            self.empty = empty_probability(space, self.params.delta_max)

    def solve(self, mu: float, tau: float = 0.5):
        if mu not in self.cache:
            kernel = self.kernel.with_command_penalty(mu)
            h0 = self.h
            if self.policy is not None:
                # RVIA mixes slowly for large mu; a policy-iteration seed leaves it one or two sweeps
                h0 = policy_iteration_warm_start(kernel, self.policy)
                if h0 is None:
                    h0 = self.h
            res = rvia_solve(kernel, self.params.theta, h0=h0, tau=tau)
            self.h, self.policy = res.h, res.policy
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ev = evaluate_policy(self.kernel, res.policy, self.empty)
            self.cache[mu] = (res, ev)
        return self.cache[mu]


def lagrangian_per_sensor_solve(params: ModelParams, mu: float, exact: bool = False, tau: float = 0.5):
    """Optimal single-sensor policy when every command costs ``mu`` extra.

    Returns ``(result, cost, command_rate)``; cost and rate are the long-run
    averages of the unpenalised AoI and of the command indicator under the
    returned policy, from its stationary distribution.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    res, ev = _SensorProblem(params, exact).solve(mu, tau)
    return res, ev.cost, ev.command_rate


@dataclass(frozen=True)
class RelaxedPolicy:
    """Per-rate policies at the multiplier ``mu_star``.

    ``tables`` is stacked over distinct rates and padded along the belief
    column axis; ``depths[t]`` is the truncation depth of rate ``t``.
    """

    mu_star: float
    kind: str                   # "belief" or "battery"
    tables: np.ndarray
    depths: np.ndarray
    rates: tuple                # per distinct harvesting rate
    command_rates: np.ndarray
    costs: np.ndarray
    aggregate_rate: float
    budget: int
    iterations: int
    rate_below: float           # aggregate rate just under mu_star (nan if mu_star == 0)

    @property
    def slack(self) -> float:
        return self.budget - self.aggregate_rate

    def relaxed_cost(self, model: MultiModel) -> float:
        """Per-sensor average AoI of the relaxed policy, no truncation."""
        return float(model.type_counts @ self.costs / model.K)


def bisect_multiplier(model: MultiModel, tol: float = 1e-3, exact: bool = False,
                      mu_tol: float = 1e-3, max_iter: int = 60) -> RelaxedPolicy:
    """Smallest multiplier whose relaxed policy meets the average budget.

    Bisection stops once the aggregate command rate is within ``tol * N``
    below ``N`` or the bracket is narrower than ``mu_tol`` relative to its
    upper end.  The feasible end
    of the bracket is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    counts = model.type_counts
    problems = [_SensorProblem(model.params(lam), exact) for lam in model.rates]

    def aggregate(mu):
        sols = [pr.solve(mu) for pr in problems]
        return float(sum(c * ev.command_rate for c, (_, ev) in zip(counts, sols))), sols

    it = 0
    rate0, _ = aggregate(0.0)
    if rate0 <= model.N:
        return _relaxed(model, problems, 0.0, rate0, math.nan, exact, it)
    lo, hi = 0.0, model.p * model.delta_max
    rate_lo = rate0
    rate_hi, _ = aggregate(hi)
    while rate_hi > model.N:
        lo, rate_lo = hi, rate_hi
        hi *= 2.0
        rate_hi, _ = aggregate(hi)
        it += 1
    while hi - lo > mu_tol * max(1.0, hi) and model.N - rate_hi > tol * model.N and it < max_iter:
        mid = 0.5 * (lo + hi)
        rate_mid, _ = aggregate(mid)
        if rate_mid > model.N:
            lo, rate_lo = mid, rate_mid
        else:
            hi, rate_hi = mid, rate_mid
        it += 1
    return _relaxed(model, problems, hi, rate_hi, rate_lo, exact, it)


def _relaxed(model, problems, mu, rate, rate_below, exact, it):
    sols = [pr.solve(mu) for pr in problems]
    tabs = [res.table() for res, _ in sols]
    width = max(t.shape[1] for t in tabs)
    padded = []
    for t in tabs:
        if t.shape[1] < width:
            t = np.concatenate([t, np.repeat(t[:, -1:], width - t.shape[1], axis=1)], axis=1)
        padded.append(t)
    return RelaxedPolicy(
        mu_star=float(mu),
        kind="battery" if exact else "belief",
        tables=np.ascontiguousarray(np.stack(padded)),
        depths=np.array([t.shape[1] - 1 for t in tabs], dtype=np.int64),
        rates=model.rates,
        command_rates=np.array([ev.command_rate for _, ev in sols]),
        costs=np.array([ev.cost for _, ev in sols]),
        aggregate_rate=float(rate),
        budget=model.N,
        iterations=it,
        rate_below=float(rate_below),
    )


def truncate_commands(requested, N: int, rng: np.random.Generator) -> set:
    """Keep all requested sensors if they fit in the budget, else a uniform random N-subset."""
    requested = sorted(requested)
    if len(requested) <= N:
        return set(requested)
    return set(rng.choice(requested, size=N, replace=False).tolist())


@dataclass(frozen=True)
class MultiEstimate:
    policy: str
    mean: float                 # average on-demand AoI per sensor per slot
    stderr: float
    per_episode: tuple
    commands_per_slot: float
    max_commands: int           # largest number of commands issued in any slot

    def as_dict(self) -> dict:
        return {"policy": self.policy, "mean": self.mean, "stderr": self.stderr,
                "per_episode": list(self.per_episode), "commands_per_slot": self.commands_per_slot,
                "max_commands": self.max_commands}


def multi_simulate(model: MultiModel, kind: str, config: EpisodeConfig,
                   relaxed: RelaxedPolicy | None = None, use_numba=None) -> MultiEstimate:
    """Run K coupled sensors for ``config.episodes`` episodes.

    ``relax-truncate`` and ``lower-bound`` need a belief-kind ``relaxed``;
    ``exact-battery-relax-truncate`` needs a battery-kind one.  The lower
    bound ignores the per-slot budget.
    """
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    K, B, D = model.K, model.B, model.delta_max
    if kind == "greedy-N":
        tables = np.zeros((1, 1, 1, 2, D), dtype=np.int8)
        depths = np.zeros(K, dtype=np.int64)
        mode, kcode = _kernels.BATTERY_MODE, _kernels.KIND_GREEDY
        stype = np.zeros(K, dtype=np.int64)
    else:
        want = "battery" if kind.startswith("exact") else "belief"
        if relaxed is None or relaxed.kind != want:
            raise ValueError(f"{kind} needs a {want}-kind relaxed policy")
        tables = relaxed.tables
        stype = model.sensor_type
        depths = relaxed.depths[stype]
        mode = _kernels.BATTERY_MODE if want == "battery" else _kernels.BELIEF_MODE
        kcode = _kernels.KIND_PLAIN if kind == "lower-bound" else _kernels.KIND_TRUNCATE
    lam = np.asarray(model.lams)
    warm = config.warmup_slots
    counted = config.slots - warm
    per_ep, cmd_rates, slot_max = [], [], np.zeros(1, dtype=np.int64)
    for env_ss, trunc_ss in episode_seeds(config.seed, config.episodes):
        b = np.zeros(K, dtype=np.int64)
        delta = np.ones(K, dtype=np.int64)
        btil = np.full(K, B, dtype=np.int64)
        row = np.zeros(K, dtype=np.int64)
        col = np.zeros(K, dtype=np.int64)
        cost = np.zeros(K, dtype=np.int64)
        cmds = np.zeros(K, dtype=np.int64)
        upds = np.zeros(K, dtype=np.int64)
        trunc_rng = np.random.Generator(np.random.Philox(trunc_ss))
        t0 = 0
        for e, r in env_draws(env_ss, lam, model.p, config.slots, config.chunk, width=K):
            u = trunc_rng.random(e.shape)
            _kernels.sim_multi(e, r, u, b, delta, btil, row, col, tables, stype, depths, mode,
                               kcode, model.N, B, D, t0, warm, cost, cmds, upds, slot_max,
                               use_numba=use_numba)
            t0 += e.shape[0]
        per_ep.append(cost.sum() / (counted * K))
        cmd_rates.append(cmds.sum() / counted)
    per_ep = np.array(per_ep)
    E = per_ep.size
    stderr = float(per_ep.std(ddof=1) / math.sqrt(E)) if E > 1 else 0.0
    return MultiEstimate(kind, float(per_ep.mean()), stderr, tuple(float(x) for x in per_ep),
                         float(np.mean(cmd_rates)), int(slot_max[0]))
