"""Comparison policies: request-aware greedy, exact-battery optimum, and MLE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import TruncatedBeliefSpace
from .model import ModelParams
from .solver import SolveResult, SparseKernel, evaluate_policy, rvia_solve
from .policy import TablePolicy


def greedy_action(r: int) -> int:
    return int(r)


def greedy_policy(params: ModelParams) -> TablePolicy:
    """Command whenever there is a request."""
    table = np.zeros((params.B + 1, 1, 2, params.delta_max), dtype=np.int8)
    table[:, :, 1, :] = 1
    return TablePolicy("greedy", table, "battery")


def exact_battery_kernel(params: ModelParams) -> SparseKernel:
    """Fully observed MDP over ``(b, r, delta)``.

    Row entries enumerate (energy arrival, next request); four per row for
    either action.
    """
    B, D, lam, p = params.B, params.delta_max, params.lam, params.p
    shape = (B + 1, 1, 2, D)
    b, _, r, delta = np.ix_(np.arange(B + 1), [0], np.arange(2), np.arange(1, D + 1))
    nxt = np.minimum(delta + 1, D)
    stale_cost = r * nxt
    c0 = np.broadcast_to(stale_cost, shape).astype(float).ravel()
    c1 = np.broadcast_to(np.where(b >= 1, r * 1, stale_cost), shape).astype(float).ravel()

    def flat(bb, rr, dd):
        return (bb * 2 + rr) * D + (dd - 1)

    idx0 = np.empty(shape + (4,), dtype=np.int64)
    w0 = np.empty(shape + (4,))
    idx1 = np.empty_like(idx0)
    w1 = np.empty_like(w0)
    for e in (0, 1):
        pe = lam if e else 1.0 - lam
        for rp in (0, 1):
            pr = p if rp else 1.0 - p
            k = 2 * e + rp
            idx0[..., k] = flat(np.minimum(b + e, B), rp, nxt)
            w0[..., k] = pe * pr
            sent = b >= 1
            idx1[..., k] = np.where(sent, flat(np.minimum(b - 1 + e, B), rp, 1),
                                    flat(np.minimum(b + e, B), rp, nxt))
            w1[..., k] = pe * pr
    n = (B + 1) * 2 * D
    return SparseKernel(shape, c0, c1, idx0.reshape(n, 4), w0.reshape(n, 4),
                        idx1.reshape(n, 4), w1.reshape(n, 4))


@dataclass(frozen=True)
class ExactMdpPolicy:
    table: np.ndarray           # (B+1, 2, delta_max), int8
    c_star_exact: float
    result: SolveResult

    def action(self, b: int, r: int, delta: int) -> int:
        return int(self.table[b, r, delta - 1])

    def as_policy(self) -> TablePolicy:
        return TablePolicy("exact", self.table[:, None, :, :].copy(), "battery")


def exact_mdp_solve(params: ModelParams, mu: float = 0.0, **rvia_kw) -> ExactMdpPolicy:
    kernel = exact_battery_kernel(params)
    if mu:
        kernel = kernel.with_command_penalty(mu)
    res = rvia_solve(kernel, params.theta, **rvia_kw)
    return ExactMdpPolicy(res.table()[:, 0], res.c_star, res)


def exact_command_rate(params: ModelParams, exact: ExactMdpPolicy) -> float:
    return evaluate_policy(exact_battery_kernel(params), exact.result.policy).command_rate


def most_likely_level(beta: np.ndarray) -> int:
    """Argmax of the belief; ties go to the lowest level."""
    return int(np.argmax(beta))


def mle_action(exact: ExactMdpPolicy, beta: np.ndarray, r: int, delta: int) -> int:
    return exact.action(most_likely_level(beta), r, delta)


def mle_policy(exact: ExactMdpPolicy, space: TruncatedBeliefSpace) -> TablePolicy:
    """Exact-battery policy evaluated at the most likely level of each tabulated belief."""
    bstar = np.argmax(space.table, axis=2)          # (B+1, M+1)
    table = exact.table[bstar]                      # (B+1, M+1, 2, D)
    return TablePolicy("mle", table.astype(np.int8), "belief")
