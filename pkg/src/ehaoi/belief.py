"""Battery-level beliefs held by the edge node.

A belief is a length ``B+1`` probability vector over the true battery level.
Without a command it is pushed forward by the harvesting operator ``Lambda``;
after a command it resets to one of the ``rho`` vectors depending on whether
an update came back and which battery level it reported.

Every belief reachable from an initial belief is ``Lambda**col @ base(row)``
with ``base(0) = beta0`` and ``base(j) = rho[j]``.  Truncating ``col`` at
``M`` gives the finite table used by the solver; beliefs are always handled
by their ``(row, col)`` index.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ModelParams


class Observation(NamedTuple):
    """What the edge node sees at the start of the next slot."""

    r: int
    delta: int
    b_tilde: int


def build_lambda(lam: float, B: int) -> np.ndarray:
    """One-slot battery transition under no command (columns sum to one)."""
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must lie in (0, 1], got {lam}")
    L = np.zeros((B + 1, B + 1))
    idx = np.arange(B)
    L[idx, idx] = 1.0 - lam
    L[idx + 1, idx] = lam
    L[B, B] = 1.0
    return L


def lambda_power_closed_form(lam: float, B: int, m: int) -> np.ndarray:
    """``Lambda**m`` entry by entry, without any matrix multiplication.

    Below the diagonal the entry is the binomial probability of exactly
    ``j - l`` arrivals in ``m`` slots; the last row collects the rest so each
    column sums to one.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    P = np.zeros((B + 1, B + 1))
    for l in range(B + 1):
        for j in range(l, B):
            k = j - l
            # prod_{v<k} (m-v)/(v+1) is C(m, k), and vanishes for k > m
            P[j, l] = math.comb(m, k) * lam**k * (1.0 - lam) ** (m - k) if k <= m else 0.0
        P[B, l] = 1.0 - P[:B, l].sum()
    return P


def rho_vectors(lam: float, B: int) -> np.ndarray:
    """Reset beliefs after a command; row ``j`` is ``rho^j``.

    ``rho^0`` (no update received, battery was empty) equals ``rho^1``.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must lie in (0, 1], got {lam}")
    rho = np.zeros((B + 1, B + 1))
    rho[0, 0] = 1.0 - lam
    rho[0, 1] = lam
    for j in range(1, B + 1):
        rho[j, j - 1] = 1.0 - lam
        rho[j, j] = lam
    return rho


def update_belief(beta: np.ndarray, a: int, obs: Observation, lam: float) -> np.ndarray:
    """Bayes update of the battery belief after action ``a`` and observation ``obs``."""
    beta = np.asarray(beta, dtype=float)
    B = beta.size - 1
    if a == 0:
        if obs.delta == 1:
            raise ValueError("fresh update observed although no command was sent")
        out = build_lambda(lam, B) @ beta
    elif obs.delta > 1:
        out = rho_vectors(lam, B)[0]
    else:
        if not 1 <= obs.b_tilde <= B:
            raise ValueError(f"reported battery level {obs.b_tilde} outside [1, {B}]")
        out = rho_vectors(lam, B)[obs.b_tilde]
    return out / out.sum()


def uniform_belief(B: int) -> np.ndarray:
    return np.full(B + 1, 1.0 / (B + 1))


def choose_M(lam: float, B: int, eps: float = 1e-4, beta0: np.ndarray | None = None,
             max_M: int = 1_000_000) -> int:
    """Smallest truncation depth at which every base belief is eps-close to a full battery.

    Distance is the infinity norm to the point mass on level ``B``; for a
    probability vector this is ``1 - beta[B]``.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    L = build_lambda(lam, B)
    bases = np.vstack([beta0 if beta0 is not None else uniform_belief(B), rho_vectors(lam, B)])
    cur = bases.T.copy()
    for m in range(max_M + 1):
        if np.max(1.0 - cur[B]) <= eps:
            return max(m, 1)
        cur = L @ cur
    raise RuntimeError(f"no M <= {max_M} reaches eps={eps}")


@dataclass(frozen=True)
class TruncatedBeliefSpace:
    """The ``(B+1) x (M+1)`` table of reachable beliefs.

    ``table[row, col]`` is the belief vector; rows are lineages (``0`` is the
    initial belief, ``j >= 1`` is ``rho^j``) and ``col`` counts consecutive
    no-command slots, saturating at ``M``.
    """

    lam: float
    B: int
    M: int
    beta0: np.ndarray
    table: np.ndarray

    @property
    def size(self) -> int:
        return (self.B + 1) * (self.M + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.B + 1, self.M + 1

    def flat(self, row, col):
        return row * (self.M + 1) + col

    def unflat(self, k):
        return divmod(k, self.M + 1)

    def belief(self, row: int, col: int) -> np.ndarray:
        return self.table[row, col]

    def after_idle(self, row, col):
        return row, np.minimum(col + 1, self.M)

    @staticmethod
    def after_command(updated: bool, b_reported: int = 0):
        # rho^0 == rho^1, so a failed command lands on the rho^1 lineage
        return (b_reported if updated else 1), 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col"] + [f"beta_{j}" for j in range(self.B + 1)])
            for row in range(self.B + 1):
                for col in range(self.M + 1):
                    w.writerow([row, col] + [repr(float(x)) for x in self.table[row, col]])


def enumerate_truncated_space(params: ModelParams, beta0: np.ndarray | None = None) -> TruncatedBeliefSpace:
    B, M = params.B, params.M
    beta0 = uniform_belief(B) if beta0 is None else np.asarray(beta0, dtype=float)
    if beta0.shape != (B + 1,) or np.any(beta0 < 0) or abs(beta0.sum() - 1.0) > 1e-12:
        raise ValueError("beta0 must be a probability vector of length B+1")
    L = build_lambda(params.lam, B)
    rho = rho_vectors(params.lam, B)
    table = np.empty((B + 1, M + 1, B + 1))
    table[0, 0] = beta0
    table[1:, 0] = rho[1:]
    for col in range(1, M + 1):
        table[:, col] = table[:, col - 1] @ L.T
    table.setflags(write=False)
    return TruncatedBeliefSpace(params.lam, B, M, beta0, table)
