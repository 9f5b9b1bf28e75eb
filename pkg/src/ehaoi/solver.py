"""Belief-MDP assembly and the average-cost solver.

Belief-states ``z = (row, col, r, delta)`` are flattened in C order over the
shape ``(B+1, M+1, 2, delta_max)``; ``z = 0`` is the reference state.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from . import _kernels
from .belief import TruncatedBeliefSpace
from .model import ModelParams
from .policy import TablePolicy


class ConvergenceError(RuntimeError):
    """Relative value iteration hit its iteration cap."""

    def __init__(self, msg, iterations, span):
        super().__init__(msg)
        self.iterations = iterations
        self.span = span


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SparseKernel:
    """Per-action transitions in ELL layout plus per-action cost vectors.

    ``idx*`` / ``w*`` keep every structural entry (zero weights included, no
    duplicate merging); :attr:`P0` / :attr:`P1` give the merged CSR matrices.
    """

    shape: tuple
    c0: np.ndarray
    c1: np.ndarray
    idx0: np.ndarray
    w0: np.ndarray
    idx1: np.ndarray
    w1: np.ndarray

    @property
    def n(self) -> int:
        return self.c0.shape[0]

    @staticmethod
    def _csr(idx, w):
        n, k = idx.shape
        rows = np.repeat(np.arange(n), k)
        m = sp.coo_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
        m.sum_duplicates()
        return m

    @property
    def P0(self) -> sp.csr_matrix:
        return self._csr(self.idx0, self.w0)

    @property
    def P1(self) -> sp.csr_matrix:
        return self._csr(self.idx1, self.w1)

    def with_command_penalty(self, mu: float) -> "SparseKernel":
        """Same kernel with ``mu`` added to the cost of every command."""
        return replace(self, c1=self.c1 + mu)


@dataclass(frozen=True)
class SolveResult:
    c_star: float
    h: np.ndarray
    policy: np.ndarray
    iterations: int
    span_final: float
    shape: tuple
    v: np.ndarray = field(repr=False)
    c_bounds: tuple = (np.nan, np.nan)

    def table(self) -> np.ndarray:
        """Policy reshaped to the kernel's state grid (int8)."""
        return self.policy.reshape(self.shape).astype(np.int8)

    def as_policy(self, name: str = "pomdp") -> TablePolicy:
        return TablePolicy(name, self.table(), "belief")


def state_index(space: TruncatedBeliefSpace, delta_max: int, row, col, r, delta):
    return ((row * (space.M + 1) + col) * 2 + r) * delta_max + (delta - 1)


def state_grid(space: TruncatedBeliefSpace, delta_max: int):
    """Broadcastable ``(row, col, r, delta)`` index arrays over the full grid."""
    return np.ix_(np.arange(space.B + 1), np.arange(space.M + 1), np.arange(2),
                  np.arange(1, delta_max + 1))


def build_cost_vectors(space: TruncatedBeliefSpace, params: ModelParams):
    row, col, r, delta = state_grid(space, params.delta_max)
    shape = (space.B + 1, space.M + 1, 2, params.delta_max)
    stale = np.minimum(delta + 1, params.delta_max)
    beta0 = space.table[:, :, 0][:, :, None, None]
    c0 = np.broadcast_to(r * stale, shape).astype(float)
    c1 = np.broadcast_to(r * (beta0 * stale + (1.0 - beta0)), shape).astype(float)
    return c0.ravel(), c1.ravel()


def build_transition_matrices(space: TruncatedBeliefSpace, params: ModelParams):
    """ELL arrays ``(idx0, w0, idx1, w1)`` of the no-command and command kernels.

    Row widths are 2 and ``2(B+1)``: one entry per next-request value, times
    the battery outcome for a command (empty battery -> ``rho^0``, level ``j``
    reported -> ``rho^j``).
    """
    B, M, D, p = space.B, space.M, params.delta_max, params.p
    shape = (B + 1, M + 1, 2, D)
    row, col, r, delta = state_grid(space, D)
    n = (B + 1) * (M + 1) * 2 * D
    nxt = np.minimum(delta + 1, D)
    pr = np.array([1.0 - p, p])

    idx0 = np.empty(shape + (2,), dtype=np.int64)
    w0 = np.empty(shape + (2,))
    ncol = np.minimum(col + 1, M)
    for rp in (0, 1):
        idx0[..., rp] = state_index(space, D, row, ncol, rp, nxt)
        w0[..., rp] = pr[rp]

    beta = space.table[:, :, None, None, :]  # (B+1, M+1, 1, 1, B+1)
    idx1 = np.empty(shape + (2 * (B + 1),), dtype=np.int64)
    w1 = np.empty(shape + (2 * (B + 1),))
    for j in range(B + 1):
        # rho^0 is stored on the rho^1 lineage
        trow, tdelta = (1, nxt) if j == 0 else (j, 1)
        for rp in (0, 1):
            k = 2 * j + rp
            idx1[..., k] = state_index(space, D, trow, 0, rp, tdelta)
            w1[..., k] = pr[rp] * beta[..., j]
    return idx0.reshape(n, 2), w0.reshape(n, 2), idx1.reshape(n, -1), w1.reshape(n, -1)


def build_kernel(space: TruncatedBeliefSpace, params: ModelParams) -> SparseKernel:
    c0, c1 = build_cost_vectors(space, params)
    idx0, w0, idx1, w1 = build_transition_matrices(space, params)
    shape = (space.B + 1, space.M + 1, 2, params.delta_max)
    return SparseKernel(shape, c0, c1, idx0, w0, idx1, w1)


def q_values(h: np.ndarray, kernel: SparseKernel, z=None, use_numba=None):
    """``Q(z, a) = c(z, a) + sum_z' P^a(z, z') h(z')`` for all ``z`` (or one)."""
    q0, q1 = _kernels.bellman_q(kernel.c0, kernel.idx0, kernel.w0, kernel.c1,
                                kernel.idx1, kernel.w1, np.ascontiguousarray(h, dtype=float),
                                use_numba=use_numba)
    if z is None:
        return q0, q1
    return q0[z], q1[z]


def q_values_explicit(h: np.ndarray, space: TruncatedBeliefSpace, params: ModelParams,
                      row: int, col: int, r: int, delta: int):
    """Both action values of one belief-state written out term by term.

    Independent of the kernel arrays; used to cross-check them.
    """
    D, p = params.delta_max, params.p
    H = np.asarray(h).reshape(space.B + 1, space.M + 1, 2, D)
    beta = space.table[row, col]
    stale = min(delta + 1, D)
    ncol = min(col + 1, space.M)
    q0 = r * stale + (1 - p) * H[row, ncol, 0, stale - 1] + p * H[row, ncol, 1, stale - 1]
    q1 = r * (beta[0] * stale + (1 - beta[0]))
    q1 += beta[0] * ((1 - p) * H[1, 0, 0, stale - 1] + p * H[1, 0, 1, stale - 1])
    for j in range(1, space.B + 1):
        q1 += beta[j] * (p * H[j, 0, 1, 0] + (1 - p) * H[j, 0, 0, 0])
    return q0, q1


def rvia_solve(kernel: SparseKernel, theta: float = 1e-7, z_ref: int = 0,
               max_iter: int = 100_000, h0: np.ndarray | None = None,
               tau: float = 1.0, use_numba=None) -> SolveResult:
    """Relative value iteration in vector form.

    Iterates ``v = min_a(c^a + P^a h)``, ``h = v - v[z_ref]`` from ``h = 0``
    (or ``h0``) until the span of successive ``v`` differences drops below
    ``theta``.  Ties in the final argmin go to the idle action.

    ``tau < 1`` runs the iteration on the aperiodic transform
    ``P -> (1 - tau) I + tau P``, ``c -> tau c``, which has the same optimal
    policies and relative values and gain ``tau * C*``; the stopping span is
    scaled by ``tau`` accordingly.  Use it when the plain iteration oscillates.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    n = kernel.n
    if not 0 <= z_ref < n:
        raise ValueError("z_ref outside the state space")
    h_init = np.zeros(n) if h0 is None else np.array(h0, dtype=float)
    h_init = h_init - h_init[z_ref]
    v, h, it, span, status = _kernels.rvia(
        kernel.c0, kernel.idx0, kernel.w0, kernel.c1, kernel.idx1, kernel.w1,
        h_init, z_ref, float(theta) * tau, int(max_iter), float(tau), use_numba=use_numba)
    if status == _kernels.RVIA_NONFINITE:
        raise NumericalError(f"non-finite values after {it} iterations")
    if status == _kernels.RVIA_MAXITER:
        raise ConvergenceError(f"no convergence in {it} iterations (span {span:.3e})", it, span)
    q0, q1 = q_values(h, kernel, use_numba=use_numba)
    policy = (q1 < q0).astype(np.int8)
    gap = np.minimum(q0, q1) - h
    return SolveResult(float(v[z_ref]) / tau, h, policy, int(it), float(span), kernel.shape, v,
                       (float(gap.min()), float(gap.max())))


def policy_iteration_warm_start(kernel: SparseKernel, policy: np.ndarray, z_ref: int = 0,
                                max_iter: int = 50, discount: float = 1.0 - 1e-7) -> np.ndarray | None:
    """Relative values from a few rounds of policy iteration, for seeding RVIA.

    Each round solves ``(I - P) h + g = c`` with ``h[z_ref] = 0`` for the
    current policy and switches only where the other action is strictly
    better.  A policy chain with several recurrent classes makes that system
    singular; those rounds use discounted values instead.  Near a good starting policy this takes
    a handful of sparse solves, where RVIA on slowly mixing chains needs
    thousands of sweeps.
    """
    n = kernel.n
    pol = np.asarray(policy, dtype=np.int8).ravel().copy()
    h = None
    for _ in range(max_iter):
        P, c = policy_chain(kernel, pol)
        A = (sp.identity(n, format="csr") - P).tolil()
        A[:, z_ref] = np.ones((n, 1))       # h[z_ref] = 0 frees this column for the gain
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            x = spsolve(A.tocsc(), c)
            x[z_ref] = 0.0
            if not np.all(np.isfinite(x)):
                # several closed classes: nearly undiscounted values instead of the bias
                x = spsolve((sp.identity(n, format="csc") - discount * P).tocsc(), c)
        if not np.all(np.isfinite(x)):
            return None
        h = x - x[z_ref]
        q0, q1 = q_values(h, kernel)
        tol = 1e-10 * max(1.0, float(np.abs(q0).max()))
        switch = np.where(pol == 1, q0 < q1 - tol, q1 < q0 - tol)
        if not switch.any():
            break
        pol[switch] ^= 1
    return h


def bellman_residual(result: SolveResult, kernel: SparseKernel) -> float:
    """``max_z |min_a Q(z, a) - C* - h(z)|`` for a solved pair."""
    q0, q1 = q_values(result.h, kernel)
    return float(np.max(np.abs(np.minimum(q0, q1) - result.c_star - result.h)))


# --------------------------------------------------------------------------
# policy evaluation on the induced Markov chain
# --------------------------------------------------------------------------

def policy_chain(kernel: SparseKernel, policy: np.ndarray):
    """Transition matrix and cost vector of the chain induced by a deterministic policy."""
    a = np.asarray(policy).ravel().astype(bool)
    idx = np.where(a[:, None], _pad(kernel.idx1, kernel.idx0), _pad(kernel.idx0, kernel.idx1))
    w = np.where(a[:, None], _pad(kernel.w1, kernel.w0), _pad(kernel.w0, kernel.w1))
    P = SparseKernel._csr(idx, w)
    P.eliminate_zeros()
    c = np.where(a, kernel.c1, kernel.c0)
    return P, c


def _pad(x, other):
    width = max(x.shape[1], other.shape[1])
    if x.shape[1] == width:
        return x
    pad = np.zeros((x.shape[0], width - x.shape[1]), dtype=x.dtype)
    return np.hstack([x, pad])


def recurrent_classes(P: sp.csr_matrix) -> list[np.ndarray]:
    """Closed communicating classes of a finite chain."""
    ncomp, labels = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaks = np.zeros(ncomp, dtype=bool)
    cross = labels[coo.row] != labels[coo.col]
    leaks[labels[coo.row[cross]]] = True
    return [np.flatnonzero(labels == c) for c in range(ncomp) if not leaks[c]]


def stationary_distribution(P: sp.csr_matrix, start: int = 0) -> np.ndarray:
    """Stationary law of the chain started at ``start``, by a direct sparse solve.

    Only recurrent classes reachable from ``start`` are considered; if there
    are several the average is not start-independent and a warning is issued.
    """
    reach = np.zeros(P.shape[0], dtype=bool)
    reach[breadth_first_order(P, start, directed=True, return_predecessors=False)] = True
    classes = [c for c in recurrent_classes(P) if reach[c[0]]]
    if len(classes) > 1:
        warnings.warn(f"policy chain has {len(classes)} recurrent classes reachable "
                      "from the start state; using the first", RuntimeWarning)
    cls = classes[0]
    # transient states carry no mass
    Q = P[cls][:, cls].tocsc()
    n = Q.shape[0]
    A = (Q.T - sp.identity(n, format="csc")).tolil()
    A[0, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    x = np.atleast_1d(spsolve(A.tocsc(), rhs))
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    pi = np.zeros(P.shape[0])
    pi[cls] = x
    return pi


@dataclass(frozen=True)
class PolicyEvaluation:
    cost: float
    command_rate: float
    update_rate: float
    stationary: np.ndarray


def evaluate_policy(kernel: SparseKernel, policy: np.ndarray,
                    empty_prob: np.ndarray | None = None) -> PolicyEvaluation:
    """Long-run average cost and command rate of a fixed policy.

    ``empty_prob[z]`` is the probability that the battery is empty in state
    ``z``; it turns the command rate into a successful-update rate.
    """
    P, c = policy_chain(kernel, policy)
    pi = stationary_distribution(P)
    a = np.asarray(policy).ravel()
    upd = a if empty_prob is None else a * (1.0 - np.asarray(empty_prob).ravel())
    return PolicyEvaluation(float(pi @ c), float(pi @ a), float(pi @ upd), pi)


def empty_probability(space: TruncatedBeliefSpace, delta_max: int) -> np.ndarray:
    shape = (space.B + 1, space.M + 1, 2, delta_max)
    return np.broadcast_to(space.table[:, :, 0][:, :, None, None], shape).ravel()


# --------------------------------------------------------------------------
# policy structure
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdProfile:
    """Per-belief AoI thresholds of a belief-indexed policy for ``r = 1``.

    ``thresholds[row, col]`` is the smallest AoI at which the policy commands,
    or ``-1`` if it never does.
    """

    thresholds: np.ndarray
    r0_commands: int
    aoi_violations: list
    lambda_violations: list

    @property
    def is_threshold(self) -> bool:
        return not self.aoi_violations

    def ok(self) -> bool:
        return self.r0_commands == 0 and not self.aoi_violations and not self.lambda_violations


def policy_threshold_profile(table: np.ndarray) -> ThresholdProfile:
    """Inspect a ``(B+1, M+1, 2, delta_max)`` policy table.

    Reports commands issued without a request, beliefs whose action is not
    monotone in the AoI, and places where commanding at ``Lambda^m beta``
    stops for a larger ``m``.
    """
    table = np.asarray(table)
    R, C, _, D = table.shape
    act = table[:, :, 1, :].astype(bool)
    thr = np.where(act.any(axis=2), act.argmax(axis=2) + 1, -1)
    aoi_viol = []
    for row in range(R):
        for col in range(C):
            if thr[row, col] > 0 and not act[row, col, thr[row, col] - 1:].all():
                aoi_viol.append((row, col))
    lam_viol = []
    for row in range(R):
        for col in range(C - 1):
            later = act[row, col + 1:]
            bad = act[row, col] & ~later.all(axis=0)
            for d in np.flatnonzero(bad):
                lam_viol.append((row, col, int(d) + 1))
    return ThresholdProfile(thr, int(table[:, :, 0, :].sum()), aoi_viol, lam_viol)


# --------------------------------------------------------------------------
# belief-states that keep the last reported battery level
# --------------------------------------------------------------------------

def build_augmented_kernel(space: TruncatedBeliefSpace, params: ModelParams) -> SparseKernel:
    """Kernel over ``(row, col, r, delta, b_tilde)`` with ``b_tilde`` in ``1..B``.

    ``b_tilde`` is carried along and only changes when an update reports a
    new level; costs ignore it.
    """
    base = build_kernel(space, params)
    B = space.B
    n = base.n
    nb = B
    t = np.arange(nb)

    def lift(idx, w, reported):
        # reported[k] >= 1: entry k carries an update reporting that level
        width = idx.shape[1]
        new_idx = np.empty((n, nb, width), dtype=np.int64)
        for k in range(width):
            tb = np.full(nb, reported[k] - 1) if reported[k] > 0 else t
            new_idx[:, :, k] = idx[:, k][:, None] * nb + tb[None, :]
        new_w = np.broadcast_to(w[:, None, :], (n, nb, width))
        return new_idx.reshape(n * nb, width), np.ascontiguousarray(new_w).reshape(n * nb, width)

    rep0 = np.zeros(2, dtype=int)
    rep1 = np.array([0, 0] + [j for j in range(1, B + 1) for _ in (0, 1)])
    idx0, w0 = lift(base.idx0, base.w0, rep0)
    idx1, w1 = lift(base.idx1, base.w1, rep1)
    c0 = np.repeat(base.c0, nb)
    c1 = np.repeat(base.c1, nb)
    return SparseKernel(base.shape + (nb,), c0, c1, idx0, w0, idx1, w1)
