"""Seeded Monte-Carlo evaluation of single-sensor policies.

Randomness is drawn up front in chunks from per-episode Philox streams
(spawned from one ``SeedSequence``), so results do not depend on the kernel
backend or on how episodes are scheduled.  Within a slot the order is: see
the request, pick the action, transmit if the battery is non-empty, pay the
on-demand AoI, then harvest.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels
from .belief import Observation, TruncatedBeliefSpace, update_belief
from .model import EnvState, ModelParams, aoi_step, battery_step, immediate_cost
from .policy import TablePolicy


@dataclass(frozen=True)
class EpisodeConfig:
    slots: int
    episodes: int = 10
    seed: int = 0
    warmup: int | None = None   # default: 1% of slots
    chunk: int = 1 << 16

    def __post_init__(self):
        if self.slots < 1 or self.episodes < 1 or self.chunk < 1:
            raise ValueError("slots, episodes and chunk must be positive")
        if self.warmup is not None and not 0 <= self.warmup < self.slots:
            raise ValueError("warmup must lie in [0, slots)")

    @property
    def warmup_slots(self) -> int:
        return self.slots // 100 if self.warmup is None else self.warmup


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    per_episode: tuple
    command_rate: float
    update_rate: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "per_episode": list(self.per_episode),
                "command_rate": self.command_rate, "update_rate": self.update_rate}


def episode_seeds(seed: int, episodes: int) -> list[tuple[np.random.SeedSequence, np.random.SeedSequence]]:
    """Independent (environment, truncation) seed pairs, one per episode."""
    return [tuple(child.spawn(2)) for child in np.random.SeedSequence(seed).spawn(episodes)]


def env_draws(ss: np.random.SeedSequence, lam, p, slots: int, chunk: int,
              width: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(e, r)`` uint8 chunks; ``width`` adds a sensor axis.

    ``lam`` may be an array of per-sensor rates when ``width`` is given.
    """
    rng = np.random.Generator(np.random.Philox(ss))
    done = 0
    while done < slots:
        n = min(chunk, slots - done)
        shape = (n,) if width is None else (n, width)
        e = (rng.random(shape) < lam).astype(np.uint8)
        r = (rng.random(shape) < p).astype(np.uint8)
        yield e, r
        done += n


def _summarise(per_episode_cost, cmds, upds, counted, chunk_means):
    means = np.asarray(per_episode_cost, dtype=float) / counted
    E = means.size
    if E >= 2:
        stderr = float(means.std(ddof=1) / np.sqrt(E))
    elif len(chunk_means) >= 2:
        cm = np.asarray(chunk_means)
        stderr = float(cm.std(ddof=1) / np.sqrt(cm.size))
    else:
        stderr = 0.0
    return CostEstimate(float(means.mean()), stderr, tuple(float(x) for x in means),
                        float(np.sum(cmds) / (counted * E)), float(np.sum(upds) / (counted * E)))


def simulate(policy: TablePolicy, params: ModelParams, config: EpisodeConfig,
             use_numba=None) -> CostEstimate:
    """Long-run average on-demand AoI of ``policy``, mean and stderr over episodes."""
    E, T = config.episodes, config.slots
    warm = config.warmup_slots
    M = policy.table.shape[1] - 1
    table = np.ascontiguousarray(policy.table, dtype=np.int8)
    b = np.zeros(E, dtype=np.int64)
    delta = np.ones(E, dtype=np.int64)
    btil = np.full(E, params.B, dtype=np.int64)
    row = np.zeros(E, dtype=np.int64)
    col = np.zeros(E, dtype=np.int64)
    cost = np.zeros(E, dtype=np.int64)
    cmds = np.zeros(E, dtype=np.int64)
    upds = np.zeros(E, dtype=np.int64)
    streams = [env_draws(env, params.lam, params.p, T, config.chunk) for env, _ in episode_seeds(config.seed, E)]
    chunk_means = []
    t0 = 0
    for parts in zip(*streams):
        e = np.ascontiguousarray(np.stack([x[0] for x in parts], axis=1))
        r = np.ascontiguousarray(np.stack([x[1] for x in parts], axis=1))
        before = cost.sum()
        _kernels.sim_lanes(e, r, b, delta, btil, row, col, table, policy.mode, M, params.B,
                           params.delta_max, t0, warm, cost, cmds, upds, use_numba=use_numba)
        n = e.shape[0]
        counted = max(0, t0 + n - max(t0, warm))
        if counted:
            chunk_means.append((cost.sum() - before) / (counted * E))
        t0 += n
    return _summarise(cost, cmds, upds, T - warm, chunk_means)


def belief_tracker_step(index: tuple[int, int], a: int, obs: Observation, M: int) -> tuple[int, int]:
    """Belief index after one slot, mirroring the vector update in index space."""
    row, col = index
    if a == 0:
        if obs.delta == 1:
            raise ValueError("fresh update observed although no command was sent")
        return row, min(col + 1, M)
    if obs.delta > 1:
        return TruncatedBeliefSpace.after_command(False)
    return TruncatedBeliefSpace.after_command(True, obs.b_tilde)


class TraceRow(NamedTuple):
    t: int
    b: int
    r: int
    delta: int
    b_tilde: int
    row: int
    col: int
    a: int
    d: int
    cost: int


def trace_episode(policy: TablePolicy, params: ModelParams, config: EpisodeConfig,
                  slots: int, episode: int = 0, track_belief: bool = False):
    """Replay the first ``slots`` slots of one episode with plain Python.

    Uses the model functions directly instead of the kernels, on the same
    random draws.  With ``track_belief`` the exact belief vector is carried
    along too and returned as a second list.
    """
    if slots > config.slots:
        raise ValueError("trace longer than the episode")
    env, _ = episode_seeds(config.seed, config.episodes)[episode]
    M = policy.table.shape[1] - 1
    s = EnvState(b=0, r=0, delta=1, b_tilde=params.B)
    row, col = 0, 0
    beta = np.full(params.B + 1, 1.0 / (params.B + 1))
    rows, beliefs = [], []
    t = 0
    for e_chunk, r_chunk in env_draws(env, params.lam, params.p, config.slots, config.chunk):
        for e, r in zip(e_chunk.tolist(), r_chunk.tolist()):
            if t >= slots:
                return (rows, beliefs) if track_belief else rows
            s = EnvState(s.b, r, s.delta, s.b_tilde)
            key = (row, col) if policy.kind == "belief" else s.b
            a = policy(key, r, s.delta)
            d = a * (s.b >= 1)
            c = immediate_cost(s, a, params.delta_max)
            rows.append(TraceRow(t, s.b, r, s.delta, s.b_tilde, row, col, a, d, c))
            if track_belief:
                beliefs.append(beta)
            b_next = battery_step(s.b, e, d, params.B)
            delta_next = aoi_step(s.delta, d, params.delta_max)
            bt_next = s.b if d else s.b_tilde
            obs = Observation(0, delta_next, bt_next)
            row, col = belief_tracker_step((row, col), a, obs, M)
            if track_belief:
                beta = update_belief(beta, a, obs, params.lam)
            s = EnvState(b_next, 0, delta_next, bt_next)
            t += 1
    return (rows, beliefs) if track_belief else rows


def write_trace_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TraceRow._fields)
        w.writerows(rows)
