"""Glue that turns parameter points into solved policies and cost estimates."""
from __future__ import annotations

from dataclasses import dataclass

from .baselines import ExactMdpPolicy, exact_mdp_solve, greedy_policy, mle_policy
from .belief import TruncatedBeliefSpace, enumerate_truncated_space
from .model import ModelParams
from .multisensor import MultiModel, bisect_multiplier, multi_simulate
from .simulator import EpisodeConfig, simulate
from .solver import SolveResult, SparseKernel, build_kernel, rvia_solve

SINGLE_POLICIES = ("pomdp", "greedy", "mle", "exact")


@dataclass(frozen=True)
class SolvedInstance:
    params: ModelParams
    space: TruncatedBeliefSpace
    kernel: SparseKernel
    result: SolveResult
    exact: ExactMdpPolicy | None = None

    def policy(self, name: str):
        if name == "pomdp":
            return self.result.as_policy()
        if name == "greedy":
            return greedy_policy(self.params)
        if name == "mle":
            return mle_policy(self.exact, self.space)
        if name == "exact":
            return self.exact.as_policy()
        raise ValueError(f"unknown policy {name!r}; choose from {SINGLE_POLICIES}")


def solve_instance(params: ModelParams, beta0=None, with_exact: bool = True,
                   max_iter: int = 100_000, tau: float = 1.0) -> SolvedInstance:
    space = enumerate_truncated_space(params, beta0)
    kernel = build_kernel(space, params)
    result = rvia_solve(kernel, params.theta, max_iter=max_iter, tau=tau)
    exact = exact_mdp_solve(params, max_iter=max_iter, tau=tau) if with_exact else None
    return SolvedInstance(params, space, kernel, result, exact)


def evaluate_point(params: ModelParams, policies, config: EpisodeConfig, **solve_kw) -> list[dict]:
    """Solve one parameter point and simulate each named policy on it."""
    inst = solve_instance(params, with_exact=any(p in ("mle", "exact") for p in policies), **solve_kw)
    out = []
    for name in policies:
        est = simulate(inst.policy(name), params, config)
        solver_cost = {"pomdp": inst.result.c_star,
                       "exact": inst.exact.c_star_exact if inst.exact else None}.get(name)
        out.append({"policy": name, "M": params.M, "mean": est.mean, "stderr": est.stderr,
                    "command_rate": est.command_rate, "solver_cost": solver_cost})
    return out


def evaluate_multi(model: MultiModel, policies, config: EpisodeConfig, tol: float = 1e-3) -> list[dict]:
    relaxed = exact_relaxed = None
    if any(p in ("relax-truncate", "lower-bound") for p in policies):
        relaxed = bisect_multiplier(model, tol)
    if "exact-battery-relax-truncate" in policies:
        exact_relaxed = bisect_multiplier(model, tol, exact=True)
    out = []
    for name in policies:
        rp = exact_relaxed if name.startswith("exact") else relaxed
        est = multi_simulate(model, name, config, rp)
        out.append({"K": model.K, "gamma": model.gamma, "N": model.N, "policy": name,
                    "mean": est.mean, "stderr": est.stderr,
                    "commands_per_slot": est.commands_per_slot, "max_commands": est.max_commands,
                    "mu_star": rp.mu_star if rp is not None else None,
                    "relaxed_cost": rp.relaxed_cost(model) if rp is not None else None})
    return out
