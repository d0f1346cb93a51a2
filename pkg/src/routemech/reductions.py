"""Black-box wrappers that turn optimal allocation algorithms into
strategy-proof mechanisms.

The central move: run the optimizer once on the reported profile, read off the
maxmin value ``u*``, then lower every agent down to ``u*`` (or to their outside
option, whichever is higher) using a utility reducer.  Because nobody can end
up above the maxmin level, underreporting — which only shrinks the feasible
set — can never pay off.  The serial variant needs no wrapping at all: an
algorithm that lexicographically maximizes the utility profile is already a
mechanism, and the weighted-contribution ordering makes it order envy-free on
top.

Every mechanism here is a pure function of (environment, profile); concurrent
runs over disjoint profiles are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .environment import Environment, _invert_increasing

# Two utility values within this of each other count as equal; chosen to sit
# comfortably above the LP solver's noise floor.
UTILITY_TOL = 1e-6


class AlgorithmContractError(RuntimeError):
    """A black-box algorithm returned an outcome that breaks its promises."""


class ReducerContractError(RuntimeError):
    """A utility reducer failed to hit its target or disturbed other agents."""


class InfeasibleProfileError(RuntimeError):
    """No outcome satisfies the constraints for the reported profile."""


@dataclass
class BlackBoxAlgorithm:
    """An allocation optimizer used strictly as an oracle.

    ``run(profile, public_info, *extra)`` must return an outcome that is
    feasible for the profile and optimal for the declared objective
    (``"maxmin"``, ``"transformed-maxmin"`` or ``"serial"``).  Feasibility is
    re-checked against the environment on every invocation; ``calls`` counts
    invocations so tests can pin the oracle budget.
    """

    run: Callable[..., Any]
    objective: str
    calls: int = 0

    def invoke(self, env: Environment, profile: np.ndarray, *extra: Any) -> Any:
        outcome = self.run(profile, env.public_info, *extra)
        self.calls += 1
        if not env.is_feasible(profile, outcome):
            raise AlgorithmContractError(
                f"{self.objective} algorithm returned an infeasible outcome"
            )
        return outcome


@dataclass
class UtilityReducer:
    """Constructive continuity: lower one agent's utility without side effects.

    ``reduce(outcome, agent, target)`` must return an outcome, feasible for the
    same profile, where ``agent`` sits exactly at ``target`` and every other
    agent's utility is unchanged.  The mechanisms verify that contract after
    every call.
    """

    reduce: Callable[[Any, int, float], Any]
    calls: int = 0


@dataclass(frozen=True)
class MechanismOutcome:
    """Result of one mechanism run: the outcome, its utilities, and trace data."""

    outcome: Any
    utility_profile: np.ndarray
    objective_value: float
    metadata: dict[str, Any] = field(default_factory=dict)


def _checked_reduce(
    env: Environment,
    reducer: UtilityReducer,
    profile: np.ndarray,
    outcome: Any,
    agent: int,
    target: float,
) -> Any:
    before = env.utilities(outcome)
    reduced = reducer.reduce(outcome, agent, target)
    reducer.calls += 1
    after = env.utilities(reduced)
    if abs(after[agent] - target) > UTILITY_TOL:
        raise ReducerContractError(
            f"reducer missed target for agent {agent}: wanted {target:g}, got {after[agent]:g}"
        )
    others = np.delete(np.arange(env.n), agent)
    if others.size and np.max(np.abs(after[others] - before[others])) > UTILITY_TOL:
        raise ReducerContractError(f"reducer disturbed other agents while lowering {agent}")
    if not env.is_feasible(profile, reduced):
        raise ReducerContractError(f"reducer left an infeasible outcome for agent {agent}")
    return reduced


def maxmin_mechanism(
    env: Environment,
    alg: BlackBoxAlgorithm,
    reducer: UtilityReducer,
    profile: np.ndarray,
) -> MechanismOutcome:
    """Group strategy-proof wrapper around a maxmin-optimal algorithm.

    Calls ``alg`` exactly once, then lowers every agent to the maxmin value
    ``u*`` of that run, which preserves the objective and removes any reward
    for misreporting.
    """
    profile = np.asarray(profile, dtype=float)
    outcome = alg.invoke(env, profile)
    u_star = float(np.min(env.utilities(outcome)))
    for agent in range(env.n):
        outcome = _checked_reduce(env, reducer, profile, outcome, agent, u_star)
    return MechanismOutcome(
        outcome=outcome,
        utility_profile=env.utilities(outcome),
        objective_value=u_star,
        metadata={"algorithm_calls": 1, "reducer_calls": env.n, "mechanism": "maxmin"},
    )


def transformed_maxmin_mechanism(
    env: Environment,
    alg: BlackBoxAlgorithm,
    reducer: UtilityReducer,
    transforms: Sequence[Callable[[float], float]],
    profile: np.ndarray,
) -> MechanismOutcome:
    """Same wrapper for an algorithm maximizing ``min_i f_i(u_i)``.

    ``u*`` lives in transformed space, so each agent is lowered to
    ``f_i^{-1}(u*)``; identity transforms make this coincide with
    :func:`maxmin_mechanism`.
    """
    profile = np.asarray(profile, dtype=float)
    if len(transforms) != env.n:
        raise ValueError(f"{len(transforms)} transforms for {env.n} agents")
    outcome = alg.invoke(env, profile)
    us = env.utilities(outcome)
    u_star = float(min(f(u) for f, u in zip(transforms, us)))
    for agent, f in enumerate(transforms):
        try:
            target = _invert_increasing(f, u_star, hi=float(us[agent]))
        except ValueError as exc:
            raise ReducerContractError(
                f"cannot invert transform for agent {agent} at level {u_star:g}: {exc}"
            ) from exc
        outcome = _checked_reduce(env, reducer, profile, outcome, agent, target)
    final = env.utilities(outcome)
    worst = max(abs(f(u) - u_star) for f, u in zip(transforms, final))
    if worst > UTILITY_TOL:
        raise ReducerContractError(f"transformed utilities not equalized (off by {worst:g})")
    return MechanismOutcome(
        outcome=outcome,
        utility_profile=final,
        objective_value=u_star,
        metadata={
            "algorithm_calls": 1,
            "reducer_calls": env.n,
            "mechanism": "transformed-maxmin",
        },
    )


def maxmin_ir_mechanism(
    env: Environment,
    alg_ir: BlackBoxAlgorithm,
    reducer: UtilityReducer,
    profile: np.ndarray,
) -> MechanismOutcome:
    """Strategy-proof wrapper for maxmin subject to outside options.

    ``alg_ir`` must already respect every agent's baseline.  Agents are lowered
    to ``max(u*, baseline_i)``: nobody drops below their outside option, and
    nobody keeps more than the maxmin value otherwise.
    """
    profile = np.asarray(profile, dtype=float)
    outcome = alg_ir.invoke(env, profile)
    us = env.utilities(outcome)
    floors = env.ir_baseline
    if np.any(us < floors - UTILITY_TOL):
        bad = int(np.argmax(floors - us))
        raise AlgorithmContractError(
            f"algorithm output violates agent {bad}'s baseline "
            f"({us[bad]:g} < {floors[bad]:g})"
        )
    u_star = float(np.min(us))
    for agent in range(env.n):
        target = max(u_star, float(floors[agent]))
        outcome = _checked_reduce(env, reducer, profile, outcome, agent, target)
    return MechanismOutcome(
        outcome=outcome,
        utility_profile=env.utilities(outcome),
        objective_value=u_star,
        metadata={"algorithm_calls": 1, "reducer_calls": env.n, "mechanism": "maxmin-ir"},
    )


def serial_mechanism(
    env: Environment,
    serial_alg: BlackBoxAlgorithm,
    profile: np.ndarray,
    ordering: Sequence[int],
) -> MechanismOutcome:
    """Pass-through for a serially-optimizing algorithm.

    An algorithm that returns the lexicographically largest utility profile
    under ``ordering`` is itself strategy-proof and individually rational, so
    no wrapping transformation is applied; feasibility and the baselines are
    merely re-verified.  Strategy-proofness additionally assumes each agent's
    utility varies continuously in their own report, which cannot be checked
    from black-box access and is recorded in the metadata instead.
    """
    profile = np.asarray(profile, dtype=float)
    q = _as_permutation(ordering, env.n)
    outcome = serial_alg.invoke(env, profile, q)
    us = env.utilities(outcome)
    if np.any(us < env.ir_baseline - UTILITY_TOL):
        bad = int(np.argmax(env.ir_baseline - us))
        raise AlgorithmContractError(
            f"serial output violates agent {bad}'s baseline "
            f"({us[bad]:g} < {env.ir_baseline[bad]:g})"
        )
    return MechanismOutcome(
        outcome=outcome,
        utility_profile=us,
        objective_value=float(np.min(us)),
        metadata={
            "algorithm_calls": 1,
            "reducer_calls": 0,
            "mechanism": "serial",
            "ordering": q,
            "assumes_continuous_report_response": True,
        },
    )


def oef_ordering(reports: Sequence[float], weights: Sequence[float]) -> np.ndarray:
    """Serve order by weighted contribution: sort ``weights * reports`` descending.

    Strictly larger weighted reports strictly precede smaller ones; exact ties
    break by ascending agent index, which keeps the ordering deterministic.
    Returns a permutation of ``0..n-1``.
    """
    s = np.asarray(reports, dtype=float)
    l = np.asarray(weights, dtype=float)
    if s.shape != l.shape:
        raise ValueError("reports and weights must have the same length")
    if np.any(l <= 0):
        raise ValueError("weights must be positive")
    return np.argsort(-l * s, kind="stable")


def _as_permutation(ordering: Sequence[int], n: int) -> np.ndarray:
    q = np.asarray(ordering, dtype=int)
    if sorted(q.tolist()) != list(range(n)):
        raise ValueError(f"{ordering!r} is not a permutation of 0..{n - 1}")
    return q
