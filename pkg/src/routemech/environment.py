"""Abstract resource-allocation environments.

An :class:`Environment` bundles everything a mechanism needs to know about a
setting: how many agents there are, which outcomes are feasible for a reported
profile, and how outcomes translate into per-agent utilities.  Utilities may
depend only on the outcome and public information, never on the private
reports — that separation is what the strategy-proofness wrappers rely on.

:func:`make_commons_environment` builds a deliberately small reference
setting (a shared divisible pool fed by everyone's contributions) that the
test-suite and demos use to exercise the generic machinery without dragging
in the network model.

Environments are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

# Absolute slack used by boolean feasibility oracles so that points produced
# by floating-point optimizers are not rejected over dust.
FEASIBILITY_SLACK = 1e-9


class InfeasibleOutcomeError(ValueError):
    """An outcome was evaluated against a profile it is not feasible for."""


class NonMonotoneTransformError(ValueError):
    """A supplied utility transform failed a strict-monotonicity spot check."""


def _scalar_order(agent: int, a: Any, b: Any) -> bool:
    return bool(a <= b)


@dataclass(frozen=True)
class Environment:
    """A resource-allocation setting.

    ``feasibility(profile, public_info, outcome)`` decides membership of the
    feasible set for the reported profile.  ``utility(outcome, public_info)``
    returns one value per agent and must not look at the profile.
    ``empty_outcome`` is a universally feasible outcome that no agent prefers
    to anything else.  ``ir_baseline`` holds each agent's outside option
    (``-inf`` when agents have no outside option).  ``type_order`` realizes
    the per-agent report ordering; the default is numeric ``<=``.

    ``outcome_sampler(profile, public_info, rng)``, when present, draws a
    feasible outcome for the profile; the sampled-property checks need it.
    """

    n: int
    public_info: Any
    feasibility: Callable[[np.ndarray, Any, Any], bool]
    utility: Callable[[Any, Any], np.ndarray]
    empty_outcome: Any
    ir_baseline: np.ndarray
    type_order: Callable[[int, Any, Any], bool] = _scalar_order
    outcome_sampler: Callable[[np.ndarray, Any, np.random.Generator], Any] | None = None

    def utilities(self, outcome: Any) -> np.ndarray:
        return np.asarray(self.utility(outcome, self.public_info), dtype=float)

    def is_feasible(self, profile: np.ndarray, outcome: Any) -> bool:
        return bool(self.feasibility(profile, self.public_info, outcome))


def evaluate_min_utility(env: Environment, outcome: Any, profile: np.ndarray) -> float:
    """Worst-off agent's utility; rejects outcomes infeasible for ``profile``."""
    if not env.is_feasible(profile, outcome):
        raise InfeasibleOutcomeError("outcome is not feasible for the given profile")
    return float(np.min(env.utilities(outcome)))


def evaluate_transformed_min(
    env: Environment,
    outcome: Any,
    transforms: Sequence[Callable[[float], float]],
) -> float:
    """Min over agents of ``transforms[i](utility_i)``.

    Each transform must be strictly increasing; every call spot-checks that on
    a small grid spanning the observed utilities and rejects transforms that
    fail, since a non-monotone transform silently breaks the maxmin wrappers.
    """
    us = env.utilities(outcome)
    if len(transforms) != env.n:
        raise ValueError(f"{len(transforms)} transforms for {env.n} agents")
    finite = us[np.isfinite(us)]
    if finite.size:
        lo, hi = float(np.min(finite)) - 1.0, float(np.max(finite)) + 1.0
        grid = np.linspace(lo, hi, 5)
        for i, f in enumerate(transforms):
            vals = [f(g) for g in grid]
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise NonMonotoneTransformError(
                    f"transform for agent {i} is not strictly increasing on [{lo:g}, {hi:g}]"
                )
    return float(min(f(u) for f, u in zip(transforms, us)))


@dataclass(frozen=True)
class MonotonicityReport:
    """Outcome of a sampled resource-monotonicity check (evidence, not proof)."""

    pairs_tested: int
    outcomes_tested: int
    violations: list[tuple[np.ndarray, np.ndarray, Any]]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_resource_monotonicity(
    env: Environment,
    profile_samples: Sequence[np.ndarray],
    shrink_samples: Sequence[np.ndarray],
    seed: int = 0,
    outcomes_per_pair: int = 4,
) -> MonotonicityReport:
    """Hunt for outcomes feasible under a shrunken profile but not the original.

    ``shrink_samples[k]`` must be agent-wise below ``profile_samples[k]`` under
    the environment's type order.  For each pair, a handful of outcomes
    feasible under the shrunken profile are sampled and re-tested under the
    original profile; any that fail are returned as violations.
    """
    if len(profile_samples) != len(shrink_samples):
        raise ValueError("profile_samples and shrink_samples must pair up")
    if env.outcome_sampler is None:
        raise ValueError("environment has no outcome sampler")
    rng = np.random.default_rng(seed)
    violations: list[tuple[np.ndarray, np.ndarray, Any]] = []
    tested = 0
    for profile, shrunk in zip(profile_samples, shrink_samples):
        profile = np.asarray(profile, dtype=float)
        shrunk = np.asarray(shrunk, dtype=float)
        for i in range(env.n):
            if not env.type_order(i, shrunk[i], profile[i]):
                raise ValueError(f"shrunken profile exceeds original for agent {i}")
        for _ in range(outcomes_per_pair):
            outcome = env.outcome_sampler(shrunk, env.public_info, rng)
            if not env.is_feasible(shrunk, outcome):
                continue
            tested += 1
            if not env.is_feasible(profile, outcome):
                violations.append((profile.copy(), shrunk.copy(), outcome))
    return MonotonicityReport(
        pairs_tested=len(profile_samples), outcomes_tested=tested, violations=violations
    )


# ---------------------------------------------------------------------------
# Reference environment: a shared divisible pool.
#
# Each agent contributes s_i >= 0 units to a common pool; an outcome grants
# y_i >= 0 back to each agent with sum(y) <= sum(s), and u_i = y_i.  Tiny,
# fully analyzable, and exercises every generic code path.
# ---------------------------------------------------------------------------


def _commons_feasible(profile: np.ndarray, public: Any, grants: Any) -> bool:
    y = np.asarray(grants, dtype=float)
    if y.shape != np.shape(profile):
        return False
    slack = FEASIBILITY_SLACK * (1.0 + float(np.sum(profile)))
    return bool(np.all(y >= -slack) and np.sum(y) <= np.sum(profile) + slack)


def _commons_sampler(profile: np.ndarray, public: Any, rng: np.random.Generator) -> np.ndarray:
    n = len(profile)
    weights = rng.random(n)
    total = rng.random() * float(np.sum(profile))
    s = weights.sum()
    return weights / s * total if s > 0 else np.zeros(n)


def make_commons_environment(n: int) -> Environment:
    """Shared-pool reference environment with ``n`` agents (no outside option)."""
    return Environment(
        n=n,
        public_info=None,
        feasibility=_commons_feasible,
        utility=lambda grants, public: np.asarray(grants, dtype=float),
        empty_outcome=np.zeros(n),
        ir_baseline=np.full(n, -np.inf),
        outcome_sampler=_commons_sampler,
    )


def commons_equal_split(profile: np.ndarray, public: Any = None) -> np.ndarray:
    """The pool's maxmin optimum: everyone gets ``sum(s)/n`` exactly."""
    profile = np.asarray(profile, dtype=float)
    n = len(profile)
    return np.full(n, float(np.sum(profile)) / n)


def commons_serial_split(
    profile: np.ndarray, public: Any, ordering: Sequence[int]
) -> np.ndarray:
    """Lexicographically largest grant profile under ``ordering``: the first
    agent takes the whole pool."""
    profile = np.asarray(profile, dtype=float)
    grants = np.zeros(len(profile))
    grants[ordering[0]] = float(np.sum(profile))
    return grants


def commons_reduce_grant(grants: np.ndarray, agent: int, target: float) -> np.ndarray:
    """Lower one agent's grant (hence utility) to ``target``, others untouched."""
    out = np.asarray(grants, dtype=float).copy()
    out[agent] = target
    return out


def _invert_increasing(
    f: Callable[[float], float], value: float, hi: float, tol: float = 1e-12
) -> float:
    """Solve ``f(x) = value`` for x <= hi, assuming f strictly increasing."""
    if f(hi) < value:
        raise ValueError("target above transform range")
    lo, step = hi, 1.0
    for _ in range(200):
        lo = hi - step
        if f(lo) <= value:
            break
        step *= 2.0
    else:
        raise ValueError("target below transform range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) <= value:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * (1.0 + abs(lo)):
            break
    return 0.5 * (lo + hi)


def commons_transformed_split(
    transforms: Sequence[Callable[[float], float]],
) -> Callable[[np.ndarray, Any], np.ndarray]:
    """Pool allocator maximizing ``min_i f_i(y_i)`` for strictly increasing f_i.

    Bisects on the achieved level t: level t needs grant
    ``y_i = max(0, f_i^{-1}(t))`` per agent, feasible iff the grants fit the
    pool.  Returns the minimal grants at the best achievable level.
    """

    def run(profile: np.ndarray, public: Any = None) -> np.ndarray:
        profile = np.asarray(profile, dtype=float)
        total = float(np.sum(profile))
        n = len(profile)

        def grants_for(t: float) -> np.ndarray:
            y = np.zeros(n)
            for i, f in enumerate(transforms):
                if f(0.0) < t:
                    y[i] = _invert_increasing(f, t, hi=max(total, 1.0))
            return y

        t_lo = min(f(0.0) for f in transforms)
        t_hi = min(f(total) for f in transforms)
        if grants_for(t_hi).sum() <= total:
            return grants_for(t_hi)
        for _ in range(200):
            mid = 0.5 * (t_lo + t_hi)
            if grants_for(mid).sum() <= total:
                t_lo = mid
            else:
                t_hi = mid
            if t_hi - t_lo <= 1e-12 * (1.0 + abs(t_lo)):
                break
        return grants_for(t_lo)

    return run
