"""Empirical audits of mechanism properties.

None of the guarantees here are provable by sampling — the report spaces are
continuous — so these audits are falsification attempts: they search for a
profitable misreport (or a baseline violation, or a lexicographically better
assignment) over a seeded mix of grid and random deviations and report
anything they find.  An empty violation list is evidence, not proof; a
non-empty one is a reproducible counterexample, replayable from the recorded
profiles.

Only underreports are searched: inflating a report risks an infeasible
allocation, which the center can detect outright, so it sits outside the
solution concept.

Sample evaluations are independent (safe to parallelize externally); reports
are assembled in sample order, so a fixed seed reproduces a run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .reductions import UTILITY_TOL, oef_ordering
from .routing import (
    FlowAssignment,
    RoutingInstance,
    _LpTemplate,
    ir_floors,
    maxmin_route_mechanism,
    oef_route_mechanism,
    replace_capacities,
    serial_route_mechanism,
    solve_lp,
    utilities,
)
from .lp import LpStatus

# Mechanisms driven from inside an audit run their delay search at this
# tolerance: far below UTILITY_TOL, so search quantization cannot masquerade
# as a profitable deviation.
AUDIT_SEARCH_TOL = 1e-8

_GRID_POINTS = 10


@dataclass(frozen=True)
class Violation:
    """One reproducible counterexample: who deviated, to what, with what gain."""

    agents: tuple[int, ...]
    profile: np.ndarray
    deviation: np.ndarray
    utility_before: np.ndarray
    utility_after: np.ndarray
    gap: float


@dataclass(frozen=True)
class DeviationReport:
    """Result of one audit; ``violations`` empty means nothing was found."""

    kind: str
    tested_profiles: int
    violations: tuple[Violation, ...]
    errors: tuple[str, ...]
    max_gap: float
    budget: dict[str, Any]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class AuditSubject:
    """A mechanism staged for auditing.

    ``profile`` holds the truthful reports, ``floors`` the lowest admissible
    report per agent (deviations are drawn from ``[floor_i, profile_i]``), and
    ``run(reports)`` evaluates the mechanism into per-agent utilities.
    ``ir_floors`` carries the outside options when the setting has them.
    """

    profile: np.ndarray
    floors: np.ndarray
    run: Callable[[np.ndarray], np.ndarray]
    ir_floors: np.ndarray | None = None
    label: str = ""


def routing_subject(
    inst: RoutingInstance,
    mechanism: str = "maxmin",
    order: Sequence[int] | None = None,
    weights: Sequence[float] | None = None,
    tol: float = AUDIT_SEARCH_TOL,
) -> AuditSubject:
    """Stage a routing mechanism (``maxmin``, ``serial`` or ``oef``).

    Deviation floors are the direct bandwidths: reporting less than the
    public direct edge is indistinguishable from it (reports get clamped).
    """
    if mechanism == "maxmin":
        def run(v: np.ndarray) -> np.ndarray:
            inst_v = replace_capacities(inst, v)
            fa, _ = maxmin_route_mechanism(inst_v, tol=tol)
            return utilities(inst_v, fa)
    elif mechanism == "serial":
        q = np.arange(inst.n) if order is None else np.asarray(order, dtype=int)

        def run(v: np.ndarray) -> np.ndarray:
            inst_v = replace_capacities(inst, v)
            fa, _ = serial_route_mechanism(inst_v, q)
            return utilities(inst_v, fa)
    elif mechanism == "oef":
        w = np.ones(inst.n) if weights is None else np.asarray(weights, dtype=float)

        def run(v: np.ndarray) -> np.ndarray:
            inst_v = replace_capacities(inst, v)
            fa, _ = oef_route_mechanism(inst_v, w)
            return utilities(inst_v, fa)
    else:
        raise ValueError(f"unknown routing mechanism {mechanism!r}")
    return AuditSubject(
        profile=inst.capacities.astype(float).copy(),
        floors=inst.direct_bandwidth.astype(float).copy(),
        run=run,
        ir_floors=ir_floors(inst),
        label=f"routing/{mechanism}",
    )


def commons_subject(
    profile: Sequence[float], run: Callable[[np.ndarray], np.ndarray], label: str = "commons"
) -> AuditSubject:
    """Stage a shared-pool mechanism; reports can drop all the way to zero."""
    p = np.asarray(profile, dtype=float)
    return AuditSubject(
        profile=p, floors=np.zeros(len(p)), run=run, ir_floors=None, label=label
    )


def rank_reward_mechanism(profile: np.ndarray) -> np.ndarray:
    """Deliberately manipulable pool split used as an audit sensitivity control.

    The pool is divided by ascending-report rank: the smallest reporter gets
    the largest share.  Shaving a report below a rival's jumps a whole rank
    while shrinking the pool only slightly, so underreporting pays — any
    sound audit must be able to find that.
    """
    p = np.asarray(profile, dtype=float)
    n = len(p)
    pool = float(np.sum(p))
    order = np.argsort(p, kind="stable")
    weights = np.empty(n)
    weights[order] = np.arange(n, 0, -1, dtype=float)
    return pool * weights / weights.sum()


def _single_agent_samples(
    subject: AuditSubject, budget: int, rng: np.random.Generator
) -> list[tuple[int, float]]:
    """Grid of underreports per agent, then seeded random fill, ``budget`` total."""
    n = len(subject.profile)
    samples: list[tuple[int, float]] = []
    for i in range(n):
        lo, hi = float(subject.floors[i]), float(subject.profile[i])
        if hi - lo <= 0:
            continue
        for val in np.linspace(lo, hi, _GRID_POINTS):
            samples.append((i, float(val)))
    while len(samples) < budget:
        i = int(rng.integers(n))
        lo, hi = float(subject.floors[i]), float(subject.profile[i])
        samples.append((i, float(rng.uniform(lo, hi)) if hi > lo else hi))
    return samples[:budget]


def audit_strategyproofness(
    subject: AuditSubject, budget: int = 100, seed: int = 0
) -> DeviationReport:
    """Search single-agent underreports for a strictly profitable one."""
    rng = np.random.default_rng(seed)
    base = subject.run(subject.profile)
    violations: list[Violation] = []
    errors: list[str] = []
    max_gap = 0.0
    samples = _single_agent_samples(subject, budget, rng)
    for i, val in samples:
        deviant = subject.profile.copy()
        deviant[i] = val
        try:
            after = subject.run(deviant)
        except Exception as exc:  # noqa: BLE001 - mechanism failure is data here
            errors.append(f"agent {i} report {val:g}: {exc}")
            continue
        gap = float(after[i] - base[i])
        max_gap = max(max_gap, gap)
        if gap > UTILITY_TOL:
            violations.append(
                Violation((i,), subject.profile.copy(), deviant, base.copy(), after.copy(), gap)
            )
    return DeviationReport(
        kind="sp",
        tested_profiles=len(samples),
        violations=tuple(violations),
        errors=tuple(errors),
        max_gap=max_gap,
        budget={"budget": budget, "seed": seed, "subject": subject.label},
    )


def audit_group_sp(
    subject: AuditSubject, budget: int = 200, seed: int = 0
) -> DeviationReport:
    """Search joint underreports; a violation is any agent strictly improving.

    Coalitions cover proper subsets as well as everyone-at-once (the latter
    subsumes the former as a definition, but subsets are cheap extra
    coverage).  Sample 0 is the identity coalition as a sanity anchor.
    """
    rng = np.random.default_rng(seed)
    base = subject.run(subject.profile)
    n = len(subject.profile)
    violations: list[Violation] = []
    errors: list[str] = []
    max_gap = 0.0
    tested = 0
    for k in range(budget):
        if k == 0:
            deviant = subject.profile.copy()
            coalition: tuple[int, ...] = ()
        else:
            mask = rng.random(n) < 0.5
            if not mask.any():
                mask[int(rng.integers(n))] = True
            deviant = subject.profile.copy()
            for i in np.nonzero(mask)[0]:
                lo, hi = float(subject.floors[i]), float(subject.profile[i])
                deviant[i] = rng.uniform(lo, hi) if hi > lo else hi
            coalition = tuple(int(i) for i in np.nonzero(mask)[0])
        tested += 1
        try:
            after = subject.run(deviant)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"coalition {coalition}: {exc}")
            continue
        gaps = after - base
        gap = float(np.max(gaps))
        max_gap = max(max_gap, gap)
        if gap > UTILITY_TOL:
            violations.append(
                Violation(
                    coalition, subject.profile.copy(), deviant, base.copy(), after.copy(), gap
                )
            )
    return DeviationReport(
        kind="gsp",
        tested_profiles=tested,
        violations=tuple(violations),
        errors=tuple(errors),
        max_gap=max_gap,
        budget={"budget": budget, "seed": seed, "subject": subject.label},
    )


def audit_ir(subject: AuditSubject, budget: int = 100, seed: int = 0) -> DeviationReport:
    """Check the outside-option floor at sampled truthful profiles.

    Each sample is treated as the truth (drawn agent-wise from
    ``[floor_i, profile_i]``, the stated profile first); utilities must not
    fall below the baselines.
    """
    if subject.ir_floors is None:
        raise ValueError("subject has no outside-option baselines to audit")
    rng = np.random.default_rng(seed)
    n = len(subject.profile)
    violations: list[Violation] = []
    errors: list[str] = []
    max_gap = 0.0
    tested = 0
    for k in range(budget):
        if k == 0:
            prof = subject.profile.copy()
        else:
            prof = np.array(
                [
                    rng.uniform(float(subject.floors[i]), float(subject.profile[i]))
                    if subject.profile[i] > subject.floors[i]
                    else float(subject.profile[i])
                    for i in range(n)
                ]
            )
        tested += 1
        try:
            us = subject.run(prof)
        except Exception as exc:  # noqa: BLE001
            errors.append(f"profile {k}: {exc}")
            continue
        gaps = subject.ir_floors - us
        gap = float(np.max(gaps))
        max_gap = max(max_gap, gap)
        if gap > UTILITY_TOL:
            worst = int(np.argmax(gaps))
            violations.append(
                Violation((worst,), prof.copy(), prof.copy(), us.copy(), us.copy(), gap)
            )
    return DeviationReport(
        kind="ir",
        tested_profiles=tested,
        violations=tuple(violations),
        errors=tuple(errors),
        max_gap=max_gap,
        budget={"budget": budget, "seed": seed, "subject": subject.label},
    )


def _lex_greater(a: np.ndarray, b: np.ndarray, tol: float) -> tuple[bool, int, float]:
    """Does ``a`` lexicographically beat ``b`` beyond ``tol``?  (flag, pos, gap)."""
    for k in range(len(a)):
        d = float(a[k] - b[k])
        if d > tol:
            return True, k, d
        if d < -tol:
            return False, k, 0.0
    return False, -1, 0.0


def audit_serial_optimality(
    inst: RoutingInstance,
    assignment: FlowAssignment,
    ordering: Sequence[int],
    budget: int = 500,
    seed: int = 0,
) -> DeviationReport:
    """Try to lexicographically dominate a serial outcome.

    Challenger assignments come from the floor-respecting feasible polytope
    via linear programs with random objectives over the totals; each gets its
    utility profile read in ``ordering`` and compared lexicographically
    against the candidate's.
    """
    rng = np.random.default_rng(seed)
    q = np.asarray(ordering, dtype=int)
    template = _LpTemplate(inst, include_floor=True)
    cand = utilities(inst, assignment)[q]
    violations: list[Violation] = []
    errors: list[str] = []
    max_gap = 0.0
    tested = 0
    for k in range(budget):
        coeffs = rng.uniform(-1.0, 1.0, inst.n)
        sol = solve_lp(template.objective_lp(template.total_objective(coeffs)))
        if sol.status is not LpStatus.OPTIMAL:
            errors.append(f"challenger LP {k}: {sol.status.value}")
            continue
        tested += 1
        challenger = FlowAssignment.from_values(inst, sol.values)
        ordered = utilities(inst, challenger)[q]
        beats, pos, gap = _lex_greater(ordered, cand, UTILITY_TOL)
        if beats:
            max_gap = max(max_gap, gap)
            violations.append(
                Violation(
                    (int(q[pos]),),
                    inst.capacities.copy(),
                    coeffs,
                    cand.copy(),
                    ordered.copy(),
                    gap,
                )
            )
    return DeviationReport(
        kind="serial",
        tested_profiles=tested,
        violations=tuple(violations),
        errors=tuple(errors),
        max_gap=max_gap,
        budget={"budget": budget, "seed": seed, "subject": "routing/serial-optimality"},
    )


def check_oef_order(
    ordering: Sequence[int], reports: Sequence[float], weights: Sequence[float]
) -> bool:
    """True iff ``ordering`` serves weighted contributions in descending order
    with exact ties broken by ascending agent index."""
    expected = oef_ordering(reports, weights)
    return list(map(int, ordering)) == list(map(int, expected))
