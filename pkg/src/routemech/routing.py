"""Centralized multi-commodity route allocation.

Model: ``n`` users download files from ``m`` servers.  User ``i`` wants a file
of size ``size_i`` from server ``dest_i`` and always has a direct server edge
of bandwidth ``b[i, dest_i] > 0``.  Users may also relay for each other over
uncapacitated peer edges; each user's reported vertex capacity ``v_i`` caps
the total traffic through that user (their own server-edge draws for anyone,
plus all peer inflow).  A user's utility is the negated download delay
``-size_i / x_i`` where ``x_i`` is their total allotted flow.

Peer edges are stored in data-flow direction: ``(u, w)`` carries bytes from
``u`` to ``w``.  When reading a topology off a picture that narrates routes
from the downloader toward the server, reverse each hop before writing it
down.

Flow variables follow one layout everywhere: totals ``x_i``, then draws
``x_draw[i, k]`` (commodity ``i`` pulled through ``k``'s server edge), then
per-commodity peer-edge flows ``f[i, e]``.

Everything here is a pure function of the instance; concurrent runs are safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import lp as lpmod
from .lp import EQ, GE, LE, FEAS_TOL, LinearProgram, LpStatus, solve_lp
from .environment import Environment
from .reductions import BlackBoxAlgorithm, UtilityReducer, oef_ordering

DEFAULT_SEARCH_TOL = 1e-6  # absolute tolerance on the delay bound D
SEARCH_ITER_CAP = 200

# Boolean feasibility (environment oracle) accepts residuals up to this; it
# sits above FEAS_TOL so points that the solver certifies are never rejected.
ASSIGNMENT_TOL = 2.0 * FEAS_TOL

_EPS = 1e-9  # flow below this is treated as zero by the rewrite routines


class InstanceValidationError(ValueError):
    """One or more structural problems with a routing instance."""

    def __init__(self, errors: Sequence[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class InternalConsistencyError(RuntimeError):
    """A follow-up solve that must succeed did not (tolerances too loose)."""


class ContractViolationError(RuntimeError):
    """A rewrite that is guaranteed to exist could not be carried out."""


@dataclass(frozen=True)
class RoutingInstance:
    """The public network plus the reported private vertex capacities.

    ``server_bandwidth[i, j]`` is the bandwidth of user ``i``'s edge to server
    ``j`` (0 = no edge).  ``peer_edges`` are ``(src, dst)`` user pairs in
    data-flow direction.  All indices 0-based.
    """

    num_servers: int
    dest: np.ndarray              # (n,) server index per user
    size: np.ndarray              # (n,) file sizes, > 0
    server_bandwidth: np.ndarray  # (n, m)
    peer_edges: tuple[tuple[int, int], ...]
    capacities: np.ndarray        # (n,) reported vertex capacities

    @property
    def n(self) -> int:
        return len(self.dest)

    @property
    def direct_bandwidth(self) -> np.ndarray:
        return self.server_bandwidth[np.arange(self.n), self.dest]

    def num_variables(self) -> int:
        return self.n + self.n * self.n + self.n * len(self.peer_edges)


@dataclass(frozen=True)
class FlowAssignment:
    """One feasible routing: totals, server-edge draws, peer-edge flows."""

    x: np.ndarray       # (n,) total flow per user
    x_draw: np.ndarray  # (n, n) x_draw[i, k] = commodity i via k's server edge
    f: np.ndarray       # (n, num_edges) commodity i's flow on each peer edge

    @classmethod
    def from_values(cls, inst: RoutingInstance, values: np.ndarray) -> "FlowAssignment":
        n, ne = inst.n, len(inst.peer_edges)
        return cls(
            x=values[:n].copy(),
            x_draw=values[n : n + n * n].reshape(n, n).copy(),
            f=values[n + n * n :].reshape(n, ne).copy(),
        )

    def copy(self) -> "FlowAssignment":
        return FlowAssignment(self.x.copy(), self.x_draw.copy(), self.f.copy())


@dataclass(frozen=True)
class RoutingOutcomeMeta:
    """Mechanism trace: the delay bound, the probes tried, the order used."""

    d_star: float | None
    search_trace: tuple[tuple[float, bool], ...] = ()
    ordering: np.ndarray | None = None


def validate_instance(inst: RoutingInstance) -> tuple[RoutingInstance, list[str]]:
    """Check structure, clamp under-reported capacities, normalize edges.

    Returns the validated (possibly adjusted) instance and a list of warnings.
    Hard problems — a user without a direct route, negative bandwidths or
    capacities, non-positive file sizes, bad indices, self-loops — raise
    :class:`InstanceValidationError` carrying every error found.

    A report ``v_i`` below the public direct bandwidth is indistinguishable
    from not joining beyond the direct route, and would contradict the flow
    floor; such reports are clamped up to ``b[i, dest_i]`` with a warning.
    """
    errors: list[str] = []
    warnings: list[str] = []
    n, m = inst.n, inst.num_servers
    if inst.size.shape != (n,) or inst.capacities.shape != (n,):
        errors.append("demand/capacity arrays do not match the user count")
    if inst.server_bandwidth.shape != (n, m):
        errors.append(
            f"server_bandwidth has shape {inst.server_bandwidth.shape}, expected {(n, m)}"
        )
    if errors:
        raise InstanceValidationError(errors)

    if np.any(inst.server_bandwidth < 0):
        errors.append("negative server-edge bandwidth")
    if np.any(inst.capacities < 0):
        errors.append("negative vertex capacity")
    if np.any(inst.size <= 0):
        bad = np.nonzero(inst.size <= 0)[0]
        errors.append(f"non-positive file size for user(s) {[int(i) + 1 for i in bad]}")
    if np.any((inst.dest < 0) | (inst.dest >= m)):
        errors.append("demand server index out of range")
    else:
        for i in range(n):
            if inst.server_bandwidth[i, inst.dest[i]] <= 0:
                errors.append(f"user {i + 1} has no direct route to server {inst.dest[i] + 1}")

    edges: list[tuple[int, int]] = []
    seen = set()
    for u, w in inst.peer_edges:
        if not (0 <= u < n and 0 <= w < n):
            errors.append(f"peer edge ({u + 1}, {w + 1}) endpoint out of range")
            continue
        if u == w:
            errors.append(f"peer edge ({u + 1}, {w + 1}) is a self-loop")
            continue
        if (u, w) not in seen:
            seen.add((u, w))
            edges.append((u, w))
    if errors:
        raise InstanceValidationError(errors)

    capacities = inst.capacities.astype(float).copy()
    direct = inst.server_bandwidth[np.arange(n), inst.dest]
    for i in range(n):
        if capacities[i] < direct[i]:
            warnings.append(
                f"capacity of user {i + 1} ({capacities[i]:g}) is below the direct "
                f"bandwidth {direct[i]:g}; clamped up"
            )
            capacities[i] = direct[i]

    validated = replace(inst, capacities=capacities, peer_edges=tuple(edges))
    return validated, warnings


def replace_capacities(inst: RoutingInstance, capacities: np.ndarray) -> RoutingInstance:
    """Same network, different reports; clamps to the direct-bandwidth floor."""
    v = np.maximum(np.asarray(capacities, dtype=float), inst.direct_bandwidth)
    return replace(inst, capacities=v)


# ---------------------------------------------------------------------------
# LP construction.  One template per instance holds every report-independent
# row; individual solves only swap right-hand sides and append pin rows.
# ---------------------------------------------------------------------------


class _LpTemplate:
    """Constraint rows for an instance, reusable across many solves.

    Row groups, in order: per-user totals (x_i equals the sum of its draws),
    delivery at the downloader (x_i equals the direct draw plus peer inflow),
    relay conservation (at every other vertex, commodity outflow equals inflow
    plus the local draw), vertex capacities, server-edge capacities.  Optional
    extra rows per solve: flow floors (x_i >= direct bandwidth), delay rows
    (x_i >= size_i / D), and equality pins on chosen totals.
    """

    def __init__(self, inst: RoutingInstance, include_floor: bool = True):
        self.inst = inst
        self.include_floor = include_floor
        n, ne = inst.n, len(inst.peer_edges)
        nv = inst.num_variables()
        self.nv = nv

        def xi(i: int) -> int:
            return i

        def draw(i: int, k: int) -> int:
            return n + i * n + k

        def fvar(i: int, e: int) -> int:
            return n + n * n + i * ne + e

        in_edges: list[list[int]] = [[] for _ in range(n)]
        out_edges: list[list[int]] = [[] for _ in range(n)]
        for e, (u, w) in enumerate(inst.peer_edges):
            out_edges[u].append(e)
            in_edges[w].append(e)

        rows: list[np.ndarray] = []
        senses: list[int] = []
        rhs: list[float] = []

        def add(row: np.ndarray, sense: int, b: float) -> None:
            rows.append(row)
            senses.append(sense)
            rhs.append(b)

        for i in range(n):  # totals
            row = np.zeros(nv)
            row[xi(i)] = 1.0
            for k in range(n):
                row[draw(i, k)] = -1.0
            add(row, EQ, 0.0)
        for i in range(n):  # delivery at the downloader
            row = np.zeros(nv)
            row[xi(i)] = 1.0
            row[draw(i, i)] = -1.0
            for e in in_edges[i]:
                row[fvar(i, e)] = -1.0
            add(row, EQ, 0.0)
        for i in range(n):  # relay conservation, commodity i at vertex j != i
            for j in range(n):
                if j == i:
                    continue
                row = np.zeros(nv)
                for e in out_edges[j]:
                    row[fvar(i, e)] = 1.0
                for e in in_edges[j]:
                    row[fvar(i, e)] = -1.0
                row[draw(i, j)] = -1.0
                add(row, EQ, 0.0)

        self._vertex_rows = slice(len(rows), len(rows) + n)
        for i in range(n):  # vertex capacity: all draws through i + all inflow
            row = np.zeros(nv)
            for j in range(n):
                row[draw(j, i)] = 1.0
            for j in range(n):
                for e in in_edges[i]:
                    row[fvar(j, e)] += 1.0
            add(row, LE, float(inst.capacities[i]))

        demanders: dict[int, list[int]] = {}
        for k in range(n):
            demanders.setdefault(int(inst.dest[k]), []).append(k)
        for i in range(n):  # server-edge capacity, one row per (user, used server)
            for server, ks in demanders.items():
                row = np.zeros(nv)
                for k in ks:
                    row[draw(k, i)] = 1.0
                add(row, LE, float(inst.server_bandwidth[i, server]))

        self._floor_rows = slice(len(rows), len(rows) + (n if include_floor else 0))
        if include_floor:
            for i in range(n):
                row = np.zeros(nv)
                row[xi(i)] = 1.0
                add(row, GE, float(inst.direct_bandwidth[i]))

        # delay rows, rhs patched per probe
        self._delay_rows = slice(len(rows), len(rows) + n)
        for i in range(n):
            row = np.zeros(nv)
            row[xi(i)] = 1.0
            add(row, GE, 0.0)

        self._A = np.array(rows)
        self._senses = np.array(senses, dtype=np.int8)
        self._rhs = np.array(rhs)
        self._n_base_rows = self._delay_rows.start  # rows excluding the delay block

    def feasibility_lp(self, d: float) -> LinearProgram:
        """The probe LP at delay bound ``d`` (no objective)."""
        if d <= 0:
            raise ValueError("delay bound must be positive")
        b = self._rhs.copy()
        b[self._delay_rows] = self.inst.size / d
        return LinearProgram(
            num_vars=self.nv,
            objective=None,
            A=self._A,
            senses=self._senses,
            b=b,
            lower_bounds=np.zeros(self.nv),
        )

    def pinned_lp(self, d: float, pins: np.ndarray) -> LinearProgram:
        """The probe LP at ``d`` with every total pinned to ``pins``."""
        n = self.inst.n
        pin_rows = np.zeros((n, self.nv))
        pin_rows[np.arange(n), np.arange(n)] = 1.0
        b = self._rhs.copy()
        b[self._delay_rows] = self.inst.size / d
        return LinearProgram(
            num_vars=self.nv,
            objective=None,
            A=np.vstack([self._A, pin_rows]),
            senses=np.concatenate([self._senses, np.full(n, EQ, dtype=np.int8)]),
            b=np.concatenate([b, pins]),
            lower_bounds=np.zeros(self.nv),
        )

    def objective_lp(
        self,
        objective: np.ndarray,
        fixes: Sequence[tuple[int, float]] = (),
    ) -> LinearProgram:
        """Maximize ``objective`` over the base rows, with totals in ``fixes`` pinned."""
        rows = [self._A[: self._n_base_rows]]
        senses = [self._senses[: self._n_base_rows]]
        b = [self._rhs[: self._n_base_rows]]
        if fixes:
            pin = np.zeros((len(fixes), self.nv))
            pb = np.zeros(len(fixes))
            for r, (i, val) in enumerate(fixes):
                pin[r, i] = 1.0
                pb[r] = val
            rows.append(pin)
            senses.append(np.full(len(fixes), EQ, dtype=np.int8))
            b.append(pb)
        return LinearProgram(
            num_vars=self.nv,
            objective=objective,
            A=np.vstack(rows) if len(rows) > 1 else rows[0],
            senses=np.concatenate(senses),
            b=np.concatenate(b),
            lower_bounds=np.zeros(self.nv),
        )

    def total_objective(self, coeffs: np.ndarray) -> np.ndarray:
        obj = np.zeros(self.nv)
        obj[: self.inst.n] = coeffs
        return obj


def build_feasibility_lp(
    inst: RoutingInstance, d: float, include_floor: bool = True
) -> LinearProgram:
    """Feasibility program asking: can every user finish within ``d`` seconds?

    Variables are the totals, draws and peer flows of :class:`FlowAssignment`;
    rows are the structural balance equations, both capacity groups, the flow
    floors (unless ``include_floor=False``) and the per-user delay rows
    ``x_i >= size_i / d``.  No objective.
    """
    return _LpTemplate(inst, include_floor).feasibility_lp(d)


def assignment_residuals(
    inst: RoutingInstance,
    fa: FlowAssignment,
    capacities: np.ndarray | None = None,
    delay_bound: float | None = None,
) -> dict[str, float]:
    """Largest violation of each constraint group; all ~0 for a feasible point.

    ``capacities`` overrides the instance's reports (useful when checking an
    assignment against a hypothetical profile).  ``delay_bound`` adds the
    ``x_i >= size_i / D`` group when given.
    """
    n = inst.n
    v = inst.capacities if capacities is None else np.asarray(capacities, dtype=float)
    in_edges: list[list[int]] = [[] for _ in range(n)]
    for e, (_, w) in enumerate(inst.peer_edges):
        in_edges[w].append(e)
    out_edges: list[list[int]] = [[] for _ in range(n)]
    for e, (u, _) in enumerate(inst.peer_edges):
        out_edges[u].append(e)

    res: dict[str, float] = {}
    res["totals"] = float(np.max(np.abs(fa.x - fa.x_draw.sum(axis=1)), initial=0.0))
    delivery = np.array(
        [fa.x[i] - fa.x_draw[i, i] - fa.f[i, in_edges[i]].sum() for i in range(n)]
    )
    res["delivery"] = float(np.max(np.abs(delivery), initial=0.0))
    worst = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            gap = fa.f[i, out_edges[j]].sum() - fa.f[i, in_edges[j]].sum() - fa.x_draw[i, j]
            worst = max(worst, abs(gap))
    res["conservation"] = worst
    res["floor"] = float(np.max(inst.direct_bandwidth - fa.x, initial=0.0))
    if delay_bound is not None:
        res["delay"] = float(np.max(inst.size / delay_bound - fa.x, initial=0.0))
    through = fa.x_draw.sum(axis=0) + np.array(
        [fa.f[:, in_edges[i]].sum() for i in range(n)]
    )
    res["vertex_cap"] = float(np.max(through - v, initial=0.0))
    worst = 0.0
    for i in range(n):
        for server in range(inst.num_servers):
            ks = np.nonzero(inst.dest == server)[0]
            if ks.size:
                worst = max(
                    worst, fa.x_draw[ks, i].sum() - inst.server_bandwidth[i, server]
                )
    res["edge_cap"] = worst
    res["nonneg"] = float(
        max(
            np.max(-fa.x, initial=0.0),
            np.max(-fa.x_draw, initial=0.0),
            np.max(-fa.f, initial=0.0),
        )
    )
    return res


def assignment_feasible(
    inst: RoutingInstance,
    fa: FlowAssignment,
    capacities: np.ndarray | None = None,
    include_floor: bool = False,
    tol: float = ASSIGNMENT_TOL,
) -> bool:
    res = assignment_residuals(inst, fa, capacities=capacities)
    if not include_floor:
        res = {k: r for k, r in res.items() if k != "floor"}
    return max(res.values()) <= tol


# ---------------------------------------------------------------------------
# Delay search and mechanisms.
# ---------------------------------------------------------------------------


def _search_bracket(inst: RoutingInstance) -> tuple[float, float]:
    """Bracket [d_lo, d_hi] for the optimal delay bound.

    d_hi: everyone on their direct route alone.  d_lo: no user can ever
    receive more than min(capacity, total bandwidth into their server), so the
    induced delay is a sound lower bound; probing it first often ends the
    search immediately on sparse networks.
    """
    col_sums = np.array(
        [inst.server_bandwidth[:, inst.dest[i]].sum() for i in range(inst.n)]
    )
    upper_flow = np.minimum(inst.capacities, col_sums)
    d_hi = float(np.max(inst.size / inst.direct_bandwidth))
    d_lo = float(np.max(inst.size / upper_flow))
    return d_lo, d_hi


def _require_direct_routes(inst: RoutingInstance) -> None:
    if np.any(inst.direct_bandwidth <= 0):
        raise InstanceValidationError(
            ["instance has users without a direct route; validate_instance first"]
        )


def _min_max_delay_traced(
    template: _LpTemplate, tol: float
) -> tuple[float, FlowAssignment, list[tuple[float, bool]]]:
    inst = template.inst
    d_lo, d_hi = _search_bracket(inst)
    trace: list[tuple[float, bool]] = []
    witness: np.ndarray | None = None

    def probe(d: float) -> bool:
        nonlocal witness
        sol = solve_lp(template.feasibility_lp(d))
        ok = sol.status is LpStatus.OPTIMAL
        trace.append((d, ok))
        if ok:
            witness = sol.values
        return ok

    if probe(d_lo):
        return d_lo, FlowAssignment.from_values(inst, witness), trace
    lo, hi = d_lo, d_hi
    hi_known_feasible = False
    for _ in range(SEARCH_ITER_CAP):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
            hi_known_feasible = True
        else:
            lo = mid
    if not hi_known_feasible:
        if not probe(hi):  # direct routes alone satisfy it; cannot fail
            raise InternalConsistencyError(
                f"delay bound {hi:g} reported infeasible despite the direct-route point"
            )
    return hi, FlowAssignment.from_values(inst, witness), trace


def min_max_delay(
    inst: RoutingInstance,
    tol: float = DEFAULT_SEARCH_TOL,
    include_floor: bool = True,
) -> tuple[float, FlowAssignment]:
    """Least delay bound D (within ``tol``) every user can meet simultaneously.

    Bisects D over the bracket between the capacity-derived lower bound and
    the direct-route upper bound, solving the feasibility program at each
    probe; returns the smallest feasible probe and a witness assignment for
    it.  ``include_floor=False`` drops the ``x_i >= b[i, dest_i]`` rows (used
    by the wrapper that equalizes without outside options).
    """
    _require_direct_routes(inst)
    d, fa, _ = _min_max_delay_traced(_LpTemplate(inst, include_floor), tol)
    return d, fa


def maxmin_route_mechanism(
    inst: RoutingInstance, tol: float = DEFAULT_SEARCH_TOL
) -> tuple[FlowAssignment, RoutingOutcomeMeta]:
    """Strategy-proof minmax-delay mechanism.

    Finds the optimal delay bound D*, then pins every total: users whose
    direct route already beats D* get exactly their direct bandwidth, everyone
    else gets exactly ``size_i / D*``.  The pinned re-solve fixes the flow
    decomposition.  Pinning is what removes any reward for misreporting: a
    user's total depends on their report only through D*, which never
    decreases when capacities shrink.
    """
    _require_direct_routes(inst)
    template = _LpTemplate(inst, include_floor=True)
    d_star, _, trace = _min_max_delay_traced(template, tol)
    direct = inst.direct_bandwidth
    pins = np.where(inst.size / direct < d_star, direct, inst.size / d_star)
    sol = solve_lp(template.pinned_lp(d_star, pins))
    if sol.status is not LpStatus.OPTIMAL:
        raise InternalConsistencyError(
            f"pinned totals infeasible at D*={d_star:g}; search tolerance too loose"
        )
    fa = FlowAssignment.from_values(inst, sol.values)
    return fa, RoutingOutcomeMeta(d_star=d_star, search_trace=tuple(trace))


def serial_route_mechanism(
    inst: RoutingInstance, ordering: Sequence[int]
) -> tuple[FlowAssignment, RoutingOutcomeMeta]:
    """Serve users one at a time: each gets the most flow still possible.

    Pass k maximizes ``x_{q_k}`` subject to the flow floors and every earlier
    user's total being held at its optimized value.  The resulting utility
    profile is lexicographically maximal in order ``q`` over all feasible
    floor-respecting assignments, and the procedure is itself strategy-proof.
    """
    _require_direct_routes(inst)
    q = np.asarray(ordering, dtype=int)
    if sorted(q.tolist()) != list(range(inst.n)):
        raise ValueError(f"{ordering!r} is not a permutation of 0..{inst.n - 1}")
    template = _LpTemplate(inst, include_floor=True)
    fixes: list[tuple[int, float]] = []
    values: np.ndarray | None = None
    for idx in q:
        coeffs = np.zeros(inst.n)
        coeffs[idx] = 1.0
        sol = solve_lp(template.objective_lp(template.total_objective(coeffs), fixes))
        if sol.status is not LpStatus.OPTIMAL:
            raise InternalConsistencyError(
                f"serial pass for user {int(idx) + 1} failed: {sol.status.value}"
            )
        fixes.append((int(idx), float(sol.values[idx])))
        values = sol.values
    fa = FlowAssignment.from_values(inst, values)
    return fa, RoutingOutcomeMeta(d_star=None, ordering=q)


def oef_route_mechanism(
    inst: RoutingInstance, weights: Sequence[float] | None = None
) -> tuple[FlowAssignment, RoutingOutcomeMeta]:
    """Serial mechanism with the serve order earned by contribution.

    Users are ranked by ``weights[i] * capacities[i]`` descending (ties by
    index): the more you share, the earlier you are served.  Equivalent to
    :func:`serial_route_mechanism` under that ordering.
    """
    w = np.ones(inst.n) if weights is None else np.asarray(weights, dtype=float)
    q = oef_ordering(inst.capacities, w)
    fa, meta = serial_route_mechanism(inst, q)
    return fa, RoutingOutcomeMeta(d_star=None, ordering=q)


def utility(inst: RoutingInstance, fa: FlowAssignment, i: int) -> float:
    """Negated download delay ``-size_i / x_i``; ``-inf`` when ``x_i = 0``."""
    x = float(fa.x[i])
    return -float(inst.size[i]) / x if x > 0 else -np.inf


def utilities(inst: RoutingInstance, fa: FlowAssignment) -> np.ndarray:
    out = np.full(inst.n, -np.inf)
    mask = fa.x > 0
    out[mask] = -inst.size[mask] / fa.x[mask]
    return out


def ir_baseline(inst: RoutingInstance, i: int) -> tuple[float, float]:
    """Outside option of user ``i``: (flow floor, utility floor).

    Going it alone over the direct edge yields flow ``b[i, dest_i]`` and delay
    ``size_i / b[i, dest_i]``; any acceptable outcome must do at least as well.
    """
    flow = float(inst.direct_bandwidth[i])
    return flow, -float(inst.size[i]) / flow


def ir_floors(inst: RoutingInstance) -> np.ndarray:
    """Per-user utility floors, vectorized."""
    return -inst.size / inst.direct_bandwidth


# ---------------------------------------------------------------------------
# Direct-edge exhaustion rewrite.
# ---------------------------------------------------------------------------


def _find_feed_path(
    inst: RoutingInstance, fa: FlowAssignment, commodity: int
) -> tuple[int, list[int]] | None:
    """A draw vertex w != i and a positive-flow peer path w -> ... -> i.

    Searched backward from the downloader over edges carrying the commodity;
    returns (w, edge indices along the forward path) or None.
    """
    i = commodity
    n = inst.n
    parent_edge = {i: -1}
    frontier = [i]
    while frontier:
        nxt: list[int] = []
        for vert in frontier:
            for e, (u, w) in enumerate(inst.peer_edges):
                if w == vert and fa.f[i, e] > _EPS and u not in parent_edge:
                    parent_edge[u] = e
                    if u != i and fa.x_draw[i, u] > _EPS:
                        path = []
                        node = u
                        while node != i:
                            e2 = parent_edge[node]
                            path.append(e2)
                            node = inst.peer_edges[e2][1]
                        return u, path
                    nxt.append(u)
        frontier = nxt
    return None


def exhaust_direct_edges(
    inst: RoutingInstance, fa: FlowAssignment
) -> FlowAssignment:
    """Rewrite a feasible floor-respecting assignment so every user's direct
    edge is fully used by that user, totals unchanged.

    Two moves, repeated per user until ``x_draw[i, i] = b[i, dest_i]``: while
    the direct edge has spare room, shift the user's own relayed flow onto it;
    once the edge is full but partly serving some other user j, swap — j takes
    over the draw vertex and relay path that fed i, and i reclaims that much
    of its own edge.  Neither move changes any total or any vertex load.
    """
    fa = fa.copy()
    n = inst.n
    direct = inst.direct_bandwidth
    demanders: dict[int, list[int]] = {}
    for k in range(n):
        demanders.setdefault(int(inst.dest[k]), []).append(k)

    for i in range(n):
        guard = 4 * (len(inst.peer_edges) + n + 4)
        while direct[i] - fa.x_draw[i, i] > _EPS:
            guard -= 1
            if guard < 0:
                raise ContractViolationError(
                    f"direct-edge rewrite for user {i + 1} did not converge"
                )
            need = direct[i] - fa.x_draw[i, i]
            found = _find_feed_path(inst, fa, i)
            if found is None:
                raise ContractViolationError(
                    f"user {i + 1} lacks relayed inflow to move onto its direct edge; "
                    "input assignment is infeasible or below the flow floor"
                )
            w, path = found
            path_cap = min(fa.f[i, e] for e in path)
            ks = demanders[int(inst.dest[i])]
            edge_slack = direct[i] - sum(fa.x_draw[k, i] for k in ks)
            if edge_slack > _EPS:
                move = min(need, path_cap, fa.x_draw[i, w], edge_slack)
                fa.x_draw[i, w] -= move
                for e in path:
                    fa.f[i, e] -= move
                fa.x_draw[i, i] += move
            else:
                others = [k for k in ks if k != i and fa.x_draw[k, i] > _EPS]
                if not others:
                    raise ContractViolationError(
                        f"direct edge of user {i + 1} is full but not by other users; "
                        "input assignment is inconsistent"
                    )
                j = others[0]
                move = min(need, path_cap, fa.x_draw[i, w], fa.x_draw[j, i])
                # j inherits i's feed: draw at w, relay along the same path.
                fa.x_draw[i, w] -= move
                fa.x_draw[j, w] += move
                for e in path:
                    fa.f[i, e] -= move
                    fa.f[j, e] += move
                fa.x_draw[j, i] -= move
                fa.x_draw[i, i] += move
            if move <= _EPS:
                raise ContractViolationError(
                    f"direct-edge rewrite for user {i + 1} stalled"
                )
    return fa


# ---------------------------------------------------------------------------
# Adapters: the network as an abstract environment with black-box algorithms.
# ---------------------------------------------------------------------------


def routing_environment(inst: RoutingInstance, with_outside_option: bool = True) -> Environment:
    """The route-allocation problem as an :class:`Environment`.

    Profiles are capacity reports; outcomes are flow assignments; feasibility
    is the capacity/balance system with the profile as vertex capacities (the
    flow floors are a mechanism promise, not a feasibility constraint — the
    all-zero assignment is feasible for every profile).  Utilities read only
    file sizes and totals.
    """
    n = inst.n
    zero = FlowAssignment(
        x=np.zeros(n),
        x_draw=np.zeros((n, n)),
        f=np.zeros((n, len(inst.peer_edges))),
    )
    floors = ir_floors(inst) if with_outside_option else np.full(n, -np.inf)

    def feasible(profile: np.ndarray, public: Any, fa: Any) -> bool:
        if not isinstance(fa, FlowAssignment):
            return False
        return assignment_feasible(inst, fa, capacities=profile)

    def sampler(profile: np.ndarray, public: Any, rng: np.random.Generator) -> FlowAssignment:
        template = _LpTemplate(replace_capacities(inst, profile), include_floor=False)
        obj = template.total_objective(rng.uniform(-1.0, 1.0, n))
        sol = solve_lp(template.objective_lp(obj))
        if sol.status is not LpStatus.OPTIMAL:
            raise InternalConsistencyError("random-objective sample LP failed")
        return FlowAssignment.from_values(inst, sol.values)

    return Environment(
        n=n,
        public_info={"sizes": inst.size, "dest": inst.dest},
        feasibility=feasible,
        utility=lambda fa, public: utilities(inst, fa),
        empty_outcome=zero,
        ir_baseline=floors,
        outcome_sampler=sampler,
    )


def routing_maxmin_algorithm(
    inst: RoutingInstance,
    tol: float = DEFAULT_SEARCH_TOL,
    include_floor: bool = True,
) -> BlackBoxAlgorithm:
    """Delay optimizer as a black box: profile in, witness assignment out."""

    def run(profile: np.ndarray, public: Any) -> FlowAssignment:
        _, fa = min_max_delay(replace_capacities(inst, profile), tol, include_floor)
        return fa

    return BlackBoxAlgorithm(run=run, objective="maxmin")


def routing_serial_algorithm(inst: RoutingInstance) -> BlackBoxAlgorithm:
    """Serial optimizer as a black box taking (profile, public, ordering)."""

    def run(profile: np.ndarray, public: Any, ordering: Sequence[int]) -> FlowAssignment:
        fa, _ = serial_route_mechanism(replace_capacities(inst, profile), ordering)
        return fa

    return BlackBoxAlgorithm(run=run, objective="serial")


def routing_flow_reducer(inst: RoutingInstance) -> UtilityReducer:
    """Lower one user's utility by cancelling their own flow, nobody else's.

    A target utility u' < 0 corresponds to total ``-size/u'``; scaling the
    user's draws and peer flows by the matching factor keeps every balance
    equation exact and only slackens the capacity rows.
    """

    def reduce(fa: FlowAssignment, agent: int, target: float) -> FlowAssignment:
        if target >= 0:
            raise ValueError("delay utilities are negative; target must be < 0")
        out = fa.copy()
        new_total = float(inst.size[agent]) / -target
        if fa.x[agent] <= 0:
            if new_total > _EPS:
                raise ValueError("cannot raise a user with zero flow")
            return out
        factor = new_total / float(fa.x[agent])
        out.x[agent] = new_total
        out.x_draw[agent, :] *= factor
        out.f[agent, :] *= factor
        return out

    return UtilityReducer(reduce=reduce)
