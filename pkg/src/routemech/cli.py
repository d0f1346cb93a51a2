"""Command-line front end and instance-file handling.

Instance files are UTF-8 JSON with 1-based user/server indices::

    {
      "users": 2,
      "servers": 2,
      "demands": [{"server": 1, "size": 4}, {"server": 2, "size": 12}],
      "server_edges": [
        {"user": 1, "server": 1, "bandwidth": 4},
        {"user": 1, "server": 2, "bandwidth": 6},
        {"user": 2, "server": 2, "bandwidth": 2}
      ],
      "peer_edges": [{"from": 1, "to": 2}],
      "capacities": [12, 10],
      "weights": [1, 1]
    }

Omitted server edges mean bandwidth 0; ``peer_edges`` are listed in data-flow
direction (``from`` relays toward ``to``); ``weights`` is optional and
defaults to all ones.  Results go to standard output as JSON (or a table with
``--pretty``); diagnostics go to standard error.

Exit codes: 0 success, 1 validation/usage error, 2 audit found a violation,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .harness import (
    DeviationReport,
    audit_group_sp,
    audit_ir,
    audit_serial_optimality,
    audit_strategyproofness,
    routing_subject,
)
from .routing import (
    InstanceValidationError,
    RoutingInstance,
    ir_floors,
    maxmin_route_mechanism,
    oef_route_mechanism,
    serial_route_mechanism,
    utilities,
    validate_instance,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VIOLATION = 2
EXIT_INTERNAL = 3


class SchemaError(ValueError):
    """Instance file does not match the expected shape; message names the field."""


class _UsageError(Exception):
    pass


@dataclass(frozen=True)
class ParsedInstance:
    """A parsed-and-validated instance file."""

    instance: RoutingInstance
    weights: np.ndarray
    warnings: list[str]


def _require(doc: dict, key: str, kind: type, where: str = "top level") -> Any:
    if key not in doc:
        raise SchemaError(f"missing key `{key}` at {where}")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"`{key}` at {where} must be a number")
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaError(f"`{key}` at {where} must be {kind.__name__}")
    return value


def parse_instance(text: str) -> ParsedInstance:
    """Parse an instance document, then validate it.

    Raises :class:`SchemaError` (naming the offending field) on malformed
    documents, ``json.JSONDecodeError`` (with line/column) on bad JSON, and
    :class:`InstanceValidationError` on structurally impossible instances.
    Warnings (capacity clamps) are carried through.
    """
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise SchemaError("top level must be a JSON object")
    n = _require(doc, "users", int)
    m = _require(doc, "servers", int)
    if n < 1 or m < 1:
        raise SchemaError("`users` and `servers` must be at least 1")

    demands = _require(doc, "demands", list)
    if len(demands) != n:
        raise SchemaError(f"`demands` has {len(demands)} entries, expected {n}")
    dest = np.zeros(n, dtype=int)
    size = np.zeros(n)
    for i, entry in enumerate(demands):
        if not isinstance(entry, dict):
            raise SchemaError(f"`demands[{i}]` must be an object")
        server = _require(entry, "server", int, f"demands[{i}]")
        if not (1 <= server <= m):
            raise SchemaError(f"`demands[{i}].server` = {server} out of 1..{m}")
        dest[i] = server - 1
        size[i] = _require(entry, "size", float, f"demands[{i}]")

    bandwidth = np.zeros((n, m))
    for k, entry in enumerate(doc.get("server_edges", [])):
        if not isinstance(entry, dict):
            raise SchemaError(f"`server_edges[{k}]` must be an object")
        u = _require(entry, "user", int, f"server_edges[{k}]")
        s = _require(entry, "server", int, f"server_edges[{k}]")
        bw = _require(entry, "bandwidth", float, f"server_edges[{k}]")
        if not (1 <= u <= n) or not (1 <= s <= m):
            raise SchemaError(f"`server_edges[{k}]` references user {u}/server {s}")
        bandwidth[u - 1, s - 1] = bw

    edges: list[tuple[int, int]] = []
    for k, entry in enumerate(doc.get("peer_edges", [])):
        if not isinstance(entry, dict):
            raise SchemaError(f"`peer_edges[{k}]` must be an object")
        src = _require(entry, "from", int, f"peer_edges[{k}]")
        dst = _require(entry, "to", int, f"peer_edges[{k}]")
        if not (1 <= src <= n) or not (1 <= dst <= n):
            raise SchemaError(f"`peer_edges[{k}]` endpoint out of 1..{n}")
        edges.append((src - 1, dst - 1))

    caps = _require(doc, "capacities", list)
    if len(caps) != n:
        raise SchemaError(f"`capacities` has {len(caps)} entries, expected {n}")
    capacities = np.array([float(c) for c in caps])

    weights = np.ones(n)
    if "weights" in doc:
        w = _require(doc, "weights", list)
        if len(w) != n:
            raise SchemaError(f"`weights` has {len(w)} entries, expected {n}")
        weights = np.array([float(x) for x in w])

    for name, arr in (("demands.size", size), ("capacities", capacities), ("weights", weights)):
        if not np.isfinite(arr).all():
            raise SchemaError(f"`{name}` contains non-finite numbers")
    if not np.isfinite(bandwidth).all():
        raise SchemaError("`server_edges` contains non-finite bandwidths")

    inst = RoutingInstance(
        num_servers=m,
        dest=dest,
        size=size,
        server_bandwidth=bandwidth,
        peer_edges=tuple(edges),
        capacities=capacities,
    )
    validated, warnings = validate_instance(inst)
    return ParsedInstance(instance=validated, weights=weights, warnings=warnings)


def serialize_instance(inst: RoutingInstance, weights: np.ndarray | None = None) -> str:
    """Canonical JSON for an instance (1-based indices, fixed key order)."""
    n = inst.n
    doc: dict[str, Any] = {
        "users": n,
        "servers": inst.num_servers,
        "demands": [
            {"server": int(inst.dest[i]) + 1, "size": float(inst.size[i])} for i in range(n)
        ],
        "server_edges": [
            {"user": i + 1, "server": j + 1, "bandwidth": float(inst.server_bandwidth[i, j])}
            for i in range(n)
            for j in range(inst.num_servers)
            if inst.server_bandwidth[i, j] > 0
        ],
        "peer_edges": [{"from": u + 1, "to": w + 1} for u, w in inst.peer_edges],
        "capacities": [float(v) for v in inst.capacities],
    }
    if weights is not None:
        doc["weights"] = [float(w) for w in weights]
    return json.dumps(doc, indent=2)


def generate_instance(
    users: int, servers: int, density: float = 0.3, seed: int = 0
) -> RoutingInstance:
    """Random valid instance, deterministic in ``seed``.

    Every user gets a direct edge with bandwidth U[1, 10]; each other server
    edge and each ordered peer pair appears with probability ``density``
    (extra server edges also U[1, 10]); capacities are U[direct, direct + 20]
    and file sizes U[1, 20].
    """
    if users < 1 or servers < 1:
        raise ValueError("need at least one user and one server")
    if not (0 < density <= 1):
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    dest = rng.integers(0, servers, size=users)
    bandwidth = np.where(rng.random((users, servers)) < density, rng.uniform(1, 10, (users, servers)), 0.0)
    direct = rng.uniform(1, 10, users)
    bandwidth[np.arange(users), dest] = direct
    edges = tuple(
        (u, w)
        for u in range(users)
        for w in range(users)
        if u != w and rng.random() < density
    )
    return RoutingInstance(
        num_servers=servers,
        dest=dest,
        size=rng.uniform(1, 20, users),
        server_bandwidth=bandwidth,
        peer_edges=edges,
        capacities=direct + rng.uniform(0, 20, users),
    )


# ---------------------------------------------------------------------------
# Command front end.
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage problems, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="routemech", description="Route-allocation mechanisms and audits")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run a mechanism on an instance file")
    solve.add_argument("mechanism", choices=["maxmin", "serial", "oef"])
    solve.add_argument("file")
    solve.add_argument("--order", help="serial order as 1-based comma list, e.g. 2,3,1")
    solve.add_argument("--pretty", action="store_true", help="table instead of JSON")

    audit = sub.add_parser("audit", help="search for property violations")
    audit.add_argument("property", choices=["sp", "gsp", "ir", "serial"])
    audit.add_argument("file")
    audit.add_argument("--budget", type=int, default=100)
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument(
        "--mechanism", choices=["maxmin", "serial", "oef"], default="maxmin",
        help="mechanism under audit (sp/gsp/ir audits)",
    )
    audit.add_argument("--order", help="serial order for --mechanism serial / audit serial")
    audit.add_argument("--pretty", action="store_true")

    gen = sub.add_parser("gen", help="generate a random instance")
    gen.add_argument("--users", type=int, required=True)
    gen.add_argument("--servers", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--density", type=float, default=0.3)

    val = sub.add_parser("validate", help="parse and validate an instance file")
    val.add_argument("file")
    return parser


def _load(path: str) -> ParsedInstance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def _parse_order(text: str | None, n: int) -> np.ndarray:
    if text is None:
        return np.arange(n)
    try:
        order = [int(tok) - 1 for tok in text.split(",")]
    except ValueError as exc:
        raise _UsageError(f"--order must be a comma list of integers: {exc}") from exc
    if sorted(order) != list(range(n)):
        raise _UsageError(f"--order must be a permutation of 1..{n}")
    return np.array(order)


def _solve_result(args: argparse.Namespace) -> dict[str, Any]:
    parsed = _load(args.file)
    inst = parsed.instance
    if args.mechanism == "maxmin":
        fa, meta = maxmin_route_mechanism(inst)
    elif args.mechanism == "serial":
        fa, meta = serial_route_mechanism(inst, _parse_order(args.order, inst.n))
    else:
        fa, meta = oef_route_mechanism(inst, parsed.weights)
    result: dict[str, Any] = {"mechanism": args.mechanism}
    if meta.d_star is not None:
        result["d_star"] = meta.d_star
    if meta.ordering is not None:
        result["ordering"] = [int(i) + 1 for i in meta.ordering]
    result["x"] = [float(v) for v in fa.x]
    result["utilities"] = [float(u) for u in utilities(inst, fa)]
    result["ir_floors"] = [float(u) for u in ir_floors(inst)]
    result["warnings"] = parsed.warnings
    return result


def _report_json(report: DeviationReport) -> dict[str, Any]:
    return {
        "audit": report.kind,
        "tested_profiles": report.tested_profiles,
        "violations": [
            {
                "agents": [int(a) + 1 for a in v.agents],
                "profile": [float(x) for x in v.profile],
                "deviation": [float(x) for x in v.deviation],
                "utility_before": [float(x) for x in v.utility_before],
                "utility_after": [float(x) for x in v.utility_after],
                "gap": v.gap,
            }
            for v in report.violations
        ],
        "errors": list(report.errors),
        "max_gap": report.max_gap,
        "budget": report.budget,
    }


def _audit_result(args: argparse.Namespace) -> tuple[dict[str, Any], bool]:
    parsed = _load(args.file)
    inst = parsed.instance
    order = _parse_order(args.order, inst.n)
    if args.property == "serial":
        fa, meta = serial_route_mechanism(inst, order)
        report = audit_serial_optimality(
            inst, fa, meta.ordering, budget=args.budget, seed=args.seed
        )
    else:
        subject = routing_subject(
            inst, mechanism=args.mechanism, order=order, weights=parsed.weights
        )
        if args.property == "sp":
            report = audit_strategyproofness(subject, budget=args.budget, seed=args.seed)
        elif args.property == "gsp":
            report = audit_group_sp(subject, budget=args.budget, seed=args.seed)
        else:
            report = audit_ir(subject, budget=args.budget, seed=args.seed)
    doc = _report_json(report)
    doc["mechanism"] = args.mechanism
    doc["warnings"] = parsed.warnings
    return doc, not report.ok


def _print_table(result: dict[str, Any]) -> None:
    print(f"mechanism: {result['mechanism']}")
    if "d_star" in result:
        print(f"d_star:    {result['d_star']:.6g}")
    if "ordering" in result:
        print(f"ordering:  {', '.join(str(i) for i in result['ordering'])}")
    print(f"{'user':>4}  {'flow':>10}  {'utility':>10}  {'ir_floor':>10}")
    for i, (x, u, r) in enumerate(
        zip(result["x"], result["utilities"], result["ir_floors"]), start=1
    ):
        print(f"{i:>4}  {x:>10.4f}  {u:>10.4f}  {r:>10.4f}")
    for w in result["warnings"]:
        print(f"warning: {w}", file=sys.stderr)


def run(argv: Sequence[str]) -> int:
    """Execute one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command == "solve":
            result = _solve_result(args)
            if args.pretty:
                _print_table(result)
            else:
                print(json.dumps(result, indent=2))
            return EXIT_OK
        if args.command == "audit":
            doc, found = _audit_result(args)
            if args.pretty:
                print(f"audit {doc['audit']}: {len(doc['violations'])} violation(s) "
                      f"in {doc['tested_profiles']} profiles (max gap {doc['max_gap']:.3g})")
            else:
                print(json.dumps(doc, indent=2))
            return EXIT_VIOLATION if found else EXIT_OK
        if args.command == "gen":
            inst = generate_instance(args.users, args.servers, args.density, args.seed)
            print(serialize_instance(inst))
            return EXIT_OK
        if args.command == "validate":
            parsed = _load(args.file)
            print(json.dumps({"valid": True, "users": parsed.instance.n,
                              "warnings": parsed.warnings}, indent=2))
            return EXIT_OK
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    except (SchemaError, InstanceValidationError, json.JSONDecodeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
