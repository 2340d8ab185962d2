"""Command-line front end.

``net up`` records a session (scenario path, seed, transport) in the
working directory.  Every later command rebuilds the network from that
session, replays the queries already issued so agent ids, clocks and
registries match, then runs the new command and appends it.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .firmstore import QueryCriteria, ScenarioInvalid, load_scenario
from .harness import Undeliverable, run_comparison
from .interface import BadRequest, Request, SearchRequest, TraceRequest, render, request_from_doc, run_query
from .model import DecodingError, canonical_decode, canonical_encode
from .planner import NoTargets, Unreachable
from .runtime import Runtime

SESSION_FILE = ".b2bagents-session.json"

EXIT_OK = 0
EXIT_BAD_REQUEST = 2
EXIT_UNDELIVERABLE = 3
EXIT_SCENARIO_INVALID = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- session ----------------------------------------------------------------


def _session_path() -> Path:
    return Path.cwd() / SESSION_FILE


def _read_session() -> dict[str, Any]:
    path = _session_path()
    if not path.exists():
        raise CliError("no network is up here; run `net up --scenario <file>` first", EXIT_BAD_REQUEST)
    return json.loads(path.read_text())


def _write_session(session: dict[str, Any]) -> None:
    _session_path().write_text(json.dumps(session, indent=2, sort_keys=True) + "\n")


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise CliError(f"scenario file not found: {path}", EXIT_SCENARIO_INVALID) from None
    except (ScenarioInvalid, DecodingError) as exc:
        raise CliError(f"scenario invalid: {exc}", EXIT_SCENARIO_INVALID) from None


def _request_to_session(request: Request) -> dict[str, Any]:
    doc = request.to_doc()
    doc["partial"] = request.partial
    return doc


def _request_from_session(doc: dict[str, Any]) -> Request:
    request = request_from_doc(doc)
    if doc.get("partial"):
        kind = TraceRequest if isinstance(request, TraceRequest) else SearchRequest
        request = kind(**{**vars(request), "partial": True})
    return request


class _Network:
    def __init__(self, session: dict[str, Any]):
        self.session = session
        self.scenario = _load(session["scenario"])
        self.transport = None
        if session.get("real_sockets"):
            from .tcp import SocketTransport

            addresses = {f: self.scenario.configs[f].address for f in self.scenario.firms}
            self.transport = SocketTransport(self.scenario.firms, addresses)
        self.runtime = Runtime(self.scenario, session.get("seed", 0), transport=self.transport)
        for doc in session.get("queries", []):
            try:
                run_query(_request_from_session(doc), self.runtime)
            except (BadRequest, NoTargets, Unreachable):
                pass

    def close(self) -> None:
        if self.transport is not None:
            self.transport.close()


# -- commands ---------------------------------------------------------------


def _emit(data: bytes) -> None:
    sys.stdout.buffer.write(data)
    if not data.endswith(b"\n"):
        sys.stdout.buffer.write(b"\n")
    sys.stdout.flush()


def cmd_net_up(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    session = {
        "scenario": str(Path(args.scenario).resolve()),
        "seed": args.seed,
        "real_sockets": args.real_sockets,
        "queries": [],
    }
    _write_session(session)
    _emit(
        f"network up: {len(scenario.firms)} firms, {len(scenario.links)} links, "
        f"{len(scenario.products)} products (seed {args.seed})".encode()
    )
    return EXIT_OK


def _run_request(request: Request, fmt: str) -> int:
    session = _read_session()
    net = _Network(session)
    try:
        try:
            ticket, report = run_query(request, net.runtime)
        except (BadRequest, NoTargets) as exc:
            raise CliError(str(exc), EXIT_BAD_REQUEST) from None
        except Unreachable as exc:
            raise CliError(f"undeliverable: {exc}", EXIT_UNDELIVERABLE) from None
        interface = net.runtime.platforms[request.home].interface
        if request.partial:
            for interim in interface.interim.get(ticket.ticket_id, []):
                _emit(render(interim, fmt))
        _emit(render(report, fmt))
    finally:
        net.close()
    session["queries"].append(_request_to_session(request))
    _write_session(session)
    return EXIT_OK if report.status == "Completed" else EXIT_UNDELIVERABLE


def cmd_trace(args: argparse.Namespace) -> int:
    if args.ttl < 1:
        raise CliError("--ttl must be positive", EXIT_BAD_REQUEST)
    request = TraceRequest(args.product, args.home, ttl=args.ttl, partial=args.partial)
    return _run_request(request, args.format)


def _parse_attrs(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise CliError(f"--attr expects k=v, got {pair!r}", EXIT_BAD_REQUEST)
        out[key] = value
    return out


def _timestamp(text: str) -> int:
    """Milliseconds since the epoch, or a UTC calendar date YYYY-MM-DD."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        day = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a timestamp or YYYY-MM-DD date: {text!r}") from None
    return int(day.timestamp() * 1000)


def cmd_search(args: argparse.Namespace) -> int:
    try:
        criteria = QueryCriteria(
            category=args.type,
            supplier=args.supplier,
            made_after=args.made_after,
            made_before=args.made_before,
            attribute_equals=_parse_attrs(args.attr),
        )
    except ValueError as exc:
        raise CliError(f"malformed criteria: {exc}", EXIT_BAD_REQUEST) from None
    visit = None
    if args.visit is not None:
        visit = tuple(f for f in args.visit.split(",") if f)
        if not visit:
            raise CliError("--visit names no firm", EXIT_BAD_REQUEST)
    request = SearchRequest(args.home, criteria, visit=visit, ttl=args.ttl, partial=args.partial)
    return _run_request(request, args.format)


def cmd_bench_compare(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    try:
        doc = canonical_decode(Path(args.query).read_bytes(), strict=False)
        request = request_from_doc(doc)
    except FileNotFoundError:
        raise CliError(f"query file not found: {args.query}", EXIT_BAD_REQUEST) from None
    except (DecodingError, BadRequest) as exc:
        raise CliError(f"malformed query file: {exc}", EXIT_BAD_REQUEST) from None
    try:
        traffic, _, _ = run_comparison(scenario, request, seed=args.seed)
    except (BadRequest, NoTargets) as exc:
        raise CliError(str(exc), EXIT_BAD_REQUEST) from None
    except (Unreachable, Undeliverable) as exc:
        raise CliError(f"undeliverable: {exc}", EXIT_UNDELIVERABLE) from None
    if args.format == "text":
        d = traffic.to_doc()
        lines = [
            f"agent bytes:    {d['agent_bytes']['total']}",
            f"baseline bytes: {d['baseline_bytes']['total']}",
            f"ratio:          {d['ratio']}"
            + (f" ({float(traffic.ratio):.4f})" if traffic.ratio is not None else ""),
            f"hops:           {d['hops']}",
            f"completed at:   agent {d['agent_completed_at']} ms, baseline {d['baseline_completed_at']} ms",
        ]
        _emit("\n".join(lines).encode())
    else:
        _emit(traffic.render())
    return EXIT_OK


def cmd_platform_status(args: argparse.Namespace) -> int:
    session = _read_session()
    net = _Network(session)
    try:
        platform = net.runtime.platforms.get(args.firm)
        if platform is None:
            raise CliError(f"unknown firm {args.firm!r}", EXIT_BAD_REQUEST)
        entries = [e.to_doc() for e in platform.registry_snapshot()]
    finally:
        net.close()
    if args.format == "structured":
        _emit(canonical_encode({"firm": args.firm, "registry": entries}))
        return EXIT_OK
    lines = [f"registry of {args.firm} ({len(entries)} entries)"]
    for e in entries:
        note = f"  {e['note']}" if e.get("note") else ""
        lines.append(
            f"  {e['agent_id'][:12]}  hop {e['hop']:>2}  from {e['origin']:<8} "
            f"{e['behavior']:<10} {e['state']:<16} t={e['admitted_at']}{note}"
        )
    _emit("\n".join(lines).encode())
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def fmt(default: str = "text") -> argparse.ArgumentParser:
        # a fresh parent each time; argparse shares parent actions, defaults included
        parent = argparse.ArgumentParser(add_help=False)
        parent.add_argument("--format", choices=("text", "structured"), default=default)
        return parent

    parser = argparse.ArgumentParser(prog="b2bagents", description="Mobile-agent B2B query network.")
    sub = parser.add_subparsers(dest="command", required=True)

    net = sub.add_parser("net", help="network session").add_subparsers(dest="net_command", required=True)
    up = net.add_parser("up", help="bring a scenario network up")
    up.add_argument("--scenario", required=True)
    up.add_argument("--seed", type=int, default=0)
    up.add_argument("--real-sockets", action="store_true", help="carry frames over localhost TCP")
    up.set_defaults(func=cmd_net_up)

    trace = sub.add_parser("trace", parents=[fmt()], help="trace a product's custody chain")
    trace.add_argument("product")
    trace.add_argument("--home", required=True)
    trace.add_argument("--ttl", type=int, default=16)
    trace.add_argument("--partial", action="store_true", help="print an interim report after each hop")
    trace.set_defaults(func=cmd_trace)

    search = sub.add_parser("search", parents=[fmt()], help="search product tables across firms")
    search.add_argument("--home", required=True)
    search.add_argument("--type", dest="type")
    search.add_argument("--supplier")
    search.add_argument("--made-after", type=_timestamp)
    search.add_argument("--made-before", type=_timestamp)
    search.add_argument("--attr", action="append", default=[], metavar="K=V")
    search.add_argument("--visit", metavar="F,F,...")
    search.add_argument("--ttl", type=int)
    search.add_argument("--partial", action="store_true")
    search.set_defaults(func=cmd_search)

    bench = sub.add_parser("bench", help="traffic experiments").add_subparsers(dest="bench_command", required=True)
    compare = bench.add_parser("compare", parents=[fmt("structured")], help="agent vs. message-exchange traffic")
    compare.add_argument("--scenario", required=True)
    compare.add_argument("--query", required=True)
    compare.add_argument("--seed", type=int, default=0)
    compare.set_defaults(func=cmd_bench_compare)

    plat = sub.add_parser("platform", help="platform inspection").add_subparsers(dest="platform_command", required=True)
    status = plat.add_parser("status", parents=[fmt()], help="registry snapshot")
    status.add_argument("firm")
    status.set_defaults(func=cmd_platform_status)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_REQUEST
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
