"""Operator command line.  Every command prints ``key=value`` lines.

Exit status: 0 on success, 1 on a domain error (refused or failed migration,
unknown agent, unreachable node), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import base64
import logging
import sys
from pathlib import Path

from .acl import Performative
from .node import ConfigError, ControlClient, NodeConfig, start_node
from .registry import PUSH_TRANSFER_PROTOCOL
from .transport import TransportError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentmobility", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--timeout", type=float, default=60.0,
                        help="seconds to wait for a node's reply")
    groups = parser.add_subparsers(dest="group", required=True)

    node = groups.add_parser("node", help="run or stop a platform node").add_subparsers(
        dest="command", required=True)
    run = node.add_parser("run", help="start a node and serve until shut down")
    run.add_argument("--config", required=True, type=Path)
    stop = node.add_parser("shutdown", help="ask a running node to stop")
    stop.add_argument("--node", required=True)

    agent = groups.add_parser("agent", help="manage agents").add_subparsers(
        dest="command", required=True)
    create = agent.add_parser("create")
    create.add_argument("--node", required=True)
    create.add_argument("--name", required=True, help="local name; the platform is appended")
    create.add_argument("--program", required=True, type=Path)
    create.add_argument("--data", action="append", default=[], metavar="KEY=VALUE")
    lst = agent.add_parser("list")
    lst.add_argument("--node", required=True)
    step = agent.add_parser("step")
    step.add_argument("--node", required=True)
    step.add_argument("--name", required=True)
    for kind in ("move", "clone"):
        p = agent.add_parser(kind)
        p.add_argument("--node", required=True)
        p.add_argument("--name", required=True)
        p.add_argument("--dest", required=True)
        p.add_argument("--transfer", action="append", metavar="PROTOCOL")
        p.add_argument("--pre-transfer", action="append", default=[], metavar="PROTOCOL")
        p.add_argument("--post-transfer", action="append", default=[], metavar="PROTOCOL")

    protocols = groups.add_parser("protocols").add_subparsers(dest="command", required=True)
    query = protocols.add_parser("query", help="ask a remote node for its supported protocols")
    query.add_argument("--node", required=True, help="node that performs the query")
    query.add_argument("--target", required=True, help="node being asked")
    query.add_argument("--bypass-cache", action="store_true")

    cache = groups.add_parser("cache").add_subparsers(dest="command", required=True)
    cache.add_parser("list").add_argument("--node", required=True)
    counters = groups.add_parser("counters").add_subparsers(dest="command", required=True)
    counters.add_parser("show").add_argument("--node", required=True)
    return parser


def _emit(payload: dict) -> None:
    for key, value in payload.items():
        if isinstance(value, list):
            for item in value:
                print(item if key in ("peers",) else f"{key.rstrip('s')}={item}")
        elif isinstance(value, dict):
            continue
        else:
            print(f"{key}={value}")


def _run_node(config_path: Path) -> int:
    try:
        config = NodeConfig.from_file(config_path)
    except (OSError, ConfigError) as exc:
        print(f"error={exc}", file=sys.stderr)
        return 2
    try:
        node = start_node(config)
    except TransportError as exc:
        print(f"error={exc}", file=sys.stderr)
        return 1
    print(f"platform={config.platform_name} address={node.address}", flush=True)
    try:
        node.wait_closed()
    except KeyboardInterrupt:
        node.shutdown()
    return 0


def _control_request(args: argparse.Namespace) -> tuple[str, dict]:
    key = (args.group, args.command)
    if key == ("node", "shutdown"):
        return "shutdown", {}
    if key == ("agent", "create"):
        code = args.program.read_bytes()
        for kv in args.data:
            if "=" not in kv:
                raise ValueError(f"--data {kv!r}: expected KEY=VALUE")
        return "create-agent", {"name": args.name, "program": base64.b64encode(code).decode(),
                                "data": list(args.data)}
    if key == ("agent", "list"):
        return "list-agents", {}
    if key == ("agent", "step"):
        return "step-agent", {"name": args.name}
    if key in (("agent", "move"), ("agent", "clone")):
        payload = {"name": args.name, "destination": args.dest, "kind": args.command,
                   "transfer": args.transfer or [PUSH_TRANSFER_PROTOCOL]}
        if args.pre_transfer:
            payload["pre-transfer"] = args.pre_transfer
        if args.post_transfer:
            payload["post-transfer"] = args.post_transfer
        return "migrate", payload
    if key == ("protocols", "query"):
        return "query-protocols", {"address": args.target,
                                   "policy": "bypass-cache" if args.bypass_cache else "use-cache"}
    if key == ("cache", "list"):
        return "cache-list", {}
    return "counters", {}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if (args.group, args.command) == ("node", "run"):
        return _run_node(args.config)
    try:
        action, payload = _control_request(args)
    except (OSError, ValueError) as exc:
        print(f"error={exc}", file=sys.stderr)
        return 2
    try:
        reply = ControlClient(args.node, args.timeout).call(action, payload)
    except (TransportError, ValueError) as exc:
        print(f"error={exc}")
        return 1
    if reply.performative is not Performative.INFORM:
        print(f"error={reply.content.reason}")
        return 1
    result = reply.content.payload
    _emit(result)
    if result.get("status") in ("refused", "failed"):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
