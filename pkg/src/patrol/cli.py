"""Operator command line for the daemons, the console API, and the bench.

Every API capability is mirrored by a subcommand (the parity test enumerates
the mapping), and machine-readable output is one --json flag away.  Exit
codes: 0 success, 1 usage error, 2 remote/API error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path

from . import bench as bench_mod
from .config import (
    DEFAULT_API_PORT,
    DEFAULT_MIB_SCRIPT,
    ManagerSettings,
    MasdSettings,
    load_settings,
)

DEFAULT_API = f"http://127.0.0.1:{DEFAULT_API_PORT}"
API_ENV_VAR = "PATROL_API"

# Console-API parity: every documented endpoint and the subcommand that uses it.
ENDPOINT_COMMANDS: dict[tuple[str, str], str] = {
    ("GET", "/hosts"): "hosts list",
    ("GET", "/hosts/{host}/agents"): "agents list",
    ("POST", "/hosts/{host}/agents/{id}/suspend"): "agent suspend",
    ("POST", "/hosts/{host}/agents/{id}/resume"): "agent resume",
    ("POST", "/hosts/{host}/agents/{id}/activate"): "agent activate",
    ("GET", "/hosts/{host}/load"): "host load",
    ("GET", "/tasks"): "task list",
    ("POST", "/tasks"): "task create",
    ("PATCH", "/tasks/{name}/frequency"): "task set-frequency",
    ("GET", "/tasks/{name}/results"): "task results",
    ("GET", "/topology"): "topo show",
    ("GET", "/stream"): "stream",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def api_base(args) -> str:
    return getattr(args, "api", None) or os.environ.get(API_ENV_VAR) or DEFAULT_API


def api_request(args, method: str, path: str, body: dict | None = None):
    url = api_base(args) + path
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        request.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(request, timeout=30) as resp:
            return json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        raise RuntimeError(f"{method} {path} -> {exc.code}: {detail}") from None
    except urllib.error.URLError as exc:
        raise RuntimeError(f"{method} {path} -> {exc.reason}") from None


def emit(args, data, human=None) -> None:
    if getattr(args, "json", False) or human is None:
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        print(human(data))


def _table(rows: list[dict], columns: list[str]) -> str:
    if not rows:
        return "(none)"
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


# -- daemon starters -----------------------------------------------------------


def cmd_keys_generate(args) -> int:
    from .security import generate_keypair, save_keypair

    pair = generate_keypair()
    priv, pub = save_keypair(pair, args.dir, args.name)
    print(f"wrote {priv} and {pub} (key id {pair.key_id.hex()})")
    return 0


def cmd_manager_start(args) -> int:
    from .httpapi import ApiServer
    from .manager import Manager
    from .security import generate_keypair, load_keypair, save_keypair

    settings = load_settings(
        ManagerSettings,
        args.config,
        frame_port=args.frame_port,
        api_port=args.api_port,
        data_dir=args.data_dir,
        console_dir=args.console_dir,
        topology_file=args.topology,
        announce_interval_s=args.announce_interval,
    )
    data_dir = Path(settings.data_dir)
    keys_dir = data_dir / "keys"
    if (keys_dir / "manager.pem").exists():
        keys = load_keypair(keys_dir, "manager")
    else:
        keys = generate_keypair()
        save_keypair(keys, keys_dir, "manager")
        print(f"generated manager key pair in {keys_dir}")
    manager = Manager(
        listen_host=settings.listen_host,
        frame_port=settings.frame_port,
        keys=keys,
        data_dir=data_dir,
        topology_file=settings.topology_file,
        announce_interval_s=settings.announce_interval_s,
        lost_timeout_s=settings.lost_timeout_s,
        k_max=settings.k_max,
        cost_s0=settings.cost_s0,
        cost_sd=settings.cost_sd,
    )
    api = ApiServer(manager, settings.api_host, settings.api_port, settings.console_dir)
    manager.start()
    api.start()
    print(f"manager frames on {manager.address}, console API on {api.base_url}")
    _wait_forever()
    api.stop()
    manager.stop()
    return 0


def cmd_masd_start(args) -> int:
    from .masd import AgentServer
    from .mibsim import load_script, parse_script
    from .security import AuthPolicy, key_id, load_public_key

    settings = load_settings(
        MasdSettings,
        args.config,
        listen_port=args.port,
        manager_addr=args.manager,
        device_class=args.device_class,
        announce_interval_s=args.announce_interval,
        mib_script=args.mib_script,
        trusted_keys=args.trusted_key or None,
    )
    trusted = {}
    for path in settings.trusted_keys:
        public = load_public_key(path)
        trusted[key_id(public)] = public
    if not trusted:
        raise UsageError("masd needs at least one trusted key (--trusted-key or config)")
    if settings.mib_script:
        mib = load_script(settings.mib_script, wall_clock=True)
    else:
        mib = parse_script(DEFAULT_MIB_SCRIPT, wall_clock=True)
    server = AgentServer(
        listen_host=settings.listen_host,
        listen_port=settings.listen_port,
        manager_addr=settings.manager_addr,
        mib=mib,
        trusted_keys=trusted,
        policy=AuthPolicy.from_overrides(settings.policy),
        device_class=settings.device_class,
        announce_interval_s=settings.announce_interval_s,
        cache_dir=settings.cache_dir,
        workers=settings.workers,
        load_source=settings.load_source,
    )
    server.start()
    print(f"agent server {server.host_id}, announcing to {settings.manager_addr}")
    _wait_forever()
    server.stop()
    return 0


def _wait_forever() -> None:
    stop = False

    def _handler(signum, frame):
        nonlocal stop
        stop = True

    signal.signal(signal.SIGINT, _handler)
    signal.signal(signal.SIGTERM, _handler)
    while not stop:
        time.sleep(0.2)


# -- API-backed commands ------------------------------------------------------------


def cmd_hosts_list(args) -> int:
    hosts = api_request(args, "GET", "/hosts")
    emit(
        args,
        hosts,
        lambda h: _table(
            [
                {
                    "host": e["host_id"],
                    "class": e["device_class"],
                    "state": e["state"],
                    "cpu%": f"{e['load']['cpu_percent']:.1f}",
                    "bundles": ",".join(f"{b['name']}@{b['version']}" for b in e["bundles"]),
                }
                for e in h
            ],
            ["host", "class", "state", "cpu%", "bundles"],
        ),
    )
    return 0


def cmd_host_load(args) -> int:
    emit(args, api_request(args, "GET", f"/hosts/{args.host}/load"))
    return 0


def cmd_agents_list(args) -> int:
    agents = api_request(args, "GET", f"/hosts/{args.host}/agents")
    emit(
        args,
        agents,
        lambda a: _table(
            [
                {
                    "id": r["id"],
                    "class": r["class_name"],
                    "mode": r["poll_mode"],
                    "freq": r["frequency_s"],
                    "auth": "yes",
                    "encrypt": "yes" if r["encrypt"] else "no",
                    "status": r["status"],
                }
                for r in a
            ],
            ["id", "class", "mode", "freq", "auth", "encrypt", "status"],
        ),
    )
    return 0


def cmd_agent_action(args) -> int:
    result = api_request(args, "POST", f"/hosts/{args.host}/agents/{args.id}/{args.action}")
    emit(args, result, lambda r: r["status"])
    return 0


def cmd_task_create(args) -> int:
    form: dict = {
        "name": args.name,
        "service_type": args.type,
        "oids": args.oid or [],
        "poll_mode": args.mode,
        "encrypt": args.encrypt,
        "device_class": args.device_class,
    }
    if args.frequency is not None:
        form["frequency_s"] = args.frequency
    if args.priority is not None:
        form["priority"] = args.priority
    if args.filter:
        column, comparator, constant = _split3(args.filter, "filter")
        form["filter"] = {
            "column": int(column),
            "comparator": comparator,
            "constant": int(constant) if constant.lstrip("-").isdigit() else constant,
        }
    if args.threshold:
        expression, comparator, limit = _split3(args.threshold, "threshold")
        form["threshold"] = {
            "expression": expression,
            "comparator": comparator,
            "limit": float(limit),
        }
    if not form["oids"]:
        raise UsageError("task create needs at least one --oid")
    result = api_request(args, "POST", "/tasks", form)
    emit(
        args,
        result,
        lambda r: f"task {r['name']} v{r['version']} on {len(r['distributed'])} hosts"
        + (f", FAILED on {', '.join(r['failed'])}" if r.get("failed") else ""),
    )
    return 0


def _split3(spec: str, what: str) -> tuple[str, str, str]:
    parts = spec.split(",")
    if len(parts) != 3:
        raise UsageError(f"--{what} wants three comma-separated fields, got {spec!r}")
    return parts[0].strip(), parts[1].strip(), parts[2].strip()


def cmd_task_list(args) -> int:
    tasks = api_request(args, "GET", "/tasks")
    emit(
        args,
        tasks,
        lambda t: _table(
            [
                {
                    "name": r["name"],
                    "v": r["version"],
                    "type": r["service_type"],
                    "mode": r["poll_mode"],
                    "freq": r["frequency_s"],
                    "enabled": r["enabled"],
                    "round": r["round"],
                    "routes": len(r["routes"]),
                }
                for r in t
            ],
            ["name", "v", "type", "mode", "freq", "enabled", "round", "routes"],
        ),
    )
    return 0


def cmd_task_set_frequency(args) -> int:
    result = api_request(
        args, "PATCH", f"/tasks/{args.name}/frequency", {"seconds": args.seconds}
    )
    emit(args, result, lambda r: f"{r['name']} polling every {r['frequency_s']} s")
    return 0


def cmd_task_results(args) -> int:
    path = f"/tasks/{args.name}/results"
    params = []
    if args.since is not None:
        params.append(f"since={args.since}")
    if args.host:
        params.append(f"host={args.host}")
    if params:
        path += "?" + "&".join(params)
    records = api_request(args, "GET", path)
    emit(
        args,
        records,
        lambda rs: _table(
            [
                {
                    "round": r["round"],
                    "host": r["host"],
                    "kind": r["kind"],
                    "timestamp": r["timestamp"],
                    "data": json.dumps(r["data"])[:60],
                }
                for r in rs
            ],
            ["round", "host", "kind", "timestamp", "data"],
        ),
    )
    return 0


def cmd_topo_show(args) -> int:
    topo = api_request(args, "GET", "/topology")
    def _human(t):
        lines = [f"manager: {t['manager']}", f"nodes: {', '.join(t['nodes'])}"]
        lines += [f"  {e['a']} -- {e['b']} cost {e['cost']}" for e in t["edges"]]
        return "\n".join(lines)
    emit(args, topo, _human)
    return 0


def cmd_stream(args) -> int:
    url = api_base(args) + "/stream"
    request = urllib.request.Request(url)
    seen = 0
    deadline = time.monotonic() + args.timeout if args.timeout else None
    with urllib.request.urlopen(request, timeout=args.timeout or 300) as resp:
        event = None
        while True:
            if deadline and time.monotonic() > deadline:
                break
            line = resp.readline()
            if not line:
                break
            line = line.decode().rstrip("\n")
            if line.startswith("event: "):
                event = line[len("event: ") :]
            elif line.startswith("data: ") and event:
                print(json.dumps({"event": event, "data": json.loads(line[6:])}))
                if event != "hello":
                    seen += 1
                    if args.max and seen >= args.max:
                        break
                event = None
    return 0


def cmd_bench(args) -> int:
    report = bench_mod.migrate_compare(args.rounds, template=args.template, hosts=args.hosts)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(bench_mod.format_report(report))
    return 0 if report["reconciled"] else 2


# -- parser ---------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="patrol", description="mobile-agent network monitoring platform")
    parser.add_argument("--api", help=f"manager API base URL (or ${API_ENV_VAR})")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    keys = sub.add_parser("keys", help="key management").add_subparsers(
        dest="subcommand", required=True
    )
    p = keys.add_parser("generate", help="generate an RSA-2048 key pair")
    p.add_argument("--dir", default="keys")
    p.add_argument("--name", default="manager")
    p.set_defaults(func=cmd_keys_generate)

    mgr = sub.add_parser("manager", help="manager daemon").add_subparsers(
        dest="subcommand", required=True
    )
    p = mgr.add_parser("start")
    p.add_argument("--config")
    p.add_argument("--frame-port", type=int, dest="frame_port")
    p.add_argument("--api-port", type=int, dest="api_port")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--console-dir", dest="console_dir")
    p.add_argument("--topology")
    p.add_argument("--announce-interval", type=float, dest="announce_interval")
    p.set_defaults(func=cmd_manager_start)

    masd = sub.add_parser("masd", help="agent server daemon").add_subparsers(
        dest="subcommand", required=True
    )
    p = masd.add_parser("start")
    p.add_argument("--config")
    p.add_argument("--port", type=int)
    p.add_argument("--manager")
    p.add_argument("--device-class", dest="device_class")
    p.add_argument("--mib-script", dest="mib_script")
    p.add_argument("--announce-interval", type=float, dest="announce_interval")
    p.add_argument("--trusted-key", action="append", dest="trusted_key")
    p.set_defaults(func=cmd_masd_start)

    task = sub.add_parser("task", help="task lifecycle").add_subparsers(
        dest="subcommand", required=True
    )
    p = task.add_parser("create")
    p.add_argument("--name", required=True)
    p.add_argument(
        "--type",
        required=True,
        choices=["scalar-poll", "table-filter", "threshold-monitor"],
    )
    p.add_argument("--oid", action="append")
    p.add_argument("--filter", help="column,comparator,constant")
    p.add_argument("--threshold", help="expression,comparator,limit")
    p.add_argument("--mode", default="periodic", choices=["one-shot", "periodic"])
    p.add_argument("--frequency", type=int)
    p.add_argument("--encrypt", action="store_true")
    p.add_argument("--device-class", dest="device_class", default="")
    p.add_argument("--priority", type=int)
    p.set_defaults(func=cmd_task_create)
    p = task.add_parser("list")
    p.set_defaults(func=cmd_task_list)
    p = task.add_parser("set-frequency")
    p.add_argument("--name", required=True)
    p.add_argument("--seconds", type=int, required=True)
    p.set_defaults(func=cmd_task_set_frequency)
    p = task.add_parser("results")
    p.add_argument("--name", required=True)
    p.add_argument("--since", type=float)
    p.add_argument("--host")
    p.set_defaults(func=cmd_task_results)

    agents = sub.add_parser("agents", help="agents on a host").add_subparsers(
        dest="subcommand", required=True
    )
    p = agents.add_parser("list")
    p.add_argument("--host", required=True)
    p.set_defaults(func=cmd_agents_list)

    agent = sub.add_parser("agent", help="control one agent").add_subparsers(
        dest="subcommand", required=True
    )
    for action in ("suspend", "resume", "activate"):
        p = agent.add_parser(action)
        p.add_argument("--host", required=True)
        p.add_argument("--id", required=True)
        p.set_defaults(func=cmd_agent_action, action=action)

    hosts = sub.add_parser("hosts", help="server directory").add_subparsers(
        dest="subcommand", required=True
    )
    p = hosts.add_parser("list")
    p.set_defaults(func=cmd_hosts_list)

    host = sub.add_parser("host", help="one host").add_subparsers(
        dest="subcommand", required=True
    )
    p = host.add_parser("load")
    p.add_argument("--host", required=True)
    p.set_defaults(func=cmd_host_load)

    p = sub.add_parser("topo").add_subparsers(dest="subcommand", required=True).add_parser("show")
    p.set_defaults(func=cmd_topo_show)

    p = sub.add_parser("stream", help="tail the event stream")
    p.add_argument("--max", type=int, default=0, help="stop after N events")
    p.add_argument("--timeout", type=float, default=0.0)
    p.set_defaults(func=cmd_stream)

    b = sub.add_parser("bench", help="benchmarks").add_subparsers(
        dest="subcommand", required=True
    )
    p = b.add_parser("migrate-compare")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--template", default="scalar", choices=sorted(bench_mod.TEMPLATES))
    p.add_argument("--hosts", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("PATROL_LOG", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError, TimeoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
