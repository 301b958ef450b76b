"""Manager console API: JSON over HTTP plus a server-push event stream.

Binds loopback by default; this is operator tooling, not a public surface.
The endpoint list below is the contract the CLI and the web console build
against, and the parity tests enumerate it.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .manager import HostInactive, Manager, UnknownTask
from .messages import ControlVerb
from .taskmodel import InvalidForm

log = logging.getLogger(__name__)

ENDPOINTS: list[tuple[str, str]] = [
    ("GET", "/hosts"),
    ("GET", "/hosts/{host}/agents"),
    ("POST", "/hosts/{host}/agents/{id}/suspend"),
    ("POST", "/hosts/{host}/agents/{id}/resume"),
    ("POST", "/hosts/{host}/agents/{id}/activate"),
    ("GET", "/hosts/{host}/load"),
    ("GET", "/tasks"),
    ("POST", "/tasks"),
    ("PATCH", "/tasks/{name}/frequency"),
    ("GET", "/tasks/{name}/results"),
    ("GET", "/topology"),
    ("GET", "/stream"),
]

_ACTION_VERBS = {
    "suspend": ControlVerb.SUSPEND,
    "resume": ControlVerb.RESUME,
    "activate": ControlVerb.ACTIVATE,
}

_STATUS_CODES = {
    "OK": 200,
    "UNKNOWN_ID": 404,
    "BAD_STATE": 409,
    "AUTH_FAILED": 403,
}


class ApiServer:
    def __init__(
        self,
        manager: Manager,
        host: str = "127.0.0.1",
        port: int = 7702,
        console_dir: str | Path | None = None,
    ) -> None:
        self.manager = manager
        self.console_dir = Path(console_dir).resolve() if console_dir else None
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("api: " + fmt, *args)

            def do_GET(self):
                outer._route(self, "GET")

            def do_POST(self):
                outer._route(self, "POST")

            def do_PATCH(self):
                outer._route(self, "PATCH")

        class Server(ThreadingHTTPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server((host, port), Handler)
        self.host = host
        self.port = self._server.server_address[1]
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05),
            name=f"api@{self.port}",
            daemon=True,
        )
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=2.0)

    # -- routing ------------------------------------------------------------

    def _route(self, handler: BaseHTTPRequestHandler, method: str) -> None:
        parsed = urlparse(handler.path)
        segments = [unquote(s) for s in parsed.path.split("/") if s]
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        try:
            self._dispatch(handler, method, segments, query)
        except InvalidForm as exc:
            _send_json(handler, 400, {"error": "INVALID_FORM", "fields": exc.fields})
        except UnknownTask as exc:
            _send_json(handler, 404, {"error": "UNKNOWN_TASK", "detail": str(exc)})
        except HostInactive as exc:
            _send_json(handler, 409, {"error": "HOST_INACTIVE", "detail": str(exc)})
        except OSError as exc:
            _send_json(handler, 502, {"error": "REMOTE_UNREACHABLE", "detail": str(exc)})
        except BrokenPipeError:
            pass
        except Exception as exc:  # surfaced to the caller, not swallowed
            log.exception("api failure on %s %s", method, handler.path)
            try:
                _send_json(handler, 500, {"error": "INTERNAL", "detail": str(exc)})
            except OSError:
                pass

    def _dispatch(self, handler, method: str, seg: list[str], query: dict) -> None:
        m = self.manager
        if method == "GET" and seg == ["hosts"]:
            _send_json(handler, 200, [e.to_json() for e in m.directory_snapshot()])
        elif method == "GET" and len(seg) == 3 and seg[0] == "hosts" and seg[2] == "agents":
            resp = m.control_proxy(seg[1], ControlVerb.LIST_AGENTS)
            if not resp.ok:
                _send_json(handler, _STATUS_CODES.get(resp.status, 502), _resp_json(resp))
                return
            _send_json(handler, 200, [a.to_json(host=seg[1]) for a in resp.agents])
        elif (
            method == "POST"
            and len(seg) == 5
            and seg[0] == "hosts"
            and seg[2] == "agents"
            and seg[4] in _ACTION_VERBS
        ):
            resp = m.control_proxy(seg[1], _ACTION_VERBS[seg[4]], agent_id=seg[3])
            _send_json(handler, _STATUS_CODES.get(resp.status, 502), _resp_json(resp))
        elif method == "GET" and len(seg) == 3 and seg[0] == "hosts" and seg[2] == "load":
            resp = m.control_proxy(seg[1], ControlVerb.GET_LOAD)
            if resp.ok and resp.load:
                _send_json(handler, 200, resp.load.to_json())
            else:
                _send_json(handler, _STATUS_CODES.get(resp.status, 502), _resp_json(resp))
        elif method == "GET" and seg == ["tasks"]:
            _send_json(handler, 200, m.task_snapshot())
        elif method == "POST" and seg == ["tasks"]:
            _send_json(handler, 201, m.create_task(_read_json(handler)))
        elif method == "PATCH" and len(seg) == 3 and seg[0] == "tasks" and seg[2] == "frequency":
            body = _read_json(handler)
            _send_json(handler, 200, m.set_task_frequency(seg[1], int(body.get("seconds", 0))))
        elif method == "GET" and len(seg) == 3 and seg[0] == "tasks" and seg[2] == "results":
            since = float(query["since"]) if "since" in query else None
            records = m.query_results(
                task=seg[1], host=query.get("host"), since=since, kind=query.get("kind")
            )
            _send_json(handler, 200, records)
        elif method == "GET" and seg == ["topology"]:
            _send_json(handler, 200, m.topology_snapshot())
        elif method == "GET" and seg == ["stream"]:
            self._stream(handler)
        elif method == "GET" and self.console_dir:
            self._static(handler, seg)
        else:
            _send_json(handler, 404, {"error": "NO_SUCH_ENDPOINT", "detail": handler.path})

    # -- event stream ---------------------------------------------------------

    def _stream(self, handler) -> None:
        q = self.manager.events.subscribe()
        try:
            handler.send_response(200)
            handler.send_header("Content-Type", "text/event-stream")
            handler.send_header("Cache-Control", "no-cache")
            handler.send_header("Connection", "close")
            handler.end_headers()
            handler.wfile.write(b"event: hello\ndata: {}\n\n")
            handler.wfile.flush()
            while not self._stop.is_set():
                try:
                    event, data = q.get(timeout=1.0)
                except Exception:
                    handler.wfile.write(b": keep-alive\n\n")
                    handler.wfile.flush()
                    continue
                blob = json.dumps(data, sort_keys=True)
                handler.wfile.write(f"event: {event}\ndata: {blob}\n\n".encode())
                handler.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.manager.events.unsubscribe(q)

    # -- static console ----------------------------------------------------------

    def _static(self, handler, seg: list[str]) -> None:
        target = self.console_dir / Path(*seg) if seg else self.console_dir / "index.html"
        target = target.resolve()
        if target.is_dir():
            target = target / "index.html"
        if not str(target).startswith(str(self.console_dir)) or not target.is_file():
            _send_json(handler, 404, {"error": "NO_SUCH_ENDPOINT"})
            return
        body = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        handler.send_response(200)
        handler.send_header("Content-Type", ctype)
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)


def _resp_json(resp) -> dict:
    body = {"status": resp.status, "detail": resp.detail}
    if resp.status != "OK":
        body["error"] = resp.status
    return body


def _read_json(handler) -> dict:
    length = int(handler.headers.get("Content-Length") or 0)
    raw = handler.rfile.read(length) if length else b"{}"
    try:
        return json.loads(raw or b"{}")
    except json.JSONDecodeError:
        raise InvalidForm(["body"]) from None


def _send_json(handler, status: int, body) -> None:
    raw = json.dumps(body, sort_keys=True).encode()
    handler.send_response(status)
    handler.send_header("Content-Type", "application/json")
    handler.send_header("Content-Length", str(len(raw)))
    handler.end_headers()
    handler.wfile.write(raw)
