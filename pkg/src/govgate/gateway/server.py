"""JSON-over-HTTP transport for the embedded gateway."""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse

from govgate.enforcement import AlreadyResolved, UnknownTicket
from govgate.gateway.service import ActionSubmission, Gateway, GatewayError
from govgate.policy import CompileError, PolicyError

log = logging.getLogger(__name__)

MAX_BODY = 4 * 1024 * 1024


def parse_listen(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


class _Handler(BaseHTTPRequestHandler):
    server: "GatewayServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing ---------------------------------------------------------

    def _send(self, status: int, body: object) -> None:
        data = json.dumps(body, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, exc: BaseException | str, **extra) -> None:
        name = type(exc).__name__ if isinstance(exc, BaseException) else "Error"
        self._send(status, {"error": name, "message": str(exc), **extra})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise ValueError("request body too large")
        return self.rfile.read(length) if length else b""

    def _json(self):
        try:
            return json.loads(self._body() or b"null")
        except json.JSONDecodeError as exc:
            raise ValueError(f"body is not JSON: {exc.msg}") from None

    def _dispatch(self, method: str) -> None:
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.strip("/").split("/") if p]
        gw = self.server.gateway
        try:
            if parts[:1] != ["v1"]:
                return self._error(404, "unknown endpoint")
            route = parts[1:]
            if method == "GET" and route == ["health"]:
                return self._send(200, gw.health())
            if method == "POST" and route == ["actions"]:
                sub = ActionSubmission.from_dict(self._json())
                return self._send(200, gw.intercept(sub).to_dict())
            if method == "PUT" and len(route) == 2 and route[0] == "policies":
                version = gw.put_policy(self._body(), route[1])
                return self._send(200, {"domain": route[1], "version": version})
            if method == "GET" and len(route) == 2 and route[0] == "trust":
                domain = (parse_qs(url.query).get("domain") or [None])[0]
                return self._send(200, gw.get_trust(route[1], domain))
            if method == "GET" and route == ["escalations"]:
                status = (parse_qs(url.query).get("status") or [None])[0]
                return self._send(200, [t.to_dict() for t in gw.list_escalations(status)])
            if method == "POST" and len(route) == 3 and route[0] == "escalations" and route[2] == "resolve":
                body = self._json() or {}
                ticket = gw.resolve_escalation(route[1], body.get("resolution", ""), body.get("reviewer", ""))
                return self._send(200, ticket.to_dict())
            return self._error(404, "unknown endpoint")
        except GatewayError as exc:
            self._error(exc.status, exc)
        except CompileError as exc:
            self._error(422, exc, findings=[str(f) for f in exc.findings])
        except PolicyError as exc:
            self._error(422, exc)
        except UnknownTicket as exc:
            self._error(404, exc)
        except AlreadyResolved as exc:
            self._error(409, exc)
        except ValueError as exc:
            self._error(400, exc)
        except Exception as exc:  # keep the server alive; report the failure
            log.exception("request failed")
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, exc)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_PUT(self) -> None:
        self._dispatch("PUT")


class GatewayServer(ThreadingHTTPServer):
    """Threaded HTTP server bound to one gateway instance."""

    daemon_threads = True

    def __init__(self, gateway: Gateway, host: str = "127.0.0.1", port: int = 0) -> None:
        self.gateway = gateway
        super().__init__((host, port), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.serve_forever, name="gateway-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()
