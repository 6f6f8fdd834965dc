"""Minimal client for the gateway's HTTP endpoints."""

from __future__ import annotations

import json
from typing import Any
from urllib import error, request
from urllib.parse import quote, urlencode

from govgate.gateway.service import ActionSubmission, EnforcementResponse


class GatewayHTTPError(RuntimeError):
    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body.get('error')}: {body.get('message')}")


class GatewayClient:
    def __init__(self, base_url: str, timeout: float = 10.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, body: Any = None, raw: bytes | None = None) -> Any:
        data = raw if raw is not None else (json.dumps(body).encode() if body is not None else None)
        req = request.Request(self.base_url + path, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read() or b"null")
        except error.HTTPError as exc:
            try:
                payload = json.loads(exc.read() or b"{}")
            except json.JSONDecodeError:
                payload = {"error": "HTTPError", "message": str(exc)}
            raise GatewayHTTPError(exc.code, payload) from None

    def submit(self, sub: ActionSubmission) -> EnforcementResponse:
        return EnforcementResponse.from_dict(self._call("POST", "/v1/actions", sub.to_dict()))

    def put_policy(self, document: str | bytes, domain: str) -> int:
        raw = document.encode() if isinstance(document, str) else document
        return self._call("PUT", f"/v1/policies/{quote(domain)}", raw=raw)["version"]

    def get_trust(self, agent_id: str, domain: str | None = None) -> dict:
        query = f"?{urlencode({'domain': domain})}" if domain else ""
        return self._call("GET", f"/v1/trust/{quote(agent_id)}{query}")

    def list_escalations(self, status: str | None = None) -> list[dict]:
        query = f"?{urlencode({'status': status})}" if status else ""
        return self._call("GET", f"/v1/escalations{query}")

    def resolve_escalation(self, ticket_id: str, resolution: str, reviewer: str) -> dict:
        body = {"resolution": resolution, "reviewer": reviewer}
        return self._call("POST", f"/v1/escalations/{quote(ticket_id)}/resolve", body)

    def health(self) -> dict:
        return self._call("GET", "/v1/health")
