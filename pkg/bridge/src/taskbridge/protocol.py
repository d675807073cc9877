"""Wire protocol v1: newline-delimited JSON over standard streams.

Requests:  {"protocol": "v1", "id": <int>, "cmd": <str>, "payload": {...}}
Responses: {"protocol": "v1", "id": <int>, "status": "ok"|"error", "payload": {...}}

Ids are strictly increasing per session and every request is answered
exactly once, in order. Serialization is canonical (fixed key order, no
whitespace) so transcripts can be compared byte for byte.
"""

from __future__ import annotations

import json

PROTOCOL_VERSION = "v1"

COMMANDS = ("sample", "greedy_eval", "rl_update", "snapshot", "restore")


class ProtocolError(Exception):
    """Raised for malformed requests; the session continues."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode(message: dict) -> str:
    return json.dumps(message, separators=(",", ":"))


def ok_response(request_id: int, payload: dict) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "id": request_id,
        "status": "ok",
        "payload": payload,
    }


def error_response(request_id: int, code: str, message: str) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "id": request_id,
        "status": "error",
        "payload": {"code": code, "message": message},
    }


def parse_request(line: str, expected_id: int) -> tuple[int, str, dict]:
    """Validate one request line; returns (id, cmd, payload)."""
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("bad_json", f"unparseable request: {exc}") from exc
    if not isinstance(message, dict):
        raise ProtocolError("bad_request", "request must be a JSON object")
    if message.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolError(
            "bad_protocol", f"expected protocol {PROTOCOL_VERSION!r}"
        )
    request_id = message.get("id")
    if not isinstance(request_id, int):
        raise ProtocolError("bad_id", "request id must be an integer")
    if request_id != expected_id:
        raise ProtocolError(
            "bad_id", f"ids must increase by one; expected {expected_id}"
        )
    cmd = message.get("cmd")
    if cmd not in COMMANDS:
        raise ProtocolError("bad_cmd", f"cmd must be one of {COMMANDS}")
    payload = message.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("bad_payload", "payload must be a JSON object")
    return request_id, cmd, payload
