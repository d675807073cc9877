"""Long-running worker: answer protocol requests from stdin on stdout.

Malformed requests produce an error response and the session continues;
an unrecoverable model failure emits a fatal record and exits cleanly.
"""

from __future__ import annotations

import sys

from taskbridge.protocol import (
    ProtocolError,
    encode,
    error_response,
    ok_response,
    parse_request,
)
from taskbridge.stub import load_model


def serve(model, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    next_id = 0
    for line in stdin:
        if not line.strip():
            continue
        try:
            request_id, cmd, payload = parse_request(line, expected_id=next_id)
        except ProtocolError as exc:
            stdout.write(encode(error_response(next_id, exc.code, str(exc))) + "\n")
            stdout.flush()
            continue
        next_id = request_id + 1
        try:
            result = getattr(model, cmd)(payload)
            response = ok_response(request_id, result)
        except ProtocolError as exc:
            response = error_response(request_id, exc.code, str(exc))
        except Exception as exc:  # model failure is fatal but clean
            stdout.write(
                encode(error_response(request_id, "fatal", f"model failure: {exc}"))
                + "\n"
            )
            stdout.flush()
            return 1
        stdout.write(encode(response) + "\n")
        stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="taskbridge")
    parser.add_argument("--model", default="echo", help="model spec to serve")
    args = parser.parse_args(argv)
    return serve(load_model(args.model))
