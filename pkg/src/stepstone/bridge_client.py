"""Client side of the model-worker wire protocol (version v1).

The orchestrator talks to a worker subprocess over newline-delimited
JSON on standard streams. Requests carry strictly increasing ids and
every request is answered exactly once. Only the sampling surface is
wired into this package's CLI; training through a worker is out of
scope here.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from pathlib import Path

from stepstone.config import RunConfig
from stepstone.errors import ConfigurationError
from stepstone.records import atomic_write_json

PROTOCOL_VERSION = "v1"

TEACHER_PROMPT = (
    "Write one new self-contained practice problem with its answer. "
    "Wrap the problem in <question></question> tags and the answer in "
    "<answer>\\boxed{...}</answer> tags."
)


class BridgeClient:
    """One worker subprocess, requests serialized in id order."""

    def __init__(self, command: str):
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        self._next_id = 0

    def call(self, cmd: str, payload: dict) -> dict:
        request_id = self._next_id
        self._next_id += 1
        request = {
            "protocol": PROTOCOL_VERSION,
            "id": request_id,
            "cmd": cmd,
            "payload": payload,
        }
        assert self._proc.stdin and self._proc.stdout
        self._proc.stdin.write(json.dumps(request, separators=(",", ":")) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise ConfigurationError("bridge worker closed its output stream")
        response = json.loads(line)
        if response.get("id") != request_id:
            raise ConfigurationError(
                f"bridge answered id {response.get('id')} to request {request_id}"
            )
        if response.get("status") != "ok":
            code = response.get("payload", {}).get("code", "unknown")
            raise ConfigurationError(f"bridge error {code}: {response}")
        return response["payload"]

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)


def sample_via_bridge(
    config: RunConfig, command: str, teacher_seed: int, count: int
) -> list[dict]:
    """Collect `count` parseable teacher generations through a worker.

    The worker parses its own completions; unparseable ones are dropped
    and resampled, mirroring the in-process rejection loop.
    """
    client = BridgeClient(command)
    collected: list[dict] = []
    attempts = 0
    try:
        while len(collected) < count:
            if attempts > 64:
                raise ConfigurationError(
                    "bridge sampling made no progress; worker output unparseable"
                )
            payload = client.call(
                "sample",
                {
                    "prompts": [TEACHER_PROMPT],
                    "n": min(32, count - len(collected)),
                    "temperature": 1.0,
                    "max_tokens": 512,
                    "seed": teacher_seed * 1000 + attempts,
                    "parse": True,
                },
            )
            attempts += 1
            for completion in payload["completions"][0]:
                parsed = completion.get("parsed")
                if parsed is not None and len(collected) < count:
                    collected.append(parsed)
    finally:
        client.close()
    out = Path(config.output_dir)
    atomic_write_json(
        out / "samples" / f"bridge-t{teacher_seed}.json",
        {
            "config_hash": config.hash(),
            "teacher_seed": teacher_seed,
            "backend": "bridge",
            "items": collected,
        },
    )
    return collected
