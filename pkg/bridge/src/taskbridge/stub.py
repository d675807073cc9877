"""Deterministic stand-in model for protocol tests.

Behaves like a trainable generator without any real inference: sampling
is a pure function of (prompt, seed, index, training state), training
bumps an internal counter, and snapshot/restore move that counter, so
restore semantics are observable through greedy_eval.
"""

from __future__ import annotations

import hashlib

from taskbridge.parsing import parse_teacher_output
from taskbridge.protocol import ProtocolError


def stable_digest(*parts) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


class EchoModel:
    """The 'echo' model spec: deterministic, stateful only via updates."""

    def __init__(self):
        self.updates = 0
        self._snapshots: dict[str, int] = {}
        self._next_token = 0

    def _completion_text(self, prompt: str, seed: int, index: int) -> str:
        h = stable_digest(prompt, seed, index, self.updates)
        if h % 4 == 3:
            # deliberately malformed: closing answer tag missing
            return f"<question>fragment {h % 1000}</question><answer>\\boxed{{"
        topic = h % 1000
        answer = h % 97
        return (
            f"thinking about item {topic}. "
            f"<question>practice item {topic}: compute value {answer}.</question>"
            f"<answer>\\boxed{{{answer}}}</answer>"
        )

    def sample(self, payload: dict) -> dict:
        prompts = payload.get("prompts")
        if not isinstance(prompts, list) or not prompts:
            raise ProtocolError("bad_payload", "sample needs a nonempty prompts list")
        n = int(payload.get("n", 1))
        seed = int(payload.get("seed", 0))
        want_parse = bool(payload.get("parse", False))
        completions = []
        for prompt in prompts:
            row = []
            for index in range(n):
                text = self._completion_text(str(prompt), seed, index)
                entry = {"text": text}
                if want_parse:
                    entry["parsed"] = parse_teacher_output(text)
                row.append(entry)
            completions.append(row)
        return {"completions": completions}

    def greedy_eval(self, payload: dict) -> dict:
        questions = payload.get("questions")
        if not isinstance(questions, list) or not questions:
            raise ProtocolError("bad_payload", "greedy_eval needs questions")
        correct = []
        for item in questions:
            h = stable_digest(item.get("question", ""), "greedy")
            # more training states unlock more questions, capped at 80%
            correct.append(h % 10 < min(self.updates, 8))
        accuracy = sum(correct) / len(correct)
        return {"accuracy": accuracy, "correct": correct}

    def rl_update(self, payload: dict) -> dict:
        items = payload.get("items")
        if not isinstance(items, list) or not items:
            raise ProtocolError("bad_payload", "rl_update needs items")
        steps = int(payload.get("steps", 1))
        self.updates += 1
        reward = round(10.0 + 2.0 * min(self.updates, 10) + 0.1 * min(steps, 50), 4)
        return {"checkpoint": self._mint_snapshot(), "train_reward": reward}

    def snapshot(self, payload: dict) -> dict:
        return {"checkpoint": self._mint_snapshot()}

    def restore(self, payload: dict) -> dict:
        token = payload.get("checkpoint")
        if token not in self._snapshots:
            raise ProtocolError("unknown_checkpoint", f"no snapshot {token!r}")
        self.updates = self._snapshots[token]
        return {"restored": True}

    def _mint_snapshot(self) -> str:
        token = f"ckpt-{self._next_token}"
        self._next_token += 1
        self._snapshots[token] = self.updates
        return token


MODELS = {"echo": EchoModel}


def load_model(spec: str):
    if spec not in MODELS:
        raise ValueError(f"unknown model spec {spec!r}; available: {sorted(MODELS)}")
    return MODELS[spec]()
