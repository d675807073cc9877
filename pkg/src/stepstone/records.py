"""Serializable run records and artifact I/O.

Artifacts are line-delimited JSON (step records, plot data) and CSV
(final tables). Serialization is canonical: fixed key order, no wall
clock, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from stepstone.env import QAPair, Task
from stepstone.errors import ContractViolation


@dataclass(frozen=True)
class StepReport:
    """One outer-step record. Field names are part of the log schema."""

    step: int
    rewards: tuple[float, ...]
    window_mean: float
    promoted: bool
    stage: int
    level_hist: tuple[int, ...]
    retries: int
    vendi: float
    cosine_div: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "rewards": list(self.rewards),
            "window_mean": self.window_mean,
            "promoted": self.promoted,
            "stage": self.stage,
            "level_hist": list(self.level_hist),
            "retries": self.retries,
            "vendi": self.vendi,
            "cosine_div": self.cosine_div,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "StepReport":
        return cls(
            step=int(data["step"]),
            rewards=tuple(float(r) for r in data["rewards"]),
            window_mean=float(data["window_mean"]),
            promoted=bool(data["promoted"]),
            stage=int(data["stage"]),
            level_hist=tuple(int(h) for h in data["level_hist"]),
            retries=int(data["retries"]),
            vendi=float(data["vendi"]),
            cosine_div=float(data["cosine_div"]),
        )


@dataclass(frozen=True)
class TaskSetSplit:
    """Disjoint halves of the filtered hard-task pool."""

    train: tuple[Task, ...]
    test: tuple[Task, ...]

    def __post_init__(self):
        train_ids = {t.id for t in self.train}
        test_ids = {t.id for t in self.test}
        if train_ids & test_ids:
            raise ContractViolation("train/test splits must be disjoint")


def task_to_dict(task: Task) -> dict:
    return {
        "id": task.id,
        "level": task.level,
        "answer": task.answer,
        "features": [float(x) for x in task.features],
    }


def task_from_dict(data: dict) -> Task:
    return Task(
        id=int(data["id"]),
        level=int(data["level"]),
        features=np.array(data["features"], dtype=np.float64),
        answer=int(data["answer"]),
    )


def qa_to_dict(qa: QAPair) -> dict:
    return {
        "task": task_to_dict(qa.task),
        "proposed_answer": qa.proposed_answer,
        "well_formed": qa.well_formed,
    }


def qa_from_dict(data: dict) -> QAPair:
    return QAPair(
        task=task_from_dict(data["task"]),
        proposed_answer=int(data["proposed_answer"]),
        well_formed=bool(data["well_formed"]),
    )


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write_json(path: Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def append_jsonl(path: Path, line: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as handle:
        handle.write(line + "\n")
        handle.flush()
        os.fsync(handle.fileno())


def write_jsonl(path: Path, lines: Iterable[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "\n".join(lines)
    path.write_text(body + "\n" if body else "")


def read_jsonl(path: Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(str(cell) for cell in row))
    path.write_text("\n".join(out) + "\n")
