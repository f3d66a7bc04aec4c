"""Tuning results and their JSON / CSV serialisation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    stage: str
    af: str
    q: tuple[float, ...]
    q_norm: tuple[float, ...]
    j: float


@dataclass
class TuningResult:
    method: str
    best_q: tuple[float, ...]
    best_j: float
    trace: list[TraceEntry]
    counts: dict[str, int]
    wall_time: float = 0.0
    seed: int = 0
    space: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    dataset: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def evaluations(self) -> int:
        return len(self.trace)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([e.j for e in self.trace])

    def to_dict(self) -> dict:
        # wall time is deliberately left out so reruns serialise identically
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "seed": self.seed,
            "dataset": self.dataset,
            "best_q": list(self.best_q),
            "best_j": self.best_j,
            "evaluations": self.evaluations,
            "counts": dict(self.counts),
            "space": self.space,
            "config": self.config,
            "extra": self.extra,
            "trace": [
                {
                    "iteration": e.iteration,
                    "stage": e.stage,
                    "af": e.af,
                    "q": list(e.q),
                    "q_norm": list(e.q_norm),
                    "j": e.j,
                }
                for e in self.trace
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TuningResult":
        check_schema(d)
        trace = [
            TraceEntry(e["iteration"], e["stage"], e["af"], tuple(e["q"]), tuple(e["q_norm"]), e["j"])
            for e in d["trace"]
        ]
        return cls(
            method=d["method"],
            best_q=tuple(d["best_q"]),
            best_j=d["best_j"],
            trace=trace,
            counts=dict(d["counts"]),
            seed=d.get("seed", 0),
            space=d.get("space", {}),
            config=d.get("config", {}),
            dataset=d.get("dataset"),
            extra=d.get("extra", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "TuningResult":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def write_trace_csv(self, path: str | Path) -> None:
        d = len(self.best_q)
        best = self.best_so_far()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "stage", "af", *[f"q{i + 1}" for i in range(d)], "J", "best_J"])
            for e, b in zip(self.trace, best):
                w.writerow([e.iteration, e.stage, e.af, *[repr(float(v)) for v in e.q], repr(float(e.j)), repr(float(b))])


def check_schema(d: dict) -> None:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
