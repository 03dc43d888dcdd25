"""Run persistence and reporting: JSONL metric streams, run records,
multi-seed aggregation, and the score-vs-FLOPs trade-off table.

Run directory layout:
    runs/<run_id>/config.json      fully resolved configuration
    runs/<run_id>/metrics.jsonl    one record per evaluation
    runs/<run_id>/record.json      RunRecord (final summary, wall-clock)
    runs/<run_id>/checkpoints/     weight checkpoints
    runs/<run_id>/derived_arch.json  (search runs, after derivation)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """Stable under key reordering (canonical serialization)."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


class JsonlWriter:
    """Append-only JSONL stream; one writer per run file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8", newline="\n")

    def write(self, record: dict):
        self._fh.write(canonical_json(record) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    seed: int
    task: str
    model: str
    evals: list = field(default_factory=list)  # [{step, mean_score}, ...]
    final: dict = field(default_factory=dict)  # {score, mflops, params}
    wall_clock: float = 0.0

    def validate(self):
        steps = [e["step"] for e in self.evals]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"{self.run_id}: eval steps must be strictly increasing")
        return self

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "RunRecord":
        return RunRecord(**json.loads(Path(path).read_text()))


def aggregate(records, group_keys):
    """Per-group mean/std/min/max of final scores plus the seed count.

    std is the population standard deviation.  Raises on an empty record
    list; output rows are sorted by group key for order invariance.
    """
    if not records:
        raise ValueError("aggregate: no records")
    groups: dict[tuple, list] = {}
    for r in records:
        key = tuple(getattr(r, k) for k in group_keys)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        scores = np.array([r.final["score"] for r in groups[key]])
        row = dict(zip(group_keys, key))
        row.update(
            mean=float(scores.mean()),
            std=float(scores.std()),
            min=float(scores.min()),
            max=float(scores.max()),
            count=len(scores),
        )
        rows.append(row)
    return rows


def tradeoff_report(records, task_filter=None) -> str:
    """CSV of (task, model, mflops, score) sorted by task then FLOPs, with a
    per-task ratio column: best-scoring baseline's FLOPs over the searched
    model's FLOPs.  Models named 'searched*' count as searched."""
    if task_filter is not None:
        records = [r for r in records if r.task == task_filter]
    if not records:
        raise ValueError(f"tradeoff_report: no records for task filter {task_filter!r}")

    by_task: dict[str, list] = {}
    for r in records:
        by_task.setdefault(r.task, []).append(r)

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["task", "model", "mflops", "score", "baseline_flops_ratio"])
    for task in sorted(by_task):
        rows = sorted(by_task[task], key=lambda r: r.final["mflops"])
        baselines = [r for r in rows if not r.model.startswith("searched")]
        best_baseline = max(baselines, key=lambda r: r.final["score"]) if baselines else None
        for r in rows:
            ratio = ""
            if r.model.startswith("searched") and best_baseline is not None:
                ratio = f"{best_baseline.final['mflops'] / r.final['mflops']:.3f}"
            writer.writerow(
                [task, r.model, f"{r.final['mflops']:.4f}", f"{r.final['score']:.4f}", ratio]
            )
    return out.getvalue()


def run_dir(out_root, run_id) -> Path:
    d = Path(out_root) / run_id
    (d / "checkpoints").mkdir(parents=True, exist_ok=True)
    return d
