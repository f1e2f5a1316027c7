"""Per-class precision/recall/F1, macro averages and split aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .labels import EMOTION, REACTION, class_names


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.tp)


def confusion(preds: Sequence[int], gold: Sequence[int], n_classes: int) -> ConfusionCounts:
    preds = np.asarray(preds, dtype=int)
    gold = np.asarray(gold, dtype=int)
    if preds.shape != gold.shape:
        raise ValueError("preds and gold differ in length")
    if preds.size and (preds.min() < 0 or gold.min() < 0 or preds.max() >= n_classes or gold.max() >= n_classes):
        raise ValueError(f"class index outside [0, {n_classes})")
    hit = preds == gold
    tp = np.bincount(gold[hit], minlength=n_classes)
    fp = np.bincount(preds[~hit], minlength=n_classes)
    fn = np.bincount(gold[~hit], minlength=n_classes)
    return ConfusionCounts(tp, fp, fn)


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=float)
    np.divide(a, b, out=out, where=b > 0)
    return out


@dataclass
class TaskMetrics:
    """Metrics for one task; ``std`` is filled only for aggregated reports."""

    task: str
    class_names: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    splits: int = 1
    std: dict | None = None

    @property
    def macro_p(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_r(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def to_json(self) -> dict:
        out = {
            "task": self.task,
            "per_class": {name: {"p": float(p), "r": float(r), "f1": float(f)}
                          for name, p, r, f in zip(self.class_names, self.precision, self.recall, self.f1)},
            "macro": {"p": self.macro_p, "r": self.macro_r, "f1": self.macro_f1},
            "splits": self.splits,
        }
        if self.std is not None:
            out["std"] = self.std
        return out


def macro_f1(counts: ConfusionCounts, task: str | None = None, names: Sequence[str] | None = None) -> TaskMetrics:
    """Per-class breakdown; a class with no support and no predictions scores 0."""
    p = _safe_div(counts.tp, counts.tp + counts.fp)
    r = _safe_div(counts.tp, counts.tp + counts.fn)
    f1 = _safe_div(2 * p * r, p + r)
    if names is None:
        names = class_names(task) if task else tuple(str(i) for i in range(counts.n_classes))
    return TaskMetrics(task or "", tuple(names), p, r, f1)


def task_metrics(preds, gold, task: str) -> TaskMetrics:
    names = class_names(task)
    return macro_f1(confusion(preds, gold, len(names)), task, names)


@dataclass
class MetricsReport:
    tasks: dict[str, TaskMetrics] = field(default_factory=dict)

    def __getitem__(self, task: str) -> TaskMetrics:
        return self.tasks[task]

    def average_f1(self) -> float:
        return float(np.mean([m.macro_f1 for m in self.tasks.values()]))

    def to_json(self) -> list[dict]:
        return [m.to_json() for m in self.tasks.values()]


def _aggregate_task(items: list[TaskMetrics]) -> TaskMetrics:
    first = items[0]
    for m in items[1:]:
        if m.task != first.task or m.class_names != first.class_names:
            raise ValueError("cannot aggregate reports of different shape")
    stack = {k: np.stack([getattr(m, k) for m in items]) for k in ("precision", "recall", "f1")}
    macro = {k: np.array([getattr(m, f"macro_{k}") for m in items]) for k in ("p", "r", "f1")}
    # population std (divide by n)
    std = {
        "per_class": {name: {"p": float(stack["precision"][:, i].std()), "r": float(stack["recall"][:, i].std()),
                             "f1": float(stack["f1"][:, i].std())} for i, name in enumerate(first.class_names)},
        "macro": {k: float(v.std()) for k, v in macro.items()},
    }
    return TaskMetrics(first.task, first.class_names, stack["precision"].mean(0), stack["recall"].mean(0),
                       stack["f1"].mean(0), splits=len(items), std=std)


def aggregate_splits(reports: Sequence):
    """Elementwise mean and population std over per-split reports.

    Accepts a list of :class:`TaskMetrics` or of :class:`MetricsReport`.
    """
    if not reports:
        raise ValueError("nothing to aggregate")
    if all(isinstance(r, TaskMetrics) for r in reports):
        return _aggregate_task(list(reports))
    keys = list(reports[0].tasks)
    if any(list(r.tasks) != keys for r in reports):
        raise ValueError("reports cover different tasks")
    return MetricsReport({k: _aggregate_task([r.tasks[k] for r in reports]) for k in keys})


def _fmt(value: float, std: float | None) -> str:
    return f"{value:.3f}" if std is None else f"{value:.3f} ({std:.3f})"


def render_table(rows: dict[str, TaskMetrics], title: str = "") -> str:
    """Plain-text F1 table: one row per model, one column per class plus the macro average."""
    if not rows:
        return title
    first = next(iter(rows.values()))
    header = ["", *first.class_names, "Macro Avg"]
    body = []
    for label, m in rows.items():
        per = m.std["per_class"] if m.std else None
        cells = [_fmt(f, per[n]["f1"] if per else None) for n, f in zip(m.class_names, m.f1)]
        cells.append(_fmt(m.macro_f1, m.std["macro"]["f1"] if m.std else None))
        body.append([label, *cells])
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    lines = [title] if title else []
    line = lambda r: " | ".join(str(c).ljust(w) for c, w in zip(r, widths))
    lines.append(line(header))
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(line(r) for r in body)
    return "\n".join(lines)


TASKS = (REACTION, EMOTION)
