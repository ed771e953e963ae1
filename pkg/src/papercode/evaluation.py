"""Confusion-matrix metrics, decision thresholding, sweeps, and report rendering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .ioutil import ValidationError


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be >= 0")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_record(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass
class MetricReport:
    threshold: float
    acc: float
    macro_f1: float
    binary_f1: float
    mcc: float
    confusion: ConfusionMatrix | None
    n: int
    seed: int | None = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "threshold": self.threshold,
            "acc": self.acc,
            "macro_f1": self.macro_f1,
            "binary_f1": self.binary_f1,
            "mcc": self.mcc,
            "n": self.n,
        }
        if self.confusion is not None:
            record["confusion"] = self.confusion.to_record()
        if self.seed is not None:
            record["seed"] = self.seed
        return record


@dataclass
class SweepReport:
    grid: list[float]
    rows: list[MetricReport]
    best_by: dict[str, float]  # metric name -> threshold

    def to_record(self) -> dict[str, Any]:
        return {
            "grid": self.grid,
            "rows": [row.to_record() for row in self.rows],
            "best_by": self.best_by,
        }


def binarize(p_positive: Sequence[float], threshold: float) -> list[int]:
    """Predicted label 1 iff p_positive >= threshold; threshold must be in (0, 1)."""
    if not (0.0 < threshold < 1.0):
        raise ValidationError(f"threshold must lie in (0, 1): {threshold}")
    return [1 if p >= threshold else 0 for p in p_positive]


def confusion(predicted: Sequence[int], actual: Sequence[int]) -> ConfusionMatrix:
    """Standard counts with the consistent class (y=1) as positive."""
    if len(predicted) != len(actual):
        raise ValidationError(f"length mismatch: {len(predicted)} vs {len(actual)}")
    if not predicted:
        raise ValidationError("cannot build a confusion matrix from zero examples")
    cm = ConfusionMatrix()
    for yhat, y in zip(predicted, actual):
        if y == 1 and yhat == 1:
            cm.tp += 1
        elif y == 0 and yhat == 1:
            cm.fp += 1
        elif y == 1 and yhat == 0:
            cm.fn += 1
        else:
            cm.tn += 1
    return cm


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(acc, macro_f1, mcc); MCC is 0 when its denominator degenerates."""
    if cm.n < 1:
        raise ValidationError("empty confusion matrix")
    acc = (cm.tp + cm.tn) / cm.n
    macro_f1 = (_f1(cm.tp, cm.fp, cm.fn) + _f1(cm.tn, cm.fn, cm.fp)) / 2
    denominator = (
        (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    )
    if denominator == 0:
        mcc = 0.0
    else:
        mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denominator)
    return acc, macro_f1, mcc


def report_at(
    p_positive: Sequence[float],
    labels: Sequence[int],
    threshold: float,
    seed: int | None = None,
) -> MetricReport:
    cm = confusion(binarize(p_positive, threshold), labels)
    acc, macro_f1, mcc = metrics(cm)
    return MetricReport(
        threshold=threshold,
        acc=acc,
        macro_f1=macro_f1,
        binary_f1=_f1(cm.tp, cm.fp, cm.fn),
        mcc=mcc,
        confusion=cm,
        n=cm.n,
        seed=seed,
    )


DEFAULT_GRID = (0.40, 0.45, 0.50, 0.55, 0.60)


def threshold_sweep(
    p_positive: Sequence[float],
    labels: Sequence[int],
    grid: Sequence[float] = DEFAULT_GRID,
) -> SweepReport:
    """One MetricReport per threshold; ties prefer 0.5, then the lower threshold."""
    grid = list(grid)
    if not grid:
        raise ValidationError("threshold grid must be non-empty")
    if any(a >= b for a, b in zip(grid, grid[1:])):
        raise ValidationError("threshold grid must be strictly increasing")
    rows = [report_at(p_positive, labels, t) for t in grid]
    best_by: dict[str, float] = {}
    for metric in ("acc", "macro_f1", "mcc"):
        best_value = max(getattr(row, metric) for row in rows)
        candidates = [row.threshold for row in rows if getattr(row, metric) == best_value]
        best_by[metric] = 0.5 if 0.5 in candidates else min(candidates)
    return SweepReport(grid=grid, rows=rows, best_by=best_by)


def load_external_scores(path: Path, example_ids: Sequence[str]) -> list[float]:
    """Read `example_id<TAB>probability` lines and align them to dataset order."""
    path = Path(path)
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected `example_id<TAB>probability`"
                )
            example_id, raw = parts
            try:
                p = float(raw)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: bad probability {raw!r}") from exc
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"{path}:{lineno}: probability {p} outside [0, 1]")
            if example_id in scores:
                raise ValidationError(f"{path}:{lineno}: duplicate id {example_id}")
            scores[example_id] = p
    wanted = set(example_ids)
    missing = sorted(wanted - set(scores))
    extra = sorted(set(scores) - wanted)
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing ids: " + ", ".join(missing[:10]))
        if extra:
            parts.append("extra ids: " + ", ".join(extra[:10]))
        raise ValidationError(f"{path}: score coverage mismatch ({'; '.join(parts)})")
    return [scores[example_id] for example_id in example_ids]


def average_runs(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean of acc/macro-F1/MCC over seed runs; confusion is omitted."""
    if not reports:
        raise ValidationError("nothing to average")
    thresholds = {r.threshold for r in reports}
    if len(thresholds) != 1:
        raise ValidationError(f"mixed thresholds: {sorted(thresholds)}")
    sizes = {r.n for r in reports}
    if len(sizes) != 1:
        raise ValidationError(f"mixed evaluation sizes: {sorted(sizes)}")
    k = len(reports)
    return MetricReport(
        threshold=reports[0].threshold,
        acc=sum(r.acc for r in reports) / k,
        macro_f1=sum(r.macro_f1 for r in reports) / k,
        binary_f1=sum(r.binary_f1 for r in reports) / k,
        mcc=sum(r.mcc for r in reports) / k,
        confusion=None,
        n=reports[0].n,
    )


LOSS_VARIANTS = ("CE", "Focal", "WeightedCE", "WeightedFocal")


def loss_ablation(
    features_train,
    labels_train,
    features_val,
    labels_val,
    features_eval,
    labels_eval,
    train_cfg,
    gamma: float = 2.0,
    alpha: tuple[float, float] = (1.0, 5.0),
    threshold: float = 0.5,
) -> tuple[list[tuple[str, MetricReport]], dict[tuple[str, int], list[float]]]:
    """Train one native model per loss variant under identical settings.

    Returns the averaged Acc/F1/MCC rows plus the per-(variant, seed)
    probabilities so every row can be recomputed from stored predictions.
    """
    from .classifier import LossConfig, predict_probabilities, train

    rows: list[tuple[str, MetricReport]] = []
    scores: dict[tuple[str, int], list[float]] = {}
    for name in LOSS_VARIANTS:
        cfg = LossConfig(
            gamma=gamma if "Focal" in name else 0.0,
            alpha=alpha if name.startswith("Weighted") else (1.0, 1.0),
        )
        reports = []
        for seed in train_cfg.seeds:
            model, _ = train(
                features_train, labels_train, features_val, labels_val,
                train_cfg, cfg, seed=seed,
            )
            p_positive = predict_probabilities(model, features_eval)[:, 1].tolist()
            scores[(name, seed)] = p_positive
            reports.append(report_at(p_positive, labels_eval, threshold, seed=seed))
        rows.append((name, average_runs(reports)))
    return rows, scores


# --- rendering --------------------------------------------------------------------


def baseline_accuracy(labels: Sequence[int]) -> float:
    """Accuracy of the all-negative predictor (the negative prevalence)."""
    if not labels:
        return 0.0
    return sum(1 for y in labels if y == 0) / len(labels)


def render_metric_table(
    rows: Sequence[tuple[str, MetricReport]],
    first_column: str,
    baseline_acc: float | None = None,
) -> str:
    """Aligned text table with Acc / F1 / MCC columns."""
    header = [first_column, "Acc", "F1", "MCC"]
    body = [[name, f"{r.acc:.4f}", f"{r.macro_f1:.4f}", f"{r.mcc:.4f}"] for name, r in rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    if baseline_acc is not None:
        lines.append("")
        lines.append(f"all-negative baseline accuracy: {baseline_acc:.4f}")
        flagged = [name for name, r in rows if r.acc <= baseline_acc]
        if flagged:
            lines.append("NOT beating the baseline: " + ", ".join(flagged))
    return "\n".join(lines) + "\n"
