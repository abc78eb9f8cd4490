"""Segmentation metrics: confusion counts, pixel accuracy, recall, IoU and Dice.

Pixel accuracy is the global fraction of correctly labeled pixels. Recall,
IoU and Dice are one-vs-rest per class and macro-averaged over the
foreground classes (``c >= 1``). A class with no pixels in the truth is
skipped from the macro average and listed in ``MetricsReport.skipped``;
with ``include_absent`` a class absent from both prediction and truth
counts as 1.0 instead. A macro average over no classes is NaN.
"""

import logging
import math
import shlex
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from adverseg.errors import ConfigError, DataError

logger = logging.getLogger("adverseg.metrics")

Averaging = Literal["macro", "per_class"]

COLUMNS = {
    "pa": "Pixel Accuracy",
    "recall": "Recall",
    "iou": "IOU",
    "dice": "Dice",
}


@dataclass
class ConfusionCounts:
    """Confusion matrix ``matrix[truth, pred]`` over pixels."""

    matrix: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionCounts":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.num_classes != self.num_classes:
            raise DataError("cannot merge confusion counts with different class counts")
        return ConfusionCounts(self.matrix + other.matrix)


def confusion(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> ConfusionCounts:
    """One-vs-rest counts for every class."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    for name, labels in (("prediction", pred), ("truth", truth)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(f"{name} has labels outside 0..{num_classes - 1}")
    flat = truth.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionCounts(counts.reshape(num_classes, num_classes))


def pixel_accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise DataError("pixel accuracy of an empty prediction")
    return float(counts.tp.sum()) / counts.total


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    defined = den > 0
    out[defined] = num[defined] / den[defined]
    return out


def per_class_recall(counts: ConfusionCounts) -> np.ndarray:
    return _ratio(counts.tp.astype(np.float64), (counts.tp + counts.fn).astype(np.float64))


def per_class_iou(counts: ConfusionCounts) -> np.ndarray:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return _ratio(tp.astype(np.float64), (tp + fp + fn).astype(np.float64))


def per_class_dice(counts: ConfusionCounts) -> np.ndarray:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return _ratio(2.0 * tp, (2 * tp + fp + fn).astype(np.float64))


def skipped_classes(counts: ConfusionCounts) -> list[int]:
    """Foreground classes with no pixels in the truth."""
    present = (counts.tp + counts.fn) > 0
    return [c for c in range(1, counts.num_classes) if not present[c]]


def _average(
    values: np.ndarray, counts: ConfusionCounts, averaging: Averaging, include_absent: bool
) -> float | np.ndarray:
    both_absent = (counts.tp + counts.fn + counts.fp) == 0
    if averaging == "per_class":
        out = values.copy()
        if include_absent:
            out[both_absent] = 1.0
        return out
    if averaging != "macro":
        raise ConfigError(f"unknown averaging '{averaging}'")
    in_truth = (counts.tp + counts.fn) > 0
    selected = [float(values[c]) for c in range(1, counts.num_classes) if in_truth[c]]
    if include_absent:
        selected += [1.0 for c in range(1, counts.num_classes) if both_absent[c]]
    if not selected:
        return math.nan
    return sum(selected) / len(selected)


def recall(
    counts: ConfusionCounts, averaging: Averaging = "macro", include_absent: bool = False
) -> float | np.ndarray:
    return _average(per_class_recall(counts), counts, averaging, include_absent)


def iou(
    counts: ConfusionCounts, averaging: Averaging = "macro", include_absent: bool = False
) -> float | np.ndarray:
    return _average(per_class_iou(counts), counts, averaging, include_absent)


def dice(
    counts: ConfusionCounts, averaging: Averaging = "macro", include_absent: bool = False
) -> float | np.ndarray:
    return _average(per_class_dice(counts), counts, averaging, include_absent)


def argmax_labels(prob_map: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the channel axis (``-3``); ties go to the lowest class."""
    if prob_map.ndim < 3:
        raise DataError(f"expected [..., C, H, W], got shape {prob_map.shape}")
    return np.argmax(prob_map, axis=-3).astype(np.uint8)


@dataclass
class MetricsReport:
    """Aggregate metrics of one model, plus per-class values."""

    model: str
    pixel_accuracy: float
    recall: float
    iou: float
    dice: float
    averaging: str = "macro_foreground"
    per_class: dict[str, list[float]] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    @classmethod
    def from_counts(
        cls, model: str, counts: ConfusionCounts, include_absent: bool = False
    ) -> "MetricsReport":
        skipped = [] if include_absent else skipped_classes(counts)
        if skipped:
            logger.info("classes %s absent from truth, skipped from the macro average", skipped)
        return cls(
            model=model,
            pixel_accuracy=pixel_accuracy(counts),
            recall=recall(counts, include_absent=include_absent),
            iou=iou(counts, include_absent=include_absent),
            dice=dice(counts, include_absent=include_absent),
            per_class={
                "recall": recall(counts, "per_class", include_absent).tolist(),
                "iou": iou(counts, "per_class", include_absent).tolist(),
                "dice": dice(counts, "per_class", include_absent).tolist(),
            },
            skipped=skipped,
        )

    def value(self, column: str) -> float:
        if column == "pa":
            return self.pixel_accuracy
        if column in ("recall", "iou", "dice"):
            return getattr(self, column)
        raise ConfigError(f"unknown column '{column}'; valid: {', '.join(COLUMNS)}")

    def to_kv(self) -> str:
        """Single ``key=value`` line; floats use ``repr`` so they parse back exactly."""
        parts = [
            f"model={shlex.quote(self.model)}",
            f"pa={self.pixel_accuracy!r}",
            f"recall={self.recall!r}",
            f"iou={self.iou!r}",
            f"dice={self.dice!r}",
        ]
        for metric, values in self.per_class.items():
            parts.append(f"{metric}_per_class=" + ",".join(repr(float(v)) for v in values))
        if self.skipped:
            parts.append("skipped=" + ",".join(str(c) for c in self.skipped))
        return " ".join(parts)

    @classmethod
    def from_kv(cls, line: str) -> "MetricsReport":
        try:
            fields = dict(token.split("=", 1) for token in shlex.split(line))
        except ValueError as exc:
            raise DataError(f"malformed report line: {line!r}") from exc
        missing = [k for k in ("model", "pa", "recall", "iou", "dice") if k not in fields]
        if missing:
            raise DataError(f"report line lacks {', '.join(missing)}: {line!r}")
        per_class = {}
        for metric in ("recall", "iou", "dice"):
            raw = fields.get(f"{metric}_per_class")
            if raw:
                per_class[metric] = [float(v) for v in raw.split(",")]
        skipped = fields.get("skipped", "")
        try:
            return cls(
                model=fields["model"],
                pixel_accuracy=float(fields["pa"]),
                recall=float(fields["recall"]),
                iou=float(fields["iou"]),
                dice=float(fields["dice"]),
                per_class=per_class,
                skipped=[int(c) for c in skipped.split(",") if c],
            )
        except ValueError as exc:
            raise DataError(f"non-numeric value in report line: {line!r}") from exc


def read_reports(text: str) -> list[MetricsReport]:
    """Parse every non-blank, non-comment line of a report file."""
    return [
        MetricsReport.from_kv(line)
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]


def parse_columns(spec: str) -> list[str]:
    columns = [c.strip() for c in spec.split(",") if c.strip()]
    unknown = [c for c in columns if c not in COLUMNS]
    if unknown or not columns:
        raise ConfigError(
            f"unknown column(s) {', '.join(unknown) or '(none)'}; valid: {', '.join(COLUMNS)}"
        )
    return columns


def _format_value(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.4f}"


def render_table(
    reports: Sequence[MetricsReport], columns: Sequence[str] = tuple(COLUMNS)
) -> str:
    """Fixed-width comparison table, one row per model, values to 4 decimals."""
    if not reports:
        raise DataError("no reports to render")
    for column in columns:
        if column not in COLUMNS:
            raise ConfigError(f"unknown column '{column}'; valid: {', '.join(COLUMNS)}")
    name_width = max(len("Model"), *(len(r.model) for r in reports))
    widths = [max(len(COLUMNS[c]), 6) for c in columns]
    header = "  ".join(
        ["Model".ljust(name_width)] + [COLUMNS[c].rjust(w) for c, w in zip(columns, widths)]
    )
    lines = [header, "-" * len(header)]
    for report in reports:
        cells = [_format_value(report.value(c)).rjust(w) for c, w in zip(columns, widths)]
        lines.append("  ".join([report.model.ljust(name_width)] + cells))
    return "\n".join(lines)
