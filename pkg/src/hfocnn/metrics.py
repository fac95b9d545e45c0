"""Confusion matrix, the four per-segment metrics and multi-run aggregation.

HFO is the positive class. A metric whose denominator is zero is ``None``
(undefined) and is left out of aggregation instead of being counted as 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .errors import LengthMismatch, TooFewRuns

METRIC_NAMES = ("precision", "recall", "specificity", "f1")
_TABLE_ROWS = {"precision": "Precision", "recall": "Recall",
               "specificity": "Specificity", "f1": "F1-score"}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """Same predictions scored with the other class as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


@dataclass(frozen=True)
class MetricSet:
    precision: float | None
    recall: float | None
    specificity: float | None
    f1: float | None

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _is_positive(label) -> bool:
    # accepts Label enums, "HFO"/"NHFO" strings, or 1/0
    if isinstance(label, str):
        label = label.upper()
        if label not in ("HFO", "NHFO"):
            raise ValueError(f"unknown label {label!r}")
        return label == "HFO"
    name = getattr(label, "name", None)
    if name is not None:
        return name == "HFO"
    return bool(label)


def confusion(predictions, truth) -> ConfusionMatrix:
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise LengthMismatch(
            f"{len(predictions)} predictions for {len(truth)} ground-truth labels")
    tp = fp = tn = fn = 0
    for p, t in zip(predictions, truth):
        p, t = _is_positive(p), _is_positive(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(cm: ConfusionMatrix) -> MetricSet:
    return MetricSet(
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        recall=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        f1=_ratio(cm.tp, cm.tp + 0.5 * (cm.fn + cm.fp)),
    )


@dataclass(frozen=True)
class Summary:
    mean: float | None
    sd: float | None
    se: float | None
    n_defined: int
    n_excluded: int


def summarize(values) -> Summary:
    values = list(values)
    defined = [v for v in values if v is not None]
    n = len(defined)
    if n == 0:
        return Summary(None, None, None, 0, len(values))
    mean = math.fsum(defined) / n
    if n < 2:
        return Summary(mean, None, None, n, len(values) - n)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in defined) / (n - 1))
    return Summary(mean, sd, sd / math.sqrt(n), n, len(values) - n)


def aggregate(runs) -> dict[str, Summary]:
    """Per-metric mean, sample sd (n-1) and standard error over runs."""
    runs = list(runs)
    if len(runs) < 2:
        raise TooFewRuns(f"aggregation needs at least 2 runs, got {len(runs)}")
    return {name: summarize(getattr(r, name) for r in runs) for name in METRIC_NAMES}


# --- report rendering -----------------------------------------------------

def _num(v):
    return "" if v is None else f"{v:.6f}"


def report_csv(table: dict[str, dict[str, Summary]]) -> str:
    """``table`` maps color set -> metric -> Summary."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "color_set", "mean", "sd", "se", "n_defined"])
    for name in METRIC_NAMES:
        for color_set, summaries in table.items():
            s = summaries[name]
            writer.writerow([name, color_set, _num(s.mean), _num(s.sd), _num(s.se), s.n_defined])
    return buf.getvalue()


def _cell(s: Summary, spread: str) -> str:
    if s.mean is None:
        return "undefined"
    d = getattr(s, spread)
    return f"{100 * s.mean:.0f}% ± {100 * d:.0f}%" if d is not None else f"{100 * s.mean:.0f}%"


def report_table(table: dict[str, dict[str, Summary]], spread: str = "se") -> str:
    """Fixed-width metrics summary, one row per metric, one column per color set."""
    title = {"se": "MEAN ± STANDARD ERROR", "sd": "MEAN ± STANDARD DEVIATION"}[spread]
    cols = list(table)
    cells = [[_TABLE_ROWS[m]] + [_cell(table[c][m], spread) for c in cols] for m in METRIC_NAMES]
    header = [""] + cols
    widths = [max(len(r[k]) for r in cells + [header]) for k in range(len(header))]

    def fmt(row):
        return "  ".join(f"{v:<{widths[0]}}" if k == 0 else f"{v:>{widths[k]}}"
                         for k, v in enumerate(row))

    lines = [f"METRICS SUMMARY ({title})", fmt(header)] + [fmt(r) for r in cells]
    return "\n".join(lines) + "\n"
