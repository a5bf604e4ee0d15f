"""Affective-analysis metrics: binary/7-class accuracy, weighted PRF, regression stats."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateVariance, EmptyAfterFiltering


@dataclass
class MetricReport:
    acc2: Optional[float] = None
    acc2_weak: Optional[float] = None
    acc7: Optional[float] = None
    f1_weighted: Optional[float] = None
    precision_weighted: Optional[float] = None
    recall_weighted: Optional[float] = None
    pearson_corr: Optional[float] = None
    mae: Optional[float] = None
    r2: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def format_table(self) -> str:
        """Values x100 with 2 decimals, one metric per line."""
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k:20s} {v * 100:8.2f}")
        return "\n".join(lines)


def acc2(preds: Sequence[float], labels: Sequence[float],
         mode: str = "neg_vs_nonneg") -> float:
    """Binary sign-agreement accuracy.

    mode "neg_vs_nonneg": classes are label < 0 vs label >= 0.
    mode "neg_vs_pos_excluding_zero": samples with label == 0 are dropped first.
    """
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if mode == "neg_vs_pos_excluding_zero":
        keep = y != 0
        p, y = p[keep], y[keep]
    elif mode != "neg_vs_nonneg":
        raise ValueError(f"unknown acc2 mode {mode!r}")
    if p.size == 0:
        raise EmptyAfterFiltering("no samples left for acc2")
    return float(np.mean((p >= 0) == (y >= 0)))


def acc2_weak(preds: Sequence[float], labels: Sequence[float], band: float = 0.4) -> float:
    """acc2 (neg_vs_nonneg) restricted to weak-intensity samples |label| <= band."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    keep = np.abs(y) <= band
    if not keep.any():
        raise EmptyAfterFiltering(f"no samples with |label| <= {band}")
    return acc2(p[keep], y[keep], mode="neg_vs_nonneg")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def acc7(preds: Sequence[float], labels: Sequence[float]) -> float:
    """7-class accuracy: clamp to [-3, 3], round half away from zero, exact match."""
    p = _round_half_away(np.clip(np.asarray(preds, dtype=np.float64), -3, 3))
    y = _round_half_away(np.clip(np.asarray(labels, dtype=np.float64), -3, 3))
    return float(np.mean(p == y))


def weighted_prf(pred_classes: Sequence, label_classes: Sequence) -> tuple[float, float, float]:
    """Per-class precision/recall/F1 weighted by true-class support.

    Classes never predicted (or with P+R = 0) contribute 0 per convention.
    """
    preds = list(pred_classes)
    labels = list(label_classes)
    if not labels:
        raise ValueError("weighted_prf needs at least one sample")
    n = len(labels)
    classes = sorted(set(labels), key=str)
    p_w = r_w = f_w = 0.0
    for c in classes:
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        n_pred = sum(1 for p in preds if p == c)
        n_true = sum(1 for y in labels if y == c)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_true if n_true else 0.0
        f1 = 2 * prec * rec / (prec + rec) if (prec + rec) else 0.0
        w = n_true / n
        p_w += w * prec
        r_w += w * rec
        f_w += w * f1
    return p_w, r_w, f_w


def regression_stats(preds: Sequence[float], labels: Sequence[float]) -> tuple[float, float, float]:
    """(pearson_corr, mae, r2)."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size < 2:
        raise ValueError("regression_stats needs >= 2 samples")
    mae = float(np.mean(np.abs(p - y)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateVariance("labels are all equal")
    if np.std(p) == 0:
        corr = 0.0  # constant predictions: correlation undefined, reported as 0
    else:
        corr = float(np.corrcoef(p, y)[0, 1])
    r2 = 1.0 - float(np.sum((p - y) ** 2)) / ss_tot
    return corr, mae, r2


def regression_report(preds, labels, acc2_mode: str = "neg_vs_nonneg",
                      weak_band: float = 0.4, include_acc7: bool = False) -> MetricReport:
    corr, mae, r2 = regression_stats(preds, labels)
    rep = MetricReport(
        acc2=acc2(preds, labels, mode=acc2_mode),
        pearson_corr=corr, mae=mae, r2=r2,
    )
    try:
        rep.acc2_weak = acc2_weak(preds, labels, band=weak_band)
    except EmptyAfterFiltering:
        pass
    if include_acc7:
        rep.acc7 = acc7(preds, labels)
    return rep


def classification_report(pred_classes, label_classes) -> MetricReport:
    p, r, f = weighted_prf(pred_classes, label_classes)
    return MetricReport(precision_weighted=p, recall_weighted=r, f1_weighted=f)
