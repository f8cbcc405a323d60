"""Depth evaluation metrics: RMSE, RMSE(log), SILog, relative errors,
threshold accuracies, and mean log10 error, all over valid pixels only.

``evaluate`` aggregates a stream of prediction/ground-truth pairs into one
report with optional distance capping; accumulation is single-pass in
float64 and pixel-weighted (one global pool of valid pixels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import EvaluationError

__all__ = [
    "DepthPair",
    "ThresholdSpec",
    "MetricsReport",
    "rmse",
    "rmse_log",
    "silog",
    "abs_rel",
    "sq_rel",
    "threshold_accuracy",
    "mean_rel_log10",
    "evaluate",
]


@dataclass
class DepthPair:
    """Prediction and ground truth in meters with a validity mask."""

    pred: np.ndarray
    truth: np.ndarray
    mask: Optional[np.ndarray] = None

    def valid(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat float64 (pred, truth) restricted to valid pixels; checks T >= 1."""
        p = np.asarray(self.pred, dtype=np.float64)
        t = np.asarray(self.truth, dtype=np.float64)
        if p.shape != t.shape:
            raise EvaluationError(f"DepthPair: pred shape {p.shape} vs truth {t.shape}")
        if self.mask is None:
            m = np.ones(p.shape, dtype=bool)
        else:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != p.shape:
                raise EvaluationError(f"DepthPair: mask shape {m.shape} vs data {p.shape}")
        pv, tv = p[m], t[m]
        if pv.size == 0:
            raise EvaluationError("DepthPair: validity mask is empty")
        if np.any(tv <= 0):
            raise EvaluationError("DepthPair: non-positive ground truth on a valid pixel")
        return pv, tv


@dataclass(frozen=True)
class ThresholdSpec:
    """Ratio thresholds for delta accuracies: lam, lam^2, lam^3."""

    lam: float = 1.25

    def __post_init__(self):
        if self.lam <= 1:
            raise EvaluationError(f"ThresholdSpec: lambda {self.lam} must exceed 1")

    @property
    def thresholds(self) -> tuple[float, float, float]:
        return (self.lam, self.lam ** 2, self.lam ** 3)


@dataclass
class MetricsReport:
    rmse: float
    rmse_log: float
    silog: float
    abs_rel: float
    sq_rel: float
    delta1: float
    delta2: float
    delta3: float
    rel: float
    log10: float
    cap: Optional[float] = None

    FIELDS = ("rmse", "rmse_log", "silog", "abs_rel", "sq_rel",
              "delta1", "delta2", "delta3", "rel", "log10")

    def to_json_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.FIELDS}
        d["cap"] = self.cap
        return d


def rmse(pair: DepthPair) -> float:
    p, t = pair.valid()
    return math.sqrt(float(np.mean((p - t) ** 2)))


def _valid_positive(pair: DepthPair) -> tuple[np.ndarray, np.ndarray]:
    p, t = pair.valid()
    if np.any(p <= 0):
        raise EvaluationError("metric needs positive predictions on valid pixels")
    return p, t


def rmse_log(pair: DepthPair) -> float:
    p, t = _valid_positive(pair)
    return math.sqrt(float(np.mean((np.log(p) - np.log(t)) ** 2)))


def silog(pair: DepthPair) -> float:
    """Scale-invariant log error: mean(d^2) - mean(d)^2 with d = ln(pred/truth)."""
    p, t = _valid_positive(pair)
    d = np.log(p) - np.log(t)
    n = d.size
    return float(d @ d) / n - (float(d.sum()) / n) ** 2


def abs_rel(pair: DepthPair) -> float:
    p, t = pair.valid()
    return float(np.mean(np.abs(p - t) / t))


def sq_rel(pair: DepthPair) -> float:
    p, t = pair.valid()
    return float(np.mean((p - t) ** 2 / t))


def threshold_accuracy(pair: DepthPair, spec: ThresholdSpec = ThresholdSpec()) -> tuple[float, float, float]:
    p, t = _valid_positive(pair)
    ratio = np.maximum(p / t, t / p)
    return tuple(float(np.mean(ratio < thr)) for thr in spec.thresholds)


def mean_rel_log10(pair: DepthPair) -> tuple[float, float]:
    p, t = _valid_positive(pair)
    rel = float(np.mean(np.abs(p - t) / t))
    l10 = float(np.mean(np.abs(np.log10(p) - np.log10(t))))
    return rel, l10


@dataclass
class _Accumulator:
    count: int = 0
    se: float = 0.0
    se_log: float = 0.0
    sum_dlog: float = 0.0
    abs_rel: float = 0.0
    sq_rel: float = 0.0
    log10: float = 0.0
    deltas: list = field(default_factory=lambda: [0, 0, 0])

    def add(self, pair: DepthPair, spec: ThresholdSpec) -> None:
        p, t = _valid_positive(pair)
        diff = p - t
        dlog = np.log(p) - np.log(t)
        ratio = np.maximum(p / t, t / p)
        self.count += p.size
        self.se += float(diff @ diff)
        self.se_log += float(dlog @ dlog)
        self.sum_dlog += float(dlog.sum())
        self.abs_rel += float((np.abs(diff) / t).sum())
        self.sq_rel += float((diff * diff / t).sum())
        self.log10 += float(np.abs(np.log10(p) - np.log10(t)).sum())
        for k, thr in enumerate(spec.thresholds):
            self.deltas[k] += int((ratio < thr).sum())

    def report(self, cap: Optional[float]) -> MetricsReport:
        n = self.count
        rel = self.abs_rel / n
        return MetricsReport(
            rmse=math.sqrt(self.se / n),
            rmse_log=math.sqrt(self.se_log / n),
            silog=self.se_log / n - (self.sum_dlog / n) ** 2,
            abs_rel=rel,
            sq_rel=self.sq_rel / n,
            delta1=self.deltas[0] / n,
            delta2=self.deltas[1] / n,
            delta3=self.deltas[2] / n,
            rel=rel,
            log10=self.log10 / n,
            cap=cap,
        )


def evaluate(pairs: Iterable[DepthPair], cap: Optional[float] = None,
             spec: ThresholdSpec = ThresholdSpec()) -> MetricsReport:
    """Aggregate metrics over pairs; ``cap`` drops pixels with truth > cap."""
    acc = _Accumulator()
    saw_pair = False
    for pair in pairs:
        saw_pair = True
        if cap is not None:
            base = (np.ones(np.asarray(pair.truth).shape, dtype=bool)
                    if pair.mask is None else np.asarray(pair.mask, dtype=bool))
            capped = base & (np.asarray(pair.truth) <= cap)
            if not capped.any():
                continue
            pair = DepthPair(pair.pred, pair.truth, capped)
        acc.add(pair, spec)
    if not saw_pair:
        raise EvaluationError("evaluate: no pairs given")
    if acc.count == 0:
        raise EvaluationError(f"evaluate: every pixel was capped out at {cap} m")
    return acc.report(cap)
