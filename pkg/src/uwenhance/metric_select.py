"""Selecting a reliable no-reference quality metric.

A candidate metric is checked two ways: (1) on clean/degraded mixtures
its score must fall as the degraded fraction rises (the monotonicity
law), measured per pair as a pass rate; (2) its PLCC against human
opinion scores on an above-water set. Candidates are ranked by pass rate
first, PLCC second.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GridError, MetricError, ShapeError
from .iqa.stats import plcc
from .imaging import linear_mix

DEFAULT_RATIOS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_TOLERANCE = 1e-6


def check_ratios(ratios: Sequence[float]) -> list[float]:
    ratios = [float(r) for r in ratios]
    if len(ratios) < 2 or ratios[0] != 0.0 or ratios[-1] != 1.0:
        raise GridError(f"ratio grid must start at 0 and end at 1, got {ratios}")
    if any(not 0.0 <= r <= 1.0 for r in ratios):
        raise GridError("ratios must lie in [0, 1]")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise GridError(f"ratios must be strictly increasing, got {ratios}")
    return ratios


@dataclass(frozen=True)
class MixtureSeries:
    clean: np.ndarray
    degraded: np.ndarray
    ratios: tuple
    mixed: tuple

    def __len__(self):
        return len(self.mixed)


def make_mixture_series(clean, degraded, ratios=DEFAULT_RATIOS) -> MixtureSeries:
    if clean.shape != degraded.shape:
        raise ShapeError(f"clean {clean.shape} and degraded {degraded.shape} differ")
    ratios = check_ratios(ratios)
    mixed = tuple(linear_mix(clean, degraded, t) for t in ratios)
    return MixtureSeries(clean, degraded, tuple(ratios), mixed)


def is_monotone_decreasing(scores: Sequence[float], tolerance: float = DEFAULT_TOLERANCE) -> bool:
    """Non-increasing up to ties within ``tolerance * range(scores)``, with an overall drop.

    The overall-drop requirement stops a constant metric from passing.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        return False
    tol = tolerance * float(s.max() - s.min())
    return bool(np.all(np.diff(s) <= tol) and s[-1] < s[0])


def series_scores(metric: Callable, series: MixtureSeries, with_reference: bool = False) -> list[float]:
    if with_reference:
        return [float(metric(img, series.clean)) for img in series.mixed]
    return [float(metric(img)) for img in series.mixed]


def monotonicity_rate(
    metric: Callable,
    pairs: Sequence[tuple],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    tolerance: float = DEFAULT_TOLERANCE,
    workers: int = 1,
    with_reference: bool = False,
) -> float:
    """Fraction of ``(clean, degraded)`` pairs whose mixture scores fall monotonically.

    With ``with_reference`` the metric is called as ``metric(img, clean)``,
    which lets full-reference oracles be checked by the same harness.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    ratios = check_ratios(ratios)

    def judge(indexed):
        index, (clean, degraded) = indexed
        try:
            scores = series_scores(metric, make_mixture_series(clean, degraded, ratios), with_reference)
        except Exception as exc:
            raise MetricError(f"metric failed: {exc}", index) from exc
        return is_monotone_decreasing(scores, tolerance)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(judge, enumerate(pairs)))
    else:
        verdicts = [judge(item) for item in enumerate(pairs)]
    return sum(verdicts) / len(verdicts)


@dataclass(frozen=True)
class MetricReport:
    tag: str
    monotonicity: float
    plcc: float
    rank: int


def rank_metrics(reports: Sequence[tuple]) -> list[MetricReport]:
    """Sort by monotonicity rate then PLCC, both descending; stable on full ties.

    A missing (NaN) PLCC sorts after every real PLCC at the same rate.
    """
    if not reports:
        raise ValueError("nothing to rank")

    def key(item):
        _, rate, corr = item
        corr = float(corr)
        return (-float(rate), math.isnan(corr), -corr if not math.isnan(corr) else 0.0)

    ordered = sorted(reports, key=key)
    return [MetricReport(tag, float(rate), float(corr), i + 1) for i, (tag, rate, corr) in enumerate(ordered)]


def evaluate_candidates(
    metrics: dict,
    pairs: Sequence[tuple],
    labelled: Optional[Sequence[tuple]] = None,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    tolerance: float = DEFAULT_TOLERANCE,
    workers: int = 1,
) -> list[MetricReport]:
    """Run both criteria for every ``tag -> metric`` and rank.

    ``labelled`` holds ``(image, opinion_score)`` tuples; without it PLCC is NaN.
    """
    rows = []
    for tag, metric in metrics.items():
        rate = monotonicity_rate(metric, pairs, ratios, tolerance, workers)
        corr = float("nan")
        if labelled:
            corr = plcc([metric(img) for img, _ in labelled], [mos for _, mos in labelled])
        rows.append((tag, rate, corr))
    return rank_metrics(rows)


def write_selection_csv(reports: Sequence[MetricReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "monotonicity", "plcc", "rank"])
        for r in reports:
            writer.writerow([r.tag, repr(r.monotonicity), "" if math.isnan(r.plcc) else repr(r.plcc), r.rank])
    return path
