"""Structure-recovery metrics against a ground-truth network."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

# Precision of a structure with no arcs: a distinct marker, never 0.
UNDEFINED = None


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ArcClassification:
    correct: int
    reverse: int
    additional: int
    missing: int

    @property
    def inferred(self) -> int:
        return self.correct + self.reverse + self.additional

    @property
    def truth(self) -> int:
        return self.correct + self.reverse + self.missing


def _pair(inferred, truth) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(inferred).astype(bool)
    b = np.asarray(truth).astype(bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"inferred is {a.shape}, truth is {b.shape}")
    return a, b


def classify_arcs(inferred, truth) -> ArcClassification:
    """Split inferred arcs into correct / reverse / additional and count missed truth arcs.

    An inferred arc that matches truth exactly is correct even when the
    reverse is also present in truth, so each arc lands in one category.
    """
    a, b = _pair(inferred, truth)
    correct = int((a & b).sum())
    reverse = int((a & ~b & b.T).sum())
    additional = int((a & ~b & ~b.T).sum())
    missing = int((b & ~a & ~a.T).sum())
    return ArcClassification(correct, reverse, additional, missing)


def precision(inferred, truth) -> float | None:
    """Fraction of inferred arcs present in truth with the same direction.

    Returns ``UNDEFINED`` (``None``) when nothing was inferred.
    """
    c = classify_arcs(inferred, truth)
    if c.inferred == 0:
        return UNDEFINED
    return c.correct / c.inferred


def skeleton_precision(inferred, truth) -> float | None:
    """Like :func:`precision` but reversed arcs also count. Not the headline metric."""
    c = classify_arcs(inferred, truth)
    if c.inferred == 0:
        return UNDEFINED
    return (c.correct + c.reverse) / c.inferred


@dataclass(frozen=True)
class ProportionReport:
    correct: float
    reverse: float
    additional: float
    used: int
    excluded: int


def proportion_report(classifications: Sequence[ArcClassification]) -> ProportionReport:
    """Average per-network arc proportions, in percent.

    Networks with no inferred arcs are skipped and counted in ``excluded``;
    if every network is skipped the percentages are NaN.
    """
    if not classifications:
        raise ValueError("no classifications to report")
    usable = [c for c in classifications if c.inferred > 0]
    excluded = len(classifications) - len(usable)
    if excluded:
        log.info("proportion_report: %d network(s) with no inferred arcs excluded", excluded)
    if not usable:
        nan = float("nan")
        return ProportionReport(nan, nan, nan, 0, excluded)
    shares = np.array([[c.correct, c.reverse, c.additional] for c in usable], dtype=float)
    shares /= shares.sum(axis=1, keepdims=True)
    mean = 100.0 * shares.mean(axis=0)
    return ProportionReport(float(mean[0]), float(mean[1]), float(mean[2]), len(usable), excluded)
