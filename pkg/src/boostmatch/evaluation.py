"""Retrieval metrics and similarity histograms over a full gallery.

A gallery is an (images x captions) score matrix plus ``truth``, the row
index owning each caption column.  Ranking ties break toward the lower
candidate index.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalReport:
    r1_i2t: float
    r5_i2t: float
    r10_i2t: float
    r1_t2i: float
    r5_t2i: float
    r10_t2i: float
    rsum: float
    md: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # (bins + 1,)
    positive: np.ndarray
    negative: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "pos_count", "neg_count"])
        for k in range(self.positive.size):
            w.writerow([f"{self.edges[k]:.2f}", f"{self.edges[k + 1]:.2f}",
                        int(self.positive[k]), int(self.negative[k])])
        return buf.getvalue()


def _positive_mask(shape, truth) -> np.ndarray:
    truth = np.asarray(truth)
    if truth.shape != (shape[1],):
        raise ValueError(f"truth must have one entry per caption column ({shape[1]})")
    mask = np.zeros(shape, dtype=bool)
    mask[truth, np.arange(shape[1])] = True
    return mask


def _ranks(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """0-based rank of candidate ``targets[q]`` within row ``q`` (ties: lower index first)."""
    q = np.arange(scores.shape[0])
    t = scores[q, targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    above = (scores > t) | ((scores == t) & (cols < targets[:, None]))
    return above.sum(axis=1)


def best_ranks(scores, truth, direction: str) -> np.ndarray:
    """Rank of the best-placed correct candidate for every query."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if direction == "t2i":
        return _ranks(scores.T, truth)
    if direction != "i2t":
        raise ValueError(f"direction must be 'i2t' or 't2i', got {direction!r}")
    mask = _positive_mask(scores.shape, truth)
    if not mask.any(axis=1).all():
        raise ValueError("every image needs at least one caption in the gallery")
    # the first-ranked positive is the highest-scoring one, lowest index on ties
    top = np.where(mask, scores, -np.inf).argmax(axis=1)
    return _ranks(scores, top)


def recall_at_k(scores, truth, k: int, direction: str) -> float:
    """Percentage of queries with a correct candidate in the top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = best_ranks(scores, truth, direction)
    return 100.0 * float(np.mean(ranks < k))


def mean_distance(scores, truth, mode: str = "mean") -> float:
    """Positive/negative separation.

    ``mean``: mean positive score minus mean negative score over the gallery.
    ``hardest``: per image query, mean positive minus the hardest negative,
    averaged over queries.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = _positive_mask(scores.shape, truth)
    if mode == "mean":
        if mask.all():
            return 0.0
        # fsum: correctly rounded, so the result does not depend on summation order
        pos, neg = scores[mask], scores[~mask]
        return math.fsum(pos) / pos.size - math.fsum(neg) / neg.size
    if mode == "hardest":
        pos = np.where(mask, scores, 0.0).sum(axis=1) / mask.sum(axis=1)
        neg = np.where(mask, -np.inf, scores).max(axis=1)
        return float(np.mean(pos - neg))
    raise ValueError(f"unknown md mode {mode!r}")


def report(scores, truth, md_mode: str = "mean") -> RetrievalReport:
    r = {}
    for direction in ("i2t", "t2i"):
        ranks = best_ranks(scores, truth, direction)
        for k in KS:
            r[f"r{k}_{direction}"] = 100.0 * float(np.mean(ranks < k))
    rsum = sum(r.values())
    return RetrievalReport(**r, rsum=rsum, md=mean_distance(scores, truth, md_mode))


def histogram(scores, truth, bins: int = 100) -> Histogram:
    scores = np.clip(np.asarray(scores, dtype=np.float64), -1.0, 1.0)
    mask = _positive_mask(scores.shape, truth)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    idx = np.minimum(((scores + 1.0) * (bins / 2.0)).astype(int), bins - 1)
    pos = np.bincount(idx[mask], minlength=bins)
    neg = np.bincount(idx[~mask], minlength=bins)
    return Histogram(edges, pos, neg)
