"""Naive sort-based retrieval metrics, kept independent of ``evaluation``.

Used as an oracle: every query's candidates are fully sorted with Python's
stable sort on (-score, index) and the first correct hit is located by scan.
"""
from __future__ import annotations

import math

from .evaluation import RetrievalReport


def _first_hit(scores, correct) -> int:
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    for rank, j in enumerate(order):
        if j in correct:
            return rank
    raise ValueError("query without a correct candidate")


def naive_report(scores, truth) -> RetrievalReport:
    s = [[float(v) for v in row] for row in scores]
    truth = [int(t) for t in truth]
    n_img, n_cap = len(s), len(truth)
    i2t = [_first_hit(s[i], {j for j in range(n_cap) if truth[j] == i}) for i in range(n_img)]
    t2i = [_first_hit([s[i][j] for i in range(n_img)], {truth[j]}) for j in range(n_cap)]
    r = {}
    for name, ranks in (("i2t", i2t), ("t2i", t2i)):
        for k in (1, 5, 10):
            r[f"r{k}_{name}"] = 100.0 * float(sum(1 for x in ranks if x < k) / len(ranks))
    pos = [s[truth[j]][j] for j in range(n_cap)]
    neg = [s[i][j] for i in range(n_img) for j in range(n_cap) if truth[j] != i]
    md = math.fsum(pos) / len(pos) - math.fsum(neg) / len(neg) if neg else 0.0
    return RetrievalReport(**r, rsum=sum(r.values()), md=md)
