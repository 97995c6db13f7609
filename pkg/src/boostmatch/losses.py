"""Triplet matching losses and the anchor-guided boosting losses.

Every loss takes an N x N similarity matrix whose diagonal holds the
positive pairs (image i, caption i).  Row i ranks captions for image i,
column c ranks images for caption c.  Target scores may be graph nodes (the
loss is then a differentiable node); anchor scores are always detached.
Called with plain arrays, a loss returns a float.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc

VARIANTS = ("rs", "rm", "as", "am", "rm_soft", "am_soft")


@dataclass(frozen=True)
class MarginConfig:
    gamma: float = 0.2
    alpha: float = 0.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def gamma1(self) -> float:
        return self.alpha * self.gamma

    @property
    def gamma2(self) -> float:
        return self.gamma - self.alpha * self.gamma


@dataclass(frozen=True)
class SoftMarginConfig:
    """Distance extremes for bounded similarities in [-d_y, d_y]."""

    d_y: float = 1.0

    def __post_init__(self):
        if not self.d_y > 0:
            raise ValueError("d_y must be positive")

    @property
    def d_x(self) -> float:
        return 2.0 * self.d_y


@dataclass(frozen=True)
class SimilarityBatch:
    target: object  # np.ndarray or nc.Node
    anchor: np.ndarray | None = None

    def __post_init__(self):
        t = self.target.value if isinstance(self.target, nc.Node) else nc.as_matrix(self.target, "target")
        if t.shape[0] != t.shape[1]:
            raise nc.ShapeError(f"target scores must be square, got {t.shape}")
        if self.anchor is not None:
            a = self.anchor.value if isinstance(self.anchor, nc.Node) else nc.as_matrix(self.anchor, "anchor")
            if a.shape != t.shape:
                raise nc.ShapeError(f"anchor {a.shape} does not match target {t.shape}")
            object.__setattr__(self, "anchor", a)

    @property
    def n(self) -> int:
        return self.target_value.shape[0]

    @property
    def target_value(self) -> np.ndarray:
        t = self.target
        return t.value if isinstance(t, nc.Node) else np.asarray(t, dtype=np.float64)

    def require_anchor(self) -> np.ndarray:
        if self.anchor is None:
            raise ValueError("boosting losses need anchor scores")
        return self.anchor


@dataclass(frozen=True)
class MinedNegatives:
    caption: np.ndarray  # caption[i]: hardest negative caption for image i
    image: np.ndarray  # image[c]: hardest negative image for caption c


def _batch(batch, anchor=None) -> SimilarityBatch:
    if isinstance(batch, SimilarityBatch):
        return batch
    return SimilarityBatch(batch, anchor)


def _finish(node: nc.Node, batch: SimilarityBatch):
    if isinstance(batch.target, nc.Node):
        return node
    return float(node.value[0, 0])


def _need_negatives(n: int) -> None:
    if n < 2:
        raise nc.ShapeError(f"need at least 2 pairs for negatives, got N={n}")


def _argmax_offdiag(scores: np.ndarray) -> MinedNegatives:
    n = scores.shape[0]
    _need_negatives(n)
    masked = scores.copy()
    np.fill_diagonal(masked, -np.inf)
    # np.argmax returns the first maximal index, i.e. ties go to the lowest index
    return MinedNegatives(caption=masked.argmax(axis=1), image=masked.argmax(axis=0))


def mine_hardest_self(scores) -> MinedNegatives:
    """Hardest negatives by the scores themselves."""
    return _argmax_offdiag(nc.as_matrix(scores.value if isinstance(scores, nc.Node) else scores))


def mine_hardest_diff(target, anchor) -> MinedNegatives:
    """Negatives where target exceeds anchor the most (hardest to push away)."""
    t = nc.as_matrix(target.value if isinstance(target, nc.Node) else target)
    a = nc.as_matrix(anchor.value if isinstance(anchor, nc.Node) else anchor)
    if t.shape != a.shape:
        raise nc.ShapeError(f"mine_hardest_diff: {t.shape} vs {a.shape}")
    return _argmax_offdiag(t - a)


def _masks(mined: MinedNegatives, n: int) -> tuple[np.ndarray, np.ndarray]:
    """One-hot selectors: row mask picks (i, caption[i]); col mask picks (image[c], c)."""
    rows = np.zeros((n, n))
    rows[np.arange(n), mined.caption] = 1.0
    cols = np.zeros((n, n))
    cols[mined.image, np.arange(n)] = 1.0
    return rows, cols


def _diag(s: nc.Node) -> nc.Node:
    return nc.row_sum(s * np.eye(s.shape[0]))


def _offdiag(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


# -- single-branch matching losses ------------------------------------------

def loss_sum(batch, cfg: MarginConfig = MarginConfig()):
    """Hinge over every negative, both retrieval directions."""
    b = _batch(batch)
    _need_negatives(b.n)
    s = nc._node(b.target)
    d = _diag(s)
    off = _offdiag(b.n)
    i2t = nc.hinge(s - d + cfg.gamma) * off
    t2i = nc.hinge(s - d.T + cfg.gamma) * off
    return _finish(nc.total_sum(i2t) + nc.total_sum(t2i), b)


def loss_max(batch, cfg: MarginConfig = MarginConfig()):
    """Hinge on the hardest self-mined negative per positive, both directions."""
    b = _batch(batch)
    s = nc._node(b.target)
    rows, cols = _masks(mine_hardest_self(s.value), b.n)
    d = _diag(s)
    i2t = nc.hinge(nc.row_sum(s * rows) - d + cfg.gamma)
    t2i = nc.hinge(nc.col_sum(s * cols) - d.T + cfg.gamma)
    return _finish(nc.total_sum(i2t) + nc.total_sum(t2i), b)


# -- boosting losses ---------------------------------------------------------

def _gaps(s: nc.Node, anchor: np.ndarray):
    """Positive-minus-negative gaps for the target (nodes) and anchor (arrays)."""
    d = _diag(s)
    ad = np.diag(anchor)
    return (d - s, d.T - s), (ad[:, None] - anchor, ad[None, :] - anchor)


def loss_rs(batch, cfg: MarginConfig = MarginConfig()):
    """Target gap must beat the anchor gap by gamma, over all negatives."""
    b = _batch(batch)
    a = b.require_anchor()
    s = nc._node(b.target)
    (t_row, t_col), (a_row, a_col) = _gaps(s, a)
    off = _offdiag(b.n)
    i2t = nc.hinge(a_row + cfg.gamma - t_row) * off
    t2i = nc.hinge(a_col + cfg.gamma - t_col) * off
    return _finish(nc.total_sum(i2t) + nc.total_sum(t2i), b)


def _mined_terms(b: SimilarityBatch):
    a = b.require_anchor()
    s = nc._node(b.target)
    rows, cols = _masks(mine_hardest_diff(s.value, a), b.n)
    pos_t = _diag(s)  # (N, 1)
    neg_t_row = nc.row_sum(s * rows)  # (N, 1): S_t[i, c_hat_i]
    neg_t_col = nc.transpose(nc.col_sum(s * cols))  # (N, 1): S_t[i_hat_c, c]
    pos_a = np.diag(a)[:, None]
    neg_a_row = (a * rows).sum(axis=1, keepdims=True)
    neg_a_col = (a * cols).sum(axis=0)[:, None]
    return pos_t, neg_t_row, neg_t_col, pos_a, neg_a_row, neg_a_col


def loss_rm(batch, cfg: MarginConfig = MarginConfig()):
    """Relative boosting on the difference-mined hardest negatives."""
    b = _batch(batch)
    pos_t, nt_r, nt_c, pos_a, na_r, na_c = _mined_terms(b)
    i2t = nc.hinge((pos_a - na_r) + cfg.gamma - (pos_t - nt_r))
    t2i = nc.hinge((pos_a - na_c) + cfg.gamma - (pos_t - nt_c))
    return _finish(nc.total_sum(i2t) + nc.total_sum(t2i), b)


def loss_as(batch, cfg: MarginConfig = MarginConfig()):
    """Absolute boosting over all negatives.

    The positive-pair term sits inside each negative's summand, so it is
    counted N - 1 times per direction.
    """
    b = _batch(batch)
    a = b.require_anchor()
    s = nc._node(b.target)
    n = b.n
    off = _offdiag(n)
    pos = nc.hinge(np.diag(a)[:, None] + cfg.gamma1 - _diag(s))  # (N, 1)
    pos_total = nc.affine(nc.total_sum(pos), 2.0 * (n - 1))
    neg = nc.hinge(s - a + cfg.gamma2) * off
    # each off-diagonal cell is a negative once for its row and once for its column
    return _finish(pos_total + nc.affine(nc.total_sum(neg), 2.0), b)


def loss_am(batch, cfg: MarginConfig = MarginConfig()):
    """Absolute boosting on the difference-mined hardest negatives."""
    b = _batch(batch)
    pos_t, nt_r, nt_c, pos_a, na_r, na_c = _mined_terms(b)
    pos = nc.affine(nc.total_sum(nc.hinge(pos_a + cfg.gamma1 - pos_t)), 2.0)
    i2t = nc.hinge(nt_r - na_r + cfg.gamma2)
    t2i = nc.hinge(nt_c - na_c + cfg.gamma2)
    return _finish(pos + nc.total_sum(i2t) + nc.total_sum(t2i), b)


# -- soft-adaptive margins ---------------------------------------------------

def gamma_sa(x, kind: str, cfg: MarginConfig = MarginConfig(),
             soft: SoftMarginConfig = SoftMarginConfig(), clamp: bool = True):
    """Soft margin that shrinks to 0 as the anchor distance reaches its extreme.

    ``relative`` keys on an anchor gap in [-d_x, d_x] with margin gamma;
    ``abs_pos`` on an anchor positive score in [-d_y, d_y] with gamma1;
    ``abs_neg`` on an anchor negative score with gamma2 (zero at -d_y).
    The sharpness is 2 / margin, which makes the slope at the zero point
    equal to -1 (+1 for ``abs_neg``).

    ``2g / (1 + exp(2(x - d) / g)) - g`` equals ``g * tanh((d - x) / g)``;
    the tanh form is used because it is exact at the boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "relative":
        g, d, sign = cfg.gamma, soft.d_x, 1.0
    elif kind == "abs_pos":
        g, d, sign = cfg.gamma1, soft.d_y, 1.0
    elif kind == "abs_neg":
        g, d, sign = cfg.gamma2, soft.d_y, -1.0
    else:
        raise ValueError(f"unknown margin kind {kind!r}")
    if clamp:
        x = np.clip(x, -d, d)
    out = g * np.tanh((d - sign * x) / g)
    return float(out) if out.ndim == 0 else out


def loss_rm_soft(batch, cfg: MarginConfig = MarginConfig(), soft: SoftMarginConfig = SoftMarginConfig()):
    """Relative max with a per-triplet soft margin keyed on the anchor gap."""
    b = _batch(batch)
    pos_t, nt_r, nt_c, pos_a, na_r, na_c = _mined_terms(b)
    gap_r, gap_c = pos_a - na_r, pos_a - na_c
    i2t = nc.hinge(gamma_sa(gap_r, "relative", cfg, soft) + gap_r - (pos_t - nt_r))
    t2i = nc.hinge(gamma_sa(gap_c, "relative", cfg, soft) + gap_c - (pos_t - nt_c))
    return _finish(nc.total_sum(i2t) + nc.total_sum(t2i), b)


def loss_am_soft(batch, cfg: MarginConfig = MarginConfig(), soft: SoftMarginConfig = SoftMarginConfig()):
    """Absolute max with soft margins keyed on the anchor's own scores."""
    b = _batch(batch)
    pos_t, nt_r, nt_c, pos_a, na_r, na_c = _mined_terms(b)
    pos = nc.hinge(gamma_sa(pos_a, "abs_pos", cfg, soft) + pos_a - pos_t)
    i2t = nc.hinge(gamma_sa(na_r, "abs_neg", cfg, soft) + nt_r - na_r)
    t2i = nc.hinge(gamma_sa(na_c, "abs_neg", cfg, soft) + nt_c - na_c)
    return _finish(nc.affine(nc.total_sum(pos), 2.0) + nc.total_sum(i2t) + nc.total_sum(t2i), b)


BOOSTING = {
    "rs": loss_rs,
    "rm": loss_rm,
    "as": loss_as,
    "am": loss_am,
    "rm_soft": loss_rm_soft,
    "am_soft": loss_am_soft,
}
RAW = {"max": loss_max, "sum": loss_sum}


def boosting_loss(batch, variant: str, cfg: MarginConfig = MarginConfig(),
                  soft: SoftMarginConfig = SoftMarginConfig()):
    fn = BOOSTING[variant]
    if variant.endswith("_soft"):
        return fn(batch, cfg, soft)
    return fn(batch, cfg)


def total_target_loss(batch, cfg: MarginConfig = MarginConfig(), variant: str | None = "rm",
                      soft: SoftMarginConfig = SoftMarginConfig(), raw: str = "max"):
    """Task loss plus boosting loss, weighted 1:1.

    ``variant=None`` drops the boosting term (ablation).  Returns
    ``(total, raw_part, boost_part)``.
    """
    b = _batch(batch)
    raw_part = RAW[raw](b, cfg)
    if variant is None:
        return raw_part, raw_part, 0.0
    boo = boosting_loss(b, variant, cfg, soft)
    return raw_part + boo, raw_part, boo
