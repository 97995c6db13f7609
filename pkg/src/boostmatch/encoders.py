"""Toy dual encoder producing bounded image-caption similarity matrices.

Two scoring paths share the projection layers:

* ``pooled``: mean-pool tokens, project, L2-normalize, cosine similarity.
* ``interaction``: project tokens, let every word attend over the image
  regions (text-to-image cross attention), then reduce the word-wise
  alignments with a small vectorized similarity head ending in tanh.

Both paths are written against :mod:`boostmatch.numcore` nodes so that the
same code serves training (with gradients) and evaluation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc

MODES = ("pooled", "interaction")
PROJECTION = ("img_w", "img_b", "txt_w", "txt_b")
HEAD = ("head_w1", "head_b1", "head_w2", "head_b2")
CHECKPOINT_FORMAT = "boostmatch-checkpoint/1"


@dataclass(frozen=True)
class InteractionConfig:
    lam: float = 9.0  # inverse softmax temperature
    align_dim: int = 8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.align_dim < 1:
            raise ValueError("align_dim must be >= 1")


def _shapes(mode, image_dim, text_dim, hidden, align_dim) -> dict[str, tuple[int, int]]:
    out = {
        "img_w": (image_dim, hidden), "img_b": (1, hidden),
        "txt_w": (text_dim, hidden), "txt_b": (1, hidden),
    }
    if mode == "interaction":
        a = align_dim
        out.update({"head_w1": (hidden, a), "head_b1": (1, a), "head_w2": (a, 1), "head_b2": (1, 1)})
    return out


@dataclass
class EncoderParams:
    mode: str
    image_dim: int
    text_dim: int
    hidden: int
    weights: dict[str, np.ndarray]
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        expected = self.shapes()
        if set(self.weights) != set(expected):
            raise nc.ShapeError(f"parameter names {sorted(self.weights)} != {sorted(expected)}")
        for name, shape in expected.items():
            w = nc.as_matrix(self.weights[name], name)
            if w.shape != shape:
                raise nc.ShapeError(f"{name}: expected {shape}, got {w.shape}")
            self.weights[name] = w

    def shapes(self) -> dict[str, tuple[int, int]]:
        return _shapes(self.mode, self.image_dim, self.text_dim, self.hidden, self.interaction.align_dim)

    @property
    def names(self) -> tuple[str, ...]:
        return PROJECTION + (HEAD if self.mode == "interaction" else ())

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.mode, self.image_dim, self.text_dim, self.hidden,
                             {k: v.copy() for k, v in self.weights.items()},
                             self.interaction, self.seed)


def init_params(mode: str = "pooled", image_dim: int = 16, text_dim: int = 16, hidden: int = 16,
                interaction: InteractionConfig = InteractionConfig(), seed: int = 0) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = nc.make_rng(seed, "encoder")
    fan_in = {"img": image_dim, "txt": text_dim, "head_w1": hidden, "head_b1": hidden,
              "head_w2": interaction.align_dim, "head_b2": interaction.align_dim}
    weights = {}
    for name, shape in _shapes(mode, image_dim, text_dim, hidden, interaction.align_dim).items():
        bound = 1.0 / np.sqrt(fan_in[name] if name in fan_in else fan_in[name[:3]])
        weights[name] = rng.uniform(-bound, bound, size=shape)
    return EncoderParams(mode, image_dim, text_dim, hidden, weights, interaction, seed)


# -- building blocks ---------------------------------------------------------

def _pool(tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    return tokens.mean(axis=1) if tokens.ndim == 3 else tokens


def _project(x, w, b) -> nc.Node:
    return nc.matmul(x, w) + b


def cosine_similarity_matrix(images, texts) -> nc.Node:
    """S[i, j] = cos(image i, caption j); zero-norm embeddings are an error."""
    images, texts = nc._node(images), nc._node(texts)
    for name, x in (("image", images), ("text", texts)):
        if not np.all(np.any(x.value != 0.0, axis=1)):
            raise nc.NumericError(f"cosine_similarity_matrix: zero-norm {name} embedding")
    return nc.matmul(nc.row_normalize(images), nc.transpose(nc.row_normalize(texts)))


def cross_attend(words, regions, lam: float = 9.0) -> nc.Node:
    """Attend each word (row of ``words``) over the image ``regions``.

    Cosine word-region affinities are clipped at zero and L2-normalized per
    word before a softmax over regions with inverse temperature ``lam``.
    """
    words, regions = nc._node(words), nc._node(regions)
    if words.shape[0] == 0 or regions.shape[0] == 0:
        raise nc.ShapeError("cross_attend: need at least one word and one region")
    if words.shape[1] != regions.shape[1]:
        raise nc.ShapeError(f"cross_attend: widths {words.shape[1]} != {regions.shape[1]}")
    cos = nc.matmul(nc.row_normalize(words), nc.transpose(nc.row_normalize(regions)))
    affinity = nc.row_normalize(nc.hinge(cos))
    return nc.matmul(nc.row_softmax(affinity, lam), regions)


def _alignments(words, attended, w1, b1) -> nc.Node:
    return nc.row_normalize(nc.matmul(nc.square(words - attended), w1) + b1)


def similarity_head(words, attended, head: dict) -> nc.Node:
    """tanh(W2 . mean_l norm(W1 (t_l - v'_l)^2 + b1) + b2) as a 1x1 node."""
    words, attended = nc._node(words), nc._node(attended)
    if words.shape != attended.shape:
        raise nc.ShapeError(f"similarity_head: {words.shape} vs {attended.shape}")
    a = _alignments(words, attended, head["head_w1"], head["head_b1"])
    return nc.tanh(nc.matmul(nc.col_mean(a), head["head_w2"]) + head["head_b2"])


# -- whole-batch scoring -----------------------------------------------------

def _pooled_scores(p: dict, images: np.ndarray, texts: np.ndarray) -> nc.Node:
    img = _project(_pool(images), p["img_w"], p["img_b"])
    txt = _project(_pool(texts), p["txt_w"], p["txt_b"])
    return cosine_similarity_matrix(img, txt)


def _interaction_scores(p: dict, images: np.ndarray, texts: np.ndarray, lam: float) -> nc.Node:
    images = np.asarray(images, dtype=np.float64)
    texts = np.asarray(texts, dtype=np.float64)
    if images.ndim != 3 or texts.ndim != 3:
        raise nc.ShapeError("interaction mode needs token arrays (N, tokens, dim)")
    n_img, n_txt, n_words = images.shape[0], texts.shape[0], texts.shape[1]
    # every caption's words stacked: row block j holds caption j
    words = _project(texts.reshape(n_txt * n_words, -1), p["txt_w"], p["txt_b"])
    word_mean = np.kron(np.eye(n_txt), np.full((1, n_words), 1.0 / n_words))
    scores = None
    for i in range(n_img):
        regions = _project(images[i], p["img_w"], p["img_b"])
        attended = cross_attend(words, regions, lam)
        a = _alignments(words, attended, p["head_w1"], p["head_b1"])
        col = nc.tanh(nc.matmul(nc.matmul(word_mean, a), p["head_w2"]) + p["head_b2"])
        onehot = np.zeros((n_img, 1))
        onehot[i, 0] = 1.0
        row = nc.matmul(onehot, nc.transpose(col))
        scores = row if scores is None else scores + row
    return scores


def score_graph(p: dict, mode: str, images, texts, lam: float = 9.0) -> nc.Node:
    """Similarity matrix (images x captions) as a node over parameter nodes ``p``."""
    if mode == "pooled":
        return _pooled_scores(p, images, texts)
    if mode == "interaction":
        return _interaction_scores(p, images, texts, lam)
    raise ValueError(f"unknown mode {mode!r}")


def score_batch(params: EncoderParams, images, texts) -> np.ndarray:
    """Similarity matrix for plain arrays, no gradient tracking."""
    p = {k: nc.const(v, k) for k, v in params.weights.items()}
    return score_graph(p, params.mode, images, texts, params.interaction.lam).value


def param_nodes(params: EncoderParams) -> dict[str, nc.Node]:
    return {k: nc.leaf(params.weights[k], k) for k in params.names}


# -- checkpoints -------------------------------------------------------------

def to_json(params: EncoderParams) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "mode": params.mode,
        "dims": {"image_dim": params.image_dim, "text_dim": params.text_dim,
                 "hidden": params.hidden, "align_dim": params.interaction.align_dim},
        "lam": params.interaction.lam,
        "seed": params.seed,
        "params": {k: {"rows": params.weights[k].shape[0], "cols": params.weights[k].shape[1],
                       "data": params.weights[k].ravel().tolist()} for k in params.names},
    }
    return json.dumps(doc, sort_keys=True)


def from_json(text: str) -> EncoderParams:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint: format={doc.get('format')!r}")
    dims = doc["dims"]
    weights = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["rows"], v["cols"])
               for k, v in doc["params"].items()}
    return EncoderParams(doc["mode"], dims["image_dim"], dims["text_dim"], dims["hidden"], weights,
                         InteractionConfig(doc["lam"], dims["align_dim"]), doc["seed"])


def save(params: EncoderParams, path) -> None:
    Path(path).write_text(to_json(params) + "\n")


def load(path) -> EncoderParams:
    return from_json(Path(path).read_text())
