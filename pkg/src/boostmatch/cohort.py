"""Training scenarios for anchor/target branch pairs.

* ``single``: one branch, task loss only (the baseline).
* ``oas``: a frozen, previously trained anchor guides a freshly initialized target.
* ``oss``: M branches trained jointly; branch 1 uses the task loss only and
  every later branch adds the mean boosting loss against all earlier ones.
* ``mss``: the anchor is an exponential moving average of the target.

Only the target branch is validated; the returned target is the checkpoint
with the best validation RSUM (earliest epoch on ties).

Seeds: branch ``k`` (0 = target, 1.. = anchors/cohort peers) is initialized
from sub-seed ``make_rng(seed, "init", k).integers(2**63)``; batches come from
``make_rng(seed, "batches", split, epoch)``.  All branches of one run share
the same batch sequence.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .data import PairDataset, batches, test_pairs
from .encoders import EncoderParams, InteractionConfig, init_params, param_nodes, score_batch, score_graph
from .evaluation import report
from .losses import RAW, MarginConfig, SimilarityBatch, SoftMarginConfig, boosting_loss

log = logging.getLogger(__name__)

SCENARIOS = ("single", "oas", "oss", "mss")


class TrainingDiverged(ArithmeticError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class Branch:
    params: EncoderParams
    role: str = "target"
    state: AdamState = field(default_factory=AdamState)


def optimizer_step(branch: Branch, grads: dict, lr: float) -> Branch:
    """One Adam update, in place; returns ``branch``."""
    st = branch.state
    for name, g in grads.items():
        if g.shape != branch.params.weights[name].shape:
            raise nc.ShapeError(f"gradient for {name}: {g.shape} vs {branch.params.weights[name].shape}")
        if not np.isfinite(g).all():
            raise nc.NumericError(f"non-finite gradient for {name} at step {st.t + 1}")
    st.t += 1
    c1 = 1.0 - st.beta1 ** st.t
    c2 = 1.0 - st.beta2 ** st.t
    for name, g in grads.items():
        m = st.m.get(name, 0.0) * st.beta1 + (1.0 - st.beta1) * g
        v = st.v.get(name, 0.0) * st.beta2 + (1.0 - st.beta2) * g * g
        st.m[name], st.v[name] = m, v
        w = branch.params.weights[name]
        branch.params.weights[name] = w - lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return branch


# -- momentum anchor ---------------------------------------------------------

def ema_update(anchor: Branch, target: Branch, beta: float) -> Branch:
    """anchor <- beta * anchor + (1 - beta) * target, in place."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    for name, a in anchor.params.weights.items():
        t = target.params.weights[name]
        if a.shape != t.shape:
            raise nc.ShapeError(f"ema_update: {name} {a.shape} vs {t.shape}")
        anchor.params.weights[name] = beta * a + (1.0 - beta) * t
    return anchor


@dataclass(frozen=True)
class BetaSchedule:
    total_steps: int
    beta0: float = 0.99995


def beta_at(schedule: BetaSchedule, step: int) -> float:
    """Half-cosine ramp from beta0 (step 0) to 1 (final step)."""
    s = schedule.total_steps
    if step >= s:
        return 1.0
    if step <= 0:
        return schedule.beta0
    return 1.0 - (1.0 - schedule.beta0) * (math.cos(math.pi * step / s) + 1.0) / 2.0


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    scenario: str = "single"
    variant: str | None = "rm"
    raw: str = "max"
    branches: int = 2
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-4
    decay_epoch: int = 30
    decay: float = 0.1
    seed: int = 1
    mode: str = "pooled"
    hidden: int = 16
    interaction: InteractionConfig = InteractionConfig()
    margin: MarginConfig = MarginConfig()
    soft: SoftMarginConfig = SoftMarginConfig()
    md_mode: str = "mean"
    beta0: float = 0.99995  # mss only: EMA momentum at step 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.scenario == "oss" and self.branches < 2:
            raise ValueError("oss needs branches >= 2")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.raw not in RAW:
            raise ValueError(f"raw must be one of {sorted(RAW)}")
        if not 0.0 <= self.beta0 <= 1.0:
            raise ValueError("beta0 must lie in [0, 1]")

    def lr_at(self, epoch: int) -> float:
        return self.lr * (self.decay if epoch >= self.decay_epoch else 1.0)


@dataclass
class TrainResult:
    target: EncoderParams  # best-validation checkpoint
    history: list[dict]
    steps: list[tuple[float, float, float]]  # (total, raw, boost) per step for the target
    final: dict[str, Branch]  # end-of-training branches by role
    best_epoch: int
    anchor_trace: list[float] = field(default_factory=list)  # betas applied, mss only


def sub_seed(seed: int, k: int) -> int:
    return int(nc.make_rng(seed, "init", k).integers(0, 2 ** 63))


def new_branch(cfg: TrainConfig, data: PairDataset, k: int, role: str) -> Branch:
    s = data.spec
    p = init_params(cfg.mode, s.image_dim, s.text_dim, cfg.hidden, cfg.interaction, sub_seed(cfg.seed, k))
    return Branch(p, role)


def validate(params: EncoderParams, data: PairDataset, split: str = "val", md_mode: str = "mean"):
    ids, caps, truth = test_pairs(data, split)
    scores = score_batch(params, data.images[ids], data.captions[caps])
    return report(scores, truth, md_mode), scores


# -- the shared loop ---------------------------------------------------------

def _forward(branch: Branch, cfg: TrainConfig, imgs, txts):
    nodes = param_nodes(branch.params)
    return nodes, score_graph(nodes, branch.params.mode, imgs, txts, branch.params.interaction.lam)


def _raw(scores, cfg: TrainConfig):
    return RAW[cfg.raw](SimilarityBatch(scores), cfg.margin)


def _boost(scores, anchor_scores, cfg: TrainConfig):
    return boosting_loss(SimilarityBatch(scores, nc.detach(anchor_scores).value), cfg.variant, cfg.margin, cfg.soft)


def _step_grads(loss: nc.Node, nodes: dict) -> dict:
    names = list(nodes)
    return dict(zip(names, nc.backward(loss, [nodes[k] for k in names])))


def _run(cfg: TrainConfig, data: PairDataset, target: Branch, step_fn) -> TrainResult:
    """Epoch loop with validation and best-RSUM selection around ``step_fn``."""
    history, steps = [], []
    best, best_rsum, best_epoch = target.params.copy(), -np.inf, 0
    n_steps = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        raw_sum = boo_sum = 0.0
        epoch_batches = batches(data, "train", cfg.batch_size, cfg.seed, epoch)
        for b in epoch_batches:
            total, raw, boo = step_fn(data.images[b.images], data.captions[b.captions], lr, n_steps)
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}", history)
            steps.append((total, raw, boo))
            raw_sum += raw
            boo_sum += boo
            n_steps += 1
        rep, _ = validate(target.params, data, "val", cfg.md_mode)
        line = {"epoch": epoch + 1, "split": "val", **vars(rep).copy(),
                "loss_raw": raw_sum / len(epoch_batches), "loss_boo": boo_sum / len(epoch_batches)}
        history.append(line)
        log.debug("epoch %d rsum %.2f md %.4f", epoch + 1, rep.rsum, rep.md)
        if rep.rsum > best_rsum:
            best, best_rsum, best_epoch = target.params.copy(), rep.rsum, epoch + 1
    return TrainResult(best, history, steps, {}, best_epoch)


def _value(x) -> float:
    return float(x.value[0, 0]) if isinstance(x, nc.Node) else float(x)


def _target_update(target: Branch, cfg: TrainConfig, imgs, txts, lr, anchor_scores):
    """Task loss plus (optional) boosting loss for the target; returns recorded parts."""
    nodes, s = _forward(target, cfg, imgs, txts)
    raw = _raw(s, cfg)
    if cfg.variant is None or anchor_scores is None:
        loss, boo = raw, 0.0
    else:
        boo = _boost(s, anchor_scores, cfg)
        loss = raw + boo
    optimizer_step(target, _step_grads(loss, nodes), lr)
    return _value(loss), _value(raw), _value(boo)


# -- scenarios ---------------------------------------------------------------

def train_single(cfg: TrainConfig, data: PairDataset) -> TrainResult:
    target = new_branch(cfg, data, 0, "target")

    def step(imgs, txts, lr, _):
        return _target_update(target, cfg, imgs, txts, lr, None)

    res = _run(cfg, data, target, step)
    res.final = {"target": target}
    return res


def train_oas(cfg: TrainConfig, data: PairDataset, anchor: EncoderParams | None) -> TrainResult:
    """Frozen pre-trained anchor; fresh target trained on task + boosting loss."""
    if anchor is None:
        raise ValueError("oas needs a pre-trained anchor checkpoint")
    frozen = Branch(anchor.copy(), "anchor")
    target = new_branch(cfg, data, 0, "target")

    def step(imgs, txts, lr, _):
        a = score_batch(frozen.params, imgs, txts)
        return _target_update(target, cfg, imgs, txts, lr, a)

    res = _run(cfg, data, target, step)
    res.final = {"anchor": frozen, "target": target}
    return res


def train_oss(cfg: TrainConfig, data: PairDataset) -> TrainResult:
    """Jointly trained cohort; the last branch is the evaluated target.

    Cohort position 1 is the anchor (task loss only).  Position m > 1 adds
    the mean of its boosting losses against positions 1..m-1.
    """
    m = cfg.branches
    if m < 2:
        raise ValueError("oss needs at least 2 branches")
    # cohort positions 1..m-1 use sub-seeds 1..m-1; the target (position m) uses 0
    cohort = [new_branch(cfg, data, k, f"cohort-{k}") for k in range(1, m)]
    cohort.append(new_branch(cfg, data, 0, "target"))
    record = {}

    def step(imgs, txts, lr, _):
        forwards = [_forward(b, cfg, imgs, txts) for b in cohort]
        for pos, (branch, (nodes, s)) in enumerate(zip(cohort, forwards)):
            raw = _raw(s, cfg)
            loss, boo = raw, 0.0
            if pos > 0 and cfg.variant is not None:
                parts = [_boost(s, forwards[j][1].value, cfg) for j in range(pos)]
                boo = parts[0]
                for p in parts[1:]:
                    boo = boo + p
                boo = nc.affine(boo, 1.0 / pos) if pos > 1 else boo
                loss = raw + boo
            optimizer_step(branch, _step_grads(loss, nodes), lr)
            record[pos] = (_value(loss), _value(raw), _value(boo))
        return record[m - 1]

    res = _run(cfg, data, cohort[-1], step)
    res.final = {b.role: b for b in cohort}
    return res


def train_mss(cfg: TrainConfig, data: PairDataset, beta_override: float | None = None) -> TrainResult:
    """Anchor starts as a copy of the target and tracks it by EMA only."""
    target = new_branch(cfg, data, 0, "target")
    anchor = Branch(target.params.copy(), "anchor")
    per_epoch = len(batches(data, "train", cfg.batch_size, cfg.seed, 0))
    schedule = BetaSchedule(cfg.epochs * per_epoch, cfg.beta0)
    betas = []

    def step(imgs, txts, lr, n):
        a = score_batch(anchor.params, imgs, txts)
        out = _target_update(target, cfg, imgs, txts, lr, a)
        beta = beta_at(schedule, n) if beta_override is None else beta_override
        ema_update(anchor, target, beta)
        betas.append(beta)
        return out

    res = _run(cfg, data, target, step)
    res.final = {"anchor": anchor, "target": target}
    res.anchor_trace = betas
    return res


def train(cfg: TrainConfig, data: PairDataset, anchor: EncoderParams | None = None) -> TrainResult:
    if cfg.scenario == "single":
        return train_single(cfg, data)
    if cfg.scenario == "oas":
        return train_oas(cfg, data, anchor)
    if cfg.scenario == "oss":
        return train_oss(cfg, data)
    return train_mss(cfg, data)
