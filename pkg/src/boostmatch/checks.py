"""Named property checks run by ``boostmatch check``.

Each check takes a seeded generator and a namespace of implementations
(defaults from :mod:`boostmatch.losses`), so a test can inject a broken
loss and confirm the relevant property catches it.
"""
from __future__ import annotations

import types
from dataclasses import dataclass

import numpy as np

from . import cohort, encoders, evaluation, losses
from . import numcore as nc

CFG = losses.MarginConfig(0.2, 0.5)
SOFT = losses.SoftMarginConfig()
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def default_impl() -> types.SimpleNamespace:
    return types.SimpleNamespace(**{k: getattr(losses, k) for k in (
        "loss_sum", "loss_max", "loss_rs", "loss_rm", "loss_as", "loss_am",
        "loss_rm_soft", "loss_am_soft", "gamma_sa")})


def random_batch(rng, n_lo=2, n_hi=16):
    n = int(rng.integers(n_lo, n_hi + 1))
    return rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, n))


def _ordering(rng, impl, small, big, trials=2000):
    worst = -np.inf
    for _ in range(trials):
        t, a = random_batch(rng)
        b = losses.SimilarityBatch(t, a)
        worst = max(worst, getattr(impl, small)(b, CFG) - getattr(impl, big)(b, CFG))
    return worst <= 1e-12, f"max({small} - {big}) = {worst:.3e}"


def check_rm_le_am(rng, impl):
    return _ordering(rng, impl, "loss_rm", "loss_am")


def check_rs_le_as(rng, impl):
    return _ordering(rng, impl, "loss_rs", "loss_as")


def check_identity_anchor(rng, impl):
    worst = 0.0
    for _ in range(500):
        t, _ = random_batch(rng)
        b = losses.SimilarityBatch(t, t)
        want = 2 * CFG.gamma * t.shape[0]
        worst = max(worst, abs(impl.loss_rm(b, CFG) - want), abs(impl.loss_am(b, CFG) - want))
    return worst < 1e-12, f"max deviation from 2*gamma*N = {worst:.3e}"


def check_pair_batch_sum_equals_max(rng, impl):
    worst = 0.0
    for _ in range(500):
        t, a = random_batch(rng, 2, 2)
        b = losses.SimilarityBatch(t, a)
        worst = max(worst, abs(impl.loss_sum(b, CFG) - impl.loss_max(b, CFG)),
                    abs(impl.loss_rs(b, CFG) - impl.loss_rm(b, CFG)),
                    abs(impl.loss_as(b, CFG) - impl.loss_am(b, CFG)))
    return worst < 1e-12, f"max |sum - max| at N=2 = {worst:.3e}"


def check_zero_anchor_reduction(rng, impl):
    worst = 0.0
    for _ in range(500):
        t, _ = random_batch(rng)
        b = losses.SimilarityBatch(t, np.zeros_like(t))
        worst = max(worst, abs(impl.loss_rm(b, CFG) - impl.loss_max(t, CFG)))
    return worst < 1e-12, f"max |rm(S, 0) - max(S)| = {worst:.3e}"


def check_soft_margin_boundaries(rng, impl):
    vals = [impl.gamma_sa(SOFT.d_x, "relative", CFG, SOFT),
            impl.gamma_sa(SOFT.d_y, "abs_pos", CFG, SOFT),
            impl.gamma_sa(-SOFT.d_y, "abs_neg", CFG, SOFT)]
    worst = max(abs(v) for v in vals)
    return worst <= 1e-12, f"boundary values {vals}"


def check_soft_margin_slope(rng, impl):
    h = 1e-6
    # one-sided differences from inside the domain
    slopes = {
        "relative": (impl.gamma_sa(SOFT.d_x, "relative", CFG, SOFT)
                     - impl.gamma_sa(SOFT.d_x - h, "relative", CFG, SOFT)) / h,
        "abs_pos": (impl.gamma_sa(SOFT.d_y, "abs_pos", CFG, SOFT)
                    - impl.gamma_sa(SOFT.d_y - h, "abs_pos", CFG, SOFT)) / h,
        "abs_neg": (impl.gamma_sa(-SOFT.d_y + h, "abs_neg", CFG, SOFT)
                    - impl.gamma_sa(-SOFT.d_y, "abs_neg", CFG, SOFT)) / h,
    }
    want = {"relative": -1.0, "abs_pos": -1.0, "abs_neg": 1.0}
    ok = all(abs(slopes[k] - want[k]) < 1e-3 for k in want)
    return ok, "slopes " + ", ".join(f"{k}={v:.6f}" for k, v in slopes.items())


def check_soft_margin_shape(rng, impl):
    problems = []
    for kind, d, g, sign in (("relative", SOFT.d_x, CFG.gamma, -1), ("abs_pos", SOFT.d_y, CFG.gamma1, -1),
                             ("abs_neg", SOFT.d_y, CFG.gamma2, 1)):
        x = np.linspace(-d, d, 1000)
        y = np.asarray(impl.gamma_sa(x, kind, CFG, SOFT))
        if np.any(sign * np.diff(y) < 0):
            problems.append(f"{kind} not monotone")
        if np.any(y < 0) or np.any(y > g):
            problems.append(f"{kind} outside [0, {g}]")
    return not problems, "; ".join(problems) or "monotone, within [0, margin]"


def check_no_anchor_gradient(rng, impl):
    worst = 0.0
    for name in losses.VARIANTS:
        t, a = random_batch(rng, 3, 8)
        ta, aa = nc.leaf(t, "target"), nc.leaf(a, "anchor")
        loss = losses.boosting_loss(losses.SimilarityBatch(ta, aa), name, CFG, SOFT)
        _, g = nc.backward(loss, [ta, aa])
        worst = max(worst, float(np.abs(g).max()))
    return worst == 0.0, f"max |d loss / d anchor| = {worst}"


def _loss_graph(fn, anchor):
    return nc.Graph(lambda t: fn(losses.SimilarityBatch(t, anchor)))


def check_loss_gradients(rng, impl):
    worst, tried = 0.0, 0
    fns = {"sum": lambda b: losses.loss_sum(b, CFG), "max": lambda b: losses.loss_max(b, CFG)}
    fns.update({v: (lambda b, v=v: losses.boosting_loss(b, v, CFG, SOFT)) for v in losses.VARIANTS})
    for name, fn in fns.items():
        for _ in range(10):
            t, a = random_batch(rng, 2, 6)
            g = _loss_graph(fn, a)
            if nc.kink_distance(g, {"t": t}, ["t"]) <= 10 * STEP:
                continue
            worst = max(worst, nc.finite_diff_check(g, {"t": t}, ["t"], STEP))
            tried += 1
    return worst < 1e-5, f"max relative error {worst:.2e} over {tried} points"


def check_encoder_gradients(rng, impl):
    worst = 0.0
    for mode in encoders.MODES:
        params = encoders.init_params(mode, 4, 4, 4, encoders.InteractionConfig(9.0, 3),
                                      seed=int(rng.integers(1 << 30)))
        imgs, txts = rng.normal(size=(2, 2, 4)), rng.normal(size=(2, 2, 4))
        weights = rng.normal(size=(2, 2))

        def build(**p):
            return nc.total_sum(encoders.score_graph(p, mode, imgs, txts) * weights)

        g = nc.Graph(build)
        worst = max(worst, nc.finite_diff_check(g, params.weights, params.names, STEP))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def check_softmax_rows(rng, impl):
    x = rng.normal(size=(20, 7)) * 5
    y = nc.row_softmax(x, 9.0).value
    err = float(np.abs(y.sum(axis=1) - 1).max())
    return err < 1e-12 and bool(np.all(y >= 0)), f"max |row sum - 1| = {err:.1e}"


def check_row_norms(rng, impl):
    x = rng.normal(size=(20, 7))
    x[3] = 0.0
    y = nc.row_normalize(x).value
    norms = np.sqrt((y ** 2).sum(axis=1))
    err = float(np.abs(np.delete(norms, 3) - 1).max())
    return err < 1e-12 and norms[3] == 0.0, f"max |norm - 1| = {err:.1e}"


def check_beta_schedule(rng, impl):
    s = cohort.BetaSchedule(1000)
    b = [cohort.beta_at(s, k) for k in range(1001)]
    ok = b[0] == 0.99995 and b[-1] == 1.0 and all(y >= x for x, y in zip(b, b[1:]))
    return ok, f"beta(0)={b[0]}, beta(S)={b[-1]}"


def check_ema_convexity(rng, impl):
    p = encoders.init_params(seed=1)
    q = encoders.init_params(seed=2)
    a, t = cohort.Branch(p.copy(), "anchor"), cohort.Branch(q, "target")
    before = {k: v.copy() for k, v in a.params.weights.items()}
    cohort.ema_update(a, t, float(rng.uniform()))
    ok = all(np.all(np.minimum(before[k], q.weights[k]) <= v) and np.all(v <= np.maximum(before[k], q.weights[k]))
             for k, v in a.params.weights.items())
    return ok, "anchor stays between prior anchor and target"


def check_metric_oracle(rng, impl):
    from .reference import naive_report
    bad = 0
    for _ in range(20):
        n, c = int(rng.integers(2, 12)), int(rng.integers(1, 6))
        s = np.round(rng.uniform(-1, 1, (n, n * c)), 1)  # coarse values force ties
        truth = np.repeat(np.arange(n), c)
        if evaluation.report(s, truth) != naive_report(s, truth):
            bad += 1
    return bad == 0, f"{bad} mismatching galleries"


def check_determinism(rng, impl):
    t, a = random_batch(rng, 4, 8)
    g = _loss_graph(lambda b: losses.loss_am(b, CFG), a)
    g1, g2 = nc.gradient(g, {"t": t}, ["t"]), nc.gradient(g, {"t": t}, ["t"])
    same = np.array_equal(g1["t"], g2["t"]) and nc.evaluate(g, {"t": t}).tobytes() == nc.evaluate(g, {"t": t}).tobytes()
    return same, "repeat evaluation bit-identical"


CHECKS = [
    ("rm_le_am", check_rm_le_am),
    ("rs_le_as", check_rs_le_as),
    ("identity_anchor", check_identity_anchor),
    ("pair_batch_sum_equals_max", check_pair_batch_sum_equals_max),
    ("zero_anchor_reduction", check_zero_anchor_reduction),
    ("soft_margin_boundaries", check_soft_margin_boundaries),
    ("soft_margin_slope", check_soft_margin_slope),
    ("soft_margin_shape", check_soft_margin_shape),
    ("no_anchor_gradient", check_no_anchor_gradient),
    ("loss_gradients", check_loss_gradients),
    ("encoder_gradients", check_encoder_gradients),
    ("softmax_rows", check_softmax_rows),
    ("row_norms", check_row_norms),
    ("beta_schedule", check_beta_schedule),
    ("ema_convexity", check_ema_convexity),
    ("metric_oracle", check_metric_oracle),
    ("determinism", check_determinism),
]


def run_checks(seed: int = 0, impl: types.SimpleNamespace | None = None) -> list[CheckResult]:
    impl = impl or default_impl()
    out = []
    for k, (name, fn) in enumerate(CHECKS):
        try:
            ok, detail = fn(nc.make_rng(seed, "check", k), impl)
        except Exception as e:  # a crash counts as a failure, not an abort
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
