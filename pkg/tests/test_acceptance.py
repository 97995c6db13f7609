"""Acceptance gate: every criterion at its stated tolerance.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts, so a red criterion shows up both as a failed test and in the
summary block.  The trend and scenario criteria train on the pinned
synthetic dataset and take a couple of minutes in total.
"""
import json
import time

import mpmath
import numpy as np
import pytest

from boostmatch import checks, cli, cohort, data, encoders, evaluation, losses
from boostmatch import numcore as nc
from boostmatch.reference import naive_report

CFG = losses.MarginConfig(0.2, 0.5)
SOFT = losses.SoftMarginConfig()
PINNED = data.LatentSpec(latent_dim=16, noise=0.3)
SEEDS = (1, 2, 3, 4, 5)


def test_ordering_inequalities(verdict):
    rng = nc.make_rng(2024, "ordering")
    worst_m = worst_s = -np.inf
    start = time.perf_counter()
    for _ in range(10_000):
        t, a = checks.random_batch(rng, 2, 16)
        b = losses.SimilarityBatch(t, a)
        worst_m = max(worst_m, losses.loss_rm(b, CFG) - losses.loss_am(b, CFG))
        worst_s = max(worst_s, losses.loss_rs(b, CFG) - losses.loss_as(b, CFG))
    elapsed = time.perf_counter() - start
    ok = worst_m <= 1e-12 and worst_s <= 1e-12 and elapsed < 10.0
    verdict("ordering rm<=am, rs<=as over 10k batches", ok,
            f"max(rm-am)={worst_m:.2e}, max(rs-as)={worst_s:.2e}, {elapsed:.1f}s")
    assert ok


def test_identity_anchor_exact(verdict):
    rng = nc.make_rng(2024, "identity")
    worst = 0.0
    for _ in range(1000):
        t, _ = checks.random_batch(rng, 2, 16)
        b = losses.SimilarityBatch(t, t)
        want = 2 * CFG.gamma * t.shape[0]
        worst = max(worst, abs(losses.loss_rm(b, CFG) - want), abs(losses.loss_am(b, CFG) - want))
    ok = worst < 1e-12
    verdict("identity anchor gives 2*gamma*N", ok, f"max deviation {worst:.2e} over 1000 batches")
    assert ok


def _literal_soft_margin(x, g, d, increasing):
    # 2g / (1 + exp(eps (x - d))) - g with eps = 2 / g, in 50-digit arithmetic
    x, g, d = mpmath.mpf(x), mpmath.mpf(g), mpmath.mpf(d)
    if increasing:
        return 2 * g / (1 + mpmath.exp((-2 / g) * (x + d))) - g
    return 2 * g / (1 + mpmath.exp((2 / g) * (x - d))) - g


def test_soft_margin_boundaries(verdict):
    mpmath.mp.dps = 50
    problems = []
    zero = [losses.gamma_sa(SOFT.d_x, "relative", CFG, SOFT), losses.gamma_sa(-SOFT.d_y, "abs_neg", CFG, SOFT)]
    if max(abs(v) for v in zero) > 1e-12:
        problems.append(f"boundary values {zero}")
    h = 1e-6
    slopes = {
        "relative": (zero[0] - losses.gamma_sa(SOFT.d_x - h, "relative", CFG, SOFT)) / h,
        "abs_pos": (losses.gamma_sa(SOFT.d_y, "abs_pos", CFG, SOFT)
                    - losses.gamma_sa(SOFT.d_y - h, "abs_pos", CFG, SOFT)) / h,
        "abs_neg": (losses.gamma_sa(-SOFT.d_y + h, "abs_neg", CFG, SOFT) - zero[1]) / h,
    }
    for kind, want in (("relative", -1.0), ("abs_pos", -1.0), ("abs_neg", 1.0)):
        if abs(slopes[kind] - want) >= 1e-3:
            problems.append(f"{kind} slope {slopes[kind]}")
    for kind, g, d, inc in (("relative", CFG.gamma, SOFT.d_x, False), ("abs_pos", CFG.gamma1, SOFT.d_y, False),
                            ("abs_neg", CFG.gamma2, SOFT.d_y, True)):
        grid = np.linspace(-d, d, 1000)
        y = losses.gamma_sa(grid, kind, CFG, SOFT)
        step = np.diff(y)
        if np.any(step < 0) if inc else np.any(step > 0):
            problems.append(f"{kind} not monotone")
        # float tanh saturates to exactly g far from the zero point, so the
        # strict upper bound is checked on the exact formula and <= on floats
        if np.any(y < 0) or np.any(y > g):
            problems.append(f"{kind} float values outside [0, {g}]")
        exact = [_literal_soft_margin(x, g, d, inc) for x in grid]
        if any(v < 0 or v >= g for v in exact):
            problems.append(f"{kind} exact values outside [0, {g})")
    ok = not problems
    verdict("soft margin zeros, slopes, shape", ok,
            "; ".join(problems) or "zeros exact, slopes " + ", ".join(f"{k}={v:.6f}" for k, v in slopes.items()))
    assert ok


def _fd_points(make_graph, rng, count=100, step=1e-5):
    """Worst error over ``count`` non-kink points, plus that point's error at step / 10."""
    worst, worst_point, tried = 0.0, None, 0
    while tried < count:
        graph, leaves, wrt = make_graph(rng)
        if nc.kink_distance(graph, leaves, wrt) <= 10 * step:
            continue
        err = nc.finite_diff_check(graph, leaves, wrt, step)
        if err > worst:
            worst, worst_point = err, (graph, leaves, wrt)
        tried += 1
    # truncation error of central differences shrinks as step^2; a wrong gradient would not
    finer = nc.finite_diff_check(*worst_point, step / 10) if worst_point else 0.0
    return worst, finer


def test_gradients(verdict):
    rng = nc.make_rng(2024, "gradients")
    fns = {"sum": lambda b: losses.loss_sum(b, CFG), "max": lambda b: losses.loss_max(b, CFG)}
    fns.update({v: (lambda b, v=v: losses.boosting_loss(b, v, CFG, SOFT)) for v in losses.VARIANTS})
    worst = {}
    for name, fn in fns.items():
        def make(rng, fn=fn):
            t, a = checks.random_batch(rng, 2, 6)
            return nc.Graph(lambda t: fn(losses.SimilarityBatch(t, a))), {"t": t}, ["t"]
        worst[name] = _fd_points(make, rng)
    for mode in encoders.MODES:
        def make(rng, mode=mode):
            p = encoders.init_params(mode, 3, 3, 3, encoders.InteractionConfig(9.0, 2),
                                     seed=int(rng.integers(1 << 30)))
            imgs, txts = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
            w = rng.normal(size=(2, 2))
            g = nc.Graph(lambda **q: nc.total_sum(encoders.score_graph(q, mode, imgs, txts) * w))
            return g, p.weights, list(p.names)
        worst[f"encoder:{mode}"] = _fd_points(make, rng)
    anchor_grad = 0.0
    for name in losses.VARIANTS:
        for _ in range(20):
            t, a = checks.random_batch(rng, 2, 8)
            tn, an = nc.leaf(t, "t"), nc.leaf(a, "a")
            _, ga = nc.backward(losses.boosting_loss(losses.SimilarityBatch(tn, an), name, CFG, SOFT), [tn, an])
            anchor_grad = max(anchor_grad, float(np.abs(ga).max()))
    name = max(worst, key=lambda k: worst[k][0])
    top, finer = worst[name]
    ok = top < 1e-5 and anchor_grad == 0.0
    verdict("finite-difference gradients, detached anchor", ok,
            f"max rel err {top:.2e} at step 1e-5 ({name}; same point at step 1e-6: {finer:.1e}), "
            f"max |d/d anchor| {anchor_grad}")
    assert ok


def test_ema_schedule_and_replay(verdict, monkeypatch):
    s = cohort.BetaSchedule(1234)
    ends = cohort.beta_at(s, 0) == 0.99995 and cohort.beta_at(s, 1234) == 1.0
    ds = data.generate(PINNED, 1)
    trajectory = []
    real = cohort.ema_update

    def spy(anchor, target, beta):
        trajectory.append({k: v.copy() for k, v in target.params.weights.items()})
        return real(anchor, target, beta)

    monkeypatch.setattr(cohort, "ema_update", spy)
    cfg = cohort.TrainConfig(scenario="mss", epochs=2, seed=1)
    res = cohort.train_mss(cfg, ds)
    theta = {k: v.copy() for k, v in cohort.new_branch(cfg, ds, 0, "target").params.weights.items()}
    for beta, target in zip(res.anchor_trace, trajectory):
        for k in theta:
            theta[k] = beta * theta[k] + (1 - beta) * target[k]
    dev = max(float(np.max(np.abs(res.final["anchor"].params.weights[k] - v))) for k, v in theta.items())
    ok = ends and dev <= 1e-15 and len(trajectory) == len(res.steps)
    verdict("beta endpoints and EMA replay fold", ok,
            f"beta(0)={cohort.beta_at(s, 0)}, beta(S)={cohort.beta_at(s, 1234)}, "
            f"fold deviation {dev:.1e} after {len(trajectory)} steps")
    assert ok


# -- trend and scenario runs on the pinned dataset ----------------------------------


@pytest.fixture(scope="module")
def runs():
    ds = data.generate(PINNED, 1)
    out = {}
    for seed in SEEDS:
        base_cfg = cohort.TrainConfig(scenario="single", seed=seed)
        entries = {}
        for name, cfg, anchor in (
            ("base", base_cfg, None),
            ("oss_rm", cohort.TrainConfig(scenario="oss", variant="rm", seed=seed), None),
            ("oss_am", cohort.TrainConfig(scenario="oss", variant="am", seed=seed), None),
            ("oas_rm", cohort.TrainConfig(scenario="oas", variant="rm", seed=seed), "base"),
            ("mss_rm", cohort.TrainConfig(scenario="mss", variant="rm", seed=seed), None),
        ):
            start = time.perf_counter()
            res = cohort.train(cfg, ds, entries[anchor]["params"] if anchor else None)
            elapsed = time.perf_counter() - start
            rep, _ = cohort.validate(res.target, ds, "test")
            entries[name] = {"params": res.target, "rsum": rep.rsum, "md": rep.md, "seconds": elapsed}
        out[seed] = entries
    return out


def _table(runs, names):
    return "; ".join(f"s{s} " + " ".join(f"{n}={runs[s][n]['rsum']:.1f}/{runs[s][n]['md']:.3f}" for n in names)
                     for s in SEEDS)


def test_trend_reproduction(verdict, runs):
    gain = {v: sum(runs[s][v]["rsum"] >= runs[s]["base"]["rsum"] + 1.0 for s in SEEDS) for v in ("oss_rm", "oss_am")}
    md_order = sum(runs[s]["oss_am"]["md"] > runs[s]["oss_rm"]["md"] > runs[s]["base"]["md"] for s in SEEDS)
    slowest = max(e["seconds"] for r in runs.values() for e in r.values())
    ok = gain["oss_rm"] >= 4 and gain["oss_am"] >= 4 and md_order >= 4 and slowest < 300
    verdict("trend: boosted rsum gain and md(am) > md(rm) > md(base)", ok,
            f"rsum gain seeds rm {gain['oss_rm']}/5, am {gain['oss_am']}/5; md order {md_order}/5; "
            f"slowest run {slowest:.1f}s [rsum/md: {_table(runs, ('base', 'oss_rm', 'oss_am'))}]")
    assert ok


def test_scenario_parity(verdict, runs):
    wins = {v: sum(runs[s][v]["rsum"] > runs[s]["base"]["rsum"] for s in SEEDS) for v in ("oas_rm", "mss_rm")}
    ok = wins["oas_rm"] >= 3 and wins["mss_rm"] >= 3
    verdict("scenario parity: oas and mss beat baseline", ok,
            f"oas {wins['oas_rm']}/5, mss {wins['mss_rm']}/5 "
            f"[rsum/md: {_table(runs, ('base', 'oas_rm', 'mss_rm'))}]")
    assert ok


def test_metric_oracle_equivalence(verdict):
    rng = nc.make_rng(2024, "galleries")
    bad = []
    for k in range(200):
        n, c = int(rng.integers(1, 51)), int(rng.integers(1, 6))
        s = rng.uniform(-1, 1, (n, n * c))
        if k % 2:
            s = np.round(s, 1)  # coarse grid forces rank ties
        truth = np.repeat(np.arange(n), c)
        if evaluation.report(s, truth) != naive_report(s, truth):
            bad.append((n, c))
    ok = not bad
    verdict("metrics equal naive sort oracle", ok, f"{200 - len(bad)}/200 galleries identical")
    assert ok


def test_cli_determinism(verdict, tmp_path, capsys):
    doc = {"seed": 3, "out": str(tmp_path / "a"), "data": {"latent_dim": 16},
           "train": {"scenario": "mss", "epochs": 3}}
    paths = []
    for tag in ("a", "b"):
        cfg = dict(doc, out=str(tmp_path / tag))
        p = tmp_path / f"{tag}.json"
        p.write_text(json.dumps(cfg))
        paths.append(p)
    outputs = []
    for tag, p in zip(("a", "b"), paths):
        run_dir = tmp_path / tag
        codes = [cli.main(["gen", "--config", str(p)]), cli.main(["train", "--config", str(p)]),
                 cli.main(["eval", "--config", str(p), "--checkpoint", str(run_dir / "checkpoint.json")])]
        capsys.readouterr()
        codes.append(cli.main(["check"]))
        check_out = capsys.readouterr().out
        files = {n: (run_dir / n).read_bytes() for n in
                 ("dataset.json", "checkpoint.json", "history.jsonl", "report.json", "hist.csv")}
        outputs.append((codes, check_out, files))
    (ca, ka, fa), (cb, kb, fb) = outputs
    same = [n for n in fa if fa[n] == fb[n]]
    ok = ca == cb == [0, 0, 0, 0] and ka == kb and len(same) == len(fa)
    verdict("byte-identical reruns of gen/train/eval/check", ok,
            f"exit codes {ca}; identical files {sorted(same)}; check output identical {ka == kb}")
    assert ok
