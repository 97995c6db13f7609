"""Train baseline, OSS (rm, am), OAS and MSS on the pinned dataset and tabulate test metrics.

    python scripts/run_trend.py --seeds 1 2 3 4 5 --out runs/trend.json
"""
import argparse
import json
import time
from pathlib import Path

from boostmatch import cohort, data

RUNS = (
    ("base", dict(scenario="single")),
    ("oss_rm", dict(scenario="oss", variant="rm")),
    ("oss_am", dict(scenario="oss", variant="am")),
    ("oas_rm", dict(scenario="oas", variant="rm")),
    ("mss_rm", dict(scenario="mss", variant="rm")),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--beta0", type=float, default=0.99995)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    ds = data.generate(data.LatentSpec(latent_dim=16, noise=0.3), 1)
    rows = []
    for seed in args.seeds:
        trained = {}
        for name, kw in RUNS:
            cfg = cohort.TrainConfig(seed=seed, epochs=args.epochs, lr=args.lr, beta0=args.beta0, **kw)
            start = time.perf_counter()
            res = cohort.train(cfg, ds, trained.get("base"))
            rep, _ = cohort.validate(res.target, ds, "test")
            trained[name] = res.target
            rows.append({"seed": seed, "run": name, "rsum": rep.rsum, "md": rep.md,
                         "best_epoch": res.best_epoch, "seconds": round(time.perf_counter() - start, 2)})
            print(f"seed {seed} {name:<7} rsum {rep.rsum:6.1f}  md {rep.md:.4f}  best epoch {res.best_epoch}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
