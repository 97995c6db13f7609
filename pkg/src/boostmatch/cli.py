"""Command-line entry point: ``boostmatch {gen,train,eval,hist,check}``.

Exit codes: 0 success, 1 property failure, 2 config error, 3 missing
artifact, 4 checkpoint/dataset shape mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checks, config, data, encoders, evaluation
from .cohort import train, validate

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_MISSING, EXIT_SHAPE = 0, 1, 2, 3, 4

log = logging.getLogger("boostmatch")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> config.RunConfig:
    if args.config is None:
        raise CliError(EXIT_CONFIG, "--config is required")
    path = Path(args.config)
    if not path.exists():
        raise CliError(EXIT_CONFIG, f"config file not found: {path}")
    try:
        cfg = config.load(path)
    except config.ConfigError as e:
        raise CliError(EXIT_CONFIG, f"config error in field {e}") from None
    if args.seed is not None:
        cfg = cfg.for_seed(args.seed)
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _load_dataset(path: Path) -> data.PairDataset:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"dataset not found: {path} (run `gen` first)")
    try:
        return data.load_manifest(path.read_text())
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(EXIT_MISSING, f"unusable dataset {path}: {e}") from None


def _load_checkpoint(path) -> encoders.EncoderParams:
    if path is None or not Path(path).exists():
        raise CliError(EXIT_MISSING, f"checkpoint not found: {path}")
    return encoders.load(path)


def _check_compatible(params: encoders.EncoderParams, ds: data.PairDataset) -> None:
    s = ds.spec
    if params.image_dim != s.image_dim or params.text_dim != s.text_dim:
        raise CliError(EXIT_SHAPE, f"checkpoint expects dims ({params.image_dim}, {params.text_dim}), "
                                   f"dataset has ({s.image_dim}, {s.text_dim})")


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _load_config(args)
    if cfg.data is None:
        raise CliError(EXIT_CONFIG, "config error in field data.latent_dim: required field missing")
    ds = data.generate(cfg.data, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(cfg.dataset) if cfg.dataset else out / "dataset.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(data.export(ds) + "\n")
    print(ds.checksum)
    return EXIT_OK


def _train_one(cfg: config.RunConfig, out: Path) -> float:
    ds = _load_dataset(cfg.dataset_path)
    anchor = None
    if cfg.train.scenario == "oas":
        if cfg.anchor is None:
            raise CliError(EXIT_MISSING, "scenario 'oas' needs an `anchor` checkpoint path")
        anchor = _load_checkpoint(cfg.anchor)
        _check_compatible(anchor, ds)
    res = train(cfg.train, ds, anchor)
    out.mkdir(parents=True, exist_ok=True)
    encoders.save(res.target, out / "checkpoint.json")
    with open(out / "history.jsonl", "w") as fh:
        for line in res.history:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    return max((h["rsum"] for h in res.history), default=float("nan"))


def _train_worker(item):
    cfg, out = item
    try:
        return _train_one(cfg, Path(out)), None
    except CliError as e:
        return None, (e.code, str(e))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.seeds or args.seed is not None:
        rsum = _train_one(cfg, Path(cfg.out))
        print(f"best val rsum {rsum:.2f}")
        return EXIT_OK
    jobs = [(cfg.for_seed(s), str(Path(cfg.out) / f"seed-{s}")) for s in cfg.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_worker, jobs))
    else:
        results = [_train_worker(j) for j in jobs]
    for s, (rsum, err) in zip(cfg.seeds, results):
        if err is not None:
            raise CliError(*err)
        print(f"seed {s}: best val rsum {rsum:.2f}")
    return EXIT_OK


def _eval_inputs(args):
    cfg = _load_config(args) if args.config else None
    ckpt = args.checkpoint or (cfg and cfg.eval["checkpoint"])
    ds_path = args.dataset or (cfg and str(cfg.dataset_path))
    if ds_path is None:
        raise CliError(EXIT_CONFIG, "need --dataset or a config naming one")
    split = args.split or (cfg.eval["split"] if cfg else "test")
    md_mode = cfg.eval["md_mode"] if cfg else "mean"
    out = Path(args.out or (cfg.out if cfg else "."))
    params = _load_checkpoint(ckpt)
    ds = _load_dataset(Path(ds_path))
    _check_compatible(params, ds)
    try:
        rep, scores = validate(params, ds, split, md_mode)
    except ValueError as e:
        raise CliError(EXIT_SHAPE, str(e)) from None
    _, _, truth = data.test_pairs(ds, split)
    out.mkdir(parents=True, exist_ok=True)
    return rep, scores, truth, out


def cmd_eval(args) -> int:
    rep, scores, truth, out = _eval_inputs(args)
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "hist.csv").write_text(evaluation.histogram(scores, truth).to_csv())
    print(f"rsum {rep.rsum!r}")
    return EXIT_OK


def cmd_hist(args) -> int:
    _, scores, truth, out = _eval_inputs(args)
    (out / "hist.csv").write_text(evaluation.histogram(scores, truth).to_csv())
    print(out / "hist.csv")
    return EXIT_OK


def cmd_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.config:
        seed = _load_config(args).seed
    results = checks.run_checks(seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} {r.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties hold")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_PROPERTY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boostmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gen", cmd_gen), ("train", cmd_train), ("eval", cmd_eval),
                     ("hist", cmd_hist), ("check", cmd_check)):
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval", "hist"):
            p.add_argument("--checkpoint")
            p.add_argument("--dataset")
            p.add_argument("--split", choices=data.SPLITS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
