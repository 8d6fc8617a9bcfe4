"""Command-line entry point.

Subcommands: train, eval, sample, sweep, verify, gen-synthetic.
Exit codes: 0 success, 1 verification/metric failure, 2 usage/config
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data, evaluation, sampling, training, verify
from .config import RunConfig
from .model import Denoiser, DenoiserConfig
from .optim import AdamState
from .rng import RngState
from .schedule import build_linear_schedule

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


def _limit_threads() -> None:
    n = os.environ.get("REVCD_THREADS")
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(int(n))
    except Exception:
        pass


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    for key in ("dataset", "output_dir", "seed", "epochs", "g", "steps",
                "noise_mode", "lambda3"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    if getattr(args, "synthetic", None):
        overrides["dataset"] = None
    cfg.apply_overrides(**overrides)
    return cfg


def _resolve_dataset(cfg: RunConfig, args) -> data.GzslDataset:
    use_synthetic = getattr(args, "synthetic", None) is not None
    if cfg.dataset and not use_synthetic:
        if not os.path.isdir(cfg.dataset):
            raise UsageError(f"dataset directory not found: {cfg.dataset}")
        return data.load_dataset(cfg.dataset)
    return data.generate_synthetic(cfg.synthetic)


def _build_model(cfg: RunConfig, dataset: data.GzslDataset,
                 rng: RngState) -> Denoiser:
    m = cfg.model
    return Denoiser(DenoiserConfig(
        d_s=dataset.d_s, d_x=dataset.d_x,
        n_seen_classes=len(dataset.seen_classes),
        hidden=tuple(m.hidden), d_t=m.d_t, d_c=m.d_c, n_heads=m.n_heads,
        n_tokens=m.n_tokens, dropout=m.dropout), rng=rng)


def _maybe_dump_config(cfg: RunConfig, args) -> bool:
    if getattr(args, "dump_config", False):
        sys.stdout.write(cfg.to_json())
        return True
    return False


def _schedule(cfg: RunConfig):
    return build_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start,
                                 cfg.schedule.beta_end)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if _maybe_dump_config(cfg, args):
        return EXIT_OK
    dataset = _resolve_dataset(cfg, args)
    schedule = _schedule(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)

    rng = RngState(cfg.seed)
    model = _build_model(cfg, dataset, rng.spawn(1))
    opt = AdamState(lr=cfg.train.learning_rate)

    def checkpoint_fn(m, o, r, step):
        path = os.path.join(cfg.output_dir, f"checkpoint_{step:08d}.ckpt")
        data.save_checkpoint(path, m, o, r, step, cfg.to_dict())

    model, history = training.train(
        dataset, cfg.train, schedule, model=model, opt=opt, rng=rng,
        checkpoint_fn=checkpoint_fn, log=print)

    final = os.path.join(cfg.output_dir, "final.ckpt")
    data.save_checkpoint(final, model, opt, rng,
                         history[-1].step if history else 0, cfg.to_dict())
    with open(os.path.join(cfg.output_dir, "loss_history.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "rec", "noise", "cls", "total"])
        for r in history:
            writer.writerow([r.step, r.rec, r.noise, r.cls, r.total])
    print(f"checkpoint written to {final}")
    return EXIT_OK


def _load_model(args) -> tuple[Denoiser, RunConfig]:
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, _opt, _rng, _step, echo = data.load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(echo) if echo else RunConfig()
    return model, cfg


def cmd_eval(args) -> int:
    model, cfg = _load_model(args)
    overrides = {k: getattr(args, k) for k in ("g", "seed")
                 if getattr(args, k, None) is not None}
    cfg.apply_overrides(**overrides)
    if args.dataset:
        if not os.path.isdir(args.dataset):
            raise UsageError(f"dataset directory not found: {args.dataset}")
        dataset = data.load_dataset(args.dataset)
    else:
        dataset = data.generate_synthetic(cfg.synthetic)
    schedule = _schedule(cfg)

    if args.oracle_sampler:
        def sampler(feats, rows):
            return dataset.attributes[dataset.labels[rows]]
    else:
        sampler = evaluation.model_sampler(model, schedule, cfg.guidance)

    metrics = evaluation.evaluate(dataset, sampler)
    if args.mode == "zsl":
        print(f"ZSL unseen accuracy: {100 * metrics.zsl_unseen:.1f}")
    print(f"S={100 * metrics.S:.1f} U={100 * metrics.U:.1f} "
          f"H={100 * metrics.H:.1f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
        print(f"metrics written to {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model, cfg = _load_model(args)
    if args.g is not None:
        cfg.guidance.g = args.g
    if args.seed is not None:
        cfg.guidance.seed = args.seed
    schedule = _schedule(cfg)

    if not os.path.exists(args.features):
        raise UsageError(f"feature file not found: {args.features}")
    x = np.fromfile(args.features, dtype="<f4").reshape(-1, model.config.d_x)

    rng = RngState(cfg.guidance.seed)
    trajectory_ref = None
    if args.log_trajectory:
        ref_path = args.trajectory_ref
        if ref_path is None:
            raise UsageError("--log-trajectory needs --trajectory-ref "
                             "(true [0,1] attributes per row, float32)")
        trajectory_ref = np.fromfile(ref_path, dtype="<f4").reshape(
            -1, model.config.d_s)
        out, trajectory = sampling.sample(x, model, schedule, cfg.guidance,
                                          rng=rng, trajectory_ref=trajectory_ref)
    else:
        out = sampling.sample(x, model, schedule, cfg.guidance, rng=rng)
        trajectory = None

    out.astype("<f4").tofile(args.out)
    summary = {"rows": int(out.shape[0]), "d_s": int(out.shape[1]),
               "g": cfg.guidance.g, "noise_mode": cfg.guidance.noise_mode,
               "seed": cfg.guidance.seed}
    with open(args.out + ".json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if trajectory is not None:
        with open(args.out + ".trajectory.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean_cos_dist"])
            for t, dist in trajectory:
                writer.writerow([t, dist])
    print(f"wrote {out.shape[0]} sampled semantics to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if _maybe_dump_config(cfg, args):
        return EXIT_OK
    dataset = _resolve_dataset(cfg, args)
    schedule = _schedule(cfg)
    grid = [float(v) for v in args.lambda3_grid.split(",")]

    def evaluate_fn(model):
        sampler = evaluation.model_sampler(model, schedule, cfg.guidance)
        return evaluation.evaluate(dataset, sampler)

    rows = training.lambda3_sweep(
        dataset, cfg.train, schedule, grid, evaluate_fn,
        model_fn=lambda rng: _build_model(cfg, dataset, rng), log=print)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "lambda3_sweep.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda3", "S", "U", "H"])
        for row in rows:
            writer.writerow([row["lambda3"], row["S"], row["U"], row["H"]])
    print(f"sweep results written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(negate=args.negate)
    failed = False
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.detail} ({r.seconds:.1f}s)")
        failed = failed or not r.ok
    return EXIT_FAIL if failed else EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec = data.SyntheticSpec(
        n_seen=args.n_seen, n_unseen=args.n_unseen, d_s=args.d_s,
        d_x=args.d_x, per_class=args.per_class,
        noise_sigma=args.noise_sigma, seed=args.seed or 7)
    dataset = data.generate_synthetic(spec)
    data.save_dataset(dataset, args.out)
    print(f"synthetic dataset ({dataset.n} rows, d_x={dataset.d_x}, "
          f"d_s={dataset.d_s}) written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revcd",
        description="Conditional diffusion over semantic attributes for "
                    "generalized zero-shot classification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="JSON run-config file")
            p.add_argument("--dump-config", action="store_true",
                           help="print the effective config and exit")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--dataset", help="RZD v1 dataset directory")
    p.add_argument("--synthetic", nargs="?", const="default",
                   help="train on the built-in synthetic dataset")
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda3", type=float, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--mode", choices=["zsl", "gzsl"], default="gzsl")
    p.add_argument("--guidance", "--g", dest="g", type=float, default=None)
    p.add_argument("--oracle-sampler", action="store_true",
                   help="prototype-echo stub sampler (pipeline check)")
    p.add_argument("--out", default=None, help="metrics JSON path")

    p = sub.add_parser("sample", help="sample semantics for a feature file")
    common(p, with_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True,
                   help="float32 little-endian [n, d_x] binary file")
    p.add_argument("--out", required=True)
    p.add_argument("--g", type=float, default=None)
    p.add_argument("--log-trajectory", action="store_true")
    p.add_argument("--trajectory-ref", default=None)

    p = sub.add_parser("sweep", help="classification-weight sweep")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--synthetic", nargs="?", const="default")
    p.add_argument("--output-dir", dest="output_dir", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda3", dest="lambda3_grid",
                   default="0,0.001,0.01,0.1,1")

    p = sub.add_parser("verify", help="run the 64-bit verification suites")
    p.add_argument("--negate", choices=["cfg"], default=None,
                   help="inject a fault (self-test of the tester)")

    p = sub.add_parser("gen-synthetic", help="write a synthetic RZD dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-seen", type=int, default=5)
    p.add_argument("--n-unseen", type=int, default=3)
    p.add_argument("--d-s", type=int, default=8)
    p.add_argument("--d-x", type=int, default=16)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)

    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
