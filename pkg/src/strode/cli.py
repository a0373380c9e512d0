"""Command-line entry point: generate, train, eval, inspect-kl.

Exit codes: 0 success, 2 usage or I/O problem, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as dg
from .metrics import evaluate_timings, min_max_normalize, truncated_kl_oracle
from .model import (
    RegenerativeStrodeNet,
    StrodeNet,
    TrainConfig,
    frame_accuracy,
    load_checkpoint,
    save_checkpoint,
    train,
    train_regenerative,
)
from .ode import DivergenceError
from .optim import TrainingError
from .point_process import (
    NumericError,
    density_function,
    exponential_posterior,
    exponential_prior,
    kl_bound_terms,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
PROCESSES = ("hawkes", "poisson", "exponential", "postdiction")
METRIC_COLUMNS = ["epoch", "train_loss", "recon", "kl", "val_mse", "val_cs"]
REGEN_COLUMNS = ["epoch", "train_loss", "recon", "kl", "prior_ll", "val_acc"]

log = logging.getLogger("strode")


class UsageError(Exception):
    """Bad paths or arguments discovered after parsing; maps to exit code 2."""


# -- generate -----------------------------------------------------------------
def cmd_generate(args) -> int:
    out = Path(args.out)
    sizes = {"train": args.n_train, "val": args.n_val, "test": args.n_test}
    total = sum(sizes.values())
    if args.process == "postdiction":
        length = args.length or 20
        params = {"length": length, "lag_range": [args.lag_min, args.lag_max], "noise_sd": args.noise_sd}
        try:
            seqs = dg.make_postdiction_dataset(total, length, (args.lag_min, args.lag_max), args.seed,
                                               args.noise_sd)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        length = args.length or 10
        try:
            hawkes = dg.HawkesParams(args.base, args.alpha, args.beta)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        params = {"length": length, "noise_sd": args.noise_sd}
        if args.process == "hawkes":
            params.update(base=args.base, alpha=args.alpha, beta=args.beta)
        elif args.process == "poisson":
            params.update(rate=args.rate)
        else:
            params.update(exp_noise_sd=args.exp_noise_sd)
        seqs = dg.make_sine_dataset(args.process, total, length, args.seed, args.noise_sd, hawkes, args.rate,
                                    args.exp_noise_sd)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, split in dg.split_dataset(seqs, sizes).items():
            dg.write_dataset(out / f"{name}.jsonl", split)
        manifest = {"process": args.process, "seed": args.seed, "splits": sizes, "params": params}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    print(f"wrote {total} sequences to {out}")
    return EXIT_OK


# -- train --------------------------------------------------------------------
def _load_split(data_dir: Path, name: str) -> list:
    path = data_dir / f"{name}.jsonl"
    if not path.is_file():
        raise UsageError(f"missing {path}")
    return dg.read_dataset(path)


def _load_config(args) -> tuple[TrainConfig, list]:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    seeds = raw.pop("seeds", None)
    if args.epochs is not None:
        raw["epochs"] = args.epochs
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    seeds = seeds if seeds is not None else [raw.get("seed", 0)]
    if not seeds:
        raise UsageError("seed list is empty")
    try:
        return TrainConfig.from_dict(raw), list(seeds)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _write_metrics_csv(path: Path, metrics: list, columns: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: row.get(k) for k in columns})


def _train_one(data_dir: str, out_dir: str, config: dict, seed: int, regenerative: bool) -> dict:
    cfg = TrainConfig(**{**config, "seed": seed})
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    train_set, val_set = _load_split(data_dir, "train"), _load_split(data_dir, "val")
    if regenerative:
        model = RegenerativeStrodeNet(obs_dim=train_set[0].x.shape[1], latent_dim=cfg.latent_dim, seed=seed)
        result = train_regenerative(model, train_set, val_set, cfg)
        columns = REGEN_COLUMNS
    else:
        model = StrodeNet(obs_dim=train_set[0].values.shape[1], latent_dim=cfg.latent_dim,
                          likelihood=cfg.likelihood, seed=seed)
        result = train(model, [s.without_times() for s in train_set], val_set, cfg)
        columns = METRIC_COLUMNS
    save_checkpoint(out_dir / f"model_seed{seed}.json", result.model, cfg, result.metrics)
    _write_metrics_csv(out_dir / f"metrics_seed{seed}.csv", result.metrics, columns)
    from .plotting import plot_training_curves
    plot_training_curves(result.metrics, out_dir / f"curves_seed{seed}.png")
    return {"seed": seed, "best_epoch": result.best_epoch, "final": result.metrics[-1] if result.metrics else {}}


def _worker_cap(requested: int) -> int:
    env = os.environ.get("STRODE_NUM_THREADS")
    cap = int(env) if env else requested
    return max(1, min(requested, cap))


def cmd_train(args) -> int:
    data_dir, out = Path(args.data), Path(args.out)
    if not data_dir.is_dir():
        raise UsageError(f"data directory {data_dir} does not exist")
    cfg, seeds = _load_config(args)
    manifest_path = data_dir / "manifest.json"
    process = json.loads(manifest_path.read_text()).get("process") if manifest_path.is_file() else None
    regenerative = process == "postdiction" or cfg.variant == "regenerative"
    if regenerative and cfg.variant != "regenerative":
        cfg = TrainConfig(**{**asdict(cfg), "variant": "regenerative"})
    for split in ("train", "val"):
        if not (data_dir / f"{split}.jsonl").is_file():
            raise UsageError(f"missing {data_dir / f'{split}.jsonl'}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc
    manifest = {"data": str(data_dir), "process": process, "seeds": seeds, "config": asdict(cfg)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    jobs = [(str(data_dir), str(out), asdict(cfg), seed, regenerative) for seed in seeds]
    workers = _worker_cap(args.parallel_seeds)
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                summaries = list(pool.map(_train_one, *zip(*jobs)))
        else:
            summaries = [_train_one(*job) for job in jobs]
    except (TrainingError, DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for s in summaries:
        final = {k: round(v, 6) if isinstance(v, float) else v for k, v in s["final"].items()}
        print(f"seed {s['seed']}: best epoch {s['best_epoch']}, final {final}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------
def _eval_sequences(data_path: Path) -> list:
    if data_path.is_dir():
        data_path = data_path / "test.jsonl"
    if not data_path.is_file():
        raise UsageError(f"missing {data_path}")
    return dg.read_dataset(data_path)


def evaluate_to_files(model, seqs, report_path: Path, plot: bool = True) -> dict:
    """Write the report JSON plus ``timings.csv`` (and a PNG) next to it."""
    out_dir = report_path.parent
    if isinstance(model, RegenerativeStrodeNet):
        x = np.stack([s.x for s in seqs])
        y = np.stack([s.y for s in seqs])
        cfg = TrainConfig(variant="regenerative", euler_step=model.euler_step)
        report = {"accuracy": frame_accuracy(model, x, y, cfg), "n_sequences": len(seqs)}
        report_path.write_text(json.dumps(report, indent=2) + "\n")
        return report
    report, inferred, truth, cs = evaluate_timings(model, seqs, per_sequence=True)
    true_norm = np.stack([min_max_normalize(t) for t in truth])
    inf_norm = np.stack([min_max_normalize(t) for t in inferred])
    with open(out_dir / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "step", "true_norm", "inferred_norm", "true_time", "inferred_time"])
        for b in range(len(truth)):
            for k in range(truth.shape[1]):
                writer.writerow([b, k + 1, repr(float(true_norm[b, k])), repr(float(inf_norm[b, k])),
                                 repr(float(truth[b, k])), repr(float(inferred[b, k]))])
    report_path.write_text(report.to_json() + "\n")
    if plot:
        from .plotting import plot_timings
        plot_timings(true_norm, inf_norm, out_dir / "timings.png")
    return asdict(report)


def cmd_eval(args) -> int:
    report_path = Path(args.report)
    if report_path.exists() and not args.force:
        raise UsageError(f"{report_path} exists; pass --force to overwrite")
    try:
        model, _, _ = load_checkpoint(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from exc
    seqs = _eval_sequences(Path(args.data))
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    report = evaluate_to_files(model, seqs, report_path, plot=not args.no_plot)
    print(json.dumps(report))
    return EXIT_OK


# -- inspect-kl -----------------------------------------------------------------
def _fixture(name: str):
    if name == "same":
        return exponential_posterior(1.0), exponential_prior(1.0)
    return exponential_posterior(2.0), exponential_prior(1.0)


def cmd_inspect_kl(args) -> int:
    writer = csv.writer(sys.stdout)
    header = ["sequence", "step", "g_eps", "gap", "bound"] + (["oracle"] if args.oracle else [])
    writer.writerow(header)
    if args.fixture:
        post, prior = _fixture(args.fixture)
        terms = kl_bound_terms(post, prior, None, eps=args.eps)
        row = [0, 0, float(terms.g_eps.data[0]), float(terms.gap.data[0]), float(terms.bound.data[0])]
        if args.oracle:
            row.append(truncated_kl_oracle(density_function(post), density_function(prior)))
        writer.writerow(row)
        return EXIT_OK
    if not args.model or not args.data:
        raise UsageError("inspect-kl needs --model and --data, or --fixture")
    try:
        model, _, _ = load_checkpoint(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from exc
    seqs = _eval_sequences(Path(args.data))[: args.n_sequences]
    for b, seq in enumerate(seqs):
        frames = seq.x if isinstance(model, RegenerativeStrodeNet) else seq.values[1:]
        enc = model.encoder(frames).data
        terms = kl_bound_terms(model.posterior, model.prior, enc, eps=args.eps)
        prior_fn = density_function(model.prior)
        for k in range(len(enc)):
            row = [b, k + 1, float(terms.g_eps.data[k]), float(terms.gap.data[k]), float(terms.bound.data[k])]
            if args.oracle:
                row.append(truncated_kl_oracle(density_function(model.posterior, enc[k]), prior_fn))
            writer.writerow(row)
    return EXIT_OK


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strode", description="Stochastic-boundary ODE toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write train/val/test JSONL splits and a manifest")
    g.add_argument("--process", required=True, choices=PROCESSES)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=dg.SPLITS["train"])
    g.add_argument("--n-val", type=int, default=dg.SPLITS["val"])
    g.add_argument("--n-test", type=int, default=dg.SPLITS["test"])
    g.add_argument("--length", type=int, default=None, help="observations per sequence (10, or 20 for postdiction)")
    g.add_argument("--noise-sd", type=float, default=dg.OBS_NOISE_SD)
    g.add_argument("--base", type=float, default=10.0, help="Hawkes base rate")
    g.add_argument("--alpha", type=float, default=0.5, help="Hawkes branching ratio")
    g.add_argument("--beta", type=float, default=1.0, help="Hawkes decay")
    g.add_argument("--rate", type=float, default=10.0, help="Poisson rate")
    g.add_argument("--exp-noise-sd", type=float, default=0.05)
    g.add_argument("--lag-min", type=int, default=1)
    g.add_argument("--lag-max", type=int, default=3)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model per seed")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON file with training fields and an optional 'seeds' list")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seeds", help="comma separated, overrides the config")
    t.add_argument("--parallel-seeds", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a test split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="dataset directory or JSONL file")
    e.add_argument("--report", required=True)
    e.add_argument("--force", action="store_true")
    e.add_argument("--no-plot", action="store_true")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("inspect-kl", help="print bound components per step as CSV")
    k.add_argument("--model")
    k.add_argument("--data")
    k.add_argument("--eps", type=float, default=0.1)
    k.add_argument("--oracle", action="store_true")
    k.add_argument("--fixture", choices=["same", "exp"], help="analytic q/p pair instead of a model")
    k.add_argument("--n-sequences", type=int, default=4)
    k.set_defaults(func=cmd_inspect_kl)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except dg.DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
