"""Command-line entry point wiring the pipeline stages together.

Subcommands: simulate (dataset synthesis), train, reconstruct (tomograms),
sweep-latent, benchmark, export (dataset to CSV). All tunables come from the
INI configuration (--config; omitted = defaults); artifacts land in the
configured output directory. Exit codes: 0 success, 2 configuration/usage
error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import evalharness, geometry
from .config import load_config
from .errors import ConfigError, NumericalError
from .neuralnet import load_weights, save_weights, train
from .simulator import Dataset, build_dataset


def _load_weights(path):
    try:
        return load_weights(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fortomo",
        description="Forest SAR tomography sandbox: simulate speckled stacks, "
                    "train the inversion network, reconstruct tomograms, and "
                    "benchmark the estimators.")
    parser.add_argument("--config", type=Path, default=None,
                        help="INI run configuration (defaults used if omitted)")
    parser.add_argument("--seed", type=int, default=None, metavar="S",
                        help="override every section seed in the configuration")
    parser.add_argument("--threads", type=int, default=0, metavar="N",
                        help="cap BLAS/threadpool threads (0 = leave unchanged)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="synthesize a training dataset")

    p_train = sub.add_parser("train", help="train the encoder-decoder network")
    p_train.add_argument("--dataset", type=Path, required=True,
                         help="dataset file written by 'simulate'")

    p_rec = sub.add_parser("reconstruct", help="invert a synthetic scene")
    p_rec.add_argument("--method", required=True, choices=evalharness.METHODS)
    p_rec.add_argument("--weights", type=Path, default=None,
                       help="weights file (required for --method network)")

    p_sweep = sub.add_parser("sweep-latent",
                             help="validation error vs latent size")
    p_sweep.add_argument("--dataset", type=Path, default=None,
                         help="reuse an existing dataset instead of simulating")

    p_bench = sub.add_parser("benchmark", help="single-thread timing comparison")
    p_bench.add_argument("--weights", type=Path, required=True)
    p_bench.add_argument("--dataset", type=Path, default=None,
                         help="dataset for the training-time row "
                              "(simulated from the config if omitted)")

    p_exp = sub.add_parser("export", help="dump a dataset to CSV")
    p_exp.add_argument("--dataset", type=Path, required=True)
    p_exp.add_argument("--out", type=Path, default=None,
                       help="CSV path (default: <output dir>/dataset.csv)")
    return parser


def _outdir(cfg):
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _load_dataset(path):
    try:
        return Dataset.load(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _dataset_from(cfg, path):
    if path is not None:
        return _load_dataset(path)
    sim = cfg.simulation
    return build_dataset(sim.count, cfg.profile_prior(), cfg.geometry_bank(),
                         cfg.height_grid(), looks=sim.looks, seed=sim.seed,
                         split=cfg.training.split, workers=sim.workers)


def cmd_simulate(cfg):
    out = _outdir(cfg)
    dataset = _dataset_from(cfg, None)
    path = out / "dataset.bin"
    dataset.save(path, n_tracks=cfg.geometry.n_tracks)
    bank_dir = out / "geometries"
    bank_dir.mkdir(exist_ok=True)
    for i, geom in enumerate(cfg.geometry_bank()):
        geometry.save_geometry(geom, bank_dir / f"geometry_{i:03d}.txt")
    n_train = dataset.train_indices.size
    print(f"dataset: {path} ({dataset.count} examples, {dataset.n_z} bins, "
          f"{dataset.looks} looks, split {n_train}/{dataset.count - n_train})")
    print(f"geometry bank: {bank_dir} ({cfg.geometry.bank_size} entries)")
    print(f"sha256: {_digest(path)}")
    return 0


def cmd_train(cfg, dataset_path):
    out = _outdir(cfg)
    dataset = _load_dataset(dataset_path)
    weights, history = train(dataset, cfg.training_config(),
                             layer_sizes=cfg.layer_sizes(),
                             leaky_slope=cfg.network.leaky_slope)
    weights_path = out / "weights.bin"
    save_weights(weights, weights_path)
    history.save_csv(out / "loss_history.csv")
    print(f"weights: {weights_path} (layers {weights.layer_sizes})")
    print(f"loss history: {out / 'loss_history.csv'}")
    print(f"final val mse: {history.final_val_mse:.6g}")
    return 0


def _scene_stack(cfg):
    desc = evalharness.make_scene(
        n_columns=cfg.scene.columns, looks=cfg.scene.looks,
        resolution_near=cfg.scene.resolution_near,
        resolution_far=cfg.scene.resolution_far,
        prior=cfg.profile_prior(), n_tracks=cfg.geometry.n_tracks,
        variation=cfg.scene.variation)
    geoms = evalharness.scene_geometries(desc, cfg.scene.perturbation,
                                         cfg.scene.seed)
    return evalharness.simulate_scene(desc, geoms, cfg.height_grid(),
                                      seed=cfg.scene.seed)


def cmd_reconstruct(cfg, method, weights_path):
    out = _outdir(cfg)
    weights = _load_weights(weights_path) if method == "network" else None
    stack = _scene_stack(cfg)
    tomogram = evalharness.reconstruct_tomogram(
        stack, method, weights=weights, cs_config=cfg.cs_config(),
        capon_loading=cfg.scene.capon_loading,
        workers=cfg.simulation.workers)
    for tom, stem in ((tomogram, f"tomogram_{method}"), (stack.truth, "tomogram_truth")):
        evalharness.tomogram_to_csv(tom, out / f"{stem}.csv")
        evalharness.write_pgm(tom, out / f"{stem}.pgm")
        print(f"{tom.method}: {out / (stem + '.csv')} and {out / (stem + '.pgm')}")
    return 0


def cmd_sweep_latent(cfg, dataset_path):
    out = _outdir(cfg)
    dataset = _dataset_from(cfg, dataset_path)
    rows = evalharness.latent_sweep(dataset, sizes=cfg.sweep.sizes,
                                    repeats=cfg.sweep.repeats,
                                    config=cfg.training_config())
    path = out / "latent_sweep.csv"
    evalharness.write_sweep_csv(rows, path)
    print(f"sweep table: {path}")
    print("latent  mean_val_mse  std_val_mse")
    for row in rows:
        print(f"{row.latent:6d}  {row.mean:12.6g}  {row.std:11.6g}")
    return 0


def cmd_benchmark(cfg, weights_path, dataset_path):
    out = _outdir(cfg)
    weights = _load_weights(weights_path)
    stack = _scene_stack(cfg)
    dataset = _dataset_from(cfg, dataset_path)
    train_cfg = cfg.training_config()
    rows = evalharness.timing_benchmark(
        stack, repetitions=cfg.benchmark.repetitions, weights=weights,
        cs_config=cfg.cs_config(),
        train_timer=lambda: train(dataset, train_cfg,
                                  layer_sizes=cfg.layer_sizes(),
                                  leaky_slope=cfg.network.leaky_slope))
    path = out / "benchmark.csv"
    evalharness.write_timing_csv(rows, path)
    print(f"timing table: {path}")
    print("method        median_s   per_profile_us   speedup_vs_cs")
    for row in rows:
        print(f"{row.method:12s}  {row.median_seconds:9.4g}  "
              f"{row.per_profile_us:14.4g}  {row.speedup_vs_cs:13.4g}")
    return 0


def cmd_export(cfg, dataset_path, out_path):
    dataset = _load_dataset(dataset_path)
    if out_path is None:
        out_path = _outdir(cfg) / "dataset.csv"
    dataset.to_csv(out_path)
    print(f"csv: {out_path} ({dataset.count} examples)")
    return 0


def _dispatch(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        for section in (cfg.geometry, cfg.simulation, cfg.training, cfg.scene):
            section.seed = args.seed
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "train":
        return cmd_train(cfg, args.dataset)
    if args.command == "reconstruct":
        if args.method == "network" and args.weights is None:
            raise ConfigError("--method network requires --weights")
        return cmd_reconstruct(cfg, args.method, args.weights)
    if args.command == "sweep-latent":
        return cmd_sweep_latent(cfg, args.dataset)
    if args.command == "benchmark":
        return cmd_benchmark(cfg, args.weights, args.dataset)
    if args.command == "export":
        return cmd_export(cfg, args.dataset, args.out)
    raise ConfigError(f"unknown command {args.command!r}")  # unreachable


def main(argv=None):
    args = build_parser().parse_args(argv)
    limit = (threadpool_limits(limits=args.threads) if args.threads > 0
             else contextlib.nullcontext())
    try:
        with limit:
            return _dispatch(args)
    except ConfigError as exc:
        print(f"fortomo: config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"fortomo: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"fortomo: i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
