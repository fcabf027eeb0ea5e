"""Command-line surface: train / eval / grid / sample.

Exit codes: 0 success, 2 configuration or load failure, 3 numeric abort.
All CSV artifacts carry a header row, fixed column order, and floats with
17 significant digits.
"""
import argparse
import csv
import os
import sys

import numpy as np

from . import config as cfgmod
from . import diffcore as dc
from .data import ParseError
from .errors import CheckpointError, ConfigError, NumericError
from .objectives import evaluate_loglik
from .quantize import quantize
from .train import load_checkpoint, restore_state, save_checkpoint, train_model

FLOAT_FMT = "%.17g"


def _fmt(x):
    return FLOAT_FMT % x if isinstance(x, float) else str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_run(checkpoint_path):
    """Rebuild (cfg, bundle, model, dequantizer) from a checkpoint and
    restore its parameters."""
    items, _ = load_checkpoint(checkpoint_path)
    cfg = cfgmod.parse_items(items)
    bundle, model, dequantizer = cfgmod.build_run(cfg)
    restore_state(checkpoint_path, model, dequantizer, cfg.train)
    return cfg, bundle, model, dequantizer


def cmd_train(args):
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    bundle, model, dequantizer = cfgmod.build_run(cfg)
    items = cfgmod.canonical_items(cfg)
    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.config_text(cfg))
    metrics_path = os.path.join(out_dir, "metrics.csv")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)

    def progress(row):
        print(f"epoch {row['epoch']:4d}  lr {row['lr']:.3g}  "
              f"loss {row['train_loss_nats']:.4f} nats  "
              f"val vi {row['val_vi_bits']:.4f} bits  "
              f"val iw {row['val_iw256_bits']:.4f} bits")

    result, state = train_model(model, dequantizer, bundle.source, cfg.train,
                                metrics_path=metrics_path, progress=progress,
                                val_x=bundle.val_x)
    ckpt_path = os.path.join(out_dir, cfg.checkpoint_name)
    save_checkpoint(ckpt_path, state.params, state.opt, items,
                    rng=state.rng, epoch_done=state.epoch_done)
    print(f"checkpoint written to {ckpt_path}")
    return 0


def cmd_eval(args):
    cfg, bundle, model, dequantizer = _load_run(args.checkpoint)
    k_eval = args.k_eval or cfg.eval.k
    if args.eval_size is not None:
        cfg.eval.size = args.eval_size
    x = bundle.eval_points(cfg.eval)
    rng = np.random.default_rng([cfg.eval.seed, 1])
    report = evaluate_loglik(x, dequantizer, model, k_eval, rng)
    dim = report.dim
    print(f"evaluated {report.n} datapoints with K={k_eval}")
    print(f"vi bound:        {report.vi_bits:.6f} bits total  "
          f"({report.vi_bpd:.6f} bpd)")
    print(f"-log P(x) (iw-{k_eval}): {report.iw_bits:.6f} bits total  "
          f"({report.iw_bpd:.6f} bpd)")
    print(f"gap KL(q|p):     {report.gap_bits:.6f} bits total  "
          f"({report.gap_bpd:.6f} bpd)")
    out_dir = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "eval.csv"),
               ["n", "k_eval", "vi_bits", "iw_bits", "gap_bits",
                "vi_bpd", "iw_bpd", "gap_bpd"],
               [[report.n, k_eval, report.vi_bits, report.iw_bits,
                 report.gap_bits, report.vi_bpd, report.iw_bpd,
                 report.gap_bpd]])
    return 0


def density_grid(model, lo, hi, resolution):
    """Cell-center density values: rows of (v1, v2, p)."""
    edges = np.linspace(lo, hi, resolution + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    g1, g2 = np.meshgrid(centers, centers, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    dens = np.exp(model.log_prob(dc.constant(pts)).data)
    return pts, dens


def dequant_marginal_grid(dequantizer, lo, hi, resolution, n_samples, rng):
    """Histogram estimate of the dequantizer marginal q(v) under the
    two-point checkerboard source (exact 1/2-1/2 mixture weights)."""
    edges = np.linspace(lo, hi, resolution + 1)
    cell = (hi - lo) / resolution
    total = np.zeros((resolution, resolution))
    components = [np.array([[0, 1]]), np.array([[1, 0]])]
    for x in components:
        sample = dequantizer.sample(np.repeat(x, n_samples, axis=0), 1, rng)
        v = sample.v.data
        hist, _, _ = np.histogram2d(v[:, 0], v[:, 1], bins=[edges, edges])
        total += 0.5 * hist / (n_samples * cell * cell)
    centers = 0.5 * (edges[:-1] + edges[1:])
    g1, g2 = np.meshgrid(centers, centers, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    return pts, total.ravel()


def cmd_grid(args):
    cfg, bundle, model, dequantizer = _load_run(args.checkpoint)
    if bundle.dim != 2:
        raise ConfigError("grid export requires a 2-D model")
    resolution = args.resolution or cfg.eval.grid_resolution
    lo = cfg.eval.grid_lo if args.range_lo is None else args.range_lo
    hi = cfg.eval.grid_hi if args.range_hi is None else args.range_hi
    if not hi > lo:
        raise ConfigError("grid range must have hi > lo")
    out_dir = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out_dir, exist_ok=True)

    pts, dens = density_grid(model, lo, hi, resolution)
    _write_csv(os.path.join(out_dir, "p_density.csv"),
               ["v1", "v2", "density"],
               [[p[0], p[1], d] for p, d in zip(pts, dens)])

    if cfg.data.kind == "checkerboard":
        rng = np.random.default_rng([cfg.eval.seed, 2])
        qpts, qdens = dequant_marginal_grid(
            dequantizer, lo, hi, resolution,
            cfg.eval.samples_per_component, rng)
        _write_csv(os.path.join(out_dir, "q_marginal.csv"),
                   ["v1", "v2", "density"],
                   [[p[0], p[1], d] for p, d in zip(qpts, qdens)])
    print(f"grid CSVs written to {out_dir}")
    return 0


def cmd_sample(args):
    cfg, bundle, model, dequantizer = _load_run(args.checkpoint)
    if args.n < 0:
        raise ConfigError("sample count must be >= 0")
    rng = np.random.default_rng([cfg.eval.seed, 3])
    dim = bundle.dim
    header = [f"v{i+1}" for i in range(dim)] + [f"x{i+1}" for i in range(dim)]
    rows = []
    if args.n > 0:
        v = model.sample(args.n, rng)
        x = quantize(v)
        rows = [list(map(float, v[i])) + list(map(int, x[i]))
                for i in range(args.n)]
    out_dir = args.out or os.path.dirname(args.checkpoint) or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "samples.csv")
    _write_csv(path, header, rows)
    print(f"{args.n} samples written to {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dqlab",
        description="Train and evaluate dequantized density models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--k-eval", type=int, default=None)
    p_eval.add_argument("--eval-size", type=int, default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_grid = sub.add_parser("grid", help="export density grids as CSV")
    p_grid.add_argument("--checkpoint", required=True)
    p_grid.add_argument("--resolution", type=int, default=None)
    p_grid.add_argument("--range-lo", type=float, default=None)
    p_grid.add_argument("--range-hi", type=float, default=None)
    p_grid.add_argument("--out", default=None)
    p_grid.set_defaults(fn=cmd_grid)

    p_sample = sub.add_parser("sample", help="draw model samples as CSV")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--out", default=None)
    p_sample.set_defaults(fn=cmd_sample)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
