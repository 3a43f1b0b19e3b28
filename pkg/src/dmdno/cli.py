"""Experiment runner: ``dmdno <command>``.

Exit codes: 0 success, 2 validation, 3 I/O, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, RunManifest, sha256_file
from .dmd import encode_branch_inputs
from .errors import DegenerateInputError, FormatError, InvalidInputError, NumericalError
from .model import load_checkpoint, save_checkpoint
from .pde import load_dataset, save_dataset
from .train import (TrainConfig, check_bound, evaluate, format_value, operator_data, predict,
                    split_indices, train, write_csv)

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("dmdno")


class Run:
    """Shared state of one command: resolved config, output directory, manifest, timers."""

    def __init__(self, args, command, need_config):
        self.args = args
        self.quiet = args.quiet
        self.config = None
        if args.config:
            self.config = ExperimentConfig.load(args.config)
        elif need_config:
            raise InvalidInputError(f"{command} requires --config")
        if self.config is not None and args.seed is not None:
            self.config = self.config.with_seed(args.seed)
        out = args.out or (self.config.out_dir if self.config else "runs")
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, config=self.config.to_dict() if self.config else None)
        self._t0 = time.perf_counter()

    def train_config(self) -> TrainConfig:
        if self.config is not None:
            return self.config.train
        cfg = TrainConfig()
        return dataclasses.replace(cfg, seed=self.args.seed) if self.args.seed is not None else cfg

    def info(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr, flush=True)

    def timed(self, name, fn, *a, **kw):
        t = time.perf_counter()
        out = fn(*a, **kw)
        self.manifest.timings[name] = time.perf_counter() - t
        return out

    def load_data(self, path):
        ds = self.timed("load_dataset", load_dataset, path)
        self.manifest.dataset_sha256 = sha256_file(path)
        return ds

    def output(self, name) -> Path:
        return self.out / name

    def finish(self):
        self.manifest.timings["total"] = time.perf_counter() - self._t0
        self.manifest.write(self.out / f"manifest-{self.manifest.command}.json")


# -- commands --------------------------------------------------------------------------

def cmd_generate(run: Run):
    cfg = run.config
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds = run.timed("generate", cfg.generate, workers=run.args.workers)
    for w in caught:
        print(str(w.message), file=sys.stderr, flush=True)
    path = run.output("dataset.bin")
    save_dataset(ds, path)
    run.manifest.dataset_sha256 = sha256_file(path)
    run.manifest.record_output(path)
    run.info(f"wrote {len(ds)} {ds.equation} samples to {path}")


def _progress(run):
    return lambda epoch, tr, te: run.info(f"epoch {epoch:3d}  train {tr:.6g}  test {te:.6g}")


def _train_variant(run, data, baseline):
    cfg = dataclasses.replace(run.config, baseline=baseline)
    return train(data, cfg.operator_spec(data), cfg.train, progress=_progress(run))


def _load_for_config(run, path):
    ds = run.load_data(path)
    if ds.equation != run.config.equation:
        raise InvalidInputError(f"dataset holds {ds.equation!r} but config is for {run.config.equation!r}")
    return ds, operator_data(ds, run.config.dmd.dynamics)


def cmd_train(run: Run):
    ds, data = _load_for_config(run, run.args.data)
    res = run.timed("train", _train_variant, run, data, run.config.baseline)
    ckpt, loss_csv = run.output("model.dmdno"), run.output("loss.csv")
    save_checkpoint(res.params, ckpt)
    res.history.to_csv(loss_csv)
    rows = res.history.rows
    if rows:
        run.manifest.metrics = {"epoch0_train_loss": rows[0][1], "final_train_loss": rows[-1][1],
                                "final_test_loss": rows[-1][2]}
    for p in (ckpt, loss_csv):
        run.manifest.record_output(p)
    run.info(f"wrote {ckpt} and {loss_csv}")


def _check_compatible(params, data):
    spec = params.spec
    want = {"conditions": spec.condition_width, "channels": spec.out_channels}
    have = {"conditions": data.conditions.shape[1], "channels": data.channels}
    if spec.dmd_branches_enabled:
        want.update(modes=spec.modes_branch.in_width, dynamics=spec.dynamics_branch.in_width)
        have.update(modes=data.modes.shape[1], dynamics=data.dynamics.shape[1])
    bad = {k: (want[k], have[k]) for k in want if want[k] != have[k]}
    if bad:
        raise InvalidInputError("checkpoint and dataset are incompatible: "
                                + ", ".join(f"{k} expects {a}, dataset has {b}" for k, (a, b) in bad.items()))


def _split(run, n):
    which = run.args.split
    if which == "all":
        return np.arange(n)
    cfg = run.train_config()
    tr, te = split_indices(n, cfg.train_fraction, cfg.seed)
    return te if which == "test" else tr


def write_grid(path, grid):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(grid):
            w.writerow([format_value(float(x)) for x in row])


def cmd_eval(run: Run):
    params = load_checkpoint(run.args.checkpoint)
    ds = run.load_data(run.args.data)
    data = operator_data(ds, params.spec.dynamics_variant)
    _check_compatible(params, data)
    index = _split(run, len(data))
    sub = data.subset(index)
    report = run.timed("evaluate", evaluate, params, sub)
    metrics_csv = run.output("metrics.csv")
    report.to_csv(metrics_csv)
    run.manifest.record_output(metrics_csv)
    run.manifest.metrics = {f"{m}_{c}": v for m, c, v in report.rows()}
    pred = predict(params, sub.subset(np.arange(min(run.args.samples, len(sub)))))
    nx, ny = ds.grid.nx, ds.grid.ny
    for k in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            suffix = f"_c{c}" if pred.shape[1] > 1 else ""
            p = pred[k, c].reshape(nx, ny)
            t = sub.targets[k, c].reshape(nx, ny)
            for kind, grid in (("prediction", p), ("truth", t), ("error", np.abs(p - t))):
                path = run.output(f"grid_{int(index[k])}{suffix}_{kind}.csv")
                write_grid(path, grid)
                run.manifest.record_output(path)
    run.info(f"mse {report.mse_all:.6g}  rel_l2 {report.rel_l2_all:.6g}  max_err {report.max_err_all:.6g}")


def cmd_dmd(run: Run):
    ds = run.load_data(run.args.data)
    i = run.args.index
    if not 0 <= i < len(ds):
        raise InvalidInputError(f"sample index {i} out of range [0, {len(ds)})")
    dec = ds.decomposition(i)
    enc = encode_branch_inputs(dec)
    r, n = dec.rank, dec.modes.shape[0]
    lam_re, lam_im, amp_re, amp_im = enc.dyn_vec.reshape(4, r)
    modes_re, modes_im = enc.mode_vec.reshape(2, r, n)
    header = (["mode", "eig_re", "eig_im", "eig_abs", "amp_re", "amp_im"]
              + [f"phi_re_{j}" for j in range(n)] + [f"phi_im_{j}" for j in range(n)])
    rows = [[k, lam_re[k], lam_im[k], float(np.hypot(lam_re[k], lam_im[k])), amp_re[k], amp_im[k],
             *modes_re[k].tolist(), *modes_im[k].tolist()] for k in range(r)]
    path = run.output(f"dmd_{i}.csv")
    write_csv(path, header, rows)
    run.manifest.record_output(path)
    run.info(f"wrote {r} modes of sample {i} to {path}")


def cmd_compare(run: Run):
    ds, data = _load_for_config(run, run.args.data)
    run.info("training DMD-NO")
    ours = run.timed("train_dmdno", _train_variant, run, data, False)
    run.info("training DeepONet baseline")
    base = run.timed("train_deeponet", _train_variant, run, data, True)
    rows = [(a[0], a[1], a[2], b[1], b[2]) for a, b in zip(ours.history.rows, base.history.rows)]
    path = run.output("compare.csv")
    write_csv(path, ["epoch", "dmdno_train", "dmdno_test", "deeponet_train", "deeponet_test"], rows)
    run.manifest.record_output(path)
    run.info(f"wrote {path}")


def cmd_check_bound(run: Run):
    params = load_checkpoint(run.args.checkpoint)
    ds = run.load_data(run.args.data)
    _check_compatible(params, operator_data(ds, params.spec.dynamics_variant))
    index = _split(run, len(ds))
    report = run.timed("check_bound", check_bound, params, ds, rank=run.args.rank, trials=run.args.trials,
                       pairs=run.args.pairs, seed=run.train_config().seed, samples=index)
    path = run.output("bound.csv")
    report.to_csv(path)
    run.manifest.record_output(path)
    run.manifest.metrics = {"trials": len(report.trials), "violations": report.violations}
    print(report.summary(), flush=True)


COMMANDS = {
    "generate": (cmd_generate, True),
    "train": (cmd_train, True),
    "eval": (cmd_eval, False),
    "dmd": (cmd_dmd, False),
    "compare": (cmd_compare, True),
    "check-bound": (cmd_check_bound, False),
}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a u64, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config (JSON)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="overrides the config seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="dmdno", parents=[common],
                                description="DMD-enhanced neural operator experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate a PDE dataset")
    g.add_argument("--workers", type=int, default=0)

    t = sub.add_parser("train", parents=[common], help="train an operator network")
    t.add_argument("--data", required=True)

    e = sub.add_parser("eval", parents=[common], help="metrics and field grids")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--samples", type=int, default=3, help="number of cases to export as grids")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")

    d = sub.add_parser("dmd", parents=[common], help="export one sample's DMD")
    d.add_argument("--data", required=True)
    d.add_argument("--index", type=int, default=0)

    c = sub.add_parser("compare", parents=[common], help="DMD-NO vs DeepONet loss curves")
    c.add_argument("--data", required=True)

    b = sub.add_parser("check-bound", parents=[common], help="audit the truncation error bound")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--rank", type=int, default=None)
    b.add_argument("--pairs", type=int, default=200)
    b.add_argument("--split", choices=("test", "train", "all"), default="test")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    for name, default in (("config", None), ("out", None), ("seed", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    fn, need_config = COMMANDS[args.command]
    try:
        run = Run(args, args.command, need_config)
        fn(run)
        run.finish()
    except (InvalidInputError, DegenerateInputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
