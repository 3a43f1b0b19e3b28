"""DMD-NO against the plain DeepONet on the heat dataset, same seed and split.

    python scripts/heat_comparison.py [--samples 1000] [--epochs 100]
"""
import argparse
import dataclasses

import numpy as np

from dmdno.config import ExperimentConfig
from dmdno.train import evaluate, operator_data, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()
    cfg = ExperimentConfig(equation="heat", generator={"n_samples": args.samples})
    cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))
    data = operator_data(cfg.generate())
    curves = {}
    for name, baseline in (("dmdno", False), ("deeponet", True)):
        variant = dataclasses.replace(cfg, baseline=baseline)
        res = train(data, variant.operator_spec(data), variant.train)
        curves[name] = res.history
        report = evaluate(res.params, data.subset(res.test_index))
        print(f"{name:>9}: test mse {report.mse_all:.4g}, rel L2 {report.rel_l2_all:.4g}, "
              f"max err {report.max_err_all:.4g}")
    print(f"{'epoch':>6} {'dmdno':>10} {'deeponet':>10}")
    for a, b in zip(curves["dmdno"].rows, curves["deeponet"].rows):
        print(f"{a[0]:>6} {a[1]:>10.4f} {b[1]:>10.4f}")
    for name, h in curves.items():
        falling = int(np.sum(np.diff(h.train_losses()) < 0))
        print(f"{name}: {falling} of {len(h.rows) - 1} logged deltas negative")


if __name__ == "__main__":
    main()
