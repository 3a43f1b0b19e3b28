"""Train on the three default 1000-sample datasets and print the loss tables.

    python scripts/loss_tables.py [--out runs/tables] [--equations heat laplace]
"""
import argparse
import time
from pathlib import Path

from dmdno.config import ExperimentConfig
from dmdno.pde import save_dataset
from dmdno.train import operator_data, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/tables")
    ap.add_argument("--equations", nargs="+", default=["laplace", "heat", "burgers"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for eq in args.equations:
        cfg = ExperimentConfig(equation=eq, seed=args.seed)
        t0 = time.perf_counter()
        ds = cfg.generate()
        save_dataset(ds, out / f"{eq}.bin")
        data = operator_data(ds, cfg.dmd.dynamics)
        t1 = time.perf_counter()
        res = train(data, cfg.operator_spec(data), cfg.train)
        t2 = time.perf_counter()
        res.history.to_csv(out / f"{eq}_loss.csv")
        rows = res.history.rows
        print(f"\n{eq}: generation {t1 - t0:.0f}s, training {t2 - t1:.0f}s")
        print(f"{'epoch':>6} {'train':>12} {'test':>12}")
        for epoch, tr, te in rows:
            print(f"{epoch:>6} {tr:>12.4f} {te:>12.4f}")
        print(f"reduction factor epoch {rows[0][0]} -> {rows[-1][0]}: {rows[0][1] / rows[-1][1]:.1f}")


if __name__ == "__main__":
    main()
