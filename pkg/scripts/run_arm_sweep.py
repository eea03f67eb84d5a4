#!/usr/bin/env python3
"""Arm-count sweep: regret comparison for K in {10, 20, 50}.

One world, LVM and bandit run per K; emits a regret summary per sweep cell
plus plots.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from latentbandit.experiments import run_bandit_suite
from latentbandit.lvm import TrainingParams, estimate_arms, train_contrastive
from latentbandit.metrics import aggregate_regret
from latentbandit.report import build_report
from latentbandit.storage import write_regret_summary, write_traces
from latentbandit.world import build_observational_dataset, sample_world

ALGORITHMS = ["greedy1", "greedy2", "oracle-greedy1", "oracle-greedy2", "thompson"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/arm_sweep", help="output directory")
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--arm-counts", type=int, nargs="+", default=[10, 20, 50])
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--patients", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=3000)
    ap.add_argument("--horizon", type=int, default=500)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="tiny run for smoke testing")
    args = ap.parse_args()

    if args.quick:
        args.patients, args.epochs, args.instances, args.horizon = 20, 50, 10, 50
        args.arm_counts = [3, 5]

    for n_arms in args.arm_counts:
        cell = Path(args.out) / f"K{n_arms}"
        cell.mkdir(parents=True, exist_ok=True)
        world = sample_world(
            dim=5, n_layers=args.layers, sigma=0.3, reward_sigma=0.1,
            n_arms=n_arms, seed=args.seed,
        )
        data, _ = build_observational_dataset(
            world, args.patients, args.steps, seed=args.seed
        )
        t0 = time.time()
        model, _ = train_contrastive(
            data, TrainingParams(epochs=args.epochs, n_hidden=args.layers), args.seed
        )
        est = estimate_arms(model, data, ridge=1e-6, n_arms=world.n_arms)
        traces = run_bandit_suite(
            world, ALGORITHMS, args.instances, args.horizon, args.seed,
            model=model, arm_estimates=est, threads=args.threads,
        )
        summary = aggregate_regret(traces)
        write_traces(cell / "traces.csv", traces)
        write_regret_summary(cell / "regret_summary.csv", summary)
        build_report([cell], cell)
        finals = {a: summary.cum_mean[a][-1] for a in summary.algorithms}
        print(
            f"K={n_arms} ({time.time() - t0:.0f}s): "
            + " ".join(f"{a}={v:.2f}" for a, v in finals.items()),
            flush=True,
        )
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
