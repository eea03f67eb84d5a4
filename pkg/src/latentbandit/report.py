"""Report rendering: regret curves with standard-error bands, metrics table.

A pure view over previously written CSV/JSON files; rendering has no
randomness, so re-running changes no numbers.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "latentbandit"  # deterministic SVG ids
import matplotlib.pyplot as plt

from latentbandit.errors import ConfigError
from latentbandit.storage import read_json, read_regret_summary

_COLORS = {
    "greedy1": "tab:blue",
    "greedy2": "tab:orange",
    "oracle-greedy1": "tab:green",
    "oracle-greedy2": "tab:olive",
    "thompson": "tab:red",
}


def _collect(run_dirs):
    regrets = {}
    metrics = {}
    horizon = None
    for run in run_dirs:
        summary_path = run / "regret_summary.csv"
        if summary_path.exists():
            data = read_regret_summary(summary_path)
            for algo, arr in data.items():
                if horizon is None:
                    horizon = arr.shape[0]
                elif arr.shape[0] != horizon:
                    raise ConfigError(
                        f"inconsistent horizons across runs ({arr.shape[0]} vs {horizon})"
                    )
                regrets[(run.name, algo)] = arr
        metrics_path = run / "metrics.json"
        if metrics_path.exists():
            metrics[run.name] = read_json(metrics_path)
    return regrets, metrics


def _plot(regrets, col_mean, col_se, ylabel, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (run_name, algo), arr in sorted(regrets.items()):
        t = arr[:, 0]
        mean = arr[:, col_mean]
        se = arr[:, col_se]
        label = algo if len({r for r, _ in regrets}) == 1 else f"{run_name}:{algo}"
        color = _COLORS.get(algo)
        ax.plot(t, mean, label=label, color=color)
        ax.fill_between(t, mean - se, mean + se, alpha=0.25, color=color, linewidth=0)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})  # no timestamp: byte-stable output
    plt.close(fig)


def build_report(run_dirs, out_dir):
    """Render plots and tables; returns the list of files written."""
    out = Path(out_dir)
    regrets, metrics = _collect([Path(r) for r in run_dirs])
    written = []

    if regrets:
        _plot(regrets, 1, 2, "simple regret", out / "regret_simple.svg")
        _plot(regrets, 3, 4, "cumulative regret", out / "regret_cumulative.svg")
        written += ["regret_simple.svg", "regret_cumulative.svg"]

    if metrics:
        keys = ["mcc_perm", "mcc_affine", "r2_train", "r2_test", "accuracy"]
        with open(out / "lvm_table.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run"] + keys)
            for run_name in sorted(metrics):
                row = metrics[run_name]
                writer.writerow([run_name] + [repr(float(row[k])) for k in keys])
        lines = [" | ".join(["run"] + keys)]
        for run_name in sorted(metrics):
            row = metrics[run_name]
            lines.append(
                " | ".join([run_name] + [f"{float(row[k]):.3f}" for k in keys])
            )
        (out / "lvm_table.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        written += ["lvm_table.csv", "lvm_table.txt"]

    if not written:
        raise ConfigError("no regret_summary.csv or metrics.json found in run dirs")
    return written
