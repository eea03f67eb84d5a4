"""File formats and the run manifest.

All CSVs carry header rows, '.' decimal separators and UTF-8 encoding.
Floats are written with shortest round-trip repr so identical runs produce
byte-identical files. The manifest lists every file a command wrote, with
sha256 checksums.
"""

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

import latentbandit
from latentbandit.world import HiddenLatents, ObservationalDataset


def _fmt(value):
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# dataset files


def write_dataset(out_dir, dataset, latents):
    out = Path(out_dir)
    dim = dataset.dim
    zcols = [f"z_{i + 1}" for i in range(dim)]
    xcols = [f"x_{i + 1}" for i in range(dim)]

    write_csv(
        out / "patients.csv",
        ["q"] + zcols,
        ([q] + list(latents.means[q]) for q in range(dataset.n_patients)),
    )
    write_csv(
        out / "observations.csv",
        ["q", "t"] + xcols + ["action", "reward"],
        (
            [q, t] + list(dataset.x[q, t]) + [dataset.actions[q, t], dataset.rewards[q, t]]
            for q in range(dataset.n_patients)
            for t in range(dataset.n_steps)
        ),
    )
    write_csv(
        out / "latents.csv",
        ["q", "t"] + zcols,
        (
            [q, t] + list(latents.noisy[q, t])
            for q in range(dataset.n_patients)
            for t in range(dataset.n_steps)
        ),
    )


def read_observations(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 4
        rows = list(reader)
    n_patients = int(rows[-1][0]) + 1
    n_steps = len(rows) // n_patients
    x = np.empty((n_patients, n_steps, dim))
    actions = np.empty((n_patients, n_steps), dtype=np.int64)
    rewards = np.empty((n_patients, n_steps))
    for row in rows:
        q, t = int(row[0]), int(row[1])
        x[q, t] = [float(v) for v in row[2 : 2 + dim]]
        actions[q, t] = int(row[2 + dim])
        rewards[q, t] = float(row[3 + dim])
    return ObservationalDataset(x, actions, rewards)


def read_patients(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    return np.array([[float(v) for v in row[1:]] for row in rows])


def read_latents(path, n_patients, n_steps):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        noisy = np.empty((n_patients, n_steps, dim))
        for row in reader:
            noisy[int(row[0]), int(row[1])] = [float(v) for v in row[2:]]
    return noisy


# ---------------------------------------------------------------------------
# training and bandit files


def write_train_log(path, log):
    write_csv(
        path,
        ["epoch", "stage", "lr", "train_loss", "holdout_loss", "holdout_accuracy"],
        (
            [e.epoch, e.stage, e.lr, e.train_loss, e.holdout_loss, e.holdout_accuracy]
            for e in log
        ),
    )


def write_traces(path, traces):
    write_csv(
        path,
        [
            "instance",
            "t",
            "algorithm",
            "action",
            "reward",
            "inst_regret",
            "cum_regret",
            "optimal_flag",
        ],
        (
            [
                tr.instance,
                t + 1,
                tr.algorithm,
                tr.actions[t],
                tr.rewards[t],
                tr.inst_regret[t],
                tr.cum_regret[t],
                int(tr.optimal_flag[t]),
            ]
            for tr in traces
            for t in range(tr.horizon)
        ),
    )


def write_regret_summary(path, summary):
    rows = []
    for algo in summary.algorithms:
        for t in range(summary.horizon):
            rows.append(
                [
                    t + 1,
                    algo,
                    summary.simple_mean[algo][t],
                    summary.simple_se[algo][t],
                    summary.cum_mean[algo][t],
                    summary.cum_se[algo][t],
                ]
            )
    write_csv(path, ["t", "algorithm", "simple_mean", "simple_se", "cum_mean", "cum_se"], rows)


def read_regret_summary(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        data = {}
        for row in reader:
            algo = row[1]
            data.setdefault(algo, []).append(
                (int(row[0]), float(row[2]), float(row[3]), float(row[4]), float(row[5]))
            )
    return {
        algo: np.array(sorted(rows), dtype=float) for algo, rows in data.items()
    }


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, cfg_hash):
    """Checksum every file in the run directory (manifest excluded)."""
    out = Path(out_dir)
    files = sorted(
        p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"
    )
    manifest = {
        "config_hash": cfg_hash,
        "tool_version": latentbandit.__version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "files": [
            {
                "path": str(p.relative_to(out)),
                "sha256": sha256_file(p),
                "bytes": p.stat().st_size,
            }
            for p in files
        ],
    }
    write_json(out / "manifest.json", manifest)
    return manifest
