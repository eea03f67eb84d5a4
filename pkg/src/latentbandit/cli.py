"""Command-line interface.

Subcommands: gen, train, eval-lvm, bandit, report. Exit codes: 0 success,
2 configuration error, 3 IO error, 4 numerical failure.
"""

import argparse
import sys
from pathlib import Path

from latentbandit.config import (
    ExperimentConfig,
    config_hash,
    dump_config,
    load_config,
)
from latentbandit.errors import ConfigError, NumericalError
from latentbandit.storage import (
    read_json,
    read_observations,
    read_patients,
    write_dataset,
    write_json,
    write_manifest,
    write_regret_summary,
    write_traces,
    write_train_log,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _prepare_out_dir(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OSError(
                f"output directory {out} is not empty (use --force to overwrite)"
            )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.world.seed = args.seed
    return cfg


def _build_world(cfg):
    from latentbandit.world import sample_world

    return sample_world(
        dim=cfg.world.dim,
        n_layers=cfg.world.layers,
        sigma=cfg.world.sigma,
        reward_sigma=cfg.world.reward_sigma,
        n_arms=cfg.world.arms,
        seed=cfg.world.seed,
        alpha=cfg.world.alpha,
        max_layer_cond=cfg.world.max_layer_cond,
    )


def _training_params(cfg, world_layers):
    from latentbandit.lvm import TrainingParams

    t = cfg.training
    n_hidden = t.hidden_layers if t.hidden_layers >= 0 else world_layers
    return TrainingParams(
        epochs=t.epochs,
        stage1_frac=t.stage1_frac,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        momentum=t.momentum,
        l2=t.l2,
        decay=t.decay,
        n_hidden=n_hidden,
        width=t.width,
        pieces=t.pieces,
        holdout_frac=t.holdout_frac,
        patience=t.patience,
        early_stop=t.early_stop,
        standardize=t.standardize,
        restarts=t.restarts,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    from latentbandit.world import build_observational_dataset, world_to_dict

    cfg = _load_run_config(args)
    out = _prepare_out_dir(args.out, args.force)
    world = _build_world(cfg)
    dataset, latents = build_observational_dataset(
        world, cfg.dataset.patients, cfg.dataset.steps, seed=cfg.seed
    )
    write_json(out / "world.json", world_to_dict(world))
    write_dataset(out, dataset, latents)
    dump_config(cfg, out / "config.toml")
    write_manifest(out, config_hash(cfg))
    print(f"gen: {cfg.dataset.patients} patients x {cfg.dataset.steps} steps -> {out}")
    return EXIT_OK


def cmd_train(args):
    from latentbandit.lvm import (
        arms_to_list,
        estimate_arms,
        model_to_dict,
        train_contrastive,
    )
    from latentbandit.world import world_from_dict

    cfg = _load_run_config(args)
    data_dir = Path(args.data)
    world = world_from_dict(read_json(data_dir / "world.json"))
    dataset = read_observations(data_dir / "observations.csv")
    out = _prepare_out_dir(args.out, args.force)

    params = _training_params(cfg, world.n_layers)
    seed = args.seed if args.seed is not None else world.seed
    model, log = train_contrastive(dataset, params, seed)
    est = estimate_arms(model, dataset, ridge=cfg.training.ridge, n_arms=world.n_arms)

    write_json(out / "lvm.json", model_to_dict(model))
    write_json(out / "arms.json", arms_to_list(est))
    write_train_log(out / "train_log.csv", log)
    dump_config(cfg, out / "config.toml")
    write_manifest(out, config_hash(cfg))
    print(
        f"train: {model.meta['epochs_run']} epochs, "
        f"final holdout loss {model.meta['final_holdout_loss']:.4f} -> {out}"
    )
    return EXIT_OK


def cmd_eval_lvm(args):
    from latentbandit.experiments import evaluate_lvm
    from latentbandit.lvm import arms_from_list, model_from_dict
    from latentbandit.world import world_from_dict

    cfg = _load_run_config(args)
    data_dir = Path(args.data)
    model_dir = Path(args.model)
    world = world_from_dict(read_json(data_dir / "world.json"))
    dataset = read_observations(data_dir / "observations.csv")
    train_means = read_patients(data_dir / "patients.csv")
    model = model_from_dict(read_json(model_dir / "lvm.json"))
    est = arms_from_list(read_json(model_dir / "arms.json"))
    if model.latent_dim != world.dim:
        raise ConfigError(
            f"model latent dim {model.latent_dim} != world dim {world.dim}"
        )
    out = _prepare_out_dir(args.out, args.force)

    seed = args.seed if args.seed is not None else world.seed
    metrics = evaluate_lvm(
        world,
        model,
        est,
        dataset,
        train_means,
        seed,
        n_test_patients=cfg.eval.test_patients,
        t_test=cfg.eval.test_steps or None,
        accuracy_draws=cfg.eval.accuracy_draws,
    )
    write_json(out / "metrics.json", metrics)
    write_manifest(out, config_hash(cfg))
    print(
        "eval-lvm: "
        + " ".join(f"{k}={v:.4f}" for k, v in metrics.items() if isinstance(v, float))
    )
    return EXIT_OK


def cmd_bandit(args):
    from latentbandit.experiments import run_bandit_suite
    from latentbandit.lvm import arms_from_list, model_from_dict
    from latentbandit.metrics import aggregate_regret
    from latentbandit.world import world_from_dict

    cfg = _load_run_config(args)
    data_dir = Path(args.data)
    world = world_from_dict(read_json(data_dir / "world.json"))
    algorithms = cfg.bandit.algorithms
    needs_model = any(a in ("greedy1", "greedy2") for a in algorithms)
    model = est = None
    if needs_model:
        if not args.model:
            raise ConfigError(
                "algorithms include learned agents; pass --model with lvm.json/arms.json"
            )
        model_dir = Path(args.model)
        model = model_from_dict(read_json(model_dir / "lvm.json"))
        est = arms_from_list(read_json(model_dir / "arms.json"))
    out = _prepare_out_dir(args.out, args.force)

    seed = args.seed if args.seed is not None else world.seed
    traces = run_bandit_suite(
        world,
        algorithms,
        cfg.bandit.instances,
        cfg.bandit.horizon,
        seed,
        model=model,
        arm_estimates=est,
        lam=cfg.bandit.lambda_g,
        prior_var=cfg.bandit.prior_var,
        threads=args.threads,
    )
    summary = aggregate_regret(traces)
    write_traces(out / "traces.csv", traces)
    write_regret_summary(out / "regret_summary.csv", summary)
    write_manifest(out, config_hash(cfg))
    finals = {a: summary.cum_mean[a][-1] for a in summary.algorithms}
    print(
        "bandit: final mean cumulative regret "
        + " ".join(f"{a}={v:.3f}" for a, v in finals.items())
    )
    return EXIT_OK


def cmd_report(args):
    from latentbandit.report import build_report

    out = _prepare_out_dir(args.out, args.force)
    written = build_report([Path(r) for r in args.runs], out)
    write_manifest(out, "report")
    print(f"report: wrote {', '.join(written)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latentbandit",
        description="Latent bandit simulator: data generation, LVM training, "
        "bandit episodes and reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, threads=False):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite non-empty output dir")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker threads")

    p = sub.add_parser("gen", help="generate a synthetic observational dataset")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the LVM and estimate arm parameters")
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-lvm", help="evaluate a trained LVM (MCC, accuracy, R2)")
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--model", required=True, help="model directory from `train`")
    common(p)
    p.set_defaults(func=cmd_eval_lvm)

    p = sub.add_parser("bandit", help="run bandit episodes and aggregate regret")
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--model", help="model directory from `train` (for learned agents)")
    common(p, threads=True)
    p.set_defaults(func=cmd_bandit)

    p = sub.add_parser("report", help="render regret plots and a metrics table")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    common(p, seed=False)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
