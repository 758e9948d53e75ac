"""Experiment runner CLI.

Subcommands cover the four run modes (centralized, federated, attack,
bench) plus model-file inspection. Every run writes its artifacts
(metrics CSV, summary JSON, sparse model file) into the configured
output directory and is deterministic given the seed.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import _kernels, federation, nn, privacy, serialization, sparse
from .config import ConfigError, CsvData, ExperimentConfig, load_config
from .data import Dataset, generate_synthetic, load_csv, partition
from .sparsify import PruneMask, apply_mask, magnitude_mask

ENV_CHOICES = ["uniform-iid", "uniform-noniid", "skewed-iid", "skewed-noniid"]


def _common_options(f):
    opts = [
        click.option("--config", "config_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="JSON experiment config."),
        click.option("--seed", type=int, default=None, help="Override config seed."),
        click.option("--out-dir", type=click.Path(file_okay=False), default=None,
                     help="Override output directory."),
        click.option("--sparsity", type=float, default=None,
                     help="Override final/target sparsity."),
        click.option("--env", "env_name", type=click.Choice(ENV_CHOICES), default=None,
                     help="Override the federated environment."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _load(config_path, mode, seed, out_dir, sparsity, env_name) -> ExperimentConfig:
    try:
        return load_config(
            config_path, mode, seed=seed, out_dir=out_dir, sparsity=sparsity, env=env_name
        )
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)


def _split(dataset: Dataset, sizes: list[int]) -> list[Dataset]:
    out, lo = [], 0
    for size in sizes:
        out.append(
            Dataset(
                dataset.inputs[lo : lo + size],
                dataset.labels[lo : lo + size],
                dataset.ids[lo : lo + size],
            )
            if size
            else None
        )
        lo += size
    return out


def _datasets(cfg: ExperimentConfig, extra_unseen: int = 0):
    """(train, val, test, unseen); synthetic splits share one label function."""
    if isinstance(cfg.data, CsvData):
        train = load_csv(cfg.data.train)
        val = load_csv(cfg.data.val) if cfg.data.val else None
        test = load_csv(cfg.data.test) if cfg.data.test else None
        return train, val, test, test
    s = cfg.data
    total = s.n_train + s.n_val + s.n_test + extra_unseen
    full = generate_synthetic(
        total, s.feature_shape, label_fn=s.label_fn, noise=s.noise, seed=cfg.seed
    )
    train, val, test, unseen = _split(full, [s.n_train, s.n_val, s.n_test, extra_unseen])
    return train, val, test, unseen


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_summary(out: Path, payload: dict) -> Path:
    path = out / "summary.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _schedule_dict(schedule):
    return None if schedule is None else dataclasses.asdict(schedule)


@click.group()
def main():
    """Federated magnitude-pruning experiments."""


@main.command("run-federated")
@_common_options
@click.option("--ledger-only", is_flag=True,
              help="Skip training; compute only the communication ledger.")
def run_federated(config_path, seed, out_dir, sparsity, env_name, ledger_only):
    """Federated training (FedAvg when no schedule is configured)."""
    cfg = _load(config_path, "federated", seed, out_dir, sparsity, env_name)
    out = _out_dir(cfg)
    p = cfg.spec.param_count

    if ledger_only:
        ledger = federation.simulate_comm_ledger(p, cfg.federation)
        summary = {
            "mode": "federated",
            "ledger_only": True,
            "param_count": p,
            "num_learners": cfg.federation.num_learners,
            "rounds": cfg.federation.rounds,
            "schedule": _schedule_dict(cfg.schedule),
            "cumulative_comm_params": ledger.cumulative,
            "per_round_comm_params": [c for _, c in ledger.per_round],
        }
        path = _write_summary(out, summary)
        click.echo(f"cumulative_comm_params: {ledger.cumulative}")
        click.echo(f"wrote {path}")
        return

    train, val, test, _ = _datasets(cfg)
    parts = partition(train, cfg.environment, cfg.federation.num_learners, cfg.seed)
    try:
        result = federation.run_federation(cfg.federation, cfg.spec, train, parts, val, test)
    except federation.TrainingError as err:
        click.echo(f"training failed: {err}", err=True)
        sys.exit(1)

    csv_path = out / "metrics.csv"
    federation.write_metrics_csv(csv_path, result.metrics)
    model_path = out / "model.fspw"
    serialization.save_model(
        model_path, result.global_state.params, result.global_state.mask, spec=cfg.spec
    )
    last = result.metrics[-1]
    summary = {
        "mode": "federated",
        "seed": cfg.seed,
        "backend": _kernels.backend_name(),
        "environment": cfg.environment.name,
        "param_count": p,
        "num_learners": cfg.federation.num_learners,
        "rounds": cfg.federation.rounds,
        "local_epochs": cfg.federation.local_epochs,
        "schedule": _schedule_dict(cfg.schedule),
        "cumulative_comm_params": result.ledger.cumulative,
        "final_nonzero_params": result.global_state.mask.nonzero_count,
        "final_sparsity": last.actual_sparsity,
        "final_train_loss": last.train_loss,
        "final_val_mae": last.val_mae,
        "final_test_mae": last.test_mae,
        "metrics_csv": csv_path.name,
        "model_file": model_path.name,
    }
    path = _write_summary(out, summary)
    click.echo(f"wrote {csv_path}")
    click.echo(f"wrote {model_path}")
    click.echo(f"wrote {path}")


@main.command("run-centralized")
@_common_options
def run_centralized(config_path, seed, out_dir, sparsity, env_name):
    """Centralized SGD with optional one-shot pruning and finetuning."""
    cfg = _load(config_path, "centralized", seed, out_dir, sparsity, env_name)
    out = _out_dir(cfg)
    train, val, test, _ = _datasets(cfg)
    c = cfg.centralized
    try:
        result = federation.run_centralized(
            cfg.spec, train, val, test,
            epochs=c.epochs, lr=c.lr, batch_size=c.batch_size,
            prune_at=c.prune_at, target_sparsity=c.target_sparsity, seed=cfg.seed,
        )
    except (federation.TrainingError, ValueError) as err:
        click.echo(f"training failed: {err}", err=True)
        sys.exit(1)

    csv_path = out / "metrics.csv"
    federation.write_metrics_csv(csv_path, result.metrics)
    model_path = out / "model.fspw"
    serialization.save_model(model_path, result.params, result.mask, spec=cfg.spec)
    last = result.metrics[-1]
    summary = {
        "mode": "centralized",
        "seed": cfg.seed,
        "backend": _kernels.backend_name(),
        "param_count": cfg.spec.param_count,
        "epochs": c.epochs,
        "prune_at": c.prune_at,
        "target_sparsity": c.target_sparsity,
        "final_nonzero_params": result.mask.nonzero_count,
        "final_sparsity": last.actual_sparsity,
        "final_train_loss": last.train_loss,
        "final_val_mae": last.val_mae,
        "final_test_mae": last.test_mae,
        "metrics_csv": csv_path.name,
        "model_file": model_path.name,
    }
    path = _write_summary(out, summary)
    click.echo(f"wrote {csv_path}")
    click.echo(f"wrote {model_path}")
    click.echo(f"wrote {path}")


@main.command("attack")
@_common_options
def attack(config_path, seed, out_dir, sparsity, env_name):
    """Train federated, then run the cross-learner membership attack matrix."""
    cfg = _load(config_path, "attack", seed, out_dir, sparsity, env_name)
    out = _out_dir(cfg)
    train, val, test, unseen = _datasets(cfg, extra_unseen=cfg.attack.unseen_samples)
    if unseen is None or len(unseen) < 2:
        click.echo("config error: attack mode needs an unseen pool "
                   "(attack.unseen_samples or a csv test set)", err=True)
        sys.exit(2)
    parts = partition(train, cfg.environment, cfg.federation.num_learners, cfg.seed)
    try:
        result = federation.run_federation(cfg.federation, cfg.spec, train, parts, val, test)
    except federation.TrainingError as err:
        click.echo(f"training failed: {err}", err=True)
        sys.exit(1)
    learner_data = [train.subset(p.ids) for p in parts]
    report = privacy.federated_attack_matrix(
        learner_data, cfg.spec, result.global_state.params, unseen, seed=cfg.seed
    )
    report_path = out / "attack_report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    summary = {
        "mode": "attack",
        "seed": cfg.seed,
        "environment": cfg.environment.name,
        "schedule": _schedule_dict(cfg.schedule),
        "final_sparsity": result.metrics[-1].actual_sparsity,
        "mean_attack_accuracy": report.mean_accuracy,
        "successful_attacks": report.successful_attacks,
        "num_attacks": report.num_attacks,
        "attack_report": report_path.name,
    }
    path = _write_summary(out, summary)
    click.echo(f"mean attack accuracy: {report.mean_accuracy:.4f} "
               f"({report.successful_attacks}/{report.num_attacks} successful)")
    click.echo(f"wrote {report_path}")
    click.echo(f"wrote {path}")


@main.command("bench")
@_common_options
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Benchmark a saved .fspw model instead of a fresh one.")
def bench(config_path, seed, out_dir, sparsity, env_name, model_path):
    """Dense vs sparse single-item inference throughput."""
    cfg = _load(config_path, "bench", seed, out_dir, sparsity, env_name)
    out = _out_dir(cfg)
    b = cfg.bench
    if model_path is not None:
        loaded = serialization.load_model(model_path)
        if loaded.digest != serialization.spec_digest(cfg.spec):
            click.echo("model file was saved for a different model spec", err=True)
            sys.exit(1)
        params, mask = loaded.params, loaded.mask
    else:
        params = nn.build_model(cfg.spec, cfg.seed)
        mask = magnitude_mask(params, b.sparsity, PruneMask.all_ones(len(params)))
        params = apply_mask(params, mask)
    rng = np.random.default_rng(cfg.seed)
    items = rng.standard_normal((b.items, *cfg.spec.input_shape), dtype=np.float32)
    try:
        dense_rep, sparse_rep = sparse.benchmark(
            cfg.spec, params, mask, items, duration_s=b.duration_s, warmup_s=b.warmup_s
        )
    except sparse.MemoryBudgetError as err:
        click.echo(f"bench failed: {err}", err=True)
        sys.exit(1)
    payload = {
        "mode": "bench",
        "backend": _kernels.backend_name(),
        "param_count": cfg.spec.param_count,
        "sparsity": 1.0 - mask.nonzero_count / len(params),
        "duration_s": b.duration_s,
        "warmup_s": b.warmup_s,
        "dense": dataclasses.asdict(dense_rep),
        "sparse": dataclasses.asdict(sparse_rep),
        "speedup": (sparse_rep.items_per_second / dense_rep.items_per_second
                    if dense_rep.items_per_second else None),
    }
    bench_path = out / "bench.json"
    bench_path.write_text(json.dumps(payload, indent=2) + "\n")
    click.echo(f"dense:  {dense_rep.items_per_second:10.2f} items/s")
    click.echo(f"sparse: {sparse_rep.items_per_second:10.2f} items/s")
    click.echo(f"wrote {bench_path}")


@main.command("inspect-model")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
def inspect_model(model_file):
    """Print the header and density stats of a sparse model file."""
    try:
        loaded = serialization.load_model(model_file)
    except serialization.ModelFileError as err:
        click.echo(f"cannot read {model_file}: {err}", err=True)
        sys.exit(1)
    info = {
        "file": str(model_file),
        "file_bytes": Path(model_file).stat().st_size,
        "param_count": loaded.param_count,
        "nonzero_params": loaded.mask.nonzero_count,
        "sparsity": loaded.sparsity,
        "spec_digest": loaded.digest.hex(),
    }
    click.echo(json.dumps(info, indent=2))


if __name__ == "__main__":
    main()
