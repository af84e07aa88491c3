"""Experiment driver: train, evaluate, prune, summarize.

``train`` runs the seeded mini-batch loop and records per-epoch metrics
plus a per-group norm trajectory.  ``run_pipeline`` trains an
unregularized base and a regularized twin on identical data/seeds, prunes
the twin, and emits one summary row.  ``sweep`` repeats the pipeline over
a coefficient grid.  All outputs are deterministic: same config, same
bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, TrainConfig, config_hash, with_overrides
from .datasets import Dataset, gen_dataset, load_csv_dataset
from .model import ModelGraph, build_model, forward, group_norm_values, model_indexings
from .optim import LrSchedule, Optimizer, lr_at
from .pruner import accuracy_drop, apply_plan, count_macs, plan_by_budget, plan_by_threshold, speedup
from .regularizers import RegularizerSpec, _weights_for_layer, total_loss
from .tensor import Tensor, backward, mse_loss, softmax_cross_entropy

SUMMARY_COLUMNS = (
    "scheme", "beta", "seed", "base_metric", "pruned_metric",
    "metric_drop", "speedup", "groups_removed", "total_groups",
)
METRICS_COLUMNS = (
    "epoch", "step", "task_loss", "penalty_value", "total_loss",
    "train_accuracy", "train_mae", "train_mse", "current_lr",
)


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    task_loss: float
    penalty_value: float
    total_loss: float
    train_accuracy: float | None
    train_mae: float | None
    train_mse: float | None
    current_lr: float


@dataclass
class TrainResult:
    model: ModelGraph
    indexings: list
    metrics: list
    trajectory: list  # [{"epoch": int, "groups": [...]}, ...]
    config: TrainConfig
    dataset: Dataset


# ---------------------------------------------------------------------------
# building blocks


def dataset_for(cfg: TrainConfig) -> Dataset:
    if cfg.dataset.startswith("csv:"):
        return load_csv_dataset(cfg.dataset[4:], cfg.task, size=cfg.dataset_size, seed=cfg.effective_data_seed)
    return gen_dataset(
        cfg.dataset,
        size=cfg.dataset_size,
        noise=cfg.noise,
        seed=cfg.effective_data_seed,
        classes=cfg.classes,
        separation=cfg.separation,
    )


def regularizer_spec(cfg: TrainConfig) -> RegularizerSpec:
    return RegularizerSpec(
        scheme=cfg.scheme,
        reg_coefficient=cfg.reg_coefficient,
        exp_base=cfg.exp_base,
        heaviside_threshold=cfg.heaviside_threshold,
        heaviside_force=cfg.heaviside_force,
    )


def schedule_for(cfg: TrainConfig, steps_per_epoch: int) -> LrSchedule:
    total = cfg.epochs * steps_per_epoch if cfg.schedule_unit == "step" else cfg.epochs
    return LrSchedule(
        kind=cfg.schedule,
        milestones=cfg.milestones,
        gamma=cfg.gamma,
        step_size=cfg.step_size,
        t_max=cfg.effective_t_max,
        warmup_fraction=cfg.warmup_fraction,
        total_steps=total,
    )


def penalized_layers(cfg: TrainConfig, model: ModelGraph) -> list[int]:
    """Layer indices the regularizer acts on during training.

    By default the output layer is left alone: shrinking a classifier head
    below one row per class destroys the model outright, so only the layers
    that are actually prunable get pushed toward zero.
    """
    if cfg.penalize_output or len(model.layers) == 1:
        return list(range(len(model.layers)))
    return list(range(len(model.layers) - 1))


def penalty_value(spec: RegularizerSpec, model: ModelGraph, indexings, layers=None) -> float:
    """Graph-free penalty number for logging."""
    if spec.scheme == "none":
        return 0.0
    if layers is None:
        layers = range(len(model.layers))
    all_norms = group_norm_values(model)
    total = 0.0
    for l in layers:
        total += float(
            np.dot(all_norms[l], _weights_for_layer(spec, model.layers[l], indexings[l]))
        )
    return total


def _batch_input(x: np.ndarray, input_shape) -> Tensor:
    if len(input_shape) > 1:
        x = x.reshape(x.shape[0], *input_shape)
    return Tensor(x)


def _check_dims(model: ModelGraph, dataset: Dataset) -> None:
    need = int(np.prod(model.input_shape))
    if need != dataset.input_dim:
        raise ConfigError(
            f"architecture consumes {need} features but dataset provides {dataset.input_dim}"
        )


def norms_snapshot(model: ModelGraph, indexings, epoch: int) -> dict:
    groups = []
    all_norms = group_norm_values(model)
    for l, (layer, idx) in enumerate(zip(model.layers, indexings)):
        norms = all_norms[l]
        for g in range(layer.group_count):
            groups.append(
                {
                    "layer": l,
                    "group": g,
                    "index": int(idx.assigned_indices[g]),
                    "distance": int(idx.distance(g)),
                    "norm": float(norms[g]),
                }
            )
    return {"epoch": epoch, "groups": groups}


# ---------------------------------------------------------------------------
# train / evaluate


def train(cfg: TrainConfig, dataset: Dataset | None = None) -> TrainResult:
    """Seeded mini-batch training; deterministic in the config."""
    if dataset is None:
        dataset = dataset_for(cfg)
    model = build_model(cfg.arch, seed=cfg.seed)
    _check_dims(model, dataset)
    indexings = model_indexings(model, cfg.indexing, cfg.effective_indexing_seed)
    spec = regularizer_spec(cfg)
    reg_layers = penalized_layers(cfg, model)
    opt = Optimizer(
        model.parameters(),
        kind=cfg.optimizer,
        lr=cfg.lr,
        momentum=cfg.momentum,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    n = dataset.train_x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = schedule_for(cfg, steps_per_epoch)
    shuffle_rng = np.random.default_rng([cfg.seed, 11])
    classification = dataset.task == "classification"

    metrics: list[MetricsRecord] = []
    trajectory: list[dict] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        task_sum = pen_sum = correct = abs_sum = sq_sum = 0.0
        lr = lr_at(sched, cfg.lr, epoch - 1)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if cfg.schedule_unit == "step":
                lr = lr_at(sched, cfg.lr, step)
            opt.lr = lr
            x = _batch_input(dataset.train_x[idx], model.input_shape)
            out = forward(model, x)
            if classification:
                labels = dataset.train_y[idx]
                task = softmax_cross_entropy(out, labels)
                correct += float((np.argmax(out.data, axis=1) == labels).sum())
            else:
                target = dataset.train_y[idx]
                task = mse_loss(out, Tensor(target))
                err = out.data - target
                abs_sum += float(np.abs(err).sum())
                sq_sum += float((err * err).sum())
            loss = total_loss(task, spec, model, indexings, reg_layers)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalAbort(epoch, step, value)
            task_sum += task.item() * len(idx)
            pen_sum += penalty_value(spec, model, indexings, reg_layers) * len(idx)
            backward(loss)
            opt.step()
            step += 1
        task_mean = task_sum / n
        pen_mean = pen_sum / n
        metrics.append(
            MetricsRecord(
                epoch=epoch,
                step=step,
                task_loss=task_mean,
                penalty_value=pen_mean,
                total_loss=task_mean + cfg.reg_coefficient * pen_mean,
                train_accuracy=correct / n if classification else None,
                train_mae=None if classification else abs_sum / (n * dataset.train_y.shape[1]),
                train_mse=None if classification else sq_sum / (n * dataset.train_y.shape[1]),
                current_lr=lr,
            )
        )
        if epoch % cfg.log_norms_every == 0 or epoch == cfg.epochs:
            if not trajectory or trajectory[-1]["epoch"] != epoch:
                trajectory.append(norms_snapshot(model, indexings, epoch))
    return TrainResult(model, indexings, metrics, trajectory, cfg, dataset)


def evaluate(model: ModelGraph, xs: np.ndarray, ys: np.ndarray, task: str, batch_size: int = 512):
    """Classification: accuracy.  Regression: (MAE, MSE)."""
    if xs.shape[0] != ys.shape[0]:
        raise ConfigError(f"evaluate received {xs.shape[0]} inputs but {ys.shape[0]} targets")
    n = xs.shape[0]
    correct = abs_sum = sq_sum = 0.0
    for start in range(0, n, batch_size):
        x = _batch_input(xs[start : start + batch_size], model.input_shape)
        out = forward(model, x).data
        y = ys[start : start + batch_size]
        if task == "classification":
            correct += float((np.argmax(out, axis=1) == y).sum())
        else:
            err = out - y
            abs_sum += float(np.abs(err).sum())
            sq_sum += float((err * err).sum())
    if task == "classification":
        return correct / n
    count = n * ys.shape[1]
    return abs_sum / count, sq_sum / count


def evaluate_dataset(model: ModelGraph, dataset: Dataset):
    return evaluate(model, dataset.test_x, dataset.test_y, dataset.task)


def summary_metric(model: ModelGraph, dataset: Dataset) -> float:
    """The single number reported in summary rows: accuracy, or MSE for regression."""
    value = evaluate_dataset(model, dataset)
    return value if dataset.task == "classification" else value[1]


# ---------------------------------------------------------------------------
# output files


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _header_lines(cfg: TrainConfig) -> list:
    return [
        f"# config_hash={config_hash(cfg)}",
        f"# seed={cfg.seed} data_seed={cfg.effective_data_seed} indexing_seed={cfg.effective_indexing_seed}",
    ]


def write_metrics_csv(path, cfg: TrainConfig, metrics) -> None:
    lines = _header_lines(cfg)
    lines.append(",".join(METRICS_COLUMNS))
    for r in metrics:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.epoch, r.step, r.task_loss, r.penalty_value, r.total_loss,
                    r.train_accuracy, r.train_mae, r.train_mse, r.current_lr,
                )
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trajectory_jsonl(path, cfg: TrainConfig, trajectory) -> None:
    head = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "data_seed": cfg.effective_data_seed,
        "indexing_seed": cfg.effective_indexing_seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(head) + "\n")
        for entry in trajectory:
            fh.write(json.dumps(entry) + "\n")


def write_summary_csv(path, cfg: TrainConfig, rows, extra_columns=()) -> None:
    columns = SUMMARY_COLUMNS + tuple(extra_columns)
    lines = _header_lines(cfg)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_checkpoint(path, model: ModelGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")


def load_checkpoint(path) -> ModelGraph:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return ModelGraph.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path!r}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint {path!r}: {exc}") from None


def save_plan(path, plan) -> None:
    record = {
        "mode": plan.mode,
        "threshold_used": plan.threshold_used,
        "predicted_speedup": plan.predicted_speedup,
        "removals": [list(r) for r in plan.removals],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# pipeline and sweep


def make_plan(cfg: TrainConfig, model: ModelGraph):
    if cfg.prune_mode == "threshold":
        return plan_by_threshold(model, cfg.prune_threshold)
    return plan_by_budget(model, cfg.prune_target)


def finetune(cfg: TrainConfig, model: ModelGraph, dataset: Dataset) -> ModelGraph:
    """Brief post-pruning training of the small model, no regularizer."""
    opt = Optimizer(
        model.parameters(),
        kind=cfg.optimizer,
        lr=cfg.lr,
        momentum=cfg.momentum,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    rng = np.random.default_rng([cfg.seed, 13])
    n = dataset.train_x.shape[0]
    classification = dataset.task == "classification"
    for epoch in range(1, cfg.finetune_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = _batch_input(dataset.train_x[idx], model.input_shape)
            out = forward(model, x)
            if classification:
                loss = softmax_cross_entropy(out, dataset.train_y[idx])
            else:
                loss = mse_loss(out, Tensor(dataset.train_y[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalAbort(epoch, opt.step_count, value)
            backward(loss)
            opt.step()
    return model


@dataclass
class PipelineResult:
    row: dict
    base: TrainResult
    regularized: TrainResult
    pruned: ModelGraph
    plan: object
    finetuned: ModelGraph | None = None


def run_pipeline(cfg: TrainConfig, write: bool = True) -> PipelineResult:
    """Train base + regularized twins, prune the twin, evaluate both."""
    dataset = dataset_for(cfg)
    base_cfg = with_overrides(cfg, scheme="none", reg_coefficient=0.0)
    base = train(base_cfg, dataset)
    regularized = base if cfg.scheme == "none" else train(cfg, dataset)

    plan = make_plan(cfg, regularized.model)
    pruned = apply_plan(regularized.model, plan)
    base_metric = summary_metric(base.model, dataset)
    pruned_metric = summary_metric(pruned, dataset)

    row = {
        "scheme": cfg.scheme,
        "beta": cfg.reg_coefficient,
        "seed": cfg.seed,
        "base_metric": base_metric,
        "pruned_metric": pruned_metric,
        "metric_drop": accuracy_drop(base_metric, pruned_metric),
        "speedup": speedup(count_macs(base.model), count_macs(pruned)),
        "groups_removed": len(plan.removals),
        "total_groups": regularized.model.total_groups(),
    }
    finetuned = None
    extra = ()
    if cfg.finetune_epochs > 0:
        finetuned = finetune(cfg, apply_plan(regularized.model, plan), dataset)
        row["finetuned_metric"] = summary_metric(finetuned, dataset)
        extra = ("finetuned_metric",)

    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        join = lambda name: os.path.join(cfg.out_dir, name)
        write_metrics_csv(join("base_metrics.csv"), base_cfg, base.metrics)
        write_metrics_csv(join("metrics.csv"), cfg, regularized.metrics)
        write_trajectory_jsonl(join("norms.jsonl"), cfg, regularized.trajectory)
        save_checkpoint(join("model_base.json"), base.model)
        save_checkpoint(join("model_regularized.json"), regularized.model)
        save_checkpoint(join("model_pruned.json"), pruned)
        if finetuned is not None:
            save_checkpoint(join("model_finetuned.json"), finetuned)
        save_plan(join("plan.json"), plan)
        write_summary_csv(join("summary.csv"), cfg, [row], extra_columns=extra)
    return PipelineResult(row, base, regularized, pruned, plan, finetuned)


def sweep(cfg: TrainConfig, betas, write: bool = True) -> list:
    """One pipeline per coefficient; failures become rows, the sweep survives."""
    betas = list(betas)
    if not betas:
        raise ConfigError("sweep needs a non-empty coefficient list")
    rows = []
    for beta in betas:
        sub = with_overrides(
            cfg,
            reg_coefficient=float(beta),
            out_dir=os.path.join(cfg.out_dir, f"beta_{beta:.6g}"),
        )
        try:
            result = run_pipeline(sub, write=write)
            row = dict(result.row)
            row["status"] = "ok"
        except (NumericalAbort, ValueError) as exc:
            row = {
                "scheme": cfg.scheme,
                "beta": float(beta),
                "seed": cfg.seed,
                "status": f"failed:{type(exc).__name__}",
            }
        rows.append(row)
    # achieved-speed-up order; failed rows (no speedup) sink to the end
    rows.sort(key=lambda r: (r.get("speedup") is None, r.get("speedup", 0.0), r["beta"]))
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        extra = ("finetuned_metric", "status") if cfg.finetune_epochs > 0 else ("status",)
        write_summary_csv(os.path.join(cfg.out_dir, "sweep.csv"), cfg, rows, extra_columns=extra)
    return rows
