"""Epoch/batch training loop on the synthetic environment."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..metric import LexicalMetric, Metric
from .env import SyntheticEnv
from .policy import ToyPolicy
from .reinforce import compute_advantages, policy_gradient, sample_rollouts, update

logger = logging.getLogger(__name__)

LARGE_MODEL_LR = 3e-7
TOY_LR = 0.05


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: "TrainReport"):
        self.report = report
        super().__init__(message)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batches_per_epoch: int = 200
    batch_prompts: int = 8
    n_rollouts: int = 16
    lr: float = TOY_LR
    seed: int = 0
    baseline_mode: str = "group_mean"
    normalize: bool = True
    kl_beta: float = 0.0
    format_weight: float = 1.0
    theta_f_init: float = -2.0
    theta_bound: float = 50.0
    eval_prompts: int = 64
    eval_rollouts: int = 16

    def __post_init__(self):
        if self.epochs < 0 or self.batches_per_epoch < 1 or self.batch_prompts < 1 or self.n_rollouts < 1:
            raise ValueError("epochs >= 0 and batch sizes >= 1 are required")
        if self.baseline_mode not in ("group_mean", "batch_mean"):
            raise ValueError(f"unknown baseline mode {self.baseline_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    mean_total: float
    mean_s_format: float
    mean_x: float | None
    mean_grad_norm: float
    batches: int


@dataclass(frozen=True)
class EvalResult:
    mean_total: float
    format_rate: float
    mean_x: float | None


@dataclass
class TrainReport:
    config: dict
    rows: list[EpochRow] = field(default_factory=list)
    initial: EvalResult | None = None
    final: EvalResult | None = None
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "flags": self.flags,
            "initial": asdict(self.initial) if self.initial else None,
            "final": asdict(self.final) if self.final else None,
            "rows": [asdict(r) for r in self.rows],
        }

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_total", "mean_s_format", "mean_x", "mean_grad_norm", "batches"])
            for r in self.rows:
                w.writerow([r.epoch, r.mean_total, r.mean_s_format, "" if r.mean_x is None else r.mean_x, r.mean_grad_norm, r.batches])

    def write_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": "header", "config": self.config, "flags": self.flags}) + "\n")
            for r in self.rows:
                fh.write(json.dumps({"kind": "epoch", **asdict(r)}) + "\n")


def _summaries(batch) -> tuple[float, float, list[float]]:
    rs = [r.reward for r in batch.rollouts()]
    xs = [b.x for b in rs if b.x is not None]
    return float(np.mean([b.total for b in rs])), float(np.mean([b.s_format for b in rs])), xs


def evaluate(
    policy: ToyPolicy,
    env: SyntheticEnv,
    metric: Metric | None = None,
    n_prompts: int = 64,
    n_rollouts: int = 16,
    seed: int = 0,
    format_weight: float = 1.0,
) -> EvalResult:
    """Monte-Carlo reward and format compliance on a fixed, seed-determined prompt set."""
    rng = np.random.default_rng([seed, 0xEEA1])
    prompts = env.sample_prompts(rng, n_prompts)
    batch = sample_rollouts(policy, env, prompts, n_rollouts, seed, metric, format_weight, stream=(0xEEA1,))
    total, fmt, xs = _summaries(batch)
    return EvalResult(total, fmt, float(np.mean(xs)) if xs else None)


def train(
    config: TrainConfig,
    env: SyntheticEnv,
    metric: Metric | None = None,
    policy: ToyPolicy | None = None,
) -> tuple[TrainReport, ToyPolicy]:
    """Sample -> reward -> advantage -> update, ``epochs * batches_per_epoch`` times."""
    metric = metric or LexicalMetric()
    policy = policy.copy() if policy is not None else ToyPolicy.uniform(env.vocab_size, config.theta_f_init)
    reference = policy.copy()
    report = TrainReport(
        config=config.to_dict(),
        flags={
            "baseline": config.baseline_mode,
            "advantage_normalization": config.normalize,
            "kl_beta": config.kl_beta,
            "lr_regime": "large-model" if config.lr == LARGE_MODEL_LR else "toy",
            "gradient_unit": "sequence",
            "metric_id": metric.metric_id,
            "config_hash": config.hash(),
        },
    )
    if config.epochs == 0:
        return report, policy
    report.initial = evaluate(policy, env, metric, config.eval_prompts, config.eval_rollouts, config.seed, config.format_weight)
    prompt_rng = np.random.default_rng([config.seed, 0x9A11])
    for epoch in range(config.epochs):
        totals, fmts, xs, norms = [], [], [], []
        for b in range(config.batches_per_epoch):
            prompts = env.sample_prompts(prompt_rng, config.batch_prompts)
            batch = sample_rollouts(
                policy, env, prompts, config.n_rollouts, config.seed, metric, config.format_weight, stream=(epoch, b)
            )
            batch = compute_advantages(batch, config.baseline_mode, config.normalize)
            G, g_f = policy_gradient(policy, batch)
            norms.append(float(np.sqrt((G**2).sum() + g_f**2)))
            policy = update(policy, batch, config.lr, config.kl_beta, reference, train_format=env.format_required)
            t, f, x = _summaries(batch)
            totals.append(t)
            fmts.append(f)
            xs.extend(x)
            if float(np.abs(policy.theta).mean()) > config.theta_bound:
                report.rows.append(EpochRow(epoch, float(np.mean(totals)), float(np.mean(fmts)), float(np.mean(xs)) if xs else None, float(np.mean(norms)), b + 1))
                raise TrainingDiverged(f"mean |theta| exceeded {config.theta_bound} at epoch {epoch} batch {b}", report)
        row = EpochRow(epoch, float(np.mean(totals)), float(np.mean(fmts)), float(np.mean(xs)) if xs else None, float(np.mean(norms)), config.batches_per_epoch)
        report.rows.append(row)
        logger.info("epoch %d: reward %.3f format %.3f", epoch, row.mean_total, row.mean_s_format)
    report.final = evaluate(policy, env, metric, config.eval_prompts, config.eval_rollouts, config.seed, config.format_weight)
    return report, policy
