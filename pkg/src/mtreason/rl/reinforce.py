"""Rollout sampling, baseline-subtracted advantages and the REINFORCE-style update."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..metric import LexicalMetric, Metric
from ..reward import RewardBreakdown, total_reward
from .env import SyntheticEnv
from .policy import ToyPolicy, accumulate_gradient, softmax_kl_gradient

ADV_EPS = 1e-8


class NonFiniteGradient(FloatingPointError):
    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"non-finite gradient contribution from sample {sample_id}")


@dataclass(frozen=True)
class Rollout:
    prompt_index: int
    rollout_index: int
    tokens: tuple[int, ...]
    formatted: bool
    text: str
    logprob: float
    reward: RewardBreakdown
    advantage: float | None = None

    @property
    def sample_id(self) -> str:
        return f"{self.prompt_index}:{self.rollout_index}"


@dataclass(frozen=True)
class RolloutBatch:
    prompts: tuple[tuple[int, ...], ...]
    groups: tuple[tuple[Rollout, ...], ...]

    @property
    def n_rollouts(self) -> int:
        return len(self.groups[0]) if self.groups else 0

    def rollouts(self) -> list[Rollout]:
        return [r for g in self.groups for r in g]

    def totals(self) -> np.ndarray:
        return np.array([[r.reward.total for r in g] for g in self.groups], dtype=np.float64)

    def advantages(self) -> np.ndarray:
        return np.array([[r.advantage for r in g] for g in self.groups], dtype=np.float64)

    @property
    def has_advantages(self) -> bool:
        return all(r.advantage is not None for g in self.groups for r in g)


def rollout_rng(seed: int, stream: Sequence[int], prompt_index: int, rollout_index: int) -> np.random.Generator:
    # Keyed on indices so results do not depend on the order rollouts are scheduled in.
    return np.random.default_rng([seed, *stream, prompt_index, rollout_index])


def sample_rollouts(
    policy: ToyPolicy,
    env: SyntheticEnv,
    prompts: Sequence[Sequence[int]],
    n: int = 16,
    seed: int = 0,
    metric: Metric | None = None,
    format_weight: float = 1.0,
    stream: Sequence[int] = (),
) -> RolloutBatch:
    """Draw ``n`` outputs per prompt and score each with the gated reward."""
    if n < 1:
        raise ValueError("n must be >= 1")
    metric = metric or LexicalMetric()
    cdf = np.cumsum(policy.probs(), axis=1)
    logp = np.log(policy.probs())
    pf = policy.format_prob()
    groups = []
    for i, src in enumerate(prompts):
        src = tuple(int(s) for s in src)
        ref, src_text = env.reference(src), env.source_text(src)
        group = []
        for j in range(n):
            u = rollout_rng(seed, stream, i, j).random(len(src) + 1)
            tokens = tuple(
                min(int(np.searchsorted(cdf[s], u[k], side="right")), policy.vocab_size - 1) for k, s in enumerate(src)
            )
            formatted = bool(u[-1] < pf) or not env.format_required
            lp = float(sum(logp[s, t] for s, t in zip(src, tokens)))
            if env.format_required:
                lp += float(np.log(pf if formatted else 1.0 - pf))
            text = env.render(tokens, formatted)
            rb = total_reward(text, ref, src_text, metric, lang=env.lang, format_weight=format_weight)
            group.append(Rollout(i, j, tokens, formatted, text, lp, rb))
        groups.append(tuple(group))
    return RolloutBatch(tuple(tuple(int(s) for s in p) for p in prompts), tuple(groups))


def compute_advantages(batch: RolloutBatch, baseline_mode: str = "group_mean", normalize: bool = True) -> RolloutBatch:
    """Subtract a mean-reward baseline; optionally divide by the batch standard deviation."""
    totals = batch.totals()
    if totals.size == 0:
        return batch
    if baseline_mode == "group_mean":
        adv = totals - totals.mean(axis=1, keepdims=True)
    elif baseline_mode == "batch_mean":
        adv = totals - totals.mean()
    else:
        raise ValueError(f"unknown baseline mode {baseline_mode!r}")
    if normalize:
        adv = adv / max(float(adv.std()), ADV_EPS)
    groups = tuple(
        tuple(replace(r, advantage=float(adv[i, j])) for j, r in enumerate(g)) for i, g in enumerate(batch.groups)
    )
    return replace(batch, groups=groups)


def policy_gradient(policy: ToyPolicy, batch: RolloutBatch) -> tuple[np.ndarray, float]:
    """Mean over samples of ``advantage * grad log P(sample)``."""
    if not batch.has_advantages:
        raise ValueError("advantages must be computed before the update")
    rollouts = batch.rollouts()
    for r in rollouts:
        if not np.isfinite(r.advantage):
            raise NonFiniteGradient(r.sample_id)
    samples = [(batch.prompts[r.prompt_index], r.tokens, r.formatted, r.advantage / len(rollouts)) for r in rollouts]
    return accumulate_gradient(policy, samples)


def update(
    policy: ToyPolicy,
    batch: RolloutBatch,
    lr: float = 0.05,
    kl_beta: float = 0.0,
    reference: ToyPolicy | None = None,
    train_format: bool = True,
) -> ToyPolicy:
    """One ascent step ``theta + lr * (policy gradient - kl_beta * grad KL(policy || reference))``."""
    G, g_f = policy_gradient(policy, batch)
    if not train_format:
        g_f = 0.0
    if kl_beta:
        if reference is None:
            raise ValueError("kl_beta > 0 needs a reference policy")
        K, k_f = softmax_kl_gradient(policy, reference)
        G = G - kl_beta * K
        g_f = g_f - kl_beta * k_f
    theta = policy.theta + lr * G
    theta_f = policy.theta_f + lr * g_f
    if not (np.all(np.isfinite(theta)) and np.isfinite(theta_f)):
        worst = max(batch.rollouts(), key=lambda r: abs(r.advantage))
        raise NonFiniteGradient(worst.sample_id)
    return ToyPolicy(theta, theta_f)
