"""Brute-force expected reward and a finite-difference check of the policy gradient."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..metric import LexicalMetric, Metric
from ..reward import total_reward
from .env import SyntheticEnv
from .policy import ToyPolicy, accumulate_gradient

MAX_ENUMERATION = 10**6


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PromptTable:
    source: tuple[int, ...]
    weight: float
    outputs: np.ndarray  # (V**L, L) target token ids
    formatted_reward: np.ndarray
    raw_reward: np.ndarray


@dataclass(frozen=True)
class RewardTable:
    """Reward of every (prompt, output, format bit) triple; independent of the policy."""

    env: SyntheticEnv
    prompts: tuple[PromptTable, ...]


def build_reward_table(env: SyntheticEnv, metric: Metric | None = None, format_weight: float = 1.0) -> RewardTable:
    size = env.enumeration_size()
    if size > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"enumeration needs {size} outputs (limit {MAX_ENUMERATION})")
    metric = metric or LexicalMetric()
    V = env.vocab_size
    cache: dict[tuple, float] = {}

    def score(text: str, ref: str, src_text: str) -> float:
        key = (text, ref)
        if key not in cache:
            cache[key] = total_reward(text, ref, src_text, metric, lang=env.lang, format_weight=format_weight).total
        return cache[key]

    tables = []
    for src, w in env.all_prompts():
        ref, src_text = env.reference(src), env.source_text(src)
        outs = np.array(list(itertools.product(range(V), repeat=len(src))), dtype=np.int64)
        fr = np.array([score(env.render(o, True), ref, src_text) for o in outs])
        rr = np.array([score(env.render(o, False), ref, src_text) for o in outs])
        tables.append(PromptTable(src, w, outs, fr, rr))
    return RewardTable(env, tuple(tables))


def _output_probs(policy: ToyPolicy, pt: PromptTable) -> np.ndarray:
    logp = np.log(policy.probs())
    lp = np.zeros(len(pt.outputs))
    for pos, s in enumerate(pt.source):
        lp += logp[s, pt.outputs[:, pos]]
    return np.exp(lp)


def _gate(policy: ToyPolicy, env: SyntheticEnv) -> float:
    return policy.format_prob() if env.format_required else 1.0


def exact_expected_reward(policy: ToyPolicy, env: SyntheticEnv, table: RewardTable | None = None, metric: Metric | None = None) -> float:
    """Sum of P(output) * total reward over every prompt, output and format bit."""
    table = table or build_reward_table(env, metric)
    pf = _gate(policy, env)
    total = 0.0
    for pt in table.prompts:
        p = _output_probs(policy, pt)
        total += pt.weight * (pf * p @ pt.formatted_reward + (1.0 - pf) * p @ pt.raw_reward)
    return float(total)


def expected_format_rate(policy: ToyPolicy, env: SyntheticEnv) -> float:
    return _gate(policy, env)


def analytic_gradient(policy: ToyPolicy, env: SyntheticEnv, table: RewardTable | None = None) -> np.ndarray:
    """Exact gradient of expected reward via the score-function identity with zero baseline.

    Feeds ``P(output) * reward`` as the sample weight into the same accumulator the
    training update uses.
    """
    table = table or build_reward_table(env)
    pf = _gate(policy, env)
    samples = []
    for pt in table.prompts:
        p = _output_probs(policy, pt)
        for k, out in enumerate(pt.outputs):
            samples.append((pt.source, out, True, pt.weight * pf * p[k] * pt.formatted_reward[k]))
            if env.format_required:
                samples.append((pt.source, out, False, pt.weight * (1 - pf) * p[k] * pt.raw_reward[k]))
    G, g_f = accumulate_gradient(policy, samples)
    if not env.format_required:
        g_f = 0.0
    return np.concatenate([G.ravel(), [g_f]])


def numeric_gradient(policy: ToyPolicy, env: SyntheticEnv, h: float = 1e-5, table: RewardTable | None = None) -> np.ndarray:
    """Central differences of :func:`exact_expected_reward` in every parameter."""
    table = table or build_reward_table(env)
    base = policy.flat()
    grad = np.zeros_like(base)
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        f_up = exact_expected_reward(ToyPolicy.from_flat(up, policy.vocab_size), env, table)
        f_down = exact_expected_reward(ToyPolicy.from_flat(down, policy.vocab_size), env, table)
        grad[i] = (f_up - f_down) / (2 * h)
    return grad


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    max_absolute_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float
    h: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tol


# Components smaller than this are compared absolutely; FD noise near 1e-10 would
# otherwise dominate the ratio.
REL_FLOOR = 1e-6


def relative_errors(a: np.ndarray, n: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(policy: ToyPolicy, env: SyntheticEnv, h: float = 1e-5, tol: float = 1e-4, table: RewardTable | None = None) -> GradientCheckReport:
    table = table or build_reward_table(env)
    a = analytic_gradient(policy, env, table)
    n = numeric_gradient(policy, env, h, table)
    return GradientCheckReport(
        float(relative_errors(a, n).max()),
        float(np.abs(a - n).max()),
        a,
        n,
        tol,
        h,
    )
