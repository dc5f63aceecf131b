"""Position-factorized softmax emission policy with a Bernoulli format gate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "mtreason.toy-policy"
CHECKPOINT_VERSION = 1


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@dataclass
class ToyPolicy:
    """``theta[s, t]`` is the logit for emitting target ``t`` at a position holding source ``s``."""

    theta: np.ndarray
    theta_f: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape[0] != self.theta.shape[1]:
            raise ValueError(f"theta must be square, got shape {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)) or not np.isfinite(self.theta_f):
            raise ValueError("policy parameters must be finite")
        self.theta_f = float(self.theta_f)

    @classmethod
    def uniform(cls, vocab_size: int, theta_f: float = 0.0) -> "ToyPolicy":
        return cls(np.zeros((vocab_size, vocab_size)), theta_f)

    @classmethod
    def random(cls, vocab_size: int, rng: np.random.Generator, scale: float = 1.0) -> "ToyPolicy":
        return cls(rng.normal(0.0, scale, size=(vocab_size, vocab_size)), float(rng.normal(0.0, scale)))

    @property
    def vocab_size(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.theta.copy(), self.theta_f)

    def probs(self) -> np.ndarray:
        return softmax(self.theta)

    def format_prob(self) -> float:
        return sigmoid(self.theta_f)

    def logprob(self, source: Sequence[int], tokens: Sequence[int], formatted: bool) -> float:
        logp = np.log(self.probs())
        lp = float(sum(logp[s, t] for s, t in zip(source, tokens)))
        pf = self.format_prob()
        return lp + float(np.log(pf if formatted else 1.0 - pf))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), [self.theta_f]])

    @classmethod
    def from_flat(cls, vec: np.ndarray, vocab_size: int) -> "ToyPolicy":
        return cls(vec[:-1].reshape(vocab_size, vocab_size).copy(), float(vec[-1]))

    def restrict(self, sources: Sequence[int], targets: Sequence[int]) -> "ToyPolicy":
        """Sub-policy over the given rows/columns, renormalized within the column subset."""
        return ToyPolicy(self.theta[np.ix_(list(sources), list(targets))].copy(), self.theta_f)

    def to_dict(self, config_hash: str = "") -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "vocab_size": self.vocab_size,
            "theta": self.theta.tolist(),
            "theta_f": self.theta_f,
            "config_hash": config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyPolicy":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a toy-policy checkpoint of a supported version")
        return cls(np.array(d["theta"], dtype=np.float64), d["theta_f"])

    def save(self, path: str | Path, config_hash: str = "") -> None:
        Path(path).write_text(json.dumps(self.to_dict(config_hash)), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ToyPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def accumulate_gradient(
    policy: ToyPolicy,
    samples: Iterable[tuple[Sequence[int], Sequence[int], bool, float]],
) -> tuple[np.ndarray, float]:
    """Sum ``weight * grad log P(sample)`` over ``(source, tokens, formatted, weight)`` tuples.

    Per position the softmax score is ``onehot(t) - p[s]``; the gate contributes
    ``1 - sigma`` when formatted and ``-sigma`` otherwise.
    """
    V = policy.vocab_size
    P = policy.probs()
    pf = policy.format_prob()
    rows: list[int] = []
    cols: list[int] = []
    wts: list[float] = []
    g_f = 0.0
    for source, tokens, formatted, w in samples:
        rows.extend(source)
        cols.extend(tokens)
        wts.extend([w] * len(source))
        g_f += w * ((1.0 - pf) if formatted else -pf)
    G = np.zeros((V, V))
    if rows:
        r = np.asarray(rows)
        w = np.asarray(wts, dtype=np.float64)
        np.add.at(G, (r, np.asarray(cols)), w)
        row_mass = np.bincount(r, weights=w, minlength=V)
        G -= row_mass[:, None] * P
    return G, g_f


def softmax_kl_gradient(policy: ToyPolicy, reference: ToyPolicy) -> tuple[np.ndarray, float]:
    """Gradient of ``sum_s KL(pi_s || ref_s) + KL(Bern(sigma) || Bern(sigma_ref))`` w.r.t. the logits."""
    p, q = policy.probs(), reference.probs()
    log_ratio = np.log(p) - np.log(q)
    kl_rows = (p * log_ratio).sum(axis=1, keepdims=True)
    G = p * (log_ratio - kl_rows)
    a, b = policy.format_prob(), reference.format_prob()
    g_f = a * (1 - a) * (np.log(a / b) - np.log((1 - a) / (1 - b)))
    return G, float(g_f)


def softmax_kl(policy: ToyPolicy, reference: ToyPolicy) -> float:
    p, q = policy.probs(), reference.probs()
    a, b = policy.format_prob(), reference.format_prob()
    bern = a * np.log(a / b) + (1 - a) * np.log((1 - a) / (1 - b))
    return float((p * (np.log(p) - np.log(q))).sum() + bern)
