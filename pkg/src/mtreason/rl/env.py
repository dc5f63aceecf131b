"""Synthetic token-translation environment with a hidden one-to-one lexicon."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..reward import format_response

THINK_TEXT = "translate each source token through the lexicon"


@dataclass(frozen=True)
class SyntheticEnv:
    vocab_size: int
    lexicon: tuple[int, ...]
    length_range: tuple[int, int] = (3, 6)
    format_required: bool = True
    lang: str = "en"

    def __post_init__(self):
        object.__setattr__(self, "lexicon", tuple(int(t) for t in self.lexicon))
        object.__setattr__(self, "length_range", tuple(self.length_range))
        if sorted(self.lexicon) != list(range(self.vocab_size)):
            raise ValueError("lexicon must be a bijection over [0, vocab_size)")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid length range {self.length_range}")

    @classmethod
    def lexicon_env(cls, vocab_size: int, length_range: tuple[int, int] = (3, 6), seed: int = 0, **kw) -> "SyntheticEnv":
        perm = np.random.default_rng(seed).permutation(vocab_size)
        return cls(vocab_size, tuple(int(t) for t in perm), length_range, **kw)

    def sample_prompt(self, rng: np.random.Generator) -> tuple[int, ...]:
        n = int(rng.integers(self.length_range[0], self.length_range[1] + 1))
        return tuple(int(t) for t in rng.integers(0, self.vocab_size, size=n))

    def sample_prompts(self, rng: np.random.Generator, n: int) -> list[tuple[int, ...]]:
        return [self.sample_prompt(rng) for _ in range(n)]

    def source_text(self, source: Sequence[int]) -> str:
        return " ".join(f"s{t}" for t in source)

    def target_text(self, tokens: Sequence[int]) -> str:
        return " ".join(f"t{t}" for t in tokens)

    def reference(self, source: Sequence[int]) -> str:
        return self.target_text([self.lexicon[t] for t in source])

    def render(self, tokens: Sequence[int], formatted: bool) -> str:
        hyp = self.target_text(tokens)
        return format_response(THINK_TEXT, hyp) if formatted else hyp

    def all_prompts(self) -> Iterator[tuple[tuple[int, ...], float]]:
        """Every source sequence with its probability under :meth:`sample_prompt`."""
        lo, hi = self.length_range
        n_lengths = hi - lo + 1
        for length in range(lo, hi + 1):
            w = 1.0 / (n_lengths * self.vocab_size**length)
            for src in itertools.product(range(self.vocab_size), repeat=length):
                yield src, w

    def enumeration_size(self) -> int:
        lo, hi = self.length_range
        return sum(2 * self.vocab_size ** (2 * length) for length in range(lo, hi + 1))
