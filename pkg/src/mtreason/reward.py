"""Format gate, answer-score discretization and the combined reward."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .metric import Metric

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
_TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
_TAG_RE = re.compile("|".join(re.escape(t) for t in _TAGS))


class Violation(str, Enum):
    MISSING_TAG = "missing tag"
    DUPLICATE_TAG = "duplicate tag"
    NESTED_TAGS = "nested tags"
    WRONG_ORDER = "wrong order"
    TRAILING_GARBAGE = "text outside tags"
    EMPTY_ANSWER = "empty answer"


class FormatViolation(ValueError):
    def __init__(self, rule: Violation, detail: str = ""):
        self.rule = rule
        super().__init__(f"{rule.value}: {detail}" if detail else rule.value)


@dataclass(frozen=True)
class StructuredOutput:
    think_text: str
    answer_text: str
    raw: str
    leading: str = ""
    between: str = ""
    trailing: str = ""

    def reconstruct(self) -> str:
        return (
            f"{self.leading}{THINK_OPEN}{self.think_text}{THINK_CLOSE}"
            f"{self.between}{ANSWER_OPEN}{self.answer_text}{ANSWER_CLOSE}{self.trailing}"
        )


def parse_structured(text: str) -> StructuredOutput:
    """Parse ``<think>...</think><answer>...</answer>`` with only whitespace around the blocks.

    Raises :class:`FormatViolation` naming the first rule that fails, checked in the order
    missing tag, duplicate tag, nesting/order, text outside tags, empty answer.
    """
    found: dict[str, list[int]] = {t: [] for t in _TAGS}
    for m in _TAG_RE.finditer(text):
        found[m.group()].append(m.start())
    for tag in _TAGS:
        if not found[tag]:
            raise FormatViolation(Violation.MISSING_TAG, tag)
    for tag in _TAGS:
        if len(found[tag]) > 1:
            raise FormatViolation(Violation.DUPLICATE_TAG, tag)
    to, tc, ao, ac = (found[t][0] for t in _TAGS)
    if not (to < tc and ao < ac):
        raise FormatViolation(Violation.WRONG_ORDER, "closing tag precedes its opening tag")
    if (to < ao < ac < tc) or (ao < to < tc < ac):
        raise FormatViolation(Violation.NESTED_TAGS)
    if not tc < ao:
        raise FormatViolation(Violation.WRONG_ORDER, "answer block precedes think block")
    leading = text[:to]
    between = text[tc + len(THINK_CLOSE) : ao]
    trailing = text[ac + len(ANSWER_CLOSE) :]
    for part in (leading, between, trailing):
        if part.strip():
            raise FormatViolation(Violation.TRAILING_GARBAGE, repr(part.strip()[:40]))
    answer = text[ao + len(ANSWER_OPEN) : ac]
    if not answer.strip():
        raise FormatViolation(Violation.EMPTY_ANSWER)
    return StructuredOutput(
        think_text=text[to + len(THINK_OPEN) : tc],
        answer_text=answer,
        raw=text,
        leading=leading,
        between=between,
        trailing=trailing,
    )


def format_reward(text: str) -> int:
    try:
        parse_structured(text)
    except FormatViolation:
        return 0
    return 1


def format_response(think: str, answer: str) -> str:
    return f"{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"


def round_half_away(x: float, places: int = 3) -> float:
    # Goes through repr so that 0.0005 rounds the way it reads, not the way it is stored.
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def discretize(x: float) -> float:
    """Answer reward: 0 for non-positive quality, else quality rounded to 3 decimals."""
    if not math.isfinite(x):
        raise ValueError(f"quality score must be finite, got {x}")
    if x <= 0:
        return 0.0
    return round_half_away(x, 3)


@dataclass(frozen=True)
class RewardBreakdown:
    s_format: int
    x: float | None
    discretized: float | None
    total: float
    metric_id: str

    def to_dict(self, sample_id: str | None = None) -> dict:
        d = asdict(self)
        if sample_id is not None:
            d = {"sample_id": sample_id, **d}
        return d


def total_reward(
    text: str,
    reference: str,
    source: str,
    metric: "Metric",
    lang: str = "en",
    format_weight: float = 1.0,
) -> RewardBreakdown:
    """Gated-additive reward ``S_format * (format_weight + R(x))``.

    Malformed outputs score 0 without consulting the metric; metric failures propagate.
    """
    if not reference.strip():
        raise ValueError("reference must be nonempty")
    try:
        parsed = parse_structured(text)
    except FormatViolation:
        return RewardBreakdown(0, None, None, 0.0, metric.metric_id)
    x = metric.score(parsed.answer_text.strip(), reference, source=source, lang=lang)
    r = discretize(x)
    return RewardBreakdown(1, x, r, format_weight + r, metric.metric_id)
