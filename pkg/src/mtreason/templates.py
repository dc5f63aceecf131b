"""Translation reasoning templates, prompt rendering and rule-based strategy selection."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping

from .corpus import ParallelPair
from .fixtures import read_fixture

TEMPLATE_VERSION = "v1"
PROMPT_VERSION = "v1"

LANGUAGE_NAMES = {
    "en": "English", "zh": "Chinese", "ja": "Japanese", "ru": "Russian", "fr": "French",
    "de": "German", "th": "Thai", "nl": "Dutch", "vi": "Vietnamese", "tr": "Turkish",
    "cs": "Czech", "es": "Spanish", "it": "Italian", "pt": "Portuguese", "ko": "Korean",
    "ar": "Arabic", "pl": "Polish", "uk": "Ukrainian",
}

SPECIALIZED_DOMAINS = frozenset({"legal", "medical", "specialized"})
PARAGRAPH_TOKENS = 100

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_STEP = re.compile(r"^(\d+)\.\s+(.*)$")


class Strategy(str, Enum):
    HIERARCHICAL = "Hierarchical"
    TRIANGULATION = "Triangulation"
    BACK_TRANSLATION = "BackTranslation"
    CONTEXT_AWARE = "ContextAware"
    EXPLANATION = "Explanation"
    STRUCTURAL_TRANSFORM = "StructuralTransform"


_BOX_TITLES = {
    "Hierarchical Translation": Strategy.HIERARCHICAL,
    "Triangulating Translation": Strategy.TRIANGULATION,
    "Back Translation": Strategy.BACK_TRANSLATION,
    "Context-aware Translation": Strategy.CONTEXT_AWARE,
    "Translation Explanation": Strategy.EXPLANATION,
    "Structural Transformation": Strategy.STRUCTURAL_TRANSFORM,
}


class Stage(str, Enum):
    EXTRACT = "extract"
    SELECT = "select"
    INCORPORATE = "incorporate"
    REFINE = "refine"


@dataclass(frozen=True)
class CotTemplate:
    strategy: Strategy
    title: str
    steps: tuple[str, ...]
    version: str = TEMPLATE_VERSION

    @property
    def id(self) -> str:
        return f"{self.strategy.value}@{self.version}"

    @property
    def template_text(self) -> str:
        return "\n".join(f"{i}. {s}" for i, s in enumerate(self.steps, start=1))


def parse_steps(template_text: str) -> tuple[str, ...]:
    steps = []
    for line in template_text.strip().splitlines():
        m = _STEP.match(line.strip())
        if not m:
            raise ValueError(f"not a numbered step: {line!r}")
        if int(m.group(1)) != len(steps) + 1:
            raise ValueError(f"step numbering broken at {line!r}")
        steps.append(m.group(2))
    if not steps:
        raise ValueError("template has no steps")
    return tuple(steps)


@lru_cache(maxsize=None)
def _load_templates() -> tuple[CotTemplate, ...]:
    text = read_fixture(f"cot_templates_{TEMPLATE_VERSION}.txt")
    boxes = re.findall(r"\[(.+?)\]\n<think>\n(.*?)\n</think>", text, re.S)
    return tuple(CotTemplate(_BOX_TITLES[title], title, parse_steps(body)) for title, body in boxes)


def list_templates() -> list[CotTemplate]:
    return list(_load_templates())


def get_template(strategy: Strategy | str) -> CotTemplate:
    strategy = Strategy(strategy)
    for t in _load_templates():
        if t.strategy is strategy:
            return t
    raise KeyError(strategy)


def _table(name: str) -> list[list[str]]:
    rows = []
    for line in read_fixture(name).splitlines():
        if line.strip() and not line.startswith("#"):
            rows.append(line.split("\t"))
    return rows


@lru_cache(maxsize=None)
def script_table() -> dict[str, str]:
    return {lang: script for lang, script in _table("script_table_v1.tsv")}


@lru_cache(maxsize=None)
def divergence_table() -> frozenset[tuple[str, str]]:
    return frozenset((src, tgt) for src, tgt in _table("divergence_table_v1.tsv"))


def is_distant(source_lang: str, target_lang: str, scripts: Mapping[str, str] | None = None) -> bool:
    scripts = script_table() if scripts is None else scripts
    a, b = scripts.get(source_lang), scripts.get(target_lang)
    return a is not None and b is not None and a != b


@dataclass(frozen=True)
class KeyConcepts:
    concepts: tuple[str, ...]
    source_lang: str
    target_lang: str
    length_class: str = "sentence"
    has_context: bool = False
    distant_pair: bool = False
    domain: str = "other"

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        if self.length_class not in ("sentence", "paragraph"):
            raise ValueError(f"length_class must be sentence or paragraph, got {self.length_class!r}")

    @property
    def features(self) -> dict:
        return {
            "length_class": self.length_class,
            "has_context": self.has_context,
            "distant_pair": self.distant_pair,
            "domain": self.domain,
        }

    @classmethod
    def for_pair(cls, pair: ParallelPair, concepts: Iterable[str], has_context: bool = False) -> "KeyConcepts":
        paragraph = pair.source_token_count > PARAGRAPH_TOKENS or "\n" in pair.source_text.strip()
        return cls(
            tuple(concepts),
            pair.source_lang,
            pair.target_lang,
            length_class="paragraph" if paragraph else "sentence",
            has_context=has_context,
            distant_pair=is_distant(pair.source_lang, pair.target_lang),
            domain=pair.domain,
        )


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    stage: Stage


def fill(text: str, /, **values: object) -> str:
    """Substitute ``{name}`` markers in one pass; substituted text is never rescanned."""
    missing = set(_PLACEHOLDER.findall(text)) - values.keys()
    if missing:
        raise KeyError(f"unfilled placeholders: {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), text)


def prompt_text(stage: Stage | str, part: str) -> str:
    return read_fixture(f"prompt_{Stage(stage).value}_{part}_{PROMPT_VERSION}.txt").rstrip("\n")


def language_name(code: str) -> str:
    return LANGUAGE_NAMES.get(code, code)


def translation_instruction(pair: ParallelPair) -> str:
    src, tgt = language_name(pair.source_lang), language_name(pair.target_lang)
    return f"Translate the following {src} text into {tgt}.\n{pair.source_text}"


def render_extraction_prompt(pair: ParallelPair) -> PromptBundle:
    return PromptBundle(
        prompt_text(Stage.EXTRACT, "system"),
        fill(prompt_text(Stage.EXTRACT, "user"), instruction=translation_instruction(pair)),
        Stage.EXTRACT,
    )


def render_selection_prompt(concepts: KeyConcepts) -> PromptBundle:
    if not concepts.concepts:
        raise ValueError("key concepts must be nonempty")
    return PromptBundle(
        prompt_text(Stage.SELECT, "system"),
        fill(prompt_text(Stage.SELECT, "user"), concepts="\n".join(concepts.concepts)),
        Stage.SELECT,
    )


def parse_concepts(text: str) -> tuple[str, ...]:
    """Pull one concept per line out of a model reply, dropping list markers."""
    body = text
    m = re.search(r"<key concepts>(.*?)</key concepts>", text, re.S)
    if m:
        body = m.group(1)
    out = []
    for line in body.splitlines():
        line = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line).strip()
        if line:
            out.append(line)
    return tuple(out)


def select_strategy(
    concepts: KeyConcepts,
    divergence: Iterable[tuple[str, str]] | None = None,
) -> Strategy:
    """Offline strategy choice, most specific signal first."""
    table = divergence_table() if divergence is None else frozenset(divergence)
    if concepts.distant_pair:
        return Strategy.TRIANGULATION
    if concepts.has_context:
        return Strategy.CONTEXT_AWARE
    if concepts.length_class == "paragraph":
        return Strategy.HIERARCHICAL
    if concepts.domain in SPECIALIZED_DOMAINS:
        return Strategy.EXPLANATION
    if (concepts.source_lang, concepts.target_lang) in table:
        return Strategy.STRUCTURAL_TRANSFORM
    return Strategy.BACK_TRANSLATION
