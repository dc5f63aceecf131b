"""Reasoning-trace synthesis: instantiate a template per pair, refine it with a critic, keep the best."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ParallelPair
from .gateway import CRITIC_TEMPERATURE, GENERATION_TEMPERATURE, AuthError, ChatRequest, Gateway, GatewayError
from .metric import Metric
from .reward import FormatViolation, Violation, format_response, parse_structured
from .templates import (
    CotTemplate,
    KeyConcepts,
    Stage,
    Strategy,
    fill,
    get_template,
    language_name,
    list_templates,
    parse_concepts,
    prompt_text,
    render_extraction_prompt,
    select_strategy,
    translation_instruction,
)

logger = logging.getLogger(__name__)

_THINK = re.compile(r"<think>(.*?)</think>", re.S)
_ANSWER = re.compile(r"<answer>(.*?)</answer>", re.S)


@dataclass(frozen=True)
class SynthesisConfig:
    max_steps: int = 4
    threshold: float = 0.85
    min_gain: float = 0.01
    patience: int = 2
    accept_floor: float = 0.3
    rotate_templates: bool = False
    model_id: str = "default"
    max_tokens: int = 2048
    generation_temperature: float = GENERATION_TEMPERATURE
    critic_temperature: float = CRITIC_TEMPERATURE
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class RefinementStep:
    step_index: int
    template_id: str
    template_text: str
    role: str
    status: str
    answer: str = ""
    cot: str = ""
    confidence: float | None = None
    raw: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RefinementStep":
        return cls(**d)


@dataclass
class RefinementChain:
    pair: ParallelPair
    strategy: Strategy
    concepts: tuple[str, ...] = ()
    steps: list[RefinementStep] = field(default_factory=list)
    status: str = "running"
    metric_id: str = ""

    def best_so_far(self) -> list[float | None]:
        """Running maximum of confidence over the chain (None until a step succeeds)."""
        out: list[float | None] = []
        best: float | None = None
        for s in self.steps:
            if s.ok and (best is None or s.confidence > best):
                best = s.confidence
            out.append(best)
        return out

    def to_dict(self) -> dict:
        return {
            "pair": self.pair.to_record(),
            "strategy": self.strategy.value,
            "concepts": list(self.concepts),
            "steps": [s.to_dict() for s in self.steps],
            "status": self.status,
            "metric_id": self.metric_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinementChain":
        p = d["pair"]
        pair = ParallelPair(p["id"], p["src"], p["tgt"], p["src_lang"], p["tgt_lang"], p.get("domain", "other"))
        return cls(
            pair,
            Strategy(d["strategy"]),
            tuple(d.get("concepts", ())),
            [RefinementStep.from_dict(s) for s in d["steps"]],
            d["status"],
            d.get("metric_id", ""),
        )


@dataclass(frozen=True)
class CotRecord:
    pair: ParallelPair
    cot: str
    answer: str
    confidence: float
    strategy: Strategy
    steps_used: int
    metric_id: str = ""

    def response(self) -> str:
        return format_response(self.cot, self.answer)

    def to_dict(self) -> dict:
        return {
            "pair": self.pair.to_record(),
            "cot": self.cot,
            "answer": self.answer,
            "confidence": self.confidence,
            "strategy": self.strategy.value,
            "steps_used": self.steps_used,
            "metric_id": self.metric_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CotRecord":
        p = d["pair"]
        pair = ParallelPair(p["id"], p["src"], p["tgt"], p["src_lang"], p["tgt_lang"], p.get("domain", "other"))
        return cls(pair, d["cot"], d["answer"], d["confidence"], Strategy(d["strategy"]), d["steps_used"], d.get("metric_id", ""))


@dataclass(frozen=True)
class Rejection:
    pair_id: str
    reason: str
    best_confidence: float | None = None


def extract_tagged(text: str) -> tuple[str, str]:
    """Lenient pull of the first think block and the first answer block after it.

    Raises :class:`FormatViolation` when either is absent or empty, or when the pair
    could not be re-emitted as a well-formed response.
    """
    think = _THINK.search(text)
    if think is None:
        raise FormatViolation(Violation.MISSING_TAG, "<think>")
    answer = _ANSWER.search(text, think.end())
    if answer is None:
        raise FormatViolation(Violation.MISSING_TAG, "<answer>")
    cot, ans = think.group(1).strip(), answer.group(1).strip()
    if not cot:
        raise FormatViolation(Violation.MISSING_TAG, "empty reasoning")
    parse_structured(format_response(cot, ans))
    return cot, ans


def render_incorporate_prompt(pair: ParallelPair, template: CotTemplate, concepts: Sequence[str]) -> tuple[str, str]:
    user = fill(
        prompt_text(Stage.INCORPORATE, "user"),
        instruction=translation_instruction(pair),
        reference=pair.target_text,
        concepts="\n".join(concepts) if concepts else "(none)",
        strategy=template.strategy.value,
        template=template.template_text,
    )
    return prompt_text(Stage.INCORPORATE, "system"), user


def render_refine_prompt(
    pair: ParallelPair,
    prior: RefinementStep | None,
    metric_id: str,
    template: CotTemplate | None = None,
) -> tuple[str, str]:
    block = ""
    if template is not None:
        block = f'Restructure the reasoning with this template:\n<template strategy="{template.strategy.value}">\n{template.template_text}\n</template>'
    user = fill(
        prompt_text(Stage.REFINE, "user"),
        source_lang=language_name(pair.source_lang),
        target_lang=language_name(pair.target_lang),
        process=prior.cot if prior else "(no usable reasoning yet)",
        result=prior.answer if prior else "(no usable translation yet)",
        reference=pair.target_text,
        metric_id=metric_id,
        score=f"{prior.confidence:.3f}" if prior else "n/a",
        source=pair.source_text,
        template_block=block,
    )
    return prompt_text(Stage.REFINE, "system"), user


def _run_step(
    pair: ParallelPair,
    template: CotTemplate,
    system: str,
    user: str,
    temperature: float,
    role: str,
    step_index: int,
    gateway: Gateway,
    metric: Metric,
    config: SynthesisConfig,
) -> RefinementStep:
    base = dict(step_index=step_index, template_id=template.id, template_text=template.template_text, role=role)
    req = ChatRequest(system, user, temperature, config.max_tokens, config.model_id)
    try:
        text = gateway.complete(req).text
    except AuthError:
        raise
    except GatewayError as exc:
        return RefinementStep(status="failed", error=f"gateway: {exc}", **base)
    try:
        cot, answer = extract_tagged(text)
    except FormatViolation as exc:
        return RefinementStep(status="failed", raw=text, error=f"unparseable output: {exc}", **base)
    f = metric.score(answer, pair.target_text, source=pair.source_text, lang=pair.target_lang)
    return RefinementStep(status="ok", answer=answer, cot=cot, confidence=f, raw=text, **base)


def generate_step(
    pair: ParallelPair,
    template: CotTemplate,
    gateway: Gateway,
    metric: Metric,
    concepts: Sequence[str] = (),
    step_index: int = 0,
    config: SynthesisConfig = SynthesisConfig(),
) -> RefinementStep:
    """Ask the generator to instantiate ``template`` for ``pair`` and score the answer against the reference."""
    system, user = render_incorporate_prompt(pair, template, concepts)
    return _run_step(pair, template, system, user, config.generation_temperature, "generator", step_index, gateway, metric, config)


def extract_concepts(pair: ParallelPair, gateway: Gateway, config: SynthesisConfig = SynthesisConfig()) -> tuple[str, ...]:
    bundle = render_extraction_prompt(pair)
    req = ChatRequest(bundle.system_text, bundle.user_text, config.critic_temperature, config.max_tokens, config.model_id)
    try:
        concepts = parse_concepts(gateway.complete(req).text)
    except GatewayError as exc:
        logger.warning("concept extraction failed for %s: %s", pair.id, exc)
        concepts = ()
    return concepts


def start_chain(pair: ParallelPair, gateway: Gateway, metric: Metric, config: SynthesisConfig = SynthesisConfig()) -> RefinementChain:
    """Extract key concepts, pick a strategy and produce step 0."""
    concepts = extract_concepts(pair, gateway, config)
    strategy = select_strategy(KeyConcepts.for_pair(pair, concepts))
    step = generate_step(pair, get_template(strategy), gateway, metric, concepts, 0, config)
    return RefinementChain(pair, strategy, concepts, [step], "running", metric.metric_id)


def _template_for(chain: RefinementChain, step_index: int, rotate: bool) -> CotTemplate:
    if not rotate:
        return get_template(chain.strategy)
    order = list_templates()
    start = [t.strategy for t in order].index(chain.strategy)
    return order[(start + step_index) % len(order)]


class _Progress:
    """Tracks best confidence and how many consecutive steps failed to beat it by more than min_gain."""

    def __init__(self, min_gain: float):
        self.min_gain = min_gain
        self.best: float | None = None
        self.stale = 0

    def observe(self, step: RefinementStep) -> None:
        if not step.ok:
            self.stale += 1
        elif self.best is None:
            self.best, self.stale = step.confidence, 0
        elif round(step.confidence - self.best, 9) > self.min_gain:
            self.best, self.stale = step.confidence, 0
        else:
            self.best = max(self.best, step.confidence)
            self.stale += 1


def refine(
    chain: RefinementChain,
    config: SynthesisConfig,
    gateway: Gateway,
    metric: Metric,
) -> RefinementChain:
    """Append critic steps until converged, out of steps, or out of patience.

    A step counts as progress only when it beats the best confidence so far by more
    than ``min_gain``; failed steps never count as progress.
    """
    if not chain.steps:
        raise ValueError("chain has no steps to refine")
    steps = list(chain.steps)
    progress = _Progress(config.min_gain)
    for s in steps:
        progress.observe(s)
    while True:
        if progress.best is not None and progress.best >= config.threshold:
            status = "converged"
            break
        if len(steps) >= config.max_steps or progress.stale >= config.patience:
            status = "exhausted"
            break
        prior = next((s for s in reversed(steps) if s.ok), None)
        i = len(steps)
        template = _template_for(chain, i, config.rotate_templates)
        system, user = render_refine_prompt(
            chain.pair, prior, chain.metric_id or metric.metric_id, template if config.rotate_templates else None
        )
        step = _run_step(chain.pair, template, system, user, config.critic_temperature, "critic", i, gateway, metric, config)
        steps.append(step)
        progress.observe(step)
    if not any(s.ok for s in steps):
        status = "failed"
    return replace(chain, steps=steps, status=status)


def accept(chain: RefinementChain, accept_floor: float = 0.3) -> CotRecord | Rejection:
    """Keep the highest-confidence step (earliest on ties) if it clears ``accept_floor``."""
    if chain.status == "running":
        raise ValueError("chain is still running")
    ok = [s for s in chain.steps if s.ok]
    if chain.status == "failed" or not ok:
        return Rejection(chain.pair.id, "all steps failed")
    best = ok[0]
    for s in ok[1:]:
        if s.confidence > best.confidence:
            best = s
    if best.confidence < accept_floor:
        return Rejection(chain.pair.id, f"best confidence {best.confidence:.3f} below floor {accept_floor}", best.confidence)
    return CotRecord(chain.pair, best.cot, best.answer, best.confidence, chain.strategy, len(chain.steps), chain.metric_id)


def _dump(rows: Iterable[dict], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def sft_row(record: CotRecord) -> dict:
    p = record.pair
    return {
        "prompt": translation_instruction(p),
        "response": record.response(),
        "meta": {
            "id": p.id,
            "src_lang": p.source_lang,
            "tgt_lang": p.target_lang,
            "domain": p.domain,
            "strategy": record.strategy.value,
            "confidence": record.confidence,
            "steps_used": record.steps_used,
            "metric_id": record.metric_id,
        },
    }


def export_sft(records: Sequence[CotRecord], path: str | Path) -> int:
    return _dump((sft_row(r) for r in records), path)


def export_rl_prompts(records: Sequence[CotRecord], path: str | Path) -> int:
    return _dump(({"prompt": translation_instruction(r.pair), "reference": r.pair.target_text} for r in records), path)


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def chain_audit_rows(chains: Sequence[RefinementChain]) -> list[dict]:
    return [
        {"pair_id": c.pair.id, "step": s.step_index, "template": s.template_id, "f": s.confidence, "status": s.status}
        for c in chains
        for s in c.steps
    ]


def _checkpoint_path(directory: Path, pair_id: str) -> Path:
    return directory / (hashlib.sha256(pair_id.encode("utf-8")).hexdigest()[:24] + ".json")


def synthesize_pair(
    pair: ParallelPair,
    gateway: Gateway,
    metric: Metric,
    config: SynthesisConfig = SynthesisConfig(),
    checkpoint_dir: str | Path | None = None,
) -> RefinementChain:
    if checkpoint_dir is not None:
        ckpt = _checkpoint_path(Path(checkpoint_dir), pair.id)
        if ckpt.exists():
            chain = RefinementChain.from_dict(json.loads(ckpt.read_text(encoding="utf-8")))
            if chain.status != "running":
                return chain
    chain = refine(start_chain(pair, gateway, metric, config), config, gateway, metric)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        tmp = ckpt.with_suffix(".tmp")
        tmp.write_text(json.dumps(chain.to_dict(), ensure_ascii=False), encoding="utf-8")
        tmp.replace(ckpt)
    return chain


def run_synthesis(
    pairs: Sequence[ParallelPair],
    gateway: Gateway,
    metric: Metric,
    config: SynthesisConfig = SynthesisConfig(),
    checkpoint_dir: str | Path | None = None,
) -> tuple[list[RefinementChain], list[CotRecord], list[Rejection]]:
    """Synthesize every pair; chains run concurrently but results keep input order."""
    with ThreadPoolExecutor(max_workers=max(1, config.max_in_flight)) as pool:
        chains = list(pool.map(lambda p: synthesize_pair(p, gateway, metric, config, checkpoint_dir), pairs))
    records: list[CotRecord] = []
    rejections: list[Rejection] = []
    for c in chains:
        out = accept(c, config.accept_floor)
        (records if isinstance(out, CotRecord) else rejections).append(out)
    return chains, records, rejections
