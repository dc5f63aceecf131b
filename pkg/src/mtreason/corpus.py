"""Parallel corpus ingestion, filtering, sampling, splitting and profiling."""

from __future__ import annotations

import bisect
import csv
import hashlib
import json
import math
import random
import statistics
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .fixtures import read_fixture

DOMAINS = ("news", "literature", "specialized", "synthetic", "other")
CHAR_TOKENIZED = frozenset({"zh", "ja", "th"})
SIMILARITY_METRIC_ID = "jaccard-unigram-v1"
DEFAULT_EDGES = (0, 10, 50, 100, 200, 400, 800, 1200, math.inf)

# Six training languages; the pivot-centric scheme anchors on en and zh.
LANGUAGES = ("zh", "ja", "ru", "fr", "de", "en")


def _pivot_directions() -> tuple[tuple[str, str], ...]:
    out: list[tuple[str, str]] = []
    for pivot in ("en", "zh"):
        for lang in LANGUAGES:
            if lang == pivot:
                continue
            for d in ((lang, pivot), (pivot, lang)):
                if d not in out:
                    out.append(d)
    return tuple(out)


PIVOT_DIRECTIONS = _pivot_directions()


class CorpusError(ValueError):
    """Raised for malformed corpus input, carrying the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def known_languages() -> frozenset[str]:
    return frozenset(read_fixture("iso639_1.txt").split())


def tokenize(text: str, lang: str) -> list[str]:
    """Split ``text`` into tokens: per character for zh/ja/th, on whitespace otherwise."""
    if lang in CHAR_TOKENIZED:
        return [ch for ch in text if not ch.isspace()]
    return text.split()


@dataclass(frozen=True)
class ParallelPair:
    id: str
    source_text: str
    target_text: str
    source_lang: str
    target_lang: str
    domain: str = "other"
    source_token_count: int = -1

    def __post_init__(self):
        if self.source_lang == self.target_lang:
            raise CorpusError(f"pair {self.id!r}: source and target language are both {self.source_lang!r}")
        if not self.source_text.strip() or not self.target_text.strip():
            raise CorpusError(f"pair {self.id!r}: empty source or target text")
        if self.domain not in DOMAINS:
            raise CorpusError(f"pair {self.id!r}: unknown domain {self.domain!r}")
        count = len(tokenize(self.source_text, self.source_lang))
        if self.source_token_count < 0:
            object.__setattr__(self, "source_token_count", count)
        elif self.source_token_count != count:
            raise CorpusError(f"pair {self.id!r}: token count {self.source_token_count} != {count}")

    @property
    def direction(self) -> tuple[str, str]:
        return (self.source_lang, self.target_lang)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "src": self.source_text,
            "tgt": self.target_text,
            "src_lang": self.source_lang,
            "tgt_lang": self.target_lang,
            "domain": self.domain,
        }


@dataclass(frozen=True)
class CorpusSet:
    pairs: tuple[ParallelPair, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        seen: set[str] = set()
        for p in self.pairs:
            if p.id in seen:
                raise CorpusError(f"duplicate pair id {p.id!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def directions(self) -> list[tuple[str, str]]:
        return sorted({p.direction for p in self.pairs})

    def by_direction(self) -> dict[tuple[str, str], list[ParallelPair]]:
        groups: dict[tuple[str, str], list[ParallelPair]] = {}
        for p in self.pairs:
            groups.setdefault(p.direction, []).append(p)
        return groups


@dataclass(frozen=True)
class LengthHistogram:
    bucket_edges: tuple[float, ...]
    counts: tuple[int, ...]
    min: int | None
    max: int | None
    mean: float | None
    median: float | None

    @property
    def empty(self) -> bool:
        return self.min is None

    def to_dict(self) -> dict:
        return {
            "bucket_edges": [e if math.isfinite(e) else "inf" for e in self.bucket_edges],
            "counts": list(self.counts),
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "median": self.median,
        }


@dataclass(frozen=True)
class SimilarityReport:
    scores: dict[str, float]
    test_name: str
    train_name: str
    metric_id: str = SIMILARITY_METRIC_ID

    def to_dict(self) -> dict:
        return {
            "scores": dict(self.scores),
            "test_name": self.test_name,
            "train_name": self.train_name,
            "metric_id": self.metric_id,
        }


_FIELDS = ("id", "src", "tgt", "src_lang", "tgt_lang", "domain")
_REQUIRED = _FIELDS[:5]


def _pair_from_record(rec: dict, line: int, langs: frozenset[str]) -> ParallelPair:
    if not isinstance(rec, dict):
        raise CorpusError("record is not an object", line)
    for key in _REQUIRED:
        value = rec.get(key)
        if not isinstance(value, str) or not value.strip():
            raise CorpusError(f"missing or empty field {key!r}", line)
    for key in ("src_lang", "tgt_lang"):
        if rec[key] not in langs:
            raise CorpusError(f"unknown language code {rec[key]!r}", line)
    try:
        return ParallelPair(
            id=rec["id"],
            source_text=rec["src"],
            target_text=rec["tgt"],
            source_lang=rec["src_lang"],
            target_lang=rec["tgt_lang"],
            domain=rec.get("domain") or "other",
        )
    except CorpusError as exc:
        raise CorpusError(str(exc), line) from None


def load_corpus(path: str | Path, format: str = "jsonl") -> CorpusSet:
    """Read a JSONL or headerless 6-column TSV corpus, validating every record.

    Raises :class:`CorpusError` naming the offending line.
    """
    path = Path(path)
    langs = known_languages()
    pairs = []
    with path.open(encoding="utf-8", newline="") as fh:
        if format == "jsonl":
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"invalid JSON ({exc.msg})", lineno) from None
                pairs.append(_pair_from_record(rec, lineno, langs))
        elif format == "tsv":
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
                if not row:
                    continue
                if len(row) != len(_FIELDS):
                    raise CorpusError(f"expected {len(_FIELDS)} columns, got {len(row)}", lineno)
                pairs.append(_pair_from_record(dict(zip(_FIELDS, row)), lineno, langs))
        else:
            raise ValueError(f"unknown corpus format {format!r}")
    try:
        return CorpusSet(tuple(pairs), provenance=str(path))
    except CorpusError as exc:
        raise CorpusError(str(exc)) from None


def write_corpus(corpus: CorpusSet | Iterable[ParallelPair], path: str | Path, format: str = "jsonl") -> int:
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        if format == "jsonl":
            for p in corpus:
                fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")
                n += 1
        elif format == "tsv":
            writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
            for p in corpus:
                writer.writerow([p.to_record()[k] for k in _FIELDS])
                n += 1
        else:
            raise ValueError(f"unknown corpus format {format!r}")
    return n


def filter_by_length(c: CorpusSet, min_tokens: int = 10, max_tokens: float = 1200) -> CorpusSet:
    """Keep pairs whose source token count lies in ``[min_tokens, max_tokens]``."""
    if min_tokens > max_tokens:
        raise ValueError(f"min_tokens {min_tokens} > max_tokens {max_tokens}")
    kept = tuple(p for p in c.pairs if min_tokens <= p.source_token_count <= max_tokens)
    return CorpusSet(kept, provenance=c.provenance)


def _direction_rng(seed: int, direction: tuple[str, str], salt: str) -> random.Random:
    # Per-direction streams keep each direction's draw independent of the others present.
    digest = hashlib.sha256(f"{salt}:{seed}:{direction[0]}-{direction[1]}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_balanced(
    c: CorpusSet,
    per_direction: int = 100,
    seed: int = 0,
    directions: Sequence[tuple[str, str]] | None = None,
) -> CorpusSet:
    """Draw exactly ``per_direction`` pairs for every direction.

    ``directions`` defaults to every direction present in ``c``. Output is grouped by
    direction in sorted order; within a direction the input order is kept.
    """
    if per_direction < 0:
        raise ValueError("per_direction must be nonnegative")
    groups = c.by_direction()
    wanted = sorted(set(directions)) if directions is not None else sorted(groups)
    short = []
    for d in wanted:
        have = len(groups.get(d, ()))
        if have < per_direction:
            short.append(f"{d[0]}->{d[1]} (have {have}, short by {per_direction - have})")
    if short:
        raise CorpusError("insufficient pairs for direction(s): " + ", ".join(short))
    out: list[ParallelPair] = []
    for d in wanted:
        pool = groups.get(d, [])
        idx = sorted(_direction_rng(seed, d, "sample").sample(range(len(pool)), per_direction))
        out.extend(pool[i] for i in idx)
    return CorpusSet(tuple(out), provenance=f"{c.provenance}|sample(per_direction={per_direction},seed={seed})")


def _train_quota(sizes: dict[tuple[str, str], int], ratio: Fraction) -> dict[tuple[str, str], int]:
    total = sum(sizes.values())
    quota = {d: math.floor(ratio * n) for d, n in sizes.items()}
    deficit = math.floor(ratio * total) - sum(quota.values())
    # Largest-remainder top-up so the global train size is floor(ratio * N).
    remainders = sorted(sizes, key=lambda d: (-(ratio * sizes[d] - quota[d]), d))
    for d in remainders[:deficit]:
        quota[d] += 1
    return quota


def split_train_val(c: CorpusSet, train_ratio: float | Fraction = Fraction(9, 10), seed: int = 0) -> tuple[CorpusSet, CorpusSet]:
    """Stratified train/validation split, deterministic in ``seed``.

    Each direction contributes ``floor(ratio * n_d)`` pairs to train. When the per-direction
    floors undershoot ``floor(ratio * N)`` the shortfall goes to the directions with the
    largest fractional remainders.
    """
    ratio = Fraction(train_ratio).limit_denominator(10**6) if isinstance(train_ratio, float) else Fraction(train_ratio)
    if not 0 < ratio < 1:
        raise ValueError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    groups = c.by_direction()
    quota = _train_quota({d: len(v) for d, v in groups.items()}, ratio)
    train_ids: set[str] = set()
    for d in sorted(groups):
        pool = groups[d]
        order = list(range(len(pool)))
        _direction_rng(seed, d, "split").shuffle(order)
        train_ids.update(pool[i].id for i in order[: quota[d]])
    train = tuple(p for p in c.pairs if p.id in train_ids)
    val = tuple(p for p in c.pairs if p.id not in train_ids)
    return (
        CorpusSet(train, provenance=f"{c.provenance}|train(seed={seed})"),
        CorpusSet(val, provenance=f"{c.provenance}|val(seed={seed})"),
    )


def _bucket_index(edges: Sequence[float], value: int) -> int:
    closing = edges[-2] if math.isinf(edges[-1]) else edges[-1]
    idx = bisect.bisect_right(edges, value) - 1
    if idx < 0 or idx >= len(edges) - 1:
        if value == edges[-1]:
            return len(edges) - 2
        raise ValueError(f"length {value} outside histogram range [{edges[0]}, {edges[-1]}]")
    if value == closing and idx > 0 and edges[idx] == closing:
        idx -= 1
    return idx


def token_stats(c: CorpusSet, edges: Sequence[float] = DEFAULT_EDGES) -> LengthHistogram:
    """Histogram of source token counts.

    Buckets are half-open ``[lo, hi)`` except the one ending at the last finite edge, which
    is closed so that the filter bound (1200 by default) falls inside the band.
    """
    edges = tuple(edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing with at least two entries")
    counts = [0] * (len(edges) - 1)
    lengths = [p.source_token_count for p in c.pairs]
    for n in lengths:
        counts[_bucket_index(edges, n)] += 1
    if not lengths:
        return LengthHistogram(edges, tuple(counts), None, None, None, None)
    return LengthHistogram(
        edges,
        tuple(counts),
        min(lengths),
        max(lengths),
        statistics.fmean(lengths),
        statistics.median(lengths),
    )


def _vocabulary(c: CorpusSet, lang: str) -> set[str] | None:
    vocab: set[str] = set()
    found = False
    for p in c.pairs:
        if p.source_lang == lang:
            vocab.update(tokenize(p.source_text, lang))
            found = True
        if p.target_lang == lang:
            vocab.update(tokenize(p.target_text, lang))
            found = True
    return vocab if found else None


def similarity(test: CorpusSet, train: CorpusSet, lang: str) -> float:
    """Jaccard index between the unigram type sets of all ``lang``-side text."""
    v_test = _vocabulary(test, lang)
    v_train = _vocabulary(train, lang)
    if v_test is None or v_train is None:
        which = "test" if v_test is None else "train"
        raise CorpusError(f"{which} corpus has no segments in language {lang!r}")
    union = v_test | v_train
    if not union:
        return 1.0
    return len(v_test & v_train) / len(union)


def similarity_report(
    test: CorpusSet,
    train: CorpusSet,
    langs: Sequence[str],
    test_name: str = "test",
    train_name: str = "train",
) -> SimilarityReport:
    return SimilarityReport({lang: similarity(test, train, lang) for lang in langs}, test_name, train_name)


_SYNTH_WORDS = (
    "river", "market", "winter", "signal", "garden", "engine", "letter", "harbor", "silver", "forest",
    "window", "ladder", "candle", "bridge", "meadow", "anchor", "pocket", "thunder", "velvet", "lantern",
)


def make_synthetic_corpus(
    directions: Sequence[tuple[str, str]],
    per_direction: int,
    seed: int = 0,
    min_tokens: int = 10,
    max_tokens: int = 40,
) -> CorpusSet:
    """Generate a placeholder corpus with ``per_direction`` pairs for each direction.

    Text is drawn from a small word list tagged by language; it has no linguistic content
    and exists to exercise the sampling/splitting tooling.
    """
    rng = random.Random(seed)
    pairs = []
    for src, tgt in directions:
        for k in range(per_direction):
            n = rng.randint(min_tokens, max_tokens)
            words = [rng.choice(_SYNTH_WORDS) for _ in range(n)]
            src_tokens = [f"{w}{src}" for w in words]
            tgt_tokens = [f"{w}{tgt}" for w in words]
            if src in CHAR_TOKENIZED:
                src_text = "".join(chr(0x4E00 + _SYNTH_WORDS.index(w)) for w in words)
            else:
                src_text = " ".join(src_tokens)
            if tgt in CHAR_TOKENIZED:
                tgt_text = "".join(chr(0x4E00 + _SYNTH_WORDS.index(w)) for w in words)
            else:
                tgt_text = " ".join(tgt_tokens)
            pairs.append(ParallelPair(f"{src}-{tgt}-{k:05d}", src_text, tgt_text, src, tgt, "synthetic"))
    return CorpusSet(tuple(pairs), provenance=f"synthetic(seed={seed})")
