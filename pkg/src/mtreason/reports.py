"""Per-direction aggregation of evaluation scores into pivot-centric report tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean

from .reward import round_half_away

PIVOT_GROUPS = ("xx2en", "en2xx", "zh2xx", "xx2zh")
LANG_ORDER = ("zh", "en", "ja", "ru", "fr", "de", "th", "nl", "vi", "tr", "cs")
AVG_NOTE = "avg: arithmetic mean over populated cells; a direction shown under two groups counts twice."


class ReportError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class DirectionScore:
    direction: tuple[str, str]
    mean_score: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a cell needs at least one score")
        if self.direction[0] == self.direction[1]:
            raise ValueError("direction languages must differ")


@dataclass
class ReportTable:
    grouping: str
    columns: list[tuple[str, str]] = field(default_factory=list)
    rows: dict[str, dict[tuple[str, str], DirectionScore]] = field(default_factory=dict)
    omitted: list[tuple[str, str]] = field(default_factory=list)

    def avg(self, model: str) -> float | None:
        cells = self.rows.get(model, {})
        return fmean(c.mean_score for c in cells.values()) if cells else None

    def groups(self) -> list[str]:
        seen: list[str] = []
        for g, _ in self.columns:
            if g not in seen:
                seen.append(g)
        return seen

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping,
            "columns": [list(c) for c in self.columns],
            "rows": {
                m: [[g, c, d.direction[0], d.direction[1], d.mean_score, d.n] for (g, c), d in cells.items()]
                for m, cells in self.rows.items()
            },
            "omitted": [list(d) for d in self.omitted],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportTable":
        rows = {
            m: {(g, c): DirectionScore((s, t), float(v), int(n)) for g, c, s, t, v, n in cells}
            for m, cells in d["rows"].items()
        }
        return cls(d["grouping"], [tuple(c) for c in d["columns"]], rows, [tuple(x) for x in d.get("omitted", [])])


def _cell_keys(src: str, tgt: str, grouping: str) -> list[tuple[str, str]]:
    if grouping == "flat":
        return [("flat", f"{src}-{tgt}")]
    if grouping != "en_zh_centric":
        raise ValueError(f"unknown grouping {grouping!r}")
    keys = []
    if tgt == "en":
        keys.append(("xx2en", src))
    if src == "en":
        keys.append(("en2xx", tgt))
    if src == "zh":
        keys.append(("zh2xx", tgt))
    if tgt == "zh":
        keys.append(("xx2zh", src))
    return keys


def _lang_rank(lang: str) -> tuple[int, str]:
    return (LANG_ORDER.index(lang) if lang in LANG_ORDER else len(LANG_ORDER), lang)


def _column_sort(key: tuple[str, str]) -> tuple:
    group, col = key
    if group == "flat":
        src, tgt = col.split("-", 1)
        return (0, _lang_rank(src), _lang_rank(tgt))
    return (PIVOT_GROUPS.index(group), _lang_rank(col))


def load_scores(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ReportError(f"invalid JSON ({exc.msg})", lineno) from None
            for key in ("model", "src_lang", "tgt_lang", "score"):
                if key not in rec:
                    raise ReportError(f"missing field {key!r}", lineno)
            if not isinstance(rec["score"], (int, float)) or isinstance(rec["score"], bool):
                raise ReportError("score must be a number", lineno)
            if rec["src_lang"] == rec["tgt_lang"]:
                raise ReportError("source and target language are identical", lineno)
            rows.append(rec)
    return rows


def build_table(rows: list[dict], grouping: str = "en_zh_centric") -> ReportTable:
    acc: dict[str, dict[tuple[str, str], list[float]]] = {}
    directions: dict[tuple[str, str], tuple[str, str]] = {}
    omitted: list[tuple[str, str]] = []
    for rec in rows:
        src, tgt = rec["src_lang"], rec["tgt_lang"]
        keys = _cell_keys(src, tgt, grouping)
        if not keys:
            if (src, tgt) not in omitted:
                omitted.append((src, tgt))
            continue
        cells = acc.setdefault(rec["model"], {})
        for k in keys:
            cells.setdefault(k, []).append(float(rec["score"]))
            directions[k] = (src, tgt)
    columns = sorted({k for cells in acc.values() for k in cells}, key=_column_sort)
    table_rows = {
        model: {k: DirectionScore(directions[k], fmean(cells[k]), len(cells[k])) for k in columns if k in cells}
        for model, cells in acc.items()
    }
    return ReportTable(grouping, columns, table_rows, omitted)


def aggregate(scores_path: str | Path, grouping: str = "en_zh_centric") -> ReportTable:
    """Mean score per (model, direction) cell; models keep first-appearance order."""
    return build_table(load_scores(scores_path), grouping)


def fmt3(x: float | None) -> str:
    return "-" if x is None else f"{round_half_away(x, 3):.3f}"


def render_markdown(table: ReportTable) -> str:
    header = ["Model"] + [f"{g} {c}" if g != "flat" else c for g, c in table.columns] + ["avg"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|",
    ]
    for model, cells in table.rows.items():
        vals = [fmt3(cells[k].mean_score) if k in cells else "-" for k in table.columns]
        lines.append("| " + " | ".join([model, *vals, fmt3(table.avg(model))]) + " |")
    out = "\n".join(lines) + "\n"
    if table.rows:
        out += f"\n{AVG_NOTE}\n"
    return out


def render_csv(table: ReportTable) -> str:
    """One line per (model, direction); the exact mean is kept next to the 3-decimal display value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "src_lang", "tgt_lang", "score", "mean_score", "n"])
    for model, cells in table.rows.items():
        seen = set()
        for k in table.columns:
            if k not in cells or cells[k].direction in seen:
                continue
            d = cells[k]
            seen.add(d.direction)
            w.writerow([model, d.direction[0], d.direction[1], fmt3(d.mean_score), repr(d.mean_score), d.n])
    return buf.getvalue()


def emit_report(table: ReportTable, format: str, path: str | Path) -> Path:
    if format == "markdown":
        text = render_markdown(table)
    elif format == "csv":
        text = render_csv(table)
    else:
        raise ValueError(f"unknown report format {format!r}")
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def parse_csv_report(path: str | Path, grouping: str = "en_zh_centric") -> ReportTable:
    """Rebuild a table from :func:`render_csv` output."""
    acc: dict[str, dict[tuple[str, str], DirectionScore]] = {}
    omitted: list[tuple[str, str]] = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            d = DirectionScore((row["src_lang"], row["tgt_lang"]), float(row["mean_score"]), int(row["n"]))
            keys = _cell_keys(*d.direction, grouping)
            if not keys:
                omitted.append(d.direction)
            for k in keys:
                acc.setdefault(row["model"], {})[k] = d
    columns = sorted({k for cells in acc.values() for k in cells}, key=_column_sort)
    rows = {m: {k: cells[k] for k in columns if k in cells} for m, cells in acc.items()}
    return ReportTable(grouping, columns, rows, omitted)
