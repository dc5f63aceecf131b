import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtreason.reports import (
    AVG_NOTE,
    ReportError,
    ReportTable,
    aggregate,
    build_table,
    emit_report,
    parse_csv_report,
    render_markdown,
)

LANGS = ("zh", "ja", "ru", "fr", "de")


def write_scores(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def row(model, s, t, score):
    return {"model": model, "src_lang": s, "tgt_lang": t, "score": score}


def test_cell_mean(tmp_path):
    p = write_scores(tmp_path / "s.jsonl", [row("m", "fr", "en", 0.7), row("m", "fr", "en", 0.9)])
    t = aggregate(p)
    cell = t.rows["m"][("xx2en", "fr")]
    assert cell.mean_score == pytest.approx(0.8) and cell.n == 2
    assert t.avg("m") == pytest.approx(0.8)


def test_en_zh_under_two_groups():
    t = build_table([row("m", "en", "zh", 0.5)])
    assert t.columns == [("en2xx", "zh"), ("xx2zh", "en")]
    assert t.rows["m"][("en2xx", "zh")] == t.rows["m"][("xx2zh", "en")]


def test_off_pivot_directions_omitted():
    t = build_table([row("m", "fr", "de", 0.5), row("m", "de", "en", 0.4)])
    assert t.omitted == [("fr", "de")]
    assert t.columns == [("xx2en", "de")]
    flat = build_table([row("m", "fr", "de", 0.5)], "flat")
    assert flat.columns == [("flat", "fr-de")] and not flat.omitted


# One score per unique direction; the layout repeats zh<->en in two groups, giving 20 cells.
SHARED_LAYOUT_ROW = [0.704, 0.643, 0.646, 0.793, 0.743, 0.664, 0.611, 0.592, 0.745, 0.570,
                     0.704, 0.602, 0.542, 0.599, 0.575, 0.664, 0.595, 0.513, 0.552, 0.464]


def twenty_cell_rows(model="R"):
    v = iter(SHARED_LAYOUT_ROW)
    xx2en = {l: next(v) for l in LANGS}
    en2xx = {l: next(v) for l in LANGS}
    zh2xx = {l: next(v) for l in ("en",) + LANGS[1:]}
    xx2zh = {l: next(v) for l in ("en",) + LANGS[1:]}
    assert zh2xx["en"] == xx2en["zh"] and xx2zh["en"] == en2xx["zh"]
    rows = [row(model, l, "en", s) for l, s in xx2en.items()]
    rows += [row(model, "en", l, s) for l, s in en2xx.items()]
    rows += [row(model, "zh", l, s) for l, s in zh2xx.items() if l != "en"]
    rows += [row(model, l, "zh", s) for l, s in xx2zh.items() if l != "en"]
    return rows


def test_twenty_cell_layout_and_average():
    rows = twenty_cell_rows()
    assert len(rows) == 18
    t = build_table(rows)
    assert t.groups() == ["xx2en", "en2xx", "zh2xx", "xx2zh"]
    assert [c for g, c in t.columns if g == "xx2en"] == list(LANGS)
    assert [c for g, c in t.columns if g == "zh2xx"] == ["en", "ja", "ru", "fr", "de"]
    assert [t.rows["R"][k].mean_score for k in t.columns] == SHARED_LAYOUT_ROW
    assert f"{t.avg('R'):.5f}" == "0.62605"
    md = render_markdown(t)
    assert md.splitlines()[2].endswith("| 0.626 |")


def test_markdown_header_and_precision():
    t = build_table([row("m", "zh", "en", 0.62345)])
    lines = render_markdown(t).splitlines()
    assert lines[0] == "| Model | xx2en zh | zh2xx en | avg |"
    assert lines[2] == "| m | 0.623 | 0.623 | 0.623 |"
    assert lines[-1] == AVG_NOTE


def test_missing_cells_dash():
    t = build_table([row("a", "fr", "en", 0.5), row("b", "de", "en", 0.25)])
    lines = render_markdown(t).splitlines()
    assert lines[2] == "| a | 0.500 | - | 0.500 |"
    assert lines[3] == "| b | - | 0.250 | 0.250 |"


def test_empty_table_header_only(tmp_path):
    t = build_table([])
    emit_report(t, "markdown", tmp_path / "e.md")
    assert (tmp_path / "e.md").read_text() == "| Model | avg |\n|---|---:|\n"
    emit_report(t, "csv", tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "model,src_lang,tgt_lang,score,mean_score,n\n"


def test_emit_byte_deterministic(tmp_path):
    t = build_table(twenty_cell_rows() + twenty_cell_rows("S"))
    for fmt in ("markdown", "csv"):
        a = emit_report(t, fmt, tmp_path / f"a.{fmt}").read_bytes()
        b = emit_report(t, fmt, tmp_path / f"b.{fmt}").read_bytes()
        assert a == b


def test_csv_one_row_per_direction(tmp_path):
    t = build_table(twenty_cell_rows())
    lines = emit_report(t, "csv", tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 1 + 18


def test_load_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(row("m", "fr", "en", 0.1)) + "\n" + json.dumps({"model": "m", "src_lang": "fr", "score": 1}) + "\n")
    with pytest.raises(ReportError, match="line 2.*tgt_lang"):
        aggregate(p)
    p.write_text("{nope\n")
    with pytest.raises(ReportError, match="line 1"):
        aggregate(p)
    p.write_text(json.dumps(row("m", "fr", "en", "high")) + "\n")
    with pytest.raises(ReportError, match="number"):
        aggregate(p)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_report(build_table([]), "csv", tmp_path / "missing" / "x.csv")


def test_table_dict_round_trip():
    t = build_table(twenty_cell_rows())
    assert ReportTable.from_dict(json.loads(json.dumps(t.to_dict()))) == t


score_rows = st.lists(
    st.tuples(
        st.sampled_from(["m1", "m2"]),
        st.sampled_from(["en", "zh", "fr", "de", "ja"]),
        st.sampled_from(["en", "zh", "fr", "de", "ja"]),
        st.floats(-1, 1, allow_nan=False),
    ).filter(lambda r: r[1] != r[2]),
    min_size=1,
    max_size=30,
)


@settings(max_examples=40, deadline=None)
@given(score_rows, st.sampled_from(["en_zh_centric", "flat"]))
def test_csv_round_trip(tmp_path_factory, rows, grouping):
    d = tmp_path_factory.mktemp("rt")
    t = build_table([row(*r) for r in rows], grouping)
    emit_report(t, "csv", d / "t.csv")
    back = parse_csv_report(d / "t.csv", grouping)
    assert back.rows == t.rows and back.columns == t.columns
    assert render_markdown(back) == render_markdown(t)
