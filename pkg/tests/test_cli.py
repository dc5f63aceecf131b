import json

import pytest

from mtreason.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def corpus(tmp_path, capsys):
    path = tmp_path / "c.jsonl"
    assert run(capsys, "corpus", "generate", "--output", path, "--per-direction", 12, "--seed", 1)[0] == 0
    return path


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and "usage:" in err


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "corpus", "split")
    assert code == 1 and "--input" in err


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "train", "rl", "--help")
    assert code == 0 and "--batches-per-epoch" in out


def test_runtime_error_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "corpus", "load", "--input", tmp_path / "nope.jsonl")
    assert code == 2 and "error" in err


def test_corpus_load_reports_bad_line(capsys, tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "a"}\n')
    code, _, err = run(capsys, "corpus", "load", "--input", p)
    assert code == 2 and "line 1" in err


def test_split_twice_identical(capsys, corpus, tmp_path):
    outs = []
    for k in range(2):
        tr, va = tmp_path / f"tr{k}.jsonl", tmp_path / f"va{k}.jsonl"
        code, out, _ = run(capsys, "corpus", "split", "--input", corpus, "--train-out", tr, "--val-out", va, "--ratio", 0.9, "--seed", 7)
        assert code == 0
        outs.append((tr.read_bytes(), va.read_bytes()))
    assert outs[0] == outs[1]
    assert json.loads(out) == {"train": 194, "val": 22}


def test_sample_filter_stats_similarity(capsys, corpus, tmp_path):
    s = tmp_path / "s.jsonl"
    assert run(capsys, "corpus", "sample", "--input", corpus, "--output", s, "--per-direction", 3, "--seed", 2)[0] == 0
    assert len(s.read_text().splitlines()) == 54
    f = tmp_path / "f.jsonl"
    code, out, _ = run(capsys, "corpus", "filter", "--input", corpus, "--output", f, "--min-tokens", 20, "--max-tokens", 30)
    assert code == 0 and json.loads(out)["kept"] == len(f.read_text().splitlines())
    code, out, _ = run(capsys, "corpus", "stats", "--input", corpus)
    assert code == 0 and sum(json.loads(out)["counts"]) == 216
    code, out, _ = run(capsys, "corpus", "similarity", "--test", corpus, "--train", corpus, "--lang", "en", "--lang", "zh")
    assert json.loads(out)["scores"] == {"en": 1.0, "zh": 1.0}


def test_config_file_layer(capsys, corpus, tmp_path, monkeypatch):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[corpus.sample]\nper_direction = 2\nseed = 5\n")
    s = tmp_path / "s.jsonl"
    run(capsys, "--config", cfg, "corpus", "sample", "--input", corpus, "--output", s)
    assert len(s.read_text().splitlines()) == 36
    monkeypatch.setenv("MTREASON_CORPUS_SAMPLE_PER_DIRECTION", "4")
    run(capsys, "--config", cfg, "corpus", "sample", "--input", corpus, "--output", s)
    assert len(s.read_text().splitlines()) == 72
    run(capsys, "--config", cfg, "corpus", "sample", "--input", corpus, "--output", s, "--per-direction", 1)
    assert len(s.read_text().splitlines()) == 18


def test_templates_list(capsys):
    code, out, _ = run(capsys, "templates", "list", "--json")
    assert code == 0 and len(json.loads(out)) == 6


def test_reward_score(capsys, tmp_path):
    t = tmp_path / "out.txt"
    t.write_text("<think>r</think><answer>a b c</answer>")
    code, out, _ = run(capsys, "reward", "score", "--text", t, "--ref", "a b d")
    assert code == 0
    assert json.loads(out) == {"s_format": 1, "x": pytest.approx(1 / 3), "discretized": 0.333, "total": 1.333, "metric_id": "tokenF1-affine-v1"}
    t.write_text("a b c")
    assert json.loads(run(capsys, "reward", "score", "--text", t, "--ref", "a b c")[1])["total"] == 0.0
    assert run(capsys, "reward", "score", "--text", t)[0] == 1


def test_train_epochs_zero(capsys, tmp_path):
    code, out, _ = run(capsys, "train", "rl", "--epochs", 0, "--report-csv", tmp_path / "r.csv")
    rep = json.loads(out)
    assert code == 0 and rep["rows"] == [] and rep["final"] is None
    assert (tmp_path / "r.csv").read_text().count("\n") == 1


def test_train_small_run_reproducible(capsys, tmp_path):
    args = ["train", "rl", "--epochs", 1, "--batches-per-epoch", 5, "--vocab-size", 4, "--min-len", 1, "--max-len", 2, "--seed", 3]
    a = run(capsys, *args, "--checkpoint", tmp_path / "p.json", "--report-jsonl", tmp_path / "r.jsonl")
    b = run(capsys, *args)
    assert a[0] == b[0] == 0 and a[1] == b[1]
    assert json.loads((tmp_path / "p.json").read_text())["format"] == "mtreason.toy-policy"


def test_train_divergence_exit_2(capsys):
    code, out, err = run(capsys, "train", "rl", "--epochs", 1, "--batches-per-epoch", 20, "--vocab-size", 4, "--lr", 1e4)
    assert code == 2 and json.loads(out)["rows"]


def test_synthesis_pipeline_replay(capsys, tmp_path, data_dir):
    pairs, fx = data_dir / "pairs10.jsonl", data_dir / "replay10.jsonl"
    ch, ch2, recs, sft, rl = (tmp_path / n for n in ("ch.jsonl", "ch2.jsonl", "recs.jsonl", "sft.jsonl", "rl.jsonl"))
    assert run(capsys, "synth", "generate", "--input", pairs, "--out", ch, "--replay", fx)[0] == 0
    code, out, _ = run(capsys, "synth", "refine", "--chains", ch, "--out", ch2, "--replay", fx, "--audit-out", tmp_path / "a.jsonl")
    assert code == 0 and sum(json.loads(out).values()) == 10
    code, out, _ = run(capsys, "synth", "accept", "--chains", ch2, "--out", recs, "--rejections-out", tmp_path / "rej.jsonl")
    summary = json.loads(out)
    assert code == 0 and summary["accepted"] + summary["rejected"] == 10
    code, out, _ = run(capsys, "sft", "export", "--records", recs, "--out", sft, "--rl-out", rl)
    assert json.loads(out) == {"sft": summary["accepted"], "rl_prompts": summary["accepted"]}


def test_synthesis_simulate_record_then_replay(capsys, tmp_path, data_dir):
    pairs = data_dir / "pairs10.jsonl"
    fx = tmp_path / "fx.jsonl"
    assert run(capsys, "synth", "generate", "--input", pairs, "--out", tmp_path / "a.jsonl", "--simulate", "--record", fx, "--seed", 2)[0] == 0
    assert run(capsys, "synth", "generate", "--input", pairs, "--out", tmp_path / "b.jsonl", "--replay", fx)[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    # a second command recording into the same fixture keeps the first command's rows
    assert run(capsys, "synth", "refine", "--chains", tmp_path / "a.jsonl", "--out", tmp_path / "ra.jsonl",
               "--simulate", "--record", fx, "--seed", 2)[0] == 0
    for stage, src, out in (("generate", pairs, "c.jsonl"), ("refine", tmp_path / "c.jsonl", "rc.jsonl")):
        flag = "--input" if stage == "generate" else "--chains"
        assert run(capsys, "synth", stage, flag, src, "--out", tmp_path / out, "--replay", fx)[0] == 0
    assert (tmp_path / "ra.jsonl").read_bytes() == (tmp_path / "rc.jsonl").read_bytes()


def test_remote_metric_needs_endpoint(capsys, tmp_path):
    t = tmp_path / "o.txt"
    t.write_text("<think>r</think><answer>a</answer>")
    assert run(capsys, "reward", "score", "--text", t, "--ref", "a", "--metric", "remote")[0] == 1


def test_eval_and_report(capsys, tmp_path):
    scores = tmp_path / "s.jsonl"
    scores.write_text("".join(json.dumps({"model": "m", "src_lang": s, "tgt_lang": t, "score": v}) + "\n"
                              for s, t, v in [("fr", "en", 0.7), ("fr", "en", 0.9), ("en", "zh", 0.5)]))
    table = tmp_path / "t.json"
    assert run(capsys, "eval", "aggregate", "--scores", scores, "--out", table)[0] == 0
    md = tmp_path / "t.md"
    assert run(capsys, "report", "emit", "--table", table, "--format", "markdown", "--out", md)[0] == 0
    lines = md.read_text().splitlines()
    assert lines[0] == "| Model | xx2en fr | en2xx zh | xx2zh en | avg |"
    assert lines[2] == "| m | 0.800 | 0.500 | 0.500 | 0.600 |"
    csv_path = tmp_path / "t.csv"
    assert run(capsys, "report", "emit", "--scores", scores, "--format", "csv", "--out", csv_path)[0] == 0
    assert csv_path.read_text().splitlines()[1:] == ["m,fr,en,0.800,0.8,2", "m,en,zh,0.500,0.5,1"]
    assert run(capsys, "report", "emit", "--out", md)[0] == 1
