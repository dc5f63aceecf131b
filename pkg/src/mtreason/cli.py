"""Command-line entry points for every pipeline stage.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import config as cfg
from .corpus import (
    DEFAULT_EDGES,
    PIVOT_DIRECTIONS,
    CorpusSet,
    filter_by_length,
    load_corpus,
    make_synthetic_corpus,
    sample_balanced,
    similarity_report,
    split_train_val,
    token_stats,
    write_corpus,
)

log = logging.getLogger("mtreason")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def _conf(args, section: str, defaults: dict, **flags) -> dict:
    return cfg.resolve(section, defaults, flags, args.file_config)


# corpus -------------------------------------------------------------------

def _load(path: str, fmt: str) -> CorpusSet:
    return load_corpus(path, fmt)


def cmd_corpus_load(args) -> int:
    c = _load(args.input, args.format)
    if args.output:
        write_corpus(c, args.output)
    _emit({"pairs": len(c), "directions": ["-".join(d) for d in c.directions()], "provenance": c.provenance})
    return 0


def cmd_corpus_filter(args) -> int:
    o = _conf(args, "corpus.filter", {"min_tokens": 10, "max_tokens": 1200}, min_tokens=args.min_tokens, max_tokens=args.max_tokens)
    c = filter_by_length(_load(args.input, args.format), o["min_tokens"], o["max_tokens"])
    write_corpus(c, args.output)
    _emit({"kept": len(c)})
    return 0


def cmd_corpus_sample(args) -> int:
    o = _conf(args, "corpus.sample", {"per_direction": 100, "seed": 0}, per_direction=args.per_direction, seed=args.seed)
    c = sample_balanced(_load(args.input, args.format), o["per_direction"], o["seed"])
    write_corpus(c, args.output)
    _emit({"pairs": len(c), "directions": len(c.directions())})
    return 0


def cmd_corpus_split(args) -> int:
    o = _conf(args, "corpus.split", {"ratio": 0.9, "seed": 0}, ratio=args.ratio, seed=args.seed)
    train, val = split_train_val(_load(args.input, args.format), o["ratio"], o["seed"])
    write_corpus(train, args.train_out)
    write_corpus(val, args.val_out)
    _emit({"train": len(train), "val": len(val)})
    return 0


def cmd_corpus_stats(args) -> int:
    edges = DEFAULT_EDGES if not args.edges else tuple(float(e) for e in args.edges.split(","))
    _emit(token_stats(_load(args.input, args.format), edges).to_dict())
    return 0


def cmd_corpus_similarity(args) -> int:
    rep = similarity_report(
        _load(args.test, args.format), _load(args.train, args.format), args.lang, args.test_name, args.train_name
    )
    _emit(rep.to_dict())
    return 0


def cmd_corpus_generate(args) -> int:
    o = _conf(args, "corpus.generate", {"per_direction": 150, "seed": 0}, per_direction=args.per_direction, seed=args.seed)
    directions = list(PIVOT_DIRECTIONS)
    for extra in args.extra_direction or []:
        src, tgt = extra.split("-")
        directions.append((src, tgt))
    c = make_synthetic_corpus(directions, o["per_direction"], o["seed"])
    write_corpus(c, args.output)
    _emit({"pairs": len(c), "directions": len(directions)})
    return 0


# templates ----------------------------------------------------------------

def cmd_templates_list(args) -> int:
    from .templates import list_templates

    ts = list_templates()
    if args.json:
        _emit([{"strategy": t.strategy.value, "id": t.id, "title": t.title, "steps": list(t.steps)} for t in ts])
    else:
        for t in ts:
            sys.stdout.write(f"[{t.title}] ({t.id})\n{t.template_text}\n\n")
    return 0


# synthesis ----------------------------------------------------------------

def _gateway(args):
    from .gateway import Gateway

    g = _conf(
        args, "gateway",
        {"endpoint": "", "model_id": "default", "attempts": 3, "timeout": 60.0, "max_in_flight": 4},
        endpoint=args.endpoint, model_id=args.model_id,
    )
    common = dict(attempts=g["attempts"], timeout=g["timeout"], max_in_flight=g["max_in_flight"], audit_path=args.audit_log)
    if args.replay:
        return Gateway("replay", fixture=args.replay, **common)
    mode = "record" if args.record else "live"
    if args.simulate:
        from .simulator import ScriptedLLM

        return Gateway(mode, endpoint="http://simulated.invalid/v1", transport=ScriptedLLM(seed=args.seed or 0).transport(), **common)
    return Gateway(mode, endpoint=g["endpoint"] or None, **common)


def _metric(args):
    from .metric import LexicalMetric, RemoteMetric

    m = _conf(args, "metric", {"backend": "lexical", "endpoint": "", "timeout": 30.0, "attempts": 3, "metric_id": "remote"}, backend=args.metric)
    if m["backend"] == "lexical":
        return LexicalMetric()
    if m["backend"] == "remote":
        if not m["endpoint"]:
            raise UsageError("remote metric needs metric.endpoint in the config file or MTREASON_METRIC_ENDPOINT")
        return RemoteMetric.from_config(m)
    raise UsageError(f"unknown metric backend {m['backend']!r}")


def _synth_config(args):
    from .synthesis import SynthesisConfig

    o = _conf(
        args, "synth",
        {"max_steps": 4, "threshold": 0.85, "min_gain": 0.01, "patience": 2, "accept_floor": 0.3, "rotate_templates": False, "model_id": "default", "max_in_flight": 4},
        max_steps=getattr(args, "max_steps", None),
        threshold=getattr(args, "threshold", None),
        min_gain=getattr(args, "min_gain", None),
        patience=getattr(args, "patience", None),
        accept_floor=getattr(args, "floor", None),
        rotate_templates=getattr(args, "rotate_templates", None),
        model_id=args.model_id if hasattr(args, "model_id") else None,
    )
    return SynthesisConfig(**o)


def _write_jsonl(rows, path) -> int:
    from .synthesis import _dump

    return _dump(rows, path)


def _finish_record(args, gateway) -> None:
    if getattr(args, "record", None) and gateway.mode == "record":
        gateway.save_session(args.record)


def cmd_synth_generate(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from .synthesis import start_chain

    conf = _synth_config(args)
    gateway, metric = _gateway(args), _metric(args)
    pairs = list(_load(args.input, args.format))
    with ThreadPoolExecutor(max_workers=conf.max_in_flight) as pool:
        chains = list(pool.map(lambda p: start_chain(p, gateway, metric, conf), pairs))
    _write_jsonl((c.to_dict() for c in chains), args.out)
    _finish_record(args, gateway)
    _emit({"chains": len(chains), "failed_step0": sum(not c.steps[0].ok for c in chains)})
    return 0


def cmd_synth_refine(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from .synthesis import RefinementChain, chain_audit_rows, read_jsonl, refine

    conf = _synth_config(args)
    gateway, metric = _gateway(args), _metric(args)
    chains = [RefinementChain.from_dict(d) for d in read_jsonl(args.chains)]
    with ThreadPoolExecutor(max_workers=conf.max_in_flight) as pool:
        chains = list(pool.map(lambda c: refine(c, conf, gateway, metric) if c.status == "running" else c, chains))
    _write_jsonl((c.to_dict() for c in chains), args.out)
    if args.audit_out:
        _write_jsonl(chain_audit_rows(chains), args.audit_out)
    _finish_record(args, gateway)
    counts: dict[str, int] = {}
    for c in chains:
        counts[c.status] = counts.get(c.status, 0) + 1
    _emit(counts)
    return 0


def cmd_synth_accept(args) -> int:
    from .synthesis import CotRecord, RefinementChain, accept, read_jsonl

    floor = _conf(args, "synth", {"accept_floor": 0.3}, accept_floor=args.floor)["accept_floor"]
    records, rejections = [], []
    for d in read_jsonl(args.chains):
        out = accept(RefinementChain.from_dict(d), floor)
        (records if isinstance(out, CotRecord) else rejections).append(out)
    _write_jsonl((r.to_dict() for r in records), args.out)
    if args.rejections_out:
        _write_jsonl(({"pair_id": r.pair_id, "reason": r.reason, "best_confidence": r.best_confidence} for r in rejections), args.rejections_out)
    _emit({"accepted": len(records), "rejected": len(rejections)})
    return 0


def cmd_sft_export(args) -> int:
    from .synthesis import CotRecord, export_rl_prompts, export_sft, read_jsonl

    records = [CotRecord.from_dict(d) for d in read_jsonl(args.records)]
    n = export_sft(records, args.out)
    result = {"sft": n}
    if args.rl_out:
        result["rl_prompts"] = export_rl_prompts(records, args.rl_out)
    _emit(result)
    return 0


# training -----------------------------------------------------------------

def cmd_train_rl(args) -> int:
    from .rl import SyntheticEnv, TrainConfig, TrainingDiverged, train

    defaults = TrainConfig().to_dict() | {"vocab_size": 16, "min_len": 3, "max_len": 6, "env_seed": 0}
    o = _conf(
        args, "train.rl", defaults,
        epochs=args.epochs, batches_per_epoch=args.batches_per_epoch, batch_prompts=args.batch_prompts,
        n_rollouts=args.rollouts, lr=args.lr, seed=args.seed, baseline_mode=args.baseline,
        normalize=False if args.no_normalize else None, kl_beta=args.kl_beta, theta_f_init=args.theta_f_init,
        vocab_size=args.vocab_size, min_len=args.min_len, max_len=args.max_len, env_seed=args.env_seed,
    )
    env = SyntheticEnv.lexicon_env(o.pop("vocab_size"), (o.pop("min_len"), o.pop("max_len")), seed=o.pop("env_seed"))
    tc = TrainConfig(**o)
    try:
        report, policy = train(tc, env)
    except TrainingDiverged as exc:
        report, policy = exc.report, None
        log.error("%s", exc)
    if args.report_csv:
        report.write_csv(args.report_csv)
    if args.report_jsonl:
        report.write_jsonl(args.report_jsonl)
    if args.checkpoint and policy is not None:
        policy.save(args.checkpoint, tc.hash())
    _emit(report.to_dict())
    return 0 if policy is not None else 2


# reward / eval ------------------------------------------------------------

def cmd_reward_score(args) -> int:
    from .reward import total_reward

    text = Path(args.text).read_text(encoding="utf-8")
    if args.ref_file:
        ref = Path(args.ref_file).read_text(encoding="utf-8").strip()
    elif args.ref is not None:
        ref = args.ref
    else:
        raise UsageError("reward score needs --ref or --ref-file")
    w = _conf(args, "reward", {"format_weight": 1.0}, format_weight=args.format_weight)["format_weight"]
    rb = total_reward(text, ref, args.source or "", _metric(args), lang=args.lang, format_weight=w)
    _emit(rb.to_dict())
    return 0


def cmd_eval_aggregate(args) -> int:
    from .reports import aggregate

    table = aggregate(args.scores, args.grouping)
    data = table.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        _emit({"models": len(table.rows), "columns": len(table.columns), "omitted": len(table.omitted)})
    else:
        _emit(data)
    return 0


def cmd_report_emit(args) -> int:
    from .reports import ReportTable, aggregate, emit_report

    if args.table:
        table = ReportTable.from_dict(json.loads(Path(args.table).read_text(encoding="utf-8")))
    elif args.scores:
        table = aggregate(args.scores, args.grouping)
    else:
        raise UsageError("report emit needs --table or --scores")
    emit_report(table, args.format, args.out)
    return 0


# parser -------------------------------------------------------------------

def _gateway_flags(p) -> None:
    g = p.add_argument_group("gateway")
    m = g.add_mutually_exclusive_group()
    m.add_argument("--replay", metavar="FIXTURE", help="answer only from a recorded fixture (no network)")
    m.add_argument("--simulate", action="store_true", help="use the built-in scripted model instead of a live endpoint")
    g.add_argument("--record", metavar="FIXTURE", help="record live/simulated exchanges to a replay fixture")
    g.add_argument("--endpoint", help="chat-completions base URL (else GATEWAY_ENDPOINT)")
    g.add_argument("--model-id")
    g.add_argument("--audit-log", help="append every gateway call to this JSONL file")
    g.add_argument("--metric", choices=["lexical", "remote"])
    g.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtreason", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML config file (lowest-precedence layer above defaults)")
    parser.add_argument("-v", "--verbose", action="store_true")
    top = parser.add_subparsers(dest="group", metavar="COMMAND", parser_class=_Parser)
    top.required = True

    corpus = top.add_parser("corpus", help="parallel corpus tooling").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    corpus.required = True

    def corpus_cmd(name, fn, help):
        p = corpus.add_parser(name, help=help)
        p.add_argument("--format", choices=["jsonl", "tsv"], default="jsonl")
        p.set_defaults(func=fn)
        return p

    p = corpus_cmd("load", cmd_corpus_load, "validate a corpus and summarize it")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p = corpus_cmd("filter", cmd_corpus_filter, "keep pairs within a source-length band")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-tokens", type=int)
    p.add_argument("--max-tokens", type=int)
    p = corpus_cmd("sample", cmd_corpus_sample, "draw a fixed number of pairs per direction")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--per-direction", type=int)
    p.add_argument("--seed", type=int)
    p = corpus_cmd("split", cmd_corpus_split, "stratified train/validation split")
    p.add_argument("--input", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--val-out", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p = corpus_cmd("stats", cmd_corpus_stats, "source token-length histogram")
    p.add_argument("--input", required=True)
    p.add_argument("--edges", help="comma-separated bucket edges; 'inf' allowed")
    p = corpus_cmd("similarity", cmd_corpus_similarity, "unigram Jaccard similarity between two corpora")
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--lang", action="append", required=True)
    p.add_argument("--test-name", default="test")
    p.add_argument("--train-name", default="train")
    p = corpus_cmd("generate", cmd_corpus_generate, "write a placeholder corpus over the pivot directions")
    p.add_argument("--output", required=True)
    p.add_argument("--per-direction", type=int)
    p.add_argument("--extra-direction", action="append", metavar="SRC-TGT")
    p.add_argument("--seed", type=int)

    templates = top.add_parser("templates", help="reasoning templates").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    templates.required = True
    p = templates.add_parser("list", help="print the six templates")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_templates_list)

    synth = top.add_parser("synth", help="reasoning-trace synthesis").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    synth.required = True
    p = synth.add_parser("generate", help="extract concepts, choose a template and produce step 0 per pair")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "tsv"], default="jsonl")
    p.add_argument("--out", required=True)
    _gateway_flags(p)
    p.set_defaults(func=cmd_synth_generate)
    p = synth.add_parser("refine", help="run critic refinement on running chains")
    p.add_argument("--chains", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit-out")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-gain", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--rotate-templates", action="store_true", default=None)
    _gateway_flags(p)
    p.set_defaults(func=cmd_synth_refine)
    p = synth.add_parser("accept", help="keep each chain's best step or reject it")
    p.add_argument("--chains", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejections-out")
    p.add_argument("--floor", type=float)
    p.set_defaults(func=cmd_synth_accept)

    sft = top.add_parser("sft", help="dataset export").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    sft.required = True
    p = sft.add_parser("export", help="write SFT JSONL (and optionally RL prompts)")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rl-out")
    p.set_defaults(func=cmd_sft_export)

    trn = top.add_parser("train", help="policy-gradient training").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    trn.required = True
    p = trn.add_parser("rl", help="train the toy policy on the lexicon environment")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--batch-prompts", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", choices=["group_mean", "batch_mean"])
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--kl-beta", type=float)
    p.add_argument("--theta-f-init", type=float)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--min-len", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--env-seed", type=int)
    p.add_argument("--report-csv")
    p.add_argument("--report-jsonl")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_train_rl)

    rw = top.add_parser("reward", help="reward scoring").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    rw.required = True
    p = rw.add_parser("score", help="score one model output file against a reference")
    p.add_argument("--text", required=True, help="file holding the raw model output")
    p.add_argument("--ref")
    p.add_argument("--ref-file")
    p.add_argument("--source")
    p.add_argument("--lang", default="en")
    p.add_argument("--format-weight", type=float)
    p.add_argument("--metric", choices=["lexical", "remote"])
    p.set_defaults(func=cmd_reward_score)

    ev = top.add_parser("eval", help="evaluation aggregation").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    ev.required = True
    p = ev.add_parser("aggregate", help="per-direction means from a scores JSONL")
    p.add_argument("--scores", required=True)
    p.add_argument("--grouping", choices=["en_zh_centric", "flat"], default="en_zh_centric")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_aggregate)

    rep = top.add_parser("report", help="report rendering").add_subparsers(dest="cmd", metavar="ACTION", parser_class=_Parser)
    rep.required = True
    p = rep.add_parser("emit", help="render a table as markdown or CSV")
    p.add_argument("--table")
    p.add_argument("--scores")
    p.add_argument("--grouping", choices=["en_zh_centric", "flat"], default="en_zh_centric")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report_emit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.file_config = cfg.load_file(args.config)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
