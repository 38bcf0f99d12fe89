"""Command-line entry points: data preparation, training, completion,
the MPC baseline, evaluation, and serving."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .archive import load_model, save_model
from .complete import BeamConfig, MpcIndex, beam_search
from .corpus import (
    LogSchema,
    SplitConfig,
    load_query_log,
    make_splits,
    normalize_query,
    read_split_dir,
    write_split_dir,
)
from .evaluate import (
    evaluate_model,
    evaluate_mpc,
    improvement_curve,
    mrr_by_length,
)
from .model import ModelConfig
from .synthetic import make_archetype_corpus
from .train import OnlineConfig, TrainConfig, spawn_user, train


def _cmd_synth(args) -> int:
    corpus = make_archetype_corpus(seed=args.seed)
    base = datetime(2026, 1, 1, tzinfo=timezone.utc)
    rows = []
    for part in (corpus.split.train, corpus.split.valid, corpus.split.test):
        rows.extend(part)
    for key, texts in corpus.tune_groups:
        t = 10_000_000.0
        for text in texts:
            t += 1.0
            rows.append(type(rows[0])(key, text, t))
    rows.sort(key=lambda r: r.timestamp)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("AnonID\tQuery\tQueryTime\n")
        for rec in rows:
            stamp = (base + timedelta(seconds=rec.timestamp)).strftime("%Y-%m-%d %H:%M:%S")
            fh.write(f"{rec.user_key}\t{rec.text}\t{stamp}\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_prepare(args) -> int:
    schema = LogSchema(has_header=not args.no_header,
                       time_format=None if args.time_epoch else "%Y-%m-%d %H:%M:%S")
    loaded = load_query_log(args.log, schema)
    print(f"loaded {len(loaded.records)} records ({loaded.skipped} skipped)", file=sys.stderr)
    cfg = SplitConfig(
        test_users=args.test_users,
        test_fraction=None if args.test_users is not None else args.test_fraction,
        valid_fraction=args.valid_fraction,
        seed=args.seed,
    )
    split = make_splits(loaded.records, cfg)
    write_split_dir(args.out, split)
    print(f"train={len(split.train)} valid={len(split.valid)} test={len(split.test)} -> {args.out}")
    return 0


def _load_configs(path: str) -> tuple[TrainConfig, ModelConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return TrainConfig(**doc.get("train", {})), ModelConfig(**doc.get("model", {}))


def _cmd_train(args) -> int:
    train_cfg, model_cfg = _load_configs(args.config)
    splits = read_split_dir(args.data)
    trained = train(
        train_cfg, model_cfg, splits,
        log_fn=lambda rec: print(json.dumps(rec), flush=True),
    )
    save_model(trained.params, trained.users, trained.vocab, trained.config, args.out)
    print(json.dumps({"saved": str(args.out), "vocab_size": len(trained.vocab),
                      "users": trained.users.k}), flush=True)
    return 0


def _cmd_complete(args) -> int:
    arc = load_model(args.model)
    if args.user == "new":
        user_id = spawn_user(arc.users)
    else:
        user_id = int(args.user)
    beam = BeamConfig(beam_width=args.beam_width, branching=args.branching, top_n=args.top)
    ranked = beam_search(
        arc.params, arc.config, arc.users, user_id,
        normalize_query(args.prefix), arc.vocab, beam,
    )
    for rank, (text, lp) in enumerate(ranked, start=1):
        print(f"{rank}\t{text}\t{lp:.4f}")
    return 0


def _cmd_mpc_build(args) -> int:
    split = read_split_dir(args.data)
    index = MpcIndex.build((rec.text for rec in split.train), min_count=args.min_count)
    index.save(args.out)
    print(f"indexed {len(index)} queries (min_count={args.min_count}) -> {args.out}")
    return 0


def _cmd_mpc_complete(args) -> int:
    index = MpcIndex.load(args.index)
    for rank, (query, count) in enumerate(index.complete(normalize_query(args.prefix), args.top), 1):
        print(f"{rank}\t{query}\t{count}")
    return 0


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_eval(args) -> int:
    split = read_split_dir(args.data)
    index = MpcIndex.build((rec.text for rec in split.train), min_count=args.min_count)
    out_path = Path(args.out)
    csv_dir = Path(args.csv_dir) if args.csv_dir else out_path.parent
    csv_dir.mkdir(parents=True, exist_ok=True)

    report: dict = {"seed": args.seed, "data": str(args.data)}
    if args.variant == "mpc":
        result, events = evaluate_mpc(index, split.test, seed=args.seed)
        report["variant"] = "mpc"
    else:
        arc = load_model(args.model)
        if args.variant not in ("auto", arc.config.variant):
            raise SystemExit(
                f"model was trained as {arc.config.variant!r}; pass --variant auto or {arc.config.variant!r}"
            )
        report["variant"] = arc.config.variant
        report["online_lr"] = args.online_lr
        beam = BeamConfig(beam_width=args.beam_width, branching=args.branching)
        train_keys = {rec.user_key for rec in split.train}
        result, events = evaluate_model(
            arc.params, arc.config, arc.vocab, arc.users, split.test, index,
            beam=beam, online=OnlineConfig(lr=args.online_lr), seed=args.seed,
            train_user_keys=train_keys,
        )
        base_result, base_events = evaluate_model(
            arc.params, arc.config, arc.vocab, arc.users, split.test, index,
            beam=beam, online=OnlineConfig(lr=0.0), seed=args.seed,
            train_user_keys=train_keys,
        )
        curve = improvement_curve(events, base_events, window=args.window)
        report["baseline_online_lr0"] = asdict(base_result)
        report["improvement_curve"] = {"x": curve.x, "y": curve.y, "window": curve.window}
        _write_csv(csv_dir / "improvement_curve.csv", ["queries_seen", "relative_mrr_gain"],
                   zip(curve.x, curve.y))

    report["result"] = asdict(result)
    report["trace_summary"] = {"events": len(events), "users": len({e.user_key for e in events})}
    if events:
        tables = mrr_by_length(events)
        report["mrr_by_prefix_len"] = {str(k): v[0] for k, v in tables.by_prefix_len.items()}
        report["mrr_by_query_len"] = {str(k): v[0] for k, v in tables.by_query_len.items()}
        _write_csv(csv_dir / "mrr_by_prefix_len.csv", ["prefix_len", "mrr", "n"],
                   [(k, v[0], v[1]) for k, v in tables.by_prefix_len.items()])
        _write_csv(csv_dir / "mrr_by_query_len.csv", ["query_len", "mrr", "n"],
                   [(k, v[0], v[1]) for k, v in tables.by_query_len.items()])
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps({"mrr_seen": result.mrr_seen, "mrr_unseen": result.mrr_unseen,
                      "mrr_all": result.mrr_all}))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import CompletionService, build_app

    arc = load_model(args.model)
    service = CompletionService(
        arc,
        beam=BeamConfig(beam_width=args.beam_width, branching=args.branching),
        online=OnlineConfig(lr=args.online_lr),
        defer_updates=args.defer_updates,
    )
    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(candidate) if candidate.is_dir() else None
    app = build_app(service, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-archetype query log")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prepare", help="split a query log into train/valid/test files")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-users", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--valid-fraction", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--time-epoch", action="store_true",
                   help="parse the time column as epoch seconds")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared data directory")
    p.add_argument("--config", required=True, help="JSON with 'model' and 'train' sections")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("complete", help="rank completions for a prefix")
    p.add_argument("--model", required=True)
    p.add_argument("--user", default="new", help="numeric user id, or 'new'")
    p.add_argument("--prefix", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--beam-width", type=int, default=100)
    p.add_argument("--branching", type=int, default=4)
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("mpc-build", help="build the most-popular-completion index")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=int, default=3)
    p.set_defaults(func=_cmd_mpc_build)

    p = sub.add_parser("mpc-complete", help="query a saved MPC index")
    p.add_argument("--index", required=True)
    p.add_argument("--prefix", required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=_cmd_mpc_complete)

    p = sub.add_parser("eval", help="run the MRR evaluation protocol")
    p.add_argument("--model", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default="auto",
                   help="'auto', a variant name to assert, or 'mpc' for the baseline")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--online-lr", type=float, default=1.0)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--beam-width", type=int, default=100)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--csv-dir", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="serve completions over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--defer-updates", type=int, default=1)
    p.add_argument("--online-lr", type=float, default=1.0)
    p.add_argument("--beam-width", type=int, default=100)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    if args.command == "eval" and args.variant != "mpc" and not args.model:
        parser.error("eval requires --model unless --variant mpc")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
