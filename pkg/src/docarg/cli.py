"""Command-line orchestration.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, load_run_config
from .corpus import corpus_stats, load_corpus
from .errors import DataError, NumericError, UsageError
from .metrics import (
    BUCKETINGS,
    bucket_report,
    load_predictions,
    render_table,
    score,
    write_predictions,
)
from .templates import export_sft, load_templates, missing_event_types, unknown_roles
from .training import (
    Trainer,
    check_corpus_against_templates,
    load_model,
    predict_instances,
    save_model,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def _write_or_print(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _ablation_overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": args.seed,
        "use_structure": args.use_structure,
        "use_co": args.use_co,
    }


def cmd_validate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    report: dict = {
        "documents": len(corpus),
        "events": sum(len(evs) for _, evs in corpus),
        "arguments": sum(len(ev.arguments) for _, evs in corpus for ev in evs),
    }
    if args.templates:
        templates = load_templates(args.templates)
        report["missing_event_types"] = missing_event_types(corpus, templates)
        report["unknown_roles"] = [list(t) for t in unknown_roles(corpus, templates)]
        if report["missing_event_types"] or report["unknown_roles"]:
            _write_or_print(report, args.out)
            raise DataError("corpus is not covered by the templates (see report)")
    _write_or_print(report, args.out)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    stats = corpus_stats(load_corpus(args.corpus))
    _write_or_print(stats.to_dict(), args.out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, overrides=_ablation_overrides(args))
    corpus = load_corpus(args.corpus)
    templates = load_templates(args.templates)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(corpus, templates, config)
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")

    log_path = out_dir / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as log:

        def on_step(step: int, loss: float) -> None:
            log.write(json.dumps({"step": step, "loss": loss}) + "\n")
            if config.eval_every and (step + 1) % config.eval_every == 0:
                preds = trainer.predict()
                f1 = score(corpus, preds).arg_c.f1
                log.write(json.dumps({"step": step, "train_arg_c_f1": f1}) + "\n")

        trainer.train(on_step=on_step)

    save_model(out_dir / "checkpoint.npz", trainer.model, templates, config)
    print(f"trained {config.steps} steps; final loss {trainer.losses[-1]:.6f}; checkpoint at {out_dir / 'checkpoint.npz'}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    loaded = load_model(args.checkpoint)
    corpus = load_corpus(args.corpus)
    check_corpus_against_templates(corpus, loaded.templates)
    from .corpus import corpus_instances

    encoded = [loaded.model.encode_instance(i, loaded.templates) for i in corpus_instances(corpus)]
    predictions = predict_instances(loaded.model, encoded, loaded.run_config)
    write_predictions(predictions, args.out)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    predictions = load_predictions(args.predictions)
    report = score(corpus, predictions)
    for bucketing in args.buckets or []:
        key = bucketing.replace("-", "_")
        for label, rep in bucket_report(corpus, predictions, key).items():
            report.buckets[f"{key}:{label}"] = rep
    print(render_table(report))
    _write_or_print(report.to_dict(), args.out)
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    templates = load_templates(args.templates)
    corpora = [load_corpus(path) for path in args.corpus]
    for corpus in corpora:
        check_corpus_against_templates(corpus, templates)
    count = export_sft(corpora, templates, cs_mode=args.cs_mode, out_path=args.out)
    print(f"wrote {count} SFT records to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="docarg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    p = add("validate", cmd_validate, help="check corpus invariants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--templates")
    p.add_argument("--out")

    p = add("stats", cmd_stats, help="corpus statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")

    p = add("train", cmd_train, help="train a model")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--use-structure", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--use-co", action=argparse.BooleanOptionalAction, default=None)

    p = add("predict", cmd_predict, help="decode argument spans")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, help="score predictions against gold")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--buckets", action="append", choices=["overlap", "distance", "same-sentence"])
    p.add_argument("--out")

    p = add("export-sft", cmd_export_sft, help="write instruction-tuning records")
    p.add_argument("--corpus", action="append", required=True, help="repeatable")
    p.add_argument("--templates", required=True)
    p.add_argument("--cs-mode", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--out", required=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
