"""Command-line entry points.

Subcommands: stats, train, ensemble, predict, eval, gradcheck.  Every
artifact-producing run writes a manifest.json recording the subcommand,
the effective configuration, the seeds, and a sha256 digest of each
input file, so any output directory can be reproduced from its manifest
and the original data.  Inputs are only ever read.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import DeterminismError, Tensor, grad_check
from .corpus import BioTag, CorpusError, corpus_stats, parse_corpus, to_bio
from .crf import CrfParams, crf_nll
from .evaluation import (
    ConfusionMatrix,
    EvaluationError,
    PredictionRecord,
    accuracy,
    build_run_report,
    confusion_csv,
    read_predictions,
    relative_confusion,
    stats_report,
    write_predictions,
)
from .layers import bilstm, linear_rows
from .models import ModelError, ModelParams, negation_loss, negation_tag, sentiment_loss
from .training import (
    Checkpoint,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    majority_vote,
    predict_corpus,
    run_ensemble,
    save_checkpoint,
    train_bow,
    train_mtl,
    train_stl,
)

_USER_ERRORS = (
    CorpusError,
    TrainingError,
    EvaluationError,
    ModelError,
    ad.AutodiffError,
    ValueError,
    OSError,
)


# ---------------------------------------------------------------------------
# Shared plumbing


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ValueError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value: object = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings need no quoting
    return key, value


def _effective_config(args) -> TrainConfig:
    """Config file values, then CLI flags, then --set overrides."""
    obj: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        obj.update(loaded)
    if getattr(args, "mode", None):
        obj["mode"] = args.mode
    if getattr(args, "seeds", None):
        obj["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    for item in getattr(args, "overrides", None) or []:
        key, value = _parse_override(item)
        obj[key] = value
    return TrainConfig.from_dict(obj)


def _read_split(path, name: str):
    docs = parse_corpus(path)
    if not docs:
        raise CorpusError(f"{name} corpus {path} is empty")
    return docs


def _write_manifest(out_dir: Path, subcommand: str, *, config=None, seeds=None,
                    inputs=None, options=None, outputs=None):
    manifest = {
        "tool": "negmtl",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seeds": list(seeds) if seeds is not None else None,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(Path(p))}
            for name, p in (inputs or {}).items()
        },
        "options": options or {},
        "outputs": outputs or [],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: Path, objs):
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args) -> int:
    splits = {}
    for name in ("train", "dev", "test"):
        path = getattr(args, name)
        if path:
            splits[name] = parse_corpus(path)
    if not splits:
        raise ValueError("stats needs at least one of --train/--dev/--test")
    table = stats_report(corpus_stats(splits))
    sys.stdout.write(table)
    if args.out:
        out = _out_dir(args)
        (out / "stats.txt").write_text(table, encoding="utf-8")
        _write_manifest(
            out, "stats",
            inputs={n: getattr(args, n) for n in splits},
            outputs=["stats.txt"],
        )
    return 0


# ---------------------------------------------------------------------------
# train


def _train_neural(config, train_docs, dev_docs, out: Path) -> list[str]:
    train_fn = train_stl if config.mode == "stl" else train_mtl
    result = train_fn(config, train_docs, dev_docs)
    save_checkpoint(result.checkpoint, out / "checkpoint.bin")
    _write_jsonl(out / "metrics.jsonl", result.history)
    model, vocab = result.checkpoint.to_model()
    preds = predict_corpus(model, vocab, dev_docs)
    (out / "preds").mkdir(exist_ok=True)
    pred_name = f"preds/seed-{config.seed}.jsonl"
    write_predictions(preds, out / pred_name)
    report = {
        "mode": config.mode,
        "seed": config.seed,
        "best_epoch": result.best_epoch,
        "best_dev_accuracy": result.best_dev_accuracy,
        "epochs_run": result.epochs_run,
        "dev_accuracy": accuracy([r.gold for r in preds], [r.pred for r in preds]),
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"{config.mode} seed {config.seed}: best dev accuracy "
        f"{result.best_dev_accuracy:.4f} at epoch {result.best_epoch} "
        f"({result.epochs_run} epochs run)"
    )
    return ["checkpoint.bin", "metrics.jsonl", pred_name, "report.json"]


def _train_bow(config, train_docs, dev_docs, out: Path) -> list[str]:
    result = train_bow(config, train_docs, dev_docs)
    preds = [
        PredictionRecord(d.id, d.label, result.model.predict(d)) for d in dev_docs
    ]
    (out / "preds").mkdir(exist_ok=True)
    pred_name = f"preds/seed-{config.seed}.jsonl"
    write_predictions(preds, out / pred_name)
    metrics = {
        "chosen_c": result.chosen_c,
        "dev_accuracy": result.dev_accuracy,
        "dev_accuracy_by_c": {str(c): a for c, a in result.dev_accuracy_by_c.items()},
    }
    _write_jsonl(out / "metrics.jsonl", [metrics])
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump({"mode": "bow", **metrics}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"bow: chosen C = {result.chosen_c}, dev accuracy {result.dev_accuracy:.4f}")
    return ["metrics.jsonl", pred_name, "report.json"]


def cmd_train(args) -> int:
    config = _effective_config(args)
    train_docs = _read_split(args.train, "train")
    dev_docs = _read_split(args.dev, "dev")
    out = _out_dir(args)
    if config.mode == "bow":
        outputs = _train_bow(config, train_docs, dev_docs, out)
    else:
        outputs = _train_neural(config, train_docs, dev_docs, out)
    _write_manifest(
        out, "train",
        config=config.to_dict(),
        seeds=[config.seed],
        inputs={"train": args.train, "dev": args.dev},
        outputs=outputs,
    )
    return 0


# ---------------------------------------------------------------------------
# ensemble


def cmd_ensemble(args) -> int:
    config = _effective_config(args)
    train_docs = _read_split(args.train, "train")
    dev_docs = _read_split(args.dev, "dev")
    test_docs = _read_split(args.test, "test") if args.test else None
    out = _out_dir(args)
    (out / "preds").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)

    result = run_ensemble(config, train_docs, dev_docs, test_docs)

    outputs = []
    metrics = []
    for run in result.runs:
        name = f"preds/seed-{run.seed}.jsonl"
        write_predictions(run.dev_predictions, out / name)
        outputs.append(name)
        ckpt_name = f"checkpoints/seed-{run.seed}.bin"
        save_checkpoint(run.result.checkpoint, out / ckpt_name)
        outputs.append(ckpt_name)
        for rec in run.result.history:
            metrics.append({"seed": run.seed, **rec})
        if run.test_predictions is not None:
            t_name = f"preds/test-seed-{run.seed}.jsonl"
            write_predictions(run.test_predictions, out / t_name)
            outputs.append(t_name)
    write_predictions(result.dev_vote, out / "preds/ensemble.jsonl")
    outputs.append("preds/ensemble.jsonl")
    if result.test_vote is not None:
        write_predictions(result.test_vote, out / "preds/test-ensemble.jsonl")
        outputs.append("preds/test-ensemble.jsonl")
    _write_jsonl(out / "metrics.jsonl", metrics)
    outputs.append("metrics.jsonl")

    report = build_run_report([r.dev_predictions for r in result.runs], result.dev_vote)
    report_obj = {"split": "dev", "seeds": list(config.seeds), **report.to_json_obj()}
    if result.test_vote is not None:
        test_report = build_run_report(
            [r.test_predictions for r in result.runs], result.test_vote
        )
        report_obj["test"] = test_report.to_json_obj()
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append("report.json")

    _write_manifest(
        out, "ensemble",
        config=config.to_dict(),
        seeds=config.seeds,
        inputs={
            name: path
            for name, path in [("train", args.train), ("dev", args.dev), ("test", args.test)]
            if path
        },
        outputs=outputs,
    )
    sys.stdout.write(report.format_text())
    return 0


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, vocab = ckpt.to_model()
    if args.tags and not model.has_negation_head:
        raise TrainingError(
            f"{args.checkpoint}: checkpoint has no negation head, cannot produce tags"
        )
    docs = _read_split(args.data, "data")
    out = _out_dir(args)

    records = predict_corpus(model, vocab, docs)
    write_predictions(records, out / "predictions.jsonl")
    outputs = ["predictions.jsonl"]

    if args.tags:
        tag_lines = []
        for doc in docs:
            sent_tags = [
                [str(t) for t in negation_tag(model, vocab.encode(s.tokens))]
                for s in doc.sentences
            ]
            tag_lines.append({"id": doc.id, "tags": sent_tags})
        _write_jsonl(out / "tags.jsonl", tag_lines)
        outputs.append("tags.jsonl")

    _write_manifest(
        out, "predict",
        config=ckpt.config,
        seeds=[ckpt.config.get("seed")],
        inputs={"checkpoint": args.checkpoint, "data": args.data},
        options={"tags": bool(args.tags)},
        outputs=outputs,
    )
    print(f"wrote {len(records)} predictions to {out / 'predictions.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _score(records: list[PredictionRecord], name: str) -> dict:
    if any(r.gold is None for r in records):
        raise EvaluationError(f"{name}: cannot score predictions without gold labels")
    acc = accuracy([r.gold for r in records], [r.pred for r in records])
    cm = ConfusionMatrix.from_records(records)
    return {"accuracy": acc, "confusion": [list(row) for row in cm.counts], "_cm": cm}


def cmd_eval(args) -> int:
    records = read_predictions(args.pred)
    scored = _score(records, args.pred)
    print(f"{args.pred}: accuracy {scored['accuracy']:.4f} over {len(records)} documents")
    print(f"confusion (gold x pred, negative/positive): {scored['confusion']}")
    report = {
        "pred": {"path": str(args.pred), "accuracy": scored["accuracy"],
                 "confusion": scored["confusion"]},
    }
    csv_text = None
    if args.compare:
        other = read_predictions(args.compare)
        other_scored = _score(other, args.compare)
        diff = relative_confusion(scored["_cm"], other_scored["_cm"])
        csv_text = confusion_csv(diff)
        print(f"{args.compare}: accuracy {other_scored['accuracy']:.4f}")
        print("relative confusion (pred minus compare):")
        sys.stdout.write(csv_text)
        report["compare"] = {
            "path": str(args.compare),
            "accuracy": other_scored["accuracy"],
            "confusion": other_scored["confusion"],
        }
        report["relative_confusion"] = [[int(v) for v in row] for row in diff]
    if args.out:
        out = _out_dir(args)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs = ["report.json"]
        if csv_text is not None:
            (out / "relative.csv").write_text(csv_text, encoding="utf-8")
            outputs.append("relative.csv")
        inputs = {"pred": args.pred}
        if args.compare:
            inputs["compare"] = args.compare
        _write_manifest(out, "eval", inputs=inputs, outputs=outputs)
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _gradcheck_cases(seed: int, inject_bug: bool):
    """Toy-sized gradient checks per component.

    The injected bug adds an untracked copy of a parameter sum to the
    loss: finite differences see it, reverse mode does not, so the
    harness must flag it.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams.init(7, 4, 3, rng, with_negation_head=True)
    named = params.named_parameters()
    doc_ids = [[1, 2, 3], [4, 5], [6, 2, 4]]
    tags = [int(BioTag.B_CUE), int(BioTag.B_SCOPE), int(BioTag.I_SCOPE)]

    def sabotage(loss: Tensor, leaf: Tensor) -> Tensor:
        if not inject_bug:
            return loss
        return ad.add(loss, Tensor(np.asarray(0.001 * float(leaf.data.sum()))))

    def layers_case():
        subset = {
            n: named[n]
            for n in ("embedding.weights", "sent_fwd.w", "sent_fwd.u", "sent_fwd.b",
                      "sent_bwd.w", "emission.w", "emission.b")
        }

        def f():
            emb = ad.rows(named["embedding.weights"], [1, 2, 3, 4])
            enc = bilstm(params.sent_fwd, params.sent_bwd, emb)
            scores = linear_rows(params.emission, enc)
            return sabotage(ad.sum_all(ad.tanh(scores)), named["embedding.weights"])

        return f, subset

    def crf_case():
        em = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        crf = CrfParams.init(5, rng)
        subset = {"emissions": em, "crf.transitions": crf.transitions}

        def f():
            return sabotage(crf_nll(crf, em, tags), em)

        return f, subset

    def sentiment_case():
        subset = {n: p for n, p in named.items() if not n.startswith(("emission", "crf"))}

        def f():
            return sabotage(
                sentiment_loss(params, doc_ids, 1, train=False),
                named["out.w"],
            )

        return f, subset

    def negation_case():
        subset = {
            n: p for n, p in named.items() if not n.startswith(("doc_", "out"))
        }

        def f():
            return sabotage(
                negation_loss(params, doc_ids[0], tags, train=False),
                named["crf.transitions"],
            )

        return f, subset

    return {
        "layers": layers_case,
        "crf": crf_case,
        "sentiment": sentiment_case,
        "negation": negation_case,
    }


def cmd_gradcheck(args) -> int:
    cases = _gradcheck_cases(args.seed, args.inject_bug)
    selected = list(cases) if args.component == "all" else [args.component]
    rows = []
    all_passed = True
    for name in selected:
        f, subset = cases[name]()
        try:
            report = grad_check(f, subset)
        except DeterminismError as e:
            rows.append({"component": name, "passed": False, "error": str(e)})
            all_passed = False
            continue
        rows.append(
            {
                "component": name,
                "passed": report.passed,
                "max_rel_err": report.max_rel_err,
                "entries_checked": report.n_checked,
                "worst": report.worst,
                "tolerance": report.tol,
            }
        )
        all_passed = all_passed and report.passed
    for row in rows:
        if "max_rel_err" in row:
            print(
                f"{row['component']:<10} {'PASS' if row['passed'] else 'FAIL'}  "
                f"max rel err {row['max_rel_err']:.3e} over "
                f"{row['entries_checked']} entries (tol {row['tolerance']:.0e})"
            )
        else:
            print(f"{row['component']:<10} FAIL  {row['error']}")
    print("gradient check:", "PASS" if all_passed else "FAIL")
    if args.out:
        out = _out_dir(args)
        with open(out / "gradcheck.json", "w", encoding="utf-8") as fh:
            json.dump({"passed": all_passed, "components": rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(
            out, "gradcheck",
            seeds=[args.seed],
            options={"component": args.component, "inject_bug": bool(args.inject_bug)},
            outputs=["gradcheck.json"],
        )
    return 0 if all_passed else 1


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negmtl",
        description="Joint negation-scope and document-sentiment models "
        "(BiLSTM-CRF multi-task learner, single-task and bag-of-words baselines).",
    )
    parser.add_argument("--version", action="version", version=f"negmtl {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_stats = sub.add_parser("stats", help="corpus statistics table")
    p_stats.add_argument("--train")
    p_stats.add_argument("--dev")
    p_stats.add_argument("--test")
    p_stats.add_argument("--out", help="optional directory for stats.txt + manifest")
    p_stats.set_defaults(fn=cmd_stats)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--mode", choices=("stl", "mtl", "bow"))
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument(
            "--set", dest="overrides", action="append", metavar="KEY=VALUE",
            help="override one config field (repeatable)",
        )

    p_train = sub.add_parser("train", help="train one model")
    add_config_flags(p_train)
    p_train.add_argument("--train", required=True)
    p_train.add_argument("--dev", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(fn=cmd_train)

    p_ens = sub.add_parser("ensemble", help="train per-seed models and majority-vote")
    add_config_flags(p_ens)
    p_ens.add_argument("--train", required=True)
    p_ens.add_argument("--dev", required=True)
    p_ens.add_argument("--test")
    p_ens.add_argument("--out", required=True)
    p_ens.set_defaults(fn=cmd_ensemble)

    p_pred = sub.add_parser("predict", help="predict from a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument(
        "--tags", action="store_true",
        help="also write per-token negation tags (needs a negation head)",
    )
    p_pred.set_defaults(fn=cmd_predict)

    p_eval = sub.add_parser("eval", help="score prediction files")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--compare", help="second prediction file for a relative confusion matrix")
    p_eval.add_argument("--out", help="optional directory for report.json")
    p_eval.set_defaults(fn=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument("--seed", type=int, default=1)
    p_gc.add_argument(
        "--component", default="all",
        choices=("all", "layers", "crf", "sentiment", "negation"),
    )
    p_gc.add_argument("--out", help="optional directory for gradcheck.json")
    p_gc.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    p_gc.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
