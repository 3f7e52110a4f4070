"""Command-line entry point: generate, train, evaluate, compare, sweep, size-sweep, ensemble."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import plotting
from .baselines import Bm25Params, BoostConfig
from .data import TASKS, DatasetSplit, SyntheticTaskSpec, fingerprint, load_dataset, write_synthetic
from .experiments import bm25_scores, fuse_with_bm25, report_for
from .manifest import (
    RunManifest,
    atomic_write_text,
    bm25_from_manifest,
    bm25_manifest,
    ensemble_from_manifest,
    ensemble_manifest,
    load_manifest,
    model_from_manifest,
    model_manifest,
    save_manifest,
)
from .metrics import MetricsReport, relative_deltas
from .models import ARCHITECTURES, ENCODERS, PRESETS, ModelConfig, build_model
from .text import load_embeddings
from .training import (
    TrainingConfig,
    evaluate_predictions,
    predict,
    prepare,
    random_search,
    split_overrides,
    train,
    training_size_sweep,
)

log = logging.getLogger("matchtensor")

METRIC_KEYS = ("loss", "ndcg1", "ndcg3", "ndcg10", "err", "auc")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(v) for v in text.split(",")]
    return text


def read_config(path: Optional[str], lists: bool = False) -> dict:
    """``key=value`` lines; ``#`` starts a comment. With ``lists`` values split on commas."""
    if not path:
        return {}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = [parse_value(v) for v in value.split(",")] if lists else parse_value(value)
    return out


def configs_for(arch: str, encoder: str, seed: int, overrides: dict) -> tuple[ModelConfig, TrainingConfig]:
    base = PRESETS.get(arch, ModelConfig(arch=arch))
    model_cfg = replace(base, arch=arch, encoder=encoder, seed=seed)
    return split_overrides(overrides, model_cfg, TrainingConfig(seed=seed))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_table(rows: Sequence[dict], path: Optional[Path] = None, stream=None) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    if stream is not None:
        stream.write(text)
    return text


def metrics_row(name: str, split: str, rep: MetricsReport) -> dict:
    return {"model": name, "split": split, **{k: getattr(rep, k) for k in METRIC_KEYS},
            "n_queries": rep.n_queries, "n_flagged": rep.n_flagged}


def summary(rep: MetricsReport) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rep.summary().items()}


def write_jsonl(path: Path, rows: Sequence[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, default=float) + "\n" for r in rows))


# ---------------------------------------------------------------------------
# Scoring any manifest
# ---------------------------------------------------------------------------


def manifest_scores(m: RunManifest, records: Sequence, data: DatasetSplit, base: Path = Path(".")) -> np.ndarray:
    if m.kind == "neural":
        model = model_from_manifest(m)
        return predict(model, prepare(records, model.vocab))
    if m.kind == "bm25":
        return bm25_scores(records, bm25_from_manifest(m))
    ens = ensemble_from_manifest(m)
    cols = []
    for name in ens.feature_names:
        src = Path(m.extra["sources"][name])
        src = src if src.is_absolute() else base / src
        cols.append(manifest_scores(load_manifest(src), records, data, src.parent))
    return ens.predict(np.column_stack(cols))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if not args.task:
        raise UsageError("generate requires --task")
    overrides = read_config(args.config)
    for k in ("queries", "grade_distribution", "query_length", "doc_length"):
        if k in overrides and isinstance(overrides[k], list):
            overrides[k] = tuple(overrides[k])
    spec = SyntheticTaskSpec(task=args.task, seed=args.seed, **overrides)
    data_path, emb_path = write_synthetic(spec, args.out)
    print(f"data\t{data_path}\nembeddings\t{emb_path}")
    return 0


def _load_inputs(args, need_embeddings: bool = True):
    if not args.data:
        raise UsageError(f"{args.command} requires --data")
    data = load_dataset(args.data)
    if need_embeddings and not args.embeddings:
        raise UsageError(f"{args.command} requires --embeddings")
    vt = load_embeddings(args.embeddings, seed=args.seed) if need_embeddings else (None, None)
    return data, vt[0], vt[1]


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.arch == "bm25":
        data, _, _ = _load_inputs(args, need_embeddings=False)
        params = Bm25Params(**read_config(args.config))
        metrics = {}
        for split in ("validation", "test"):
            recs = data.split(split)
            metrics[split] = summary(report_for(recs, bm25_scores(recs, params)))
        save_manifest(out / "model.manifest", bm25_manifest(params, fingerprint(args.data), metrics))
        write_table([{"model": "bm25", "split": s, **{k: metrics[s][k] for k in METRIC_KEYS}} for s in metrics],
                    out / "report.tsv", sys.stdout)
        return 0
    data, vocab, table = _load_inputs(args)
    model_cfg, train_cfg = configs_for(args.arch, args.encoder, args.seed, read_config(args.config))
    train_cfg = replace(train_cfg, keep_best=True)
    train_ex, val_ex, test_ex = (prepare(data.split(s), vocab) for s in ("train", "validation", "test"))
    model = build_model(model_cfg, vocab, table)
    res = train(model, train_ex, train_cfg, validation=val_ex)
    reports = {"validation": evaluate_predictions(val_ex, predict(model, val_ex), train_cfg.binary_targets),
               "test": evaluate_predictions(test_ex, predict(model, test_ex), train_cfg.binary_targets)}
    metrics = {s: summary(r) for s, r in reports.items()}
    metrics["best_epoch"] = res.best_epoch
    training = {k: getattr(train_cfg, k) for k in (f.name for f in fields(TrainingConfig))}
    save_manifest(out / "model.manifest", model_manifest(model, fingerprint(args.data), metrics, training))
    write_jsonl(out / "curve.jsonl", [{"run_id": 0, "config": model_cfg.to_dict(), **r} for r in res.curve])
    write_table([metrics_row(args.arch, s, r) for s, r in reports.items()], out / "report.tsv", sys.stdout)
    plotting.loss_curve(res.curve, out / "loss.png", title=f"{args.arch} / {args.encoder}")
    plotting.pr_curves({args.arch: reports["test"].pr}, out / "pr.png")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    if args.model:
        m = load_manifest(args.model)
        data = load_dataset(args.data) if args.data else None
        if data is None:
            raise UsageError("evaluate requires --data")
        name = Path(args.model).stem if m.kind != "neural" else m.config["arch"]
        recs = data.split(args.split)
        scores = manifest_scores(m, recs, data, Path(args.model).parent)
    else:
        # an untrained model built from --arch/--encoder/--seed
        if args.arch == "bm25":
            raise UsageError("evaluate without --model needs a neural --arch")
        data, vocab, table = _load_inputs(args)
        model_cfg, _ = configs_for(args.arch, args.encoder, args.seed, read_config(args.config))
        model = build_model(model_cfg, vocab, table)
        name, recs = f"{args.arch}-untrained", data.split(args.split)
        scores = predict(model, prepare(recs, vocab))
    ex_loss = float("nan")
    if np.all((scores > 0) & (scores < 1)):
        t = np.array([{0: 0.0, 1: 0.5, 2: 1.0}[int(r.grade)] for r in recs])
        ex_loss = float(np.mean(-(t * np.log(scores) + (1 - t) * np.log(1 - scores))))
    rep = report_for(recs, scores, ex_loss)
    write_table([metrics_row(name, args.split, rep)], out / "report.tsv", sys.stdout)
    write_jsonl(out / "metrics.jsonl", [{"run_id": 0, "config": {"model": name}, "epoch": None,
                                         "split": args.split, **{k: summary(rep)[k] for k in METRIC_KEYS}}])
    plotting.pr_curves({name: rep.pr}, out / "pr.png")
    return 0


def cmd_compare(args) -> int:
    if not args.baseline or not args.candidate:
        raise UsageError("compare requires --baseline and --candidate")
    keys = ("ndcg1", "ndcg3", "ndcg10", "err", "auc")
    base = load_manifest(args.baseline)
    rows, deltas = [], {}
    for path in args.candidate:
        cand = load_manifest(path)
        d = relative_deltas(base.metrics[args.split], cand.metrics[args.split], keys)
        name = Path(path).parent.name or Path(path).stem
        deltas[name] = d
        rows.append({"baseline": Path(args.baseline).parent.name or args.baseline, "candidate": name,
                     **{f"{k}_pct": v for k, v in d.items()}})
    out = Path(args.out) if args.out else None
    write_table(rows, out / "compare.tsv" if out else None, sys.stdout)
    if out:
        plotting.delta_bars(deltas, out / "compare.png", baseline=Path(args.baseline).parent.name or "baseline")
    return 0


def cmd_sweep(args) -> int:
    data, vocab, table = _load_inputs(args)
    space = read_config(args.config, lists=True)
    if not space:
        raise UsageError("sweep requires --config with a key=v1,v2,... search space")
    model_cfg, train_cfg = configs_for(args.arch, args.encoder, args.seed, {})
    train_ex, val_ex = prepare(data.split("train"), vocab), prepare(data.split("validation"), vocab)
    best: dict = {"loss": math.inf}

    def objective(cfg: dict, seed: int) -> dict:
        m, t = split_overrides(cfg, model_cfg, train_cfg)
        m, t = replace(m, seed=seed), replace(t, seed=seed, keep_best=True)
        res = train(build_model(m, vocab, table), train_ex, t, validation=val_ex)
        rep = evaluate_predictions(val_ex, predict(res.model, val_ex), t.binary_targets)
        row = {"epoch": res.best_epoch, **{k: getattr(rep, k) for k in METRIC_KEYS}}
        if rep.loss < best["loss"]:
            best.update(loss=rep.loss, model=res.model, row=row)
        return row

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    winner, trials = random_search(space, args.runs, objective, seed=args.seed, log_path=out / "trials.jsonl")
    save_manifest(out / "best.manifest", model_manifest(best["model"], fingerprint(args.data),
                                                        {"validation": best["row"]}))
    write_table([{"run_id": t.run_id, "loss": t.loss, "auc": t.auc, "epoch": t.epoch,
                  "config": json.dumps(t.config, sort_keys=True)} for t in trials], out / "trials.tsv", sys.stdout)
    print(f"best\t{winner.run_id}\t{json.dumps(winner.config, sort_keys=True)}")
    return 0


def cmd_size_sweep(args) -> int:
    data, vocab, table = _load_inputs(args)
    fractions = [float(f) for f in args.fractions.split(",")]
    overrides = read_config(args.config)
    train_ex, val_ex, test_ex = (prepare(data.split(s), vocab) for s in ("train", "validation", "test"))
    out = Path(args.out)
    curves, rows = {}, []
    for arch in args.arch.split(","):
        model_cfg, train_cfg = configs_for(arch, args.encoder, args.seed, overrides)
        res = training_size_sweep(model_cfg, replace(train_cfg, keep_best=True), vocab, table, train_ex, test_ex,
                                  fractions, validation=val_ex)
        curves[arch] = res
        rows += [{"arch": arch, **{k: v for k, v in r.items() if k != "model"}} for r in res]
    write_table(rows, out / "size_sweep.tsv", sys.stdout)
    plotting.size_sweep(curves, out / "size_sweep.png")
    return 0


def cmd_ensemble(args) -> int:
    if not args.model or not args.baseline:
        raise UsageError("ensemble requires --model and --baseline manifests")
    data = load_dataset(args.data) if args.data else None
    if data is None:
        raise UsageError("ensemble requires --data")
    out = Path(args.out)
    m, b = load_manifest(args.model), load_manifest(args.baseline)
    if m.kind != "neural" or b.kind != "bm25":
        raise UsageError("--model must be a neural manifest and --baseline a bm25 manifest")
    val, test = data.split("validation"), data.split("test")
    name = m.config["arch"]
    score = {s: manifest_scores(m, data.split(s), data) for s in ("validation", "test")}
    bm = {s: manifest_scores(b, data.split(s), data) for s in ("validation", "test")}
    res = fuse_with_bm25(name, val, score["validation"], bm["validation"], test, score["test"], bm["test"],
                         BoostConfig(seed=args.seed))
    sources = {name: str(Path(args.model).resolve()), "bm25": str(Path(args.baseline).resolve())}
    metrics = {"test": summary(res.fused), "alone": summary(res.alone), "auc_gain": res.auc_gain}
    save_manifest(out / "ensemble.manifest", ensemble_manifest(res.ensemble, sources, fingerprint(args.data), metrics))
    write_table([metrics_row(name, "test", res.alone), metrics_row(f"{name}+bm25", "test", res.fused)],
                out / "report.tsv", sys.stdout)
    plotting.pr_curves({name: res.alone.pr, f"{name}+bm25": res.fused.pr}, out / "pr.png")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "compare": cmd_compare,
            "sweep": cmd_sweep, "size-sweep": cmd_size_sweep, "ensemble": cmd_ensemble}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matchtensor", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--data")
        s.add_argument("--embeddings")
        arch_choices = ARCHITECTURES + ("bm25",)
        if name == "size-sweep":
            s.add_argument("--arch", default="match_tensor,ssm", type=_arch_list)
        else:
            s.add_argument("--arch", default="match_tensor", choices=arch_choices)
        s.add_argument("--encoder", default="bilstm", choices=ENCODERS)
        s.add_argument("--config", help="key=value file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", required=name not in ("compare",))
        s.add_argument("--split", default="test", choices=("train", "validation", "test"))
        if name == "generate":
            s.add_argument("--task", choices=TASKS, required=True)
        if name == "size-sweep":
            s.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
        if name == "sweep":
            s.add_argument("--runs", type=int, default=10)
        if name in ("evaluate", "ensemble"):
            s.add_argument("--model")
        if name in ("compare", "ensemble"):
            s.add_argument("--baseline", required=name == "compare")
        if name == "compare":
            s.add_argument("--candidate", nargs="+", required=True)
    return p


def _arch_list(text: str) -> str:
    for a in text.split(","):
        if a not in ARCHITECTURES:
            raise argparse.ArgumentTypeError(f"unknown architecture {a!r}")
    return text


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"matchtensor {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"matchtensor {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
