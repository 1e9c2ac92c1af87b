"""
🛡️ ProvGuard CLI
train / detect / evaluate / attack サブコマンド

Author: システンスカフェ テックチーム
Date: 2026-10-18
"""

from typing import Any, Dict, List, Optional, Sequence
from pathlib import Path
import argparse
import asyncio
import logging
import sys

import pandas as pd

from app.models.confusion import ConfusionCounts
from app.models.detector_config import DetectorConfig, load_config
from app.models.errors import ProvGuardError
from app.models.provenance_graph import LabeledGraph, ProvenanceGraph
from app.services.alert_tracer import alert_tracer
from app.services.evaluation_harness import (
    evaluation_harness, iter_folds, load_canonical, load_ground_truth, load_streamspot, metrics,
    split_train_test, subsample_per_scene, write_summary, write_table,
)
from app.services.evasion_attack import AttackKind, evasion_engine
from app.services.graph_store import GraphStore
from app.services.multi_model import multi_model_engine
from app.services.streaming_detector import StreamingDetector
from app.utils.logging_setup import configure_logging
from app.utils.model_io import load_ensemble, save_ensemble


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """終了コード 2 で終わる利用者側の誤り"""


# ===== 引数 =====

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """DetectorConfig の各フィールドをフラグとして公開する (値の検証は pydantic 側)"""
    group = parser.add_argument_group("detector config")
    for name, info in DetectorConfig.model_fields.items():
        options = [f"--{name.replace('_', '-')}"]
        if info.alias and info.alias != name:
            options.append(f"--{info.alias}")
        group.add_argument(*options, dest=f"cfg_{name}", default=None, metavar="VALUE",
                           help=f"default: {info.default if info.default_factory is None else '[]'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE config file")
    common.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING, ...")
    _add_config_flags(common)

    parser = argparse.ArgumentParser(prog="provguard", description="Provenance-graph intrusion detection")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="train an ensemble on benign graphs")
    train.add_argument("inputs", nargs="+", help="benign edge streams")
    train.add_argument("--format", choices=["canonical", "streamspot"], default="canonical")
    train.add_argument("--model", required=True, help="output model file")
    train.add_argument("--report", help="training report JSON (default: <model>.report.json)")

    detect = commands.add_parser("detect", parents=[common], help="stream edges through a trained ensemble")
    detect.add_argument("stream", nargs="?", default="-", help="edge stream ('-' for stdin)")
    detect.add_argument("--model", required=True)
    detect.add_argument("--out", default="provguard-out", help="directory for alerts.log and traces/")
    detect.add_argument("--store", help="persistent store directory (default: in memory)")
    detect.add_argument("--pipeline", action="store_true", help="two-stage async ingest/detect pipeline")

    evaluate = commands.add_parser("evaluate", parents=[common], help="graph-level or node-level evaluation")
    evaluate.add_argument("dataset", help="StreamSpot TSV (graph mode) or edge stream (node mode)")
    evaluate.add_argument("--mode", choices=["graph", "node"], default="graph")
    evaluate.add_argument("--strategy", choices=["streamspot", "kfold"], default="streamspot")
    evaluate.add_argument("--fold", type=int, help="run only this fold (kfold default: every fold)")
    evaluate.add_argument("--folds", type=int, default=5, help="number of folds for kfold")
    evaluate.add_argument("--per-scene", type=int, help="subsample benign graphs per scene")
    evaluate.add_argument("--attack-scenes", default="3", help="comma-separated attack scene ids")
    evaluate.add_argument("--model", help="trained model (required in node mode)")
    evaluate.add_argument("--ground-truth", help="anomalous node ids, one per line (node mode)")
    evaluate.add_argument("--strict-nodes", action="store_true", help="disable 2-hop credit in node mode")
    evaluate.add_argument("--out", default="provguard-eval")

    attack = commands.add_parser("attack", parents=[common], help="evasion sweep over delta_a")
    attack.add_argument("inputs", nargs="+", help="test edge streams containing the attack")
    attack.add_argument("--model", required=True)
    attack.add_argument("--ground-truth", required=True)
    attack.add_argument("--kind", action="append", choices=[k.value for k in AttackKind],
                        help="repeatable; default: model")
    attack.add_argument("--deltas", default="0,0.1,0.2", help="comma-separated delta_a values")
    attack.add_argument("--training", nargs="*", default=[], help="benign graphs for the train-data attack")
    attack.add_argument("--out", default="provguard-attack.csv")
    return parser


def config_from_args(args: argparse.Namespace) -> DetectorConfig:
    flags = {key[len("cfg_"):]: value for key, value in vars(args).items()
             if key.startswith("cfg_") and value is not None}
    return load_config(flags, args.config)


def _require_paths(*paths: Optional[str]) -> None:
    for path in paths:
        if path is not None and path != "-" and not Path(path).exists():
            raise UsageError(f"path not found: {path}")


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


# ===== サブコマンド =====

def cmd_train(args: argparse.Namespace, config: DetectorConfig) -> int:
    _require_paths(*args.inputs)
    graphs: List[ProvenanceGraph] = []
    for path in args.inputs:
        if args.format == "streamspot":
            graphs.extend(g.graph for g in load_streamspot(path) if not g.is_attack)
        else:
            graphs.append(load_canonical(path))

    ensemble, report = multi_model_engine.train_on_graph_sequence(graphs, config)
    save_ensemble(ensemble, args.model)
    report_path = Path(args.report or f"{args.model}.report.json")
    report_path.write_text(report.to_json(), encoding="utf-8")
    logger.info("wrote model %s (cnt=%d) and report %s", args.model, ensemble.cnt, report_path)
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, config: DetectorConfig) -> int:
    _require_paths(args.model, args.stream)
    ensemble = load_ensemble(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = GraphStore.open(args.store, config) if args.store else GraphStore.in_memory(config)

    with open(out / "alerts.log", "w", encoding="utf-8") as alert_log, store:
        def on_confirm(record) -> None:
            alert_log.write(record.to_line() + "\n")
            alert_log.flush()

        detector = StreamingDetector(ensemble, config, store, on_confirm=on_confirm)
        stream = sys.stdin if args.stream == "-" else open(args.stream, encoding="utf-8")
        try:
            if args.pipeline:
                summary = asyncio.run(detector.run_async(stream))
            else:
                summary = detector.run(stream)
        finally:
            if stream is not sys.stdin:
                stream.close()

        flagged = set(summary.confirmed_nodes)
        for node_id in summary.confirmed_nodes:
            traced = alert_tracer.trace(store, node_id, flagged)
            alert_tracer.write_trace(traced, str(out / "traces"))

    write_summary(summary.to_dict(), str(out / "summary.json"))
    print(summary.summary_line())
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: DetectorConfig) -> int:
    if args.mode == "node":
        if not args.ground_truth:
            raise UsageError("node-level mode requires --ground-truth")
        if not args.model:
            raise UsageError("node-level mode requires --model")
        _require_paths(args.dataset, args.ground_truth, args.model)
        return _evaluate_nodes(args, config)

    _require_paths(args.dataset)
    if args.fold is not None and not 0 <= args.fold < args.folds:
        raise UsageError(f"--fold must be in [0, {args.folds})")
    scenes = [int(v) for v in _floats(args.attack_scenes)]
    graphs = load_streamspot(args.dataset, attack_scenes=scenes)
    out = Path(args.out)

    runs: List[Dict[str, Any]] = []
    for repetition in range(config.repetitions):
        seed = config.seed + repetition
        pool = subsample_per_scene(graphs, args.per_scene, seed) if args.per_scene else graphs
        if args.strategy == "kfold" and args.fold is None:
            splits = list(enumerate(iter_folds(pool, args.folds, seed)))
        else:
            fold = args.fold or 0
            splits = [(fold, split_train_test(pool, args.strategy, seed=seed, fold=fold, n_folds=args.folds))]

        for fold, (train, test) in splits:
            verdicts, counts = evaluation_harness.run_graph_level_eval(train, test, config.evolve(seed=seed))
            suffix = f"{repetition}-{fold}" if args.strategy == "kfold" else f"{repetition}"
            write_table(verdicts, str(out / f"verdicts-{suffix}.csv"))
            runs.append({"repetition": repetition, "fold": fold, "seed": seed, **counts.to_dict(), **metrics(counts)})
            logger.info("repetition %d fold %d: %s", repetition, fold, counts.to_dict())

    table = pd.DataFrame(runs)
    write_table(table, str(out / "metrics.csv"))
    mean_counts = _mean_counts(runs)
    write_summary({"runs": len(runs), "folds": sorted({r["fold"] for r in runs}),
                   "mean_counts": mean_counts.to_dict(), "mean_metrics": metrics(mean_counts)},
                  str(out / "summary.json"))
    return EXIT_OK


def _mean_counts(runs: Sequence[Dict[str, Any]]) -> ConfusionCounts:
    return ConfusionCounts.mean([ConfusionCounts(r["TP"], r["TN"], r["FP"], r["FN"]) for r in runs])


def _evaluate_nodes(args: argparse.Namespace, config: DetectorConfig) -> int:
    ensemble = load_ensemble(args.model)
    graph = load_canonical(args.dataset)
    truth = load_ground_truth(args.ground_truth)
    counts, flagged = evaluation_harness.run_node_level_eval(
        ensemble, graph, truth, config, hop_credit=not args.strict_nodes)
    out = Path(args.out)
    write_table(pd.DataFrame([{**counts.to_dict(), **metrics(counts)}]), str(out / "metrics.csv"))
    write_summary({"flagged": sorted(flagged), **counts.to_dict()}, str(out / "summary.json"))
    return EXIT_OK


def cmd_attack(args: argparse.Namespace, config: DetectorConfig) -> int:
    _require_paths(args.model, args.ground_truth, *args.inputs, *args.training)
    kinds = [AttackKind(k) for k in (args.kind or [AttackKind.MODEL.value])]
    if AttackKind.TRAINING_DATA in kinds and not args.training:
        raise UsageError("the train-data attack requires --training graphs")

    ensemble = load_ensemble(args.model)
    truth = load_ground_truth(args.ground_truth)
    tests = []
    for path in args.inputs:
        graph = load_canonical(path)
        tests.append(LabeledGraph(graph, is_attack=True, anomalous_nodes={n for n in truth if graph.has_node(n)}))
    training = None
    if args.training:
        training = evasion_engine.training_samples([load_canonical(p) for p in args.training], ensemble.maps)

    table = evasion_engine.evaluate_evasion(ensemble, tests, _floats(args.deltas), kinds, training, config)
    write_table(table, args.out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ValueError:
        parser.error(f"unknown log level {args.log_level!r}")
    try:
        _require_paths(args.config)
        config = config_from_args(args)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        print(f"provguard: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ProvGuardError as e:
        print(f"provguard: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
