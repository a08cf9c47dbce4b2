"""hopgate command line: train, gate, prune, evaluate and benchmark"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .babi import (
    Sample,
    build_vocab,
    dataset_summary,
    encode,
    load_task_files,
    max_sentence_length,
    split_validation,
    synth_kv,
)
from .checkpoint import Bundle, load_checkpoint, save_checkpoint
from .config import Settings, configure_logging
from .errors import ConfigurationError, HopgateError
from .evaluation import (
    benchmark,
    evaluate,
    load_report,
    write_cost_table,
    write_report_csv,
    write_report_json,
)
from .fetch import fetch_babi
from .gate import Gate, GateConfig, GateMode, IcnLabel, generate_labels, load_gate_config, load_preset
from .pool import QueryPool
from .pruning import FcOrigin, PruneParams, build_pruned_heads, grid_search_prune
from .state import AppMode, HyperParams, Tying, Variant
from .trainer import TrainConfig, calibrate_thresholds, first_hop_keys, train_baseline, train_fc_e, train_icn
from .utils import atomic_write_text, parse_task_list

logger = logging.getLogger(__name__)

ALL_TASKS = "1-20"


# Data


def _encode_all(raw, vocab, n_s, n_w) -> list[Sample]:
    return [encode(r, vocab, n_s, n_w) for r in raw]


def _tasks(args, bundle: Optional[Bundle] = None) -> list[int]:
    if args.tasks:
        return args.tasks
    if bundle is not None and bundle.tasks:
        return bundle.tasks
    return parse_task_list(ALL_TASKS)


def _babi_splits(data_dir: Path, tasks: list[int]):
    train_raw = load_task_files(data_dir, tasks, "train")
    test_raw = load_task_files(data_dir, tasks, "test")
    train_raw, valid_raw = split_validation(train_raw)
    return train_raw, valid_raw, test_raw


def _splits(args, bundle: Bundle) -> dict[str, list[Sample]]:
    """train / valid / test samples encoded with the checkpoint's vocabulary"""
    hyper = bundle.hyper
    if hyper.variant == Variant.KEY_VALUE:
        samples = synth_kv(args.seed, hyper.n_s, hyper.n_w, hyper.V).samples
        return {"train": samples, "valid": samples, "test": samples}
    train_raw, valid_raw, test_raw = _babi_splits(args.data, _tasks(args, bundle))
    return {
        name: _encode_all(raw, bundle.vocab, hyper.n_s, hyper.n_w)
        for name, raw in (("train", train_raw), ("valid", valid_raw), ("test", test_raw))
    }


def _train_config(args, **overrides) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        try:
            cfg = TrainConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigurationError(f"Cannot read training config {args.config}: {e}") from e
    update = {"seed": args.seed, **overrides}
    if getattr(args, "epochs", None) is not None:
        update["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        update["learning_rate"] = args.lr
    if getattr(args, "train_log", None):
        update["log_path"] = args.train_log
    return cfg.model_copy(update=update)


def _gate(args, bundle: Bundle) -> Gate:
    if bundle.weights.icn is None:
        raise ConfigurationError("Checkpoint has no trained ICN; run `hopgate icn` first")
    if getattr(args, "force_route", None) == "hard":
        config = GateConfig.all_hard()
    else:
        if args.gate_config:
            config = load_gate_config(args.gate_config)
        elif args.preset:
            config = load_preset(args.preset)
        else:
            config = GateConfig()
        if args.scenario:
            config = config.with_mode(GateMode(args.scenario))
    return Gate(icn=bundle.weights.icn, config=config)


def _heads(bundle: Bundle):
    return bundle.pruned.get(FcOrigin.W_E), bundle.pruned.get(FcOrigin.W)


# Commands


def cmd_fetch(args, settings: Settings) -> int:
    out = fetch_babi(args.url or settings.babi_url, args.out, settings.download_timeout)
    print(out)
    return 0


def cmd_summary(args, settings: Settings) -> int:
    raw = load_task_files(args.data, _tasks(args), args.split)
    vocab = build_vocab(raw)
    for record in dataset_summary(raw, vocab):
        print(record.model_dump_json())
    return 0


def cmd_train(args, settings: Settings) -> int:
    variant = Variant(args.variant)
    if variant == Variant.KEY_VALUE:
        kv = synth_kv(args.seed, args.kv_pairs, args.n_w or 3, args.vocab_size)
        hyper = HyperParams(
            d=args.d, V=kv.vocab.size, n_s=args.kv_pairs, n_w=kv.keys.shape[1], m=args.hops, l1=args.l1,
            variant=variant, app_mode=AppMode.PRE_EMBEDDED, tying=Tying(args.tying),
        )
        vocab, train, valid, tasks = kv.vocab, kv.samples, None, []
    else:
        tasks = _tasks(args)
        train_raw, valid_raw, test_raw = _babi_splits(args.data, tasks)
        vocab = build_vocab(train_raw + valid_raw + test_raw)
        n_w = args.n_w or max_sentence_length(train_raw + valid_raw + test_raw)
        hyper = HyperParams(
            d=args.d, V=vocab.size, n_s=args.n_s, n_w=n_w, m=args.hops, l1=args.l1,
            variant=variant, app_mode=AppMode(args.mode), tying=Tying(args.tying),
        )
        train = _encode_all(train_raw, vocab, hyper.n_s, hyper.n_w)
        valid = _encode_all(valid_raw, vocab, hyper.n_s, hyper.n_w)
    logger.info(f"Vocabulary {hyper.V} words, n_s={hyper.n_s}, n_w={hyper.n_w}")

    weights = train_baseline(train, hyper, _train_config(args), validation=valid)
    save_checkpoint(args.checkpoint, Bundle(
        hyper=hyper,
        vocab=vocab,
        weights=weights,
        train_labels=[s.answer_id for s in train],
        tasks=tasks,
    ))
    return 0


def cmd_fce(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    train = _splits(args, bundle)["train"]
    bundle.weights.W_E = train_fc_e(bundle.weights, bundle.hyper, train, _train_config(args))
    save_checkpoint(args.checkpoint, bundle)
    return 0


def _labels(args, bundle: Bundle, samples) -> list[IcnLabel]:
    if getattr(args, "labels", None):
        data = json.loads(Path(args.labels).read_text(encoding="utf-8"))
        return [IcnLabel.model_validate(x) for x in data]
    return generate_labels(bundle.weights, bundle.hyper, samples)


def cmd_label(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    labels = _labels(args, bundle, _splits(args, bundle)["train"])
    text = json.dumps([lab.model_dump(mode="json") for lab in labels])
    atomic_write_text(args.out, text)
    easy = sum(1 for lab in labels if lab.label.value == "Easy")
    print(f"{len(labels)} labels, {easy} Easy, written to {args.out}")
    return 0


def cmd_icn(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    hyper = bundle.hyper
    train = _splits(args, bundle)["train"]
    labels = _labels(args, bundle, train)
    if len(labels) != len(train):
        raise ConfigurationError(f"{len(labels)} labels for {len(train)} training samples")
    lr = args.lr if args.lr is not None else (0.001 if hyper.variant == Variant.KEY_VALUE else 0.01)
    features = first_hop_keys(bundle.weights, hyper, train)
    bundle.weights.icn = train_icn(features, labels, hyper.d, hyper.l1, _train_config(args, learning_rate=lr))
    save_checkpoint(args.checkpoint, bundle)
    return 0


def cmd_calibrate(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    if bundle.weights.icn is None:
        raise ConfigurationError("Checkpoint has no trained ICN; run `hopgate icn` first")
    fc_e, fc_h = _heads(bundle)
    config = calibrate_thresholds(
        bundle.weights, bundle.hyper, bundle.weights.icn, _splits(args, bundle)["valid"],
        GateMode(args.scenario or "pertask"), budget=args.budget, fc_e=fc_e, fc_h=fc_h,
    )
    atomic_write_text(args.out, config.model_dump_json(indent=2))
    print(f"Gate config written to {args.out}; flagged tasks: {config.flagged_tasks or 'none'}")
    return 0


def cmd_prune(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    params: Optional[PruneParams] = None
    if args.search:
        result = grid_search_prune(
            bundle.weights, bundle.hyper, _splits(args, bundle)["valid"], bundle.train_labels,
            thetas=(0.05, 0.1, 0.15, 0.2), n_ps=range(1, bundle.hyper.d + 1, max(1, bundle.hyper.d // 8)),
            budget=args.budget,
        )
        if result is None:
            raise ConfigurationError("No (theta_p, N_p) pair stays within the accuracy budget")
        params = PruneParams(theta_p=result.theta_p, n_p=result.n_p)
    elif args.theta_p is not None or args.n_p is not None:
        params = PruneParams(
            theta_p=args.theta_p if args.theta_p is not None else 0.1,
            n_p=args.n_p if args.n_p is not None else 13,
        )
    bundle.pruned = build_pruned_heads(bundle.weights.W, bundle.weights.W_E, bundle.train_labels, params)
    save_checkpoint(args.checkpoint, bundle)
    for origin, head in bundle.pruned.items():
        print(f"{origin.value}: {head.n_rows}/{head.vocab_size} rows kept, P_R={head.pruning_ratio:.3f}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    hyper = bundle.hyper
    if args.mode:
        hyper = hyper.model_copy(update={"app_mode": AppMode(args.mode)})
        hyper.check_supported()
    gate = _gate(args, bundle)
    fc_e, fc_h = _heads(bundle)
    samples = _splits(args, bundle)[args.split]
    scenario = "hard" if args.force_route == "hard" else gate.config.mode.value
    report = evaluate(
        bundle.weights, hyper, samples, gate,
        scenario=scenario, theta_zs=args.theta_zs, fc_e=fc_e, fc_h=fc_h,
        avoid_reembed=args.avoid_reembed, pool=QueryPool(workers=settings.workers), seed=args.seed,
    )
    out = Path(args.out)
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    write_cost_table(report, out / "cost_table.csv")
    p = report.pooled
    print(
        f"accuracy {p.accuracy_baseline:.4f} -> {p.accuracy_adaptive:.4f}, zeta_E={p.zeta_e:.3f}, "
        f"FLOPs/query {p.flops_baseline_mean:.0f} -> {p.flops_adaptive_mean:.0f} "
        f"(CR measured {p.cr_measured:.0f}, analytic {p.cr_analytic:.0f})"
    )
    return 0


def cmd_bench(args, settings: Settings) -> int:
    bundle = load_checkpoint(args.checkpoint)
    args.scenario = args.scenario or "global"
    gate = _gate(args, bundle)
    fc_e, fc_h = _heads(bundle)
    samples = _splits(args, bundle)[args.split]
    if args.limit:
        samples = samples[: args.limit]
    report = benchmark(
        bundle.weights, bundle.hyper, samples, gate,
        repeat=args.repeat, inflate_to=args.inflate_ns, theta_zs=args.theta_zs, fc_e=fc_e, fc_h=fc_h,
    )
    if args.out:
        atomic_write_text(Path(args.out), report.model_dump_json(indent=2))
    print(
        f"baseline {report.wall_ns_baseline / 1e6:.2f} ms, gated {report.wall_ns_adaptive / 1e6:.2f} ms, "
        f"ratio {report.ratio:.3f}, zeta_E={report.zeta_e:.3f}"
    )
    return 0


def cmd_report(args, settings: Settings) -> int:
    report = load_report(args.report)
    write_cost_table(report, args.out)
    for t in report.tasks:
        print(
            f"task {t.task_id}: acc {t.accuracy_baseline:.3f}/{t.accuracy_adaptive:.3f} "
            f"zeta_E {t.zeta_e:.2f} CR {t.cr_measured:.0f} (analytic {t.cr_analytic:.0f}, gap {t.gap_rel:.2%})"
        )
    return 0


COMMANDS = {
    "fetch": cmd_fetch,
    "summary": cmd_summary,
    "train": cmd_train,
    "fce": cmd_fce,
    "label": cmd_label,
    "icn": cmd_icn,
    "calibrate": cmd_calibrate,
    "prune": cmd_prune,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}


def _task_list(text: str) -> list[int]:
    try:
        return parse_task_list(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopgate", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides HOPGATE_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, default=settings.data_dir, help="bAbI en/ directory")
    common.add_argument(
        "--tasks", type=_task_list, help="e.g. 1,6,20 or 1-20; defaults to the checkpoint's tasks, else 1-20"
    )
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--checkpoint", type=Path, default=Path("hopgate.ckpt.json"))

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--config", type=Path, help="TrainConfig JSON")
    training.add_argument("--epochs", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--train-log", type=Path, help="JSON-lines training log")

    gating = argparse.ArgumentParser(add_help=False)
    gating.add_argument("--scenario", choices=[m.value for m in GateMode])
    gating.add_argument("--gate-config", type=Path)
    gating.add_argument("--preset", help="Shipped threshold preset, e.g. reference_pertask_babi")
    gating.add_argument("--theta-zs", "--zero-skip", dest="theta_zs", type=float, help="Zero-skipping threshold")
    gating.add_argument("--split", choices=["train", "valid", "test"], default="test")

    p = sub.add_parser("fetch", help="Download and unpack bAbI")
    p.add_argument("--url")
    p.add_argument("--out", type=Path, default=Path("data"))

    p = sub.add_parser("summary", parents=[common], help="Per-task dataset statistics")
    p.add_argument("--split", choices=["train", "test"], default="train")

    p = sub.add_parser("train", parents=[common, training], help="Train the baseline network")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.CONVENTIONAL.value)
    p.add_argument("--mode", choices=[m.value for m in AppMode], default=AppMode.PRE_EMBEDDED.value)
    p.add_argument("--tying", choices=[t.value for t in Tying], default=Tying.ADJACENT.value)
    p.add_argument("--d", type=int, default=40)
    p.add_argument("--n-s", type=int, default=50)
    p.add_argument("--n-w", type=int)
    p.add_argument("--hops", type=int)
    p.add_argument("--l1", type=int)
    p.add_argument("--kv-pairs", type=int, default=200, help="Key-value variant: synthetic memory size")
    p.add_argument("--vocab-size", type=int, default=500, help="Key-value variant: synthetic vocabulary")

    sub.add_parser("fce", parents=[common, training], help="Train the early-exit head FC_E")

    p = sub.add_parser("label", parents=[common], help="Write Easy/Hard labels for the training set")
    p.add_argument("--out", type=Path, default=Path("labels.json"))

    p = sub.add_parser("icn", parents=[common, training], help="Train the input classifier network")
    p.add_argument("--labels", type=Path, help="Labels from `hopgate label`; generated if omitted")

    p = sub.add_parser("calibrate", parents=[common], help="Pick confidence thresholds on validation data")
    p.add_argument("--scenario", choices=[m.value for m in GateMode])
    p.add_argument("--budget", type=float, default=0.01, help="Allowed accuracy loss per task")
    p.add_argument("--out", type=Path, default=Path("gate.json"))

    p = sub.add_parser("prune", parents=[common], help="Prune FC rows")
    p.add_argument("--theta-p", type=float)
    p.add_argument("--n-p", type=int)
    p.add_argument("--search", action="store_true", help="Grid-search theta_p and N_p on validation data")
    p.add_argument("--budget", type=float, default=0.005)

    p = sub.add_parser("eval", parents=[common, gating], help="Baseline vs gated evaluation report")
    p.add_argument("--mode", choices=[m.value for m in AppMode])
    p.add_argument("--force-route", choices=["hard"])
    p.add_argument("--avoid-reembed", action="store_true")
    p.add_argument("--out", type=Path, default=Path("reports"))

    p = sub.add_parser("bench", parents=[common, gating], help="Wall-clock medians, baseline vs gated")
    p.add_argument("--repeat", type=int, default=11)
    p.add_argument("--inflate-ns", type=int)
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("report", help="Cost table CSV from a report JSON")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("cost_table.csv"))
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    settings = Settings.from_env()
    args = build_parser(settings).parse_args(argv)
    configure_logging(args.log_level or settings.log_level)
    try:
        return COMMANDS[args.command](args, settings)
    except (HopgateError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
