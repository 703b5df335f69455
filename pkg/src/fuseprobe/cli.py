"""Command-line interface.

Subcommands cover the experiment lifecycle: ``synth`` (generate a
benchmark), ``validate`` (manifest checks), ``train``, ``eval``, ``sweep``
(train + eval a list of heads), ``export`` (fused features as CSV), and
``gradcheck`` (the gradient verification gate).

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 numerical
failure. Commands are deterministic given their config; the effective run
configuration is copied into the output directory. Command-line flags
override values from ``--config`` files.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .backend import BACKEND
from . import autodiff as ad
from .checkpoint import load_checkpoint
from .evaluator import evaluate, export_embeddings
from .heads import KINDS, ConfigError, FusionHeadConfig
from .store import StoreError, load_manifest, validate_manifest
from .synth import SynthConfig, SynthConfigError, bench_train_config, generate, order_bench_config, shift_bench_config
from .trainer import TrainConfig, train
from .verify import DEFAULT_TOL, gradient_check_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


class CliError(Exception):
    exit_code = EXIT_USAGE


class ValidationFailure(Exception):
    exit_code = EXIT_VALIDATION


class NumericalFailure(Exception):
    exit_code = EXIT_NUMERICAL


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _merged_head_config(args, doc):
    head_doc = dict(doc.get("head", {}))
    if args.head:
        head_doc["kind"] = args.head
    if args.model_dim:
        head_doc["model_dim"] = args.model_dim
    if getattr(args, "no_positions", False):
        head_doc["use_positions"] = False
    if args.head_seed is not None:
        head_doc["seed"] = args.head_seed
    if "kind" not in head_doc:
        raise CliError("no fusion head given (use --head or a config file)")
    if "model_dim" not in head_doc:
        raise CliError("no model_dim given (use --model-dim or a config file)")
    try:
        return FusionHeadConfig.from_dict(head_doc)
    except (TypeError, ConfigError) as exc:
        raise CliError(f"bad head config: {exc}") from exc


def _merged_train_config(args, doc):
    train_doc = dict(doc.get("train", {}))
    for flag, key in (
        ("epochs", "epochs"),
        ("lr", "lr0"),
        ("batch_size", "batch_size"),
        ("frames", "frames_per_clip"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train_doc[key] = value
    try:
        return TrainConfig.from_dict(train_doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad train config: {exc}") from exc


def _resolve_manifest(args, doc):
    path = args.manifest or doc.get("manifest")
    if not path:
        raise CliError("no manifest given (use --manifest or a config file)")
    try:
        return load_manifest(path), path
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"cannot load manifest {path}: {exc}") from exc


def _write_run_config(out_dir, doc):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_validate(args):
    manifest, path = _resolve_manifest(args, {})
    try:
        report = validate_manifest(manifest)
    except StoreError as exc:
        raise ValidationFailure(str(exc)) from exc
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args):
    if args.preset:
        if args.preset == "order":
            cfg = order_bench_config(seed=args.seed if args.seed is not None else 7)
        elif args.preset == "shift":
            cfg = shift_bench_config(seed=args.seed if args.seed is not None else 11)
        else:
            raise CliError(f"unknown preset {args.preset!r}")
    else:
        doc = _load_config_file(args.config)
        if not doc:
            raise CliError("synth needs --preset or --config")
        try:
            cfg = SynthConfig.from_dict(doc)
        except (TypeError, SynthConfigError) as exc:
            raise CliError(f"bad synth config: {exc}") from exc
    try:
        manifest, manifest_path = generate(cfg, args.out)
    except SynthConfigError as exc:
        raise CliError(str(exc)) from exc
    with open(os.path.join(args.out, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(manifest.records)} videos under {args.out}")
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def _train_once(manifest, head_cfg, train_cfg, trained_view, out_dir, quiet):
    try:
        return train(
            manifest, head_cfg, train_cfg, trained_view=trained_view,
            out_dir=out_dir, quiet=quiet,
        )
    except ad.NonFiniteError as exc:
        raise NumericalFailure(str(exc)) from exc
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc


def cmd_train(args):
    doc = _load_config_file(args.config)
    manifest, manifest_path = _resolve_manifest(args, doc)
    head_cfg = _merged_head_config(args, doc)
    train_cfg = _merged_train_config(args, doc)
    trained_view = args.trained_view or doc.get("trained_view")
    out_dir = args.out or doc.get("out") or "."
    _write_run_config(out_dir, {
        "manifest": manifest_path,
        "head": head_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "trained_view": trained_view,
        "out": out_dir,
    })
    result = _train_once(manifest, head_cfg, train_cfg, trained_view, out_dir, args.quiet)
    print(f"final checkpoint: {result.checkpoint_final}")
    print(f"best checkpoint:  {result.checkpoint_best}")
    print(f"training log:     {result.log_path}")
    return EXIT_OK


def cmd_eval(args):
    manifest, _ = _resolve_manifest(args, {})
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, StoreError) as exc:
        raise ValidationFailure(f"cannot load checkpoint: {exc}") from exc
    trained_view = args.trained_view or ckpt.trained_view
    os.makedirs(args.out, exist_ok=True)
    try:
        report = evaluate(
            ckpt.head, ckpt.probe, manifest, trained_view,
            num_clips=args.clips, frames_per_clip=args.frames or 16,
        )
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    json_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "report.csv")
    report.to_json(json_path)
    report.to_csv(csv_path)
    overall = report.overall
    print(f"overall: balanced={overall.balanced_acc:.4f} top1={overall.top1:.4f} top5={overall.top5:.4f}")
    for view, m in report.per_view.items():
        role = "trained" if view == trained_view else "novel"
        print(f"{view} ({role}): balanced={m.balanced_acc:.4f} top1={m.top1:.4f}")
    if report.cross_view:
        print(f"mean novel: balanced={report.cross_view['balanced_acc']:.4f} "
              f"top1={report.cross_view['top1']:.4f}")
    print(f"report: {json_path}")
    return EXIT_OK


def cmd_sweep(args):
    doc = _load_config_file(args.config)
    manifest, manifest_path = _resolve_manifest(args, doc)
    heads = args.heads.split(",") if args.heads else list(KINDS)
    for kind in heads:
        if kind not in KINDS:
            raise CliError(f"unknown fusion head {kind!r}")
    if args.model_dim is None and "head" not in doc:
        raise CliError("sweep needs --model-dim (or a config file with a head block)")
    train_cfg = _merged_train_config(args, doc)
    trained_view = args.trained_view or doc.get("trained_view")
    os.makedirs(args.out, exist_ok=True)
    _write_run_config(args.out, {
        "manifest": manifest_path,
        "heads": heads,
        "model_dim": args.model_dim,
        "train": train_cfg.to_dict(),
        "trained_view": trained_view,
        "out": args.out,
    })

    rows = []
    summary = []
    for kind in heads:
        head_doc = dict(doc.get("head", {}))
        head_doc["kind"] = kind
        if args.model_dim:
            head_doc["model_dim"] = args.model_dim
        if args.head_seed is not None:
            head_doc["seed"] = args.head_seed
        head_cfg = FusionHeadConfig.from_dict(head_doc)
        head_out = os.path.join(args.out, kind)
        result = _train_once(manifest, head_cfg, train_cfg, trained_view, head_out, quiet=True)
        ckpt = load_checkpoint(result.checkpoint_best)
        report = evaluate(
            ckpt.head, ckpt.probe, manifest, ckpt.trained_view,
            frames_per_clip=1 if manifest.is_clip_level else train_cfg.frames_per_clip,
        )
        for view, m in report.per_view.items():
            for metric, value in (
                ("balanced_acc", m.balanced_acc), ("top1", m.top1), ("top5", m.top5),
            ):
                rows.append((kind, view, metric, value))
        trained_bal = report.per_view[ckpt.trained_view].balanced_acc
        novel_bal = report.cross_view.get("balanced_acc") if report.cross_view else None
        summary.append((kind, trained_bal, novel_bal))
        novel_txt = f"{novel_bal:.4f}" if novel_bal is not None else "n/a"
        print(f"{kind:22s} trained_balanced={trained_bal:.4f} mean_novel_balanced={novel_txt}")

    table_path = os.path.join(args.out, "sweep.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("head,view,metric,value\n")
        for kind, view, metric, value in rows:
            fh.write(f"{kind},{view},{metric},{value:.6f}\n")
    summary_path = os.path.join(args.out, "sweep_summary.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("head,trained_balanced_acc,mean_novel_balanced_acc\n")
        for kind, trained_bal, novel_bal in summary:
            novel_txt = f"{novel_bal:.6f}" if novel_bal is not None else ""
            fh.write(f"{kind},{trained_bal:.6f},{novel_txt}\n")
    print(f"sweep table: {table_path}")
    return EXIT_OK


def cmd_export(args):
    manifest, _ = _resolve_manifest(args, {})
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, StoreError) as exc:
        raise ValidationFailure(f"cannot load checkpoint: {exc}") from exc
    try:
        rows = export_embeddings(
            ckpt.head, ckpt.probe, manifest, args.out,
            split=args.split, frames_per_clip=args.frames or 16,
        )
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    seeds = tuple(range(args.seeds))
    results = gradient_check_suite(seeds=seeds, tol=args.tol, progress=print)
    worst = max(results.values())
    print(f"worst over {len(results)} heads x {len(seeds)} seeds: {worst:.3e} (tol {args.tol:.1e})")
    if worst >= args.tol:
        raise NumericalFailure(f"gradient check failed: {worst:.3e} >= {args.tol:.1e}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="fuseprobe", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"fuseprobe {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest and its embedding files")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--preset", choices=["order", "shift"])
    p.add_argument("--config", help="SynthConfig JSON (alternative to --preset)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    def add_train_flags(p):
        p.add_argument("--manifest")
        p.add_argument("--config", help="run config JSON; flags override it")
        p.add_argument("--trained-view")
        p.add_argument("--model-dim", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--frames", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--head-seed", type=int, dest="head_seed")
        p.add_argument("--no-positions", action="store_true")

    p = sub.add_parser("train", help="train one fusion head + probe")
    add_train_flags(p)
    p.add_argument("--head", choices=KINDS)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--trained-view")
    p.add_argument("--clips", type=int, default=3)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="train + evaluate a list of heads")
    add_train_flags(p)
    p.add_argument("--heads", help="comma-separated head kinds (default: all 13)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export", help="dump fused features + predictions as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationFailure as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
