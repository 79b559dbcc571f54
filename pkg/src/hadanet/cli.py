"""Command-line front-end.

Subcommands: ``bench`` (channel-mixer timings, JSON or CSV),
``check-grad`` (finite-difference verification), ``transform`` (inspect a
transform or print its matrix), ``train`` and ``eval`` (IDX datasets,
checkpoints, JSON-lines history).

Exit codes: 0 success, 1 assertion/oracle failure, 2 usage error,
3 I/O error. Failures print a single ``error[kind]: message`` line to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchReport, OracleMismatchError, bench_channel_mixers, bench_sweep
from .gradcheck import CHECK_TARGETS, run_check
from .idx import IdxError, load_idx
from .thresholding import Variant
from .training import (
    CheckpointError,
    Model,
    TrainConfig,
    build_toy_conv,
    build_toy_fwht,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)
from .wht import Ordering, Scale, TransformPlan, fwht, hadamard_matrix, walsh_matrix

EXIT_OK = 0
EXIT_ORACLE = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


def _parse_values(text: str) -> np.ndarray:
    if text.startswith("@"):
        try:
            raw = Path(text[1:]).read_text(encoding="utf-8")
        except OSError as exc:
            raise exc
        text = raw
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return np.asarray([float(p) for p in parts], dtype=np.float32)
    except ValueError as exc:
        raise UsageError(f"could not parse vector values: {exc}") from exc


def _cmd_transform(args: argparse.Namespace) -> int:
    ordering = Ordering(args.ordering)
    scale = Scale(args.scale)
    try:
        plan = TransformPlan(args.size, ordering, scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    k = plan.k
    if args.matrix:
        mat = hadamard_matrix(k) if ordering is Ordering.NATURAL else walsh_matrix(k)
        for row in mat:
            print(" ".join(f"{v:d}" for v in row))
        return EXIT_OK
    if args.values is None:
        raise UsageError("provide a vector (e.g. 1,2,3,4) or use --matrix")
    vec = _parse_values(args.values)
    if vec.shape[0] != args.size:
        raise UsageError(f"expected {args.size} values, got {vec.shape[0]}")
    out = fwht(vec.reshape(1, 1, 1, -1), plan).ravel()
    print(",".join(f"{v:g}" for v in out))
    return EXIT_OK


def _reports_to_csv(reports: list[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["case", "n", "h", "w", "c", "reps", "warmup", "median_s", "mean_s",
         "stddev_s", "times_s", "machine"]
    )
    for r in reports:
        writer.writerow(
            [r.case, *r.shape, r.reps, r.warmup, f"{r.median:.6g}", f"{r.mean:.6g}",
             f"{r.stddev:.6g}", " ".join(f"{t:.6g}" for t in r.times), r.machine]
        )
    return buf.getvalue()


def _cmd_bench(args: argparse.Namespace) -> int:
    if args.sweep:
        try:
            channels = [int(c) for c in args.sweep.replace(",", " ").split()]
        except ValueError as exc:
            raise UsageError(f"bad --sweep list: {exc}") from exc
        sweep = bench_sweep(
            channels, args.batch, args.height, args.width, args.reps, args.warmup,
            args.seed,
        )
        reports = [r for c in sorted(sweep) for r in sweep[c]]
    else:
        reports = bench_channel_mixers(
            args.batch, args.height, args.width, args.channels, args.reps,
            args.warmup, args.seed,
        )
    if args.format == "csv":
        payload = _reports_to_csv(reports)
    else:
        payload = json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def _cmd_check_grad(args: argparse.Namespace) -> int:
    targets = sorted(CHECK_TARGETS) if args.target == "all" else [args.target]
    failed = False
    for target in targets:
        result = run_check(target, seed=args.seed, tol=args.tol)
        for g in result.groups:
            status = "PASS" if g.ok else "FAIL"
            print(
                f"{result.target:13s} {g.name:22s} max_abs={g.max_abs:.3e} "
                f"max_rel={g.max_rel:.3e} tol={g.tol:.0e} {status}"
            )
        failed |= not result.ok
    if failed:
        print("error[oracle]: gradient check failed", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def _load_pair(images, labels, subset: int | None):
    if subset is not None:
        if subset < 10 or subset % 10:
            raise UsageError("--subset must be a positive multiple of 10")
        return load_idx(images, labels, per_class=subset // 10)
    return load_idx(images, labels)


def _build_model(args: argparse.Namespace, class_count: int) -> Model:
    if args.model == "toy-conv":
        return build_toy_conv(class_count=class_count, seed=args.seed)
    return build_toy_fwht(
        Variant(args.threshold), class_count=class_count, seed=args.seed
    )


def _cmd_train(args: argparse.Namespace) -> int:
    x, y = _load_pair(args.data_images, args.data_labels, args.subset)
    test = None
    if args.test_images and args.test_labels:
        test = _load_pair(args.test_images, args.test_labels, args.test_subset)
    class_count = int(y.max()) + 1
    model = _build_model(args, class_count)
    cfg = TrainConfig(args.lr, args.momentum, args.batch, args.epochs, args.seed)
    history_fh = open(args.history, "w", encoding="utf-8") if args.history else None
    try:
        def sink(record: dict) -> None:
            line = json.dumps(record)
            if history_fh is not None:
                history_fh.write(line + "\n")
                history_fh.flush()
            else:
                print(line)

        history = train_loop(model, (x, y), cfg, test_data=test, sink=sink)
    finally:
        if history_fh is not None:
            history_fh.close()
    if args.checkpoint:
        save_checkpoint(model, args.checkpoint)
    summary = {
        "model": model.spec.to_dict(),
        "trainable_params": model.param_count(),
        "epochs": len(history),
    }
    if history:
        summary["final_loss"] = history[-1]["loss"]
        summary["final_train_accuracy"] = history[-1]["train_accuracy"]
        if test is not None:
            accs = [h["test_accuracy"] for h in history]
            summary["final_test_accuracy"] = accs[-1]
            summary["best_test_accuracy"] = max(accs)
            summary["best_epoch"] = int(np.argmax(accs))
    print(json.dumps(summary))
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    x, y = _load_pair(args.data_images, args.data_labels, args.subset)
    acc = evaluate(model, x, y)
    print(json.dumps({"accuracy": acc, "samples": int(x.shape[0])}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hadanet",
        description="Transform-domain channel mixers: benchmarks, gradient "
        "checks, transform inspection, training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time the c->c channel mixers")
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--channels", type=int, default=1024)
    p.add_argument("--reps", type=int, default=7)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", help="comma list of channel counts, e.g. 256,512,1024")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("check-grad", help="finite-difference gradient checks")
    p.add_argument(
        "--target", default="all", choices=["all", *sorted(CHECK_TARGETS)]
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None,
                   help="override the target's default tolerance")
    p.set_defaults(func=_cmd_check_grad)

    p = sub.add_parser("transform", help="apply a transform or print its matrix")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--ordering", choices=["natural", "sequency"], default="natural")
    p.add_argument("--scale", choices=["none", "orthonormal", "inverse"],
                   default="none")
    p.add_argument("--matrix", action="store_true", help="print the matrix")
    p.add_argument("values", nargs="?", help="comma/space separated, or @file")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("train", help="train a toy classifier on IDX data")
    p.add_argument("--data-images", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--subset", type=int,
                   help="total training samples, balanced first-N-per-class "
                        "(must be a multiple of 10)")
    p.add_argument("--test-subset", type=int)
    p.add_argument("--model", choices=["toy-fwht", "toy-conv"], default="toy-fwht")
    p.add_argument(
        "--threshold",
        choices=[v.value for v in Variant],
        default="smooth",
    )
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="save parameters to PREFIX.{manifest,bin}")
    p.add_argument("--history", help="write epoch records here as JSON lines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on IDX data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-images", required=True)
    p.add_argument("--data-labels", required=True)
    p.add_argument("--subset", type=int)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleMismatchError as exc:
        print(f"error[oracle]: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (IdxError, CheckpointError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
