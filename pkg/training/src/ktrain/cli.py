"""Command-line entry point for training and evaluating on .kfrg exports.

Exit codes match the dataset producer: 0 success, 1 validation or format
error, 2 missing input, 3 numerical failure.
"""

import argparse
import os
import sys

from .data import ARCHS, SPLITS, load_examples, load_manifest, manifest_hash
from .errors import (FormatError, KtrainError, MissingInputError,
                     NumericalError, ValidationError)
from .train import (ModelBundle, TrainConfig, evaluate_model, train,
                    write_curve_csv, write_metrics_csv)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ktrain",
        description="Train toy reconstruction networks on exported "
                    ".kfrg datasets and score them on the test split.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one architecture")
    p.add_argument("--manifest", required=True,
                   help="dataset manifest JSON from the export step")
    p.add_argument("--arch", required=True, choices=sorted(ARCHS))
    p.add_argument("--epochs", type=int, default=0,
                   help="training epochs (default: per-arch)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unrolls", type=int, default=6,
                   help="varnet unroll count")
    p.add_argument("--out", required=True,
                   help="output directory for weights and curve CSV")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch progress lines")

    p = sub.add_parser("evaluate", help="score a trained bundle on a split")
    p.add_argument("--weights", required=True, help="saved model bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=sorted(SPLITS))
    p.add_argument("--csv", default=None,
                   help="append metric rows to this CSV")
    p.add_argument("--method", default=None,
                   help="method label in the CSV (default: arch name)")
    return parser


def _infer_coils(arch, examples):
    if arch == "varnet":
        return examples[0].arrays["sens"].shape[0]
    if arch == "unet3d":
        return examples[0].arrays["coil_images"].shape[1]
    return 1


def run_train(args):
    manifest, _ = load_manifest(args.manifest)
    train_ex = load_examples(args.manifest, args.arch, splits=("train",))
    val_ex = load_examples(args.manifest, args.arch, splits=("val",))
    for name, examples in (("training", train_ex), ("validation", val_ex)):
        if not examples:
            raise ValidationError(
                f"{name} split is empty for arch {args.arch!r} "
                f"in {args.manifest}")
    cfg = TrainConfig(arch=args.arch, epochs=args.epochs, lr=args.lr,
                      batch_size=args.batch_size, seed=args.seed,
                      coils=_infer_coils(args.arch, train_ex),
                      unrolls=args.unrolls)
    log = None if args.quiet else lambda line: print(line, flush=True)
    bundle = train(train_ex, val_ex, cfg,
                   manifest_hash=manifest_hash(args.manifest),
                   config_hash=manifest.get("config_hash", ""),
                   log=log)
    os.makedirs(args.out, exist_ok=True)
    weights_path = os.path.join(args.out, f"{args.arch}.pt")
    curve_path = os.path.join(args.out, f"{args.arch}-curve.csv")
    bundle.save(weights_path)
    write_curve_csv(curve_path, bundle.curve)
    last = bundle.curve[-1]
    print(f"saved {weights_path} (final val_ssim {last['val_ssim']:.5f})")


def run_evaluate(args):
    bundle = ModelBundle.load(args.weights)
    examples = load_examples(args.manifest, bundle.cfg.arch,
                             splits=(args.split,))
    current = manifest_hash(args.manifest)
    if bundle.manifest_hash and bundle.manifest_hash != current:
        print(f"note: manifest hash {current} differs from the one "
              f"trained against ({bundle.manifest_hash})", file=sys.stderr)
    rows = evaluate_model(bundle, examples, method=args.method)
    if args.csv:
        write_metrics_csv(args.csv, rows, append=True)
    mean_ssim = sum(r["ssim"] for r in rows) / len(rows)
    finite = [r["psnr_db"] for r in rows
              if r["psnr_db"] not in (float("inf"), float("-inf"))]
    mean_psnr = sum(finite) / len(finite) if finite else float("inf")
    print(f"{bundle.cfg.arch} on {args.split}: {len(rows)} records, "
          f"mean ssim {mean_ssim:.5f}, mean psnr {mean_psnr:.2f} dB")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            run_train(args)
        elif args.command == "evaluate":
            run_evaluate(args)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KtrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
