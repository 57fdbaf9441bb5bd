import argparse
import sys

from .extract import ExtractionError, ExtractionSpec, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udab-extract",
        description="Export model features and predictions to a UDAB1 bundle.",
    )
    parser.add_argument("--model", required=True, help="torch model artifact")
    parser.add_argument("--source-dir", required=True, help="labeled source split (class subdirs)")
    parser.add_argument("--target-dir", required=True, help="unlabeled target split")
    parser.add_argument("--out", required=True, help="output bundle path")
    parser.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True)
    parser.add_argument("--seed", type=int, default=17)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--model-id", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExtractionSpec(
            model_path=args.model,
            source_dir=args.source_dir,
            target_dir=args.target_dir,
            out_path=args.out,
            augment=args.augment,
            seed=args.seed,
            batch_size=args.batch_size,
            image_size=args.image_size,
            model_id=args.model_id,
        )
        path = extract(spec)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
