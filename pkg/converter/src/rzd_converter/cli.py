"""Command line entry point: convert_rzd."""

from __future__ import annotations

import argparse
import sys

from .convert import (ConversionError, SourceArchive, VerificationError,
                      convert, verify_against_source)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convert_rzd",
        description="Convert MATLAB GZSL benchmark archives to an RZD v1 "
                    "dataset directory.")
    parser.add_argument("--features", required=True,
                        help="path to the feature .mat file (res101.mat)")
    parser.add_argument("--splits", required=True,
                        help="path to the split .mat file (att_splits.mat)")
    parser.add_argument("--out", required=True,
                        help="output dataset directory")
    parser.add_argument("--no-normalize", action="store_true",
                        help="keep raw attribute values (default: min-max "
                             "normalize each dimension to [0, 1])")
    parser.add_argument("--name", default=None,
                        help="dataset name recorded in the manifest")
    parser.add_argument("--verify", action="store_true",
                        help="re-read both sides after converting and check "
                             "bit-exact features and consistent splits")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    src = SourceArchive(features_path=args.features, splits_path=args.splits)
    try:
        convert(src, args.out, normalize=not args.no_normalize,
                name=args.name)
        if args.verify:
            verify_against_source(args.out, src)
    except (ConversionError, VerificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
