"""fpextract command line: JSON spec in, FPEB files + manifest out."""

import argparse
import json
import logging
import sys

from .backbones import BackboneError, available
from .extract import ExtractSpec, extract
from .video import DecodeError


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fpextract",
        description="extract frozen-backbone embeddings into fuseprobe FPEB files",
    )
    parser.add_argument("--spec", required=True, help="extraction spec JSON")
    parser.add_argument("--out", help="override the spec's output_dir")
    parser.add_argument("--backbone", choices=available(), help="override the spec's backbone")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if args.out:
            doc["output_dir"] = args.out
        if args.backbone:
            doc["backbone"] = args.backbone
        spec = ExtractSpec.from_dict(doc)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: bad spec: {exc}", file=sys.stderr)
        return 1
    try:
        manifest_path, records, skipped = extract(spec)
    except (BackboneError, DecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(records)} videos ({len(skipped)} skipped) -> {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
