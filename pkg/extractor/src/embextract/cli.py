"""embextract CLI: run a backbone over an image folder, or generate the
synthetic suite. Output is EMB1 exactly as the harness defines it."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .emb1 import ExtractorError
from .extract import ExtractionJob, extract_features
from .synth import gen_synthetic_suite, load_spec


def cmd_extract(args) -> int:
    job = ExtractionJob(
        backbone=args.backbone,
        images_dir=Path(args.images),
        manifest=Path(args.manifest),
        output=Path(args.out),
        batch_size=args.batch_size,
        device=args.device,
        pool=args.pool,
        pretrained=args.pretrained,
        dataset=args.dataset,
    )
    path = extract_features(job)
    print(f"wrote {path}")
    return 0


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    paths = gen_synthetic_suite(spec, args.out)
    for path in paths:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embextract")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed a manifest of images")
    p.add_argument("--backbone", required=True)
    p.add_argument("--images", required=True, help="image folder")
    p.add_argument("--manifest", required=True, help="CSV: filename,label,group")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--device", default="cpu")
    p.add_argument("--pool", default="avg", help="pooled representation choice")
    p.add_argument("--pretrained", action="store_true",
                   help="download pretrained weights (default: random init)")
    p.add_argument("--dataset", default="", help="dataset name for the metadata")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("synth", help="generate the synthetic benchmark suite")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
