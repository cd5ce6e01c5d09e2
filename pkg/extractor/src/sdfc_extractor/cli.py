"""Thin command line around the batch exporter."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExtractionSpec, export_batch
from .model import ExtractorError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def collect_images(sources: list[str]) -> list[str]:
    paths = []
    for src in sources:
        p = Path(src)
        if p.is_dir():
            paths.extend(sorted(str(f) for f in p.iterdir()
                                if f.suffix.lower() in IMAGE_SUFFIXES))
        else:
            paths.append(str(p))
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdfc-extract",
        description="Run images through a CNN checkpoint and dump feature "
                    "maps, head vectors, resized images and boxes in the "
                    "saliency pipeline's interchange formats.")
    parser.add_argument("--model", required=True,
                        help="torch checkpoint (full pickled module, trusted)")
    parser.add_argument("--layer", required=True,
                        help="dotted submodule path of the feature-map layer")
    parser.add_argument("--images", required=True, nargs="+",
                        help="image files and/or directories")
    parser.add_argument("--bboxes", help="upstream annotation JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--size", type=int, default=84,
                        help="square export resolution (default 84)")
    parser.add_argument("--sdfc-width", type=int,
                        help="expected head width; must equal H*W of the layer")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)

    images = collect_images(args.images)
    if not images:
        print("error: no input images found", file=sys.stderr)
        return 2

    spec = ExtractionSpec(model_path=args.model, layer=args.layer,
                          output_dir=args.out, images=images, size=args.size,
                          bboxes_path=args.bboxes, sdfc_width=args.sdfc_width)
    try:
        summary = export_batch(spec)
    except (ExtractorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {summary['exported']} images "
          f"({len(summary['skipped'])} skipped) -> {summary['manifest']}")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
