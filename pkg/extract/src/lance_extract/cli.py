"""lance-extract command line: `extract` and `descriptors` subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .descriptors import DescriptorError, generate_descriptors
from .encoders import EncoderError
from .extract import ExtractError, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lance-extract",
        description="Produce embedding, manifest, concept and prompt files "
                    "from images and text lists")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed an image folder or CSV manifest")
    p.add_argument("--images", help="root directory: <domain>/<class>/*.jpg|png")
    p.add_argument("--image-manifest", dest="image_manifest",
                   help="CSV with columns path,class,domain[,id]")
    p.add_argument("--concepts", required=True, help="concept text file")
    p.add_argument("--descriptors", required=True, help="descriptor text file")
    p.add_argument("--train-domain", dest="train_domain", required=True)
    p.add_argument("--template", default="a {domain} of a {class}")
    p.add_argument("--encoder", default="hash",
                   help="'hash' (offline, deterministic) or 'clip[:model[:tag]]'")
    p.add_argument("--encoder-dim", dest="encoder_dim", type=int, default=64,
                   help="embedding width for the hash encoder")
    p.add_argument("--offline", action="store_true",
                   help="forbid encoders that would download weights")
    p.add_argument("--out", required=True)

    p = sub.add_parser("descriptors", help="generate a domain-descriptor list")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--prompt-preset", dest="prompt_preset", default="visual-domains")
    p.add_argument("--offline", action="store_true",
                   help="copy the shipped static list instead of querying an LLM")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            if args.offline and args.encoder != "hash":
                print("error: --offline allows only the hash encoder",
                      file=sys.stderr)
                return 2
            job = ExtractionJob(
                image_root=Path(args.images) if args.images else None,
                image_manifest=Path(args.image_manifest) if args.image_manifest else None,
                concept_file=Path(args.concepts),
                descriptor_file=Path(args.descriptors),
                train_domain=args.train_domain,
                template=args.template,
                encoder=args.encoder,
                encoder_dim=args.encoder_dim,
                output_dir=Path(args.out))
            out = extract(job)
            print(f"wrote {out}")
            return 0
        entries = generate_descriptors(args.n, prompt_preset=args.prompt_preset,
                                       offline=args.offline, out_path=args.out)
        print(f"wrote {len(entries)} descriptors to {args.out}")
        return 0
    except (ExtractError, DescriptorError, EncoderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
