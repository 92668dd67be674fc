"""Command line: manifest in, DFFS feature store(s) out.

    lvlm-extract items.tsv --out video.dffs --modality video --prompt rec

The manifest is tab-separated `item_id \\t media_path`. `--out` receives
the hidden-state store; add `--caption-store` to also run the caption
paradigm, which writes an L=1 store plus a `.captions.tsv` audit file
beside it. Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import ExtractorError, ModelError, PromptError
from .adapters import resolve_model
from .dffs import write_captions_tsv, write_store
from .extract import (POOLINGS, extract_captions, extract_hidden, model_tag,
                      read_manifest)
from .media import MODALITIES
from .prompts import resolve_prompt

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="lvlm-extract", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("manifest", help="TSV of item_id <tab> media_path")
    p.add_argument("--out", required=True, help="output hidden-state store")
    p.add_argument("--model", default="stub",
                   help="stub, stub:<layers>x<dim>, or hf:<model id>")
    p.add_argument("--modality", choices=MODALITIES, default="video")
    p.add_argument("--prompt", default="rec",
                   help="rec, plain, or custom:<file>")
    p.add_argument("--pooling", choices=POOLINGS, default="mean")
    p.add_argument("--caption-store", default=None,
                   help="also run the caption paradigm into this L=1 store")
    p.add_argument("--max-frames", type=int, default=16)
    return p


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        prompt_name, prompt_text = resolve_prompt(args.prompt)
        adapter = resolve_model(args.model)
        manifest = read_manifest(args.manifest)

        tag = model_tag(adapter, prompt_name, prompt_text, args.modality,
                        args.pooling)
        result = extract_hidden(adapter, manifest, args.modality, prompt_text,
                                args.pooling, args.max_frames)
        if not result.items:
            print("error: every item was skipped; nothing to write",
                  file=sys.stderr)
            return EXIT_DATA
        write_store(args.out, result.items, tag)
        print(f"wrote {len(result.items)} items -> {args.out} "
              f"(skipped {len(result.skipped)})")

        if args.caption_store:
            cap = extract_captions(adapter, manifest, args.modality,
                                   prompt_text, args.max_frames)
            if not cap.items:
                print("error: every caption was skipped; nothing to write",
                      file=sys.stderr)
                return EXIT_DATA
            cap_tag = f"{tag}|text_encoder={adapter.text_encoder}"
            write_store(args.caption_store, cap.items, cap_tag,
                        provenance="caption")
            tsv = Path(args.caption_store).with_suffix(".captions.tsv")
            write_captions_tsv(tsv, cap.captions)
            print(f"wrote {len(cap.items)} captions -> {args.caption_store} "
                  f"(texts in {tsv}, skipped {len(cap.skipped)})")
        return EXIT_OK
    except (PromptError, ModelError) as exc:
        # bad flag values, same class of mistake argparse choices catch
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
