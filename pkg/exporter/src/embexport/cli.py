"""The embexport command: encode texts and images into engine blobs.

Inputs: a `id<TAB>text` TSV for texts/questions, an image directory, and a
box metadata TSV (`image_id x y w h class_name`).  Exit codes: 0 success,
2 usage/validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import EncoderError
from .jobs import ExportJob, export_queries, export_text, export_vision


def read_texts(path: Path | str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise EncoderError(f"texts line {lineno}: expected id<TAB>text")
        key, text = line.split("\t", 1)
        out[key] = text
    return out


def _job(args) -> ExportJob:
    return ExportJob(
        text_encoder=args.text_encoder,
        vision_encoder=args.vision_encoder,
        d_l=args.d_l,
        d_v=args.d_v,
        n_vt=args.n_vt,
        n_roi=args.n_roi,
        crop_policy=args.crop_policy,
    )


def cmd_text(args) -> int:
    texts = read_texts(args.input)
    export_text(texts, args.out, _job(args), role=args.role)
    print(f"exported {len(texts)} {args.role} to {args.out}")
    return 0


def cmd_vision(args) -> int:
    questions = read_texts(args.questions) if args.questions else None
    chosen = export_vision(args.images, args.boxes, args.out, _job(args), questions)
    n_rois = sum(len(v) for v in chosen.values())
    print(f"exported {len(chosen)} images ({n_rois} ROI crops) to {args.out}")
    return 0


def cmd_queries(args) -> int:
    questions = read_texts(args.questions)
    chosen = export_queries(questions, args.images, args.boxes, args.out, _job(args))
    print(f"exported {len(chosen)} query bundles to {args.out}")
    return 0


def _add_dims(p: argparse.ArgumentParser) -> None:
    p.add_argument("--text-encoder", default="hashing-text-v1")
    p.add_argument("--vision-encoder", default="patch-stats-v1")
    p.add_argument("--d-l", type=int, default=16)
    p.add_argument("--d-v", type=int, default=16)
    p.add_argument("--n-vt", type=int, default=1)
    p.add_argument("--n-roi", type=int, default=4)
    p.add_argument("--crop-policy", choices=("clip", "strict"), default="clip")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embexport", description="embedding exporter")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("export-text", help="encode texts into token blobs")
    t.add_argument("--input", required=True, help="id<TAB>text TSV")
    t.add_argument("--role", choices=("documents", "questions"), default="documents")
    t.add_argument("--out", required=True)
    _add_dims(t)
    t.set_defaults(fn=cmd_text)

    v = sub.add_parser("export-vision", help="encode images and ROI crops")
    v.add_argument("--images", required=True, help="image directory")
    v.add_argument("--boxes", required=True, help="box metadata TSV")
    v.add_argument("--questions", default=None, help="id<TAB>question TSV")
    v.add_argument("--out", required=True)
    _add_dims(v)
    v.set_defaults(fn=cmd_vision)

    q = sub.add_parser("export-queries", help="full query bundles (text + vision)")
    q.add_argument("--questions", required=True, help="id<TAB>question TSV")
    q.add_argument("--images", required=True)
    q.add_argument("--boxes", required=True)
    q.add_argument("--out", required=True)
    _add_dims(q)
    q.set_defaults(fn=cmd_queries)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (EncoderError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
