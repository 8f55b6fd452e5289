"""Command-line entry point.

Subcommands: gen-synth, build-index, search, train-align, eval, inspect.
Every command is deterministic given its flags (all randomness flows from
explicit seeds) and writes artifacts atomically, so reruns produce
byte-identical outputs.  Exit codes: 0 success, 2 usage or validation error,
1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import compose, index as index_mod, metrics, pipeline, store, train
from .types import EngineError, EvalRecord, KIND_ROI, VisualFeature, validate


def _fail(msg: str, code: int = 2) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_gen_synth(args) -> int:
    spec_doc = json.loads(Path(args.spec).read_text("utf-8"))
    task = spec_doc.get("task", "retrieval")
    out = Path(args.out)
    if task == "alignment":
        spec = store.alignment_spec_from_dict(spec_doc)
        features, docs = store.generate_alignment_pairs(spec)
        store.save_alignment_pairs(spec, features, docs, out)
        print(f"wrote {spec.pairs} alignment pairs to {out}")
    elif task == "retrieval":
        spec = store.spec_from_dict({k: v for k, v in spec_doc.items() if k != "task"})
        corpus = store.generate_synthetic(spec)
        store.save_corpus(corpus, out)
        print(
            f"wrote corpus to {out}: {spec.doc_count} docs, "
            f"{spec.query_count} queries"
        )
    else:
        return _fail(f"unknown task {task!r}")
    return 0


def cmd_build_index(args) -> int:
    bundle = store.load_corpus(args.corpus)
    problems = bundle.manifest.violations()
    for doc in bundle.documents:
        problems += validate(doc, manifest=bundle.manifest)
    if problems:
        return _fail("corpus invalid: " + "; ".join(problems[:5]))
    t0 = time.monotonic()
    total_tokens = sum(d.tokens.rows for d in bundle.documents)
    if args.mode == "exact":
        idx = index_mod.build_exact_index(bundle.documents)
        n_centroids = 0
    else:
        n_centroids = args.centroids or index_mod.default_n_centroids(total_tokens)
        if n_centroids > total_tokens:
            return _fail(
                f"centroids {n_centroids} exceed token count {total_tokens}"
            )
        idx = index_mod.build_centroid_index(
            bundle.documents, n_centroids, seed=args.seed
        )
    build_time = time.monotonic() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index_mod.save_index(idx, out / "index.bin")
    stats = {
        "mode": args.mode,
        "doc_count": len(bundle.documents),
        "token_count": total_tokens,
        "centroids": n_centroids,
        "seed": args.seed,
    }
    store.atomic_write_text(
        out / "stats.txt", "".join(f"{k}: {v}\n" for k, v in sorted(stats.items()))
    )
    print(
        f"indexed {len(bundle.documents)} docs / {total_tokens} tokens "
        f"(mode={args.mode}, centroids={n_centroids}) in {build_time:.2f}s"
    )
    return 0


def cmd_search(args) -> int:
    idx = index_mod.load_index(Path(args.index) / "index.bin")
    bundle = store.load_corpus(args.queries)
    if args.net:
        net = store.read_network(args.net)
    elif bundle.net is not None:
        net = bundle.net
    else:
        return _fail("queries contain visual features but no network was given")
    mode = "centroid" if isinstance(idx, index_mod.CentroidIndex) else "exact"
    nprobe = args.nprobe
    if mode == "centroid" and nprobe is None:
        nprobe = index_mod.default_nprobe(idx.n_centroids)
    results = pipeline.run_retrieval(
        bundle.queries,
        idx,
        net,
        k=args.k,
        mode=mode,
        nprobe=nprobe,
        n_roi=bundle.manifest.n_roi,
        normalize_rows=bundle.manifest.normalize_rows,
        run_path=args.out,
    )
    top1 = [r.scores[0] for r in results if r.scores]
    mean_top1 = float(np.mean(top1)) if top1 else float("nan")
    print(
        f"searched {len(results)} queries (mode={mode}, k={args.k}); "
        f"mean top-1 score {mean_top1:.6f}"
    )
    return 0


def cmd_train_align(args) -> int:
    cfg_doc = json.loads(Path(args.config).read_text("utf-8"))
    holdout = int(cfg_doc.pop("holdout", 0))
    try:
        cfg = train.TrainConfig(**cfg_doc)
    except TypeError as e:
        return _fail(f"bad config: {e}")
    problems = cfg.violations()
    if problems:
        return _fail("bad config: " + "; ".join(problems))
    manifest, features, docs = store.load_alignment_pairs(args.pairs)
    pairs = list(zip(features, docs))
    if holdout >= len(pairs):
        return _fail(f"holdout {holdout} leaves no training pairs")
    train_pairs = pairs[: len(pairs) - holdout] if holdout else pairs
    heldout = pairs[len(pairs) - holdout :] if holdout else None
    net, curve = train.train_alignment(
        train_pairs,
        cfg,
        normalize_rows=manifest.normalize_rows,
        heldout=heldout,
        dims=(manifest.d_v, manifest.n_vt, manifest.d_l),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.write_network(net, out)
    curve_path = out.with_name(out.stem + "_loss.csv")
    train.write_loss_curve(curve, curve_path)
    final_recall = next(
        (r for _, _, r in reversed(curve) if r is not None), None
    )
    if final_recall is not None:
        print(f"trained {cfg.steps} steps; held-out recall@1 {final_recall:.4f}")
    else:
        last_loss = curve[-1][1] if curve else float("nan")
        print(f"trained {cfg.steps} steps; final loss {last_loss:.6f}")
    return 0


def _load_answers_file(path: Path) -> dict[str, dict]:
    out = {}
    for line in path.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out[rec["question_id"]] = rec
    return out


def cmd_eval(args) -> int:
    results = pipeline.read_run_file(args.run)
    answers = _load_answers_file(Path(args.answers))
    run_ids = [r.query_id for r in results]
    missing = [qid for qid in run_ids if qid not in answers]
    if len(missing) == len(run_ids):
        return _fail("no run question_id found in answers file")
    if missing:
        return _fail(f"question ids missing from answers file: {', '.join(missing)}")
    doc_texts = {}
    if args.docs:
        for line in Path(args.docs).read_text("utf-8").splitlines():
            doc_id, text = line.split("\t", 1)
            doc_texts[doc_id] = text
    ks = tuple(int(v) for v in args.ks.split(","))
    records = []
    probs_by_qid = {}
    for r in results:
        rec = answers[r.query_id]
        cand = rec.get("candidates")
        records.append(
            EvalRecord(
                question_id=r.query_id,
                answers=tuple(rec["answers"]),
                retrieved_doc_ids=r.doc_ids,
                candidate_answers=tuple((y, lp) for y, lp in cand) if cand else None,
                no_knowledge_answer=rec.get("no_knowledge"),
            )
        )
        probs_by_qid[r.query_id] = r.probs
    report = metrics.evaluate(
        records,
        doc_texts,
        ks,
        probs_by_qid=probs_by_qid,
        word_boundary=args.word_boundary,
    )
    report.write(args.out)
    for k in ks:
        print(f"PRRecall@{k}: {report.means.get(f'pr_recall@{k}', 0.0):.4f}")
    for name, label in (("vqa_score", "VQA Score"), ("em", "EM"), ("hsr", "HSR")):
        if name in report.means:
            print(f"{label}: {report.means[name]:.4f}")
    return 0


def cmd_inspect(args) -> int:
    if args.roi_meta:
        if not args.question:
            return _fail("--roi-meta requires --question")
        by_image: dict[str, list[VisualFeature]] = {}
        for line in Path(args.roi_meta).read_text("utf-8").splitlines():
            if not line.strip():
                continue
            image_id, x, y, w, h, class_name = line.split("\t")
            by_image.setdefault(image_id, []).append(
                VisualFeature(
                    np.zeros(1, dtype=np.float32),
                    kind=KIND_ROI,
                    bbox=(float(x), float(y), float(w), float(h)),
                    class_name=class_name,
                )
            )
        for image_id in sorted(by_image):
            chosen = compose.select_rois(by_image[image_id], args.question, args.n_roi)
            for rank, f in enumerate(chosen):
                x, y, w, h = f.bbox
                print(
                    f"{image_id}\t{rank}\t{f.class_name}\t{x:g},{y:g},{w:g},{h:g}"
                )
        return 0
    if args.corpus:
        bundle = store.load_corpus(args.corpus)
        manifest = bundle.manifest
        problems = manifest.violations()
        for doc in bundle.documents:
            problems += validate(doc, manifest=manifest)
        for q in bundle.queries:
            problems += validate(q, manifest=manifest)
        n_features = 0
        if "features" in manifest.files and not bundle.queries:
            # standalone feature export: validate the blob directly
            feats = store.read_features(Path(args.corpus) / manifest.files["features"])
            n_features = len(feats)
            for f in feats:
                problems += validate(f, manifest=manifest)
        if bundle.net is not None:
            problems += validate(bundle.net)
        if problems:
            for p in problems[:20]:
                print(f"violation: {p}", file=sys.stderr)
            return 2
        extra = f", {n_features} features" if n_features else ""
        print(
            f"corpus ok: {len(bundle.documents)} docs, {len(bundle.queries)} queries"
            f"{extra}, d_v={manifest.d_v}, d_l={manifest.d_l}, "
            f"n_vt={manifest.n_vt}, n_roi={manifest.n_roi}"
        )
        return 0
    return _fail("inspect needs --corpus or --roi-meta")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lateint", description="late-interaction retrieval engine"
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    g.add_argument("--spec", required=True, help="JSON spec file")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=cmd_gen_synth)

    b = sub.add_parser("build-index", help="build a search index")
    b.add_argument("--corpus", required=True)
    b.add_argument("--mode", choices=("exact", "centroid"), default="exact")
    b.add_argument("--centroids", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build_index)

    s = sub.add_parser("search", help="run top-K retrieval")
    s.add_argument("--index", required=True, help="index directory")
    s.add_argument("--queries", required=True, help="corpus directory with queries")
    s.add_argument("--net", default=None, help="mapping network checkpoint")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--nprobe", type=int, default=None)
    s.add_argument("--out", required=True, help="run file path")
    s.set_defaults(fn=cmd_search)

    t = sub.add_parser("train-align", help="train the mapping network")
    t.add_argument("--pairs", required=True, help="alignment pairs directory")
    t.add_argument("--config", required=True, help="JSON train config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(fn=cmd_train_align)

    e = sub.add_parser("eval", help="score a run file")
    e.add_argument("--run", required=True)
    e.add_argument("--answers", required=True, help="JSONL answers file")
    e.add_argument("--docs", default=None, help="doc_id<TAB>text file")
    e.add_argument("--ks", default="5,10")
    e.add_argument("--word-boundary", action="store_true")
    e.add_argument("--out", required=True, help="report path")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("inspect", help="validate artifacts / show ROI order")
    i.add_argument("--corpus", default=None)
    i.add_argument("--roi-meta", default=None, help="bbox metadata TSV")
    i.add_argument("--question", default=None)
    i.add_argument("--n-roi", type=int, default=4)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as e:
        return _fail(str(e))
    except FileNotFoundError as e:
        return _fail(f"missing file: {e.filename}")
    except Exception as e:  # noqa: BLE001 - runtime failures exit 1
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
