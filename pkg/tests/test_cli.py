"""End-to-end CLI behavior, exit codes, and artifact determinism."""

import json

import numpy as np
import pytest

from lateint import metrics, pipeline, store
from lateint.cli import main
from lateint.types import EvalRecord

RETRIEVAL_SPEC = {
    "seed": 17,
    "doc_count": 30,
    "query_count": 6,
    "d_v": 10,
    "d_l": 8,
    "n_vt": 3,
    "n_roi": 2,
}

ALIGN_SPEC = {
    "task": "alignment",
    "seed": 4,
    "pairs": 120,
    "d_v": 12,
    "d_l": 6,
    "n_vt": 3,
}

TRAIN_CFG = {
    "learning_rate": 0.02,
    "batch_size": 20,
    "steps": 40,
    "seed": 1,
    "holdout": 20,
    "eval_every": 20,
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def gen_corpus(tmp_path, spec=RETRIEVAL_SPEC, name="corpus"):
    spec_file = write_json(tmp_path / "spec.json", spec)
    out = tmp_path / name
    assert main(["gen-synth", "--spec", spec_file, "--out", str(out)]) == 0
    return out


def dir_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestGenSynth:
    def test_writes_expected_files(self, tmp_path):
        out = gen_corpus(tmp_path)
        for name in ("manifest.txt", "docs.bin", "queries.bin", "features.bin",
                     "net.bin", "gold.tsv", "answers.jsonl", "doc_texts.tsv"):
            assert (out / name).exists()

    def test_missing_seed_exit_2(self, tmp_path, capsys):
        spec_file = write_json(tmp_path / "spec.json", {"doc_count": 5})
        assert main(["gen-synth", "--spec", spec_file, "--out", str(tmp_path / "x")]) == 2
        assert "missing field: seed" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tmp_path):
        a = gen_corpus(tmp_path, name="a")
        b = gen_corpus(tmp_path, name="b")
        assert dir_bytes(a) == dir_bytes(b)

    def test_alignment_task(self, tmp_path):
        spec_file = write_json(tmp_path / "spec.json", ALIGN_SPEC)
        out = tmp_path / "pairs"
        assert main(["gen-synth", "--spec", spec_file, "--out", str(out)]) == 0
        manifest, feats, docs = store.load_alignment_pairs(out)
        assert len(feats) == len(docs) == 120


class TestBuildIndex:
    def test_exact_mode(self, tmp_path, capsys):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "idx"
        assert main(["build-index", "--corpus", str(corpus), "--out", str(out)]) == 0
        assert (out / "index.bin").exists()
        stats = (out / "stats.txt").read_text()
        assert "doc_count: 30" in stats

    def test_centroid_postings_conservation(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        out = tmp_path / "idx"
        assert main([
            "build-index", "--corpus", str(corpus), "--mode", "centroid",
            "--centroids", "16", "--seed", "3", "--out", str(out),
        ]) == 0
        from lateint.index import load_index

        idx = load_index(out / "index.bin")
        total = sum(d.tokens.rows for d in idx.docs)
        assert sum(p.size for p in idx.postings) == total

    def test_too_many_centroids_exit_2(self, tmp_path, capsys):
        corpus = gen_corpus(tmp_path)
        assert main([
            "build-index", "--corpus", str(corpus), "--mode", "centroid",
            "--centroids", "100000", "--out", str(tmp_path / "idx"),
        ]) == 2

    def test_rerun_byte_identical(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        for name in ("a", "b"):
            main([
                "build-index", "--corpus", str(corpus), "--mode", "centroid",
                "--centroids", "8", "--seed", "5", "--out", str(tmp_path / name),
            ])
        assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")


def build_exact(tmp_path, corpus):
    out = tmp_path / "idx"
    assert main(["build-index", "--corpus", str(corpus), "--out", str(out)]) == 0
    return out


class TestSearch:
    def test_gold_rank_one_run_file(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        idx = build_exact(tmp_path, corpus)
        run = tmp_path / "run.tsv"
        assert main([
            "search", "--index", str(idx), "--queries", str(corpus),
            "--k", "5", "--out", str(run),
        ]) == 0
        results = pipeline.read_run_file(run)
        bundle = store.load_corpus(corpus)
        for r in results:
            assert r.doc_ids[0] == bundle.gold[r.query_id]

    def test_k_larger_than_corpus_gives_full_ranking(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        idx = build_exact(tmp_path, corpus)
        run = tmp_path / "run.tsv"
        main(["search", "--index", str(idx), "--queries", str(corpus),
              "--k", "999", "--out", str(run)])
        results = pipeline.read_run_file(run)
        assert all(len(r.doc_ids) == RETRIEVAL_SPEC["doc_count"] for r in results)

    def test_full_probe_equals_exact_byte_for_byte(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        exact_idx = build_exact(tmp_path, corpus)
        cent_idx = tmp_path / "cidx"
        main(["build-index", "--corpus", str(corpus), "--mode", "centroid",
              "--centroids", "8", "--seed", "0", "--out", str(cent_idx)])
        main(["search", "--index", str(exact_idx), "--queries", str(corpus),
              "--k", "5", "--out", str(tmp_path / "exact.tsv")])
        main(["search", "--index", str(cent_idx), "--queries", str(corpus),
              "--k", "5", "--nprobe", "8", "--out", str(tmp_path / "cent.tsv")])
        assert (tmp_path / "exact.tsv").read_bytes() == (tmp_path / "cent.tsv").read_bytes()

    def test_rerun_byte_identical(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        idx = build_exact(tmp_path, corpus)
        for name in ("r1.tsv", "r2.tsv"):
            main(["search", "--index", str(idx), "--queries", str(corpus),
                  "--k", "5", "--out", str(tmp_path / name)])
        assert (tmp_path / "r1.tsv").read_bytes() == (tmp_path / "r2.tsv").read_bytes()


class TestTrainAlign:
    def _pairs_dir(self, tmp_path):
        spec_file = write_json(tmp_path / "aspec.json", ALIGN_SPEC)
        out = tmp_path / "pairs"
        main(["gen-synth", "--spec", spec_file, "--out", str(out)])
        return out

    def test_zero_steps_checkpoint_equals_init(self, tmp_path):
        pairs = self._pairs_dir(tmp_path)
        cfg = dict(TRAIN_CFG, steps=0, holdout=0, eval_every=0)
        cfg_file = write_json(tmp_path / "cfg.json", cfg)
        net_path = tmp_path / "net.bin"
        assert main(["train-align", "--pairs", str(pairs), "--config", cfg_file,
                     "--out", str(net_path)]) == 0
        from lateint.train import init_mapping_network

        net = store.read_network(net_path)
        init = init_mapping_network(12, 3, 6, seed=cfg["seed"])
        assert net.w1.tobytes() == init.w1.tobytes()

    def test_same_seed_identical_checkpoints(self, tmp_path):
        pairs = self._pairs_dir(tmp_path)
        cfg_file = write_json(tmp_path / "cfg.json", TRAIN_CFG)
        for name in ("n1.bin", "n2.bin"):
            assert main(["train-align", "--pairs", str(pairs), "--config", cfg_file,
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "n1.bin").read_bytes() == (tmp_path / "n2.bin").read_bytes()

    def test_recall_printed_and_curve_written(self, tmp_path, capsys):
        pairs = self._pairs_dir(tmp_path)
        cfg_file = write_json(tmp_path / "cfg.json", TRAIN_CFG)
        net_path = tmp_path / "net.bin"
        assert main(["train-align", "--pairs", str(pairs), "--config", cfg_file,
                     "--out", str(net_path)]) == 0
        assert "recall@1" in capsys.readouterr().out
        curve = (tmp_path / "net_loss.csv").read_text().splitlines()
        assert curve[0] == "step,loss,heldout_recall_at_1"
        assert len(curve) >= TRAIN_CFG["steps"]

    def test_bad_batch_size_exit_2(self, tmp_path):
        pairs = self._pairs_dir(tmp_path)
        cfg_file = write_json(tmp_path / "cfg.json", dict(TRAIN_CFG, batch_size=1))
        assert main(["train-align", "--pairs", str(pairs), "--config", cfg_file,
                     "--out", str(tmp_path / "net.bin")]) == 2


class TestEval:
    def _run_and_answers(self, tmp_path):
        corpus = gen_corpus(tmp_path)
        idx = build_exact(tmp_path, corpus)
        run = tmp_path / "run.tsv"
        main(["search", "--index", str(idx), "--queries", str(corpus),
              "--k", "5", "--out", str(run)])
        return corpus, run

    def test_planted_corpus_pr_recall_is_one(self, tmp_path, capsys):
        corpus, run = self._run_and_answers(tmp_path)
        report_path = tmp_path / "report.json"
        assert main(["eval", "--run", str(run),
                     "--answers", str(corpus / "answers.jsonl"),
                     "--docs", str(corpus / "doc_texts.tsv"),
                     "--ks", "1,5", "--out", str(report_path)]) == 0
        out = capsys.readouterr().out
        assert "PRRecall@5: 1.0000" in out
        report = json.loads(report_path.read_text())
        assert report["means"]["pr_recall@1"] == 1.0

    def test_report_matches_direct_metric_calls(self, tmp_path):
        corpus, run = self._run_and_answers(tmp_path)
        report_path = tmp_path / "report.json"
        main(["eval", "--run", str(run), "--answers", str(corpus / "answers.jsonl"),
              "--docs", str(corpus / "doc_texts.tsv"), "--ks", "5",
              "--out", str(report_path)])
        report = json.loads(report_path.read_text())
        bundle = store.load_corpus(corpus)
        results = pipeline.read_run_file(run)
        records = [
            EvalRecord(
                question_id=r.query_id,
                answers=tuple(bundle.answers[r.query_id]),
                retrieved_doc_ids=r.doc_ids,
            )
            for r in results
        ]
        direct = metrics.evaluate(records, bundle.doc_texts, ks=(5,))
        assert report["means"]["pr_recall@5"] == direct.means["pr_recall@5"]

    def test_id_mismatch_exit_2(self, tmp_path, capsys):
        corpus, run = self._run_and_answers(tmp_path)
        other = tmp_path / "other.jsonl"
        other.write_text(json.dumps({"question_id": "zz", "answers": ["x"]}) + "\n")
        assert main(["eval", "--run", str(run), "--answers", str(other),
                     "--ks", "5", "--out", str(tmp_path / "r.json")]) == 2

    def test_joint_selection_metrics(self, tmp_path, capsys):
        corpus, run = self._run_and_answers(tmp_path)
        bundle = store.load_corpus(corpus)
        results = pipeline.read_run_file(run)
        lines = []
        for r in results:
            gold_answer = bundle.answers[r.query_id][0]
            cands = [[gold_answer if d == bundle.gold[r.query_id] else "wrong", -0.5]
                     for d in r.doc_ids]
            lines.append(json.dumps({
                "question_id": r.query_id,
                "answers": bundle.answers[r.query_id],
                "candidates": cands,
                "no_knowledge": "wrong",
            }))
        answers = tmp_path / "cand.jsonl"
        answers.write_text("\n".join(lines) + "\n")
        assert main(["eval", "--run", str(run), "--answers", str(answers),
                     "--docs", str(corpus / "doc_texts.tsv"),
                     "--ks", "5", "--out", str(tmp_path / "r.json")]) == 0
        report = json.loads((tmp_path / "r.json").read_text())
        # gold is rank 1 with dominant prob and equal gen logprobs everywhere
        assert report["means"]["vqa_score"] == 1.0
        assert report["means"]["em"] == 1.0
        assert report["means"]["hsr"] == 1.0


class TestInspect:
    def test_corpus_ok(self, tmp_path, capsys):
        corpus = gen_corpus(tmp_path)
        assert main(["inspect", "--corpus", str(corpus)]) == 0
        assert "corpus ok" in capsys.readouterr().out

    def test_corrupted_corpus_detected(self, tmp_path, capsys):
        corpus = gen_corpus(tmp_path)
        mats = store.read_embeddings(corpus / "docs.bin")
        bad = mats[0].data.copy()
        bad[0, 0] = np.nan
        from lateint.types import TokenMatrix

        mats[0] = TokenMatrix(bad)
        store.write_embeddings(mats, corpus / "docs.bin")
        assert main(["inspect", "--corpus", str(corpus)]) == 2
        assert "non-finite" in capsys.readouterr().err

    def test_alignment_pairs_dir_validates(self, tmp_path, capsys):
        spec_file = write_json(tmp_path / "aspec.json", ALIGN_SPEC)
        out = tmp_path / "pairs"
        main(["gen-synth", "--spec", spec_file, "--out", str(out)])
        assert main(["inspect", "--corpus", str(out)]) == 0
        assert "120 features" in capsys.readouterr().out

    def test_roi_order(self, tmp_path, capsys):
        meta = tmp_path / "boxes.tsv"
        meta.write_text(
            "img1\t0\t0\t10\t10\tcat\n"
            "img1\t0\t0\t50\t50\ttree\n"
            "img1\t0\t0\t30\t30\tdog\n"
        )
        assert main(["inspect", "--roi-meta", str(meta),
                     "--question", "where is the cat", "--n-roi", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split("\t")[2] == "cat"   # mentioned wins
        assert lines[1].split("\t")[2] == "tree"  # then larger area

    def test_missing_args(self, capsys):
        assert main(["inspect"]) == 2


class TestUsageErrors:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-synth", "--out", "somewhere"])
        assert exc.value.code == 2

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert main(["gen-synth", "--spec", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2
