"""Answer and retrieval metrics.

Answer strings are compared after lowercasing and trimming.  A document is
pseudo-relevant when any annotated answer occurs in its text; the default
containment test is plain substring matching, with whole-word matching
available behind ``word_boundary`` for sensitivity analysis.  Every reported
value lies in [0, 1] and dataset means are unweighted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .pipeline import joint_select
from .store import atomic_write_text
from .types import EngineError, EvalRecord, normalize_answer


def count_occurrences(y: str, answers: Iterable[str]) -> int:
    """Multiset multiplicity of ``y`` among the annotated answers."""
    target = normalize_answer(y)
    return sum(1 for a in answers if normalize_answer(a) == target)


def vqa_score(y: str, answers: Sequence[str]) -> float:
    """min(occurrences / 3, 1): partial credit for less popular answers."""
    if not answers:
        raise EngineError("empty answer set")
    return min(count_occurrences(y, answers) / 3.0, 1.0)


def exact_match(y: str, answers: Sequence[str]) -> int:
    if not answers:
        raise EngineError("empty answer set")
    return min(count_occurrences(y, answers), 1)


def doc_hit(doc_text: str, answers: Iterable[str], word_boundary: bool = False) -> int:
    """1 iff any normalized answer occurs in the normalized document text."""
    text = doc_text.lower()
    for a in answers:
        needle = normalize_answer(a)
        if not needle:
            continue
        if word_boundary:
            if re.search(rf"\b{re.escape(needle)}\b", text):
                return 1
        elif needle in text:
            return 1
    return 0


def pr_recall_at_k(
    doc_texts: Sequence[str],
    answers: Sequence[str],
    k: int,
    word_boundary: bool = False,
) -> int:
    """1 iff the top-K documents contain at least one pseudo-relevant one.

    When fewer than K documents were retrieved the available ones are
    evaluated; the report builder flags such records.
    """
    if k < 1:
        raise EngineError("k must be >= 1")
    top = doc_texts[:k]
    return min(sum(doc_hit(t, answers, word_boundary) for t in top), 1)


def hit_success_rate(y_hat: str, y_nk: str, answers: Sequence[str]) -> int:
    """1 iff retrieval-augmented answer is right and the no-knowledge one is wrong."""
    return int(exact_match(y_hat, answers) == 1 and exact_match(y_nk, answers) == 0)


@dataclass
class MetricReport:
    """Per-question metric values plus dataset means."""

    ks: tuple[int, ...]
    word_boundary: bool
    per_question: dict = field(default_factory=dict)
    means: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "policy": {
                "doc_hit": "word_boundary" if self.word_boundary else "substring",
                "answer_normalization": "lowercase+trim",
            },
            "ks": list(self.ks),
            "counts": self.counts,
            "means": self.means,
            "per_question": self.per_question,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, path: Path | str) -> None:
        atomic_write_text(path, self.to_json())


def evaluate(
    records: Sequence[EvalRecord],
    doc_texts: Mapping[str, str],
    ks: Sequence[int],
    probs_by_qid: Optional[Mapping[str, Sequence[float]]] = None,
    word_boundary: bool = False,
) -> MetricReport:
    """Score a batch of questions.

    Retrieval metrics need ``doc_texts`` for the retrieved ids.  Answer
    metrics are computed when a record carries candidate answers and
    ``probs_by_qid`` supplies its retrieval probabilities: the generated
    answer is the joint-probability arg-max.  Records missing the
    no-knowledge answer are excluded from the hit-success mean but counted.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    report = MetricReport(ks=ks, word_boundary=word_boundary)
    sums: dict[str, float] = {f"pr_recall@{k}": 0.0 for k in ks}
    sums.update({"vqa_score": 0.0, "em": 0.0, "hsr": 0.0})
    n_answer = 0
    n_hsr = 0
    n_truncated = 0
    n_missing_nk = 0

    for rec in records:
        row: dict = {}
        texts = [doc_texts.get(d, "") for d in rec.retrieved_doc_ids]
        for k in ks:
            v = pr_recall_at_k(texts, rec.answers, k, word_boundary)
            row[f"pr_recall@{k}"] = v
            sums[f"pr_recall@{k}"] += v
        if ks and len(texts) < max(ks):
            row["truncated"] = True
            n_truncated += 1

        probs = None if probs_by_qid is None else probs_by_qid.get(rec.question_id)
        if rec.candidate_answers and probs is not None:
            chosen = joint_select(rec.candidate_answers, probs)
            row["generated_answer"] = chosen.answer
            row["selected_doc"] = (
                rec.retrieved_doc_ids[chosen.index]
                if chosen.index < len(rec.retrieved_doc_ids)
                else None
            )
            row["vqa_score"] = vqa_score(chosen.answer, rec.answers)
            row["em"] = exact_match(chosen.answer, rec.answers)
            sums["vqa_score"] += row["vqa_score"]
            sums["em"] += row["em"]
            n_answer += 1
            if rec.no_knowledge_answer is not None:
                row["hsr"] = hit_success_rate(
                    chosen.answer, rec.no_knowledge_answer, rec.answers
                )
                sums["hsr"] += row["hsr"]
                n_hsr += 1
            else:
                n_missing_nk += 1
        report.per_question[rec.question_id] = row

    n = len(records)
    report.counts = {
        "questions": n,
        "with_answer_metrics": n_answer,
        "with_hsr": n_hsr,
        "missing_no_knowledge_answer": n_missing_nk,
        "truncated_rankings": n_truncated,
    }
    for k in ks:
        report.means[f"pr_recall@{k}"] = sums[f"pr_recall@{k}"] / n if n else 0.0
    if n_answer:
        report.means["vqa_score"] = sums["vqa_score"] / n_answer
        report.means["em"] = sums["em"] / n_answer
    if n_hsr:
        report.means["hsr"] = sums["hsr"] / n_hsr
    return report
