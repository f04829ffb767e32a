"""Synthetic QA world for end-to-end fixtures and demos.

Every question owns one passage whose token stream is a closed cycle
(topic -> first value -> second value -> stop marker -> topic), so a
trained bigram model walks the cycle instead of wandering once it leaves
the answer span.  The remaining passages are same-shaped fillers over
disjoint tokens.  Gold answers are the two value tokens and occur verbatim
in exactly one passage, questions mention their topic token twice so
bag-of-words retrieval has a clear margin, and topic passages sort before
fillers by id so exact score ties resolve to the right passage.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from .corpus import AnswerKind, Passage, QaPair


def synthetic_world(
    n_passages: int = 200, n_questions: int = 100
) -> tuple[list[Passage], list[QaPair]]:
    """Deterministic passages and QA pairs; needs n_passages >= n_questions."""
    if n_questions < 1:
        raise ValueError("need at least one question")
    if n_passages < n_questions:
        raise ValueError("need at least one passage per question")
    passages = []
    qa_pairs = []
    for i in range(n_questions):
        topic, alpha, beta, stop = (
            f"topic{i:03d}", f"alpha{i:03d}", f"beta{i:03d}", f"stop{i:03d}",
        )
        passages.append(
            Passage(
                id=f"p{i:03d}",
                text=f"{topic} {alpha} {beta} {stop} {topic} .",
                source="synthetic",
            )
        )
        qa_pairs.append(
            QaPair(
                id=f"q{i:03d}",
                question=f"what goes with {topic} tell the values of {topic}",
                answers=(f"{alpha} {beta}",),
                format=AnswerKind.ENTITY,
            )
        )
    for j in range(n_questions, n_passages):
        filler, gamma, delta, end = (
            f"filler{j:03d}", f"gamma{j:03d}", f"delta{j:03d}", f"end{j:03d}",
        )
        passages.append(
            Passage(
                id=f"p{j:03d}",
                text=f"{filler} {gamma} {delta} {end} {filler} .",
                source="synthetic",
            )
        )
    return passages, qa_pairs


def write_world(out_dir: str | Path, n_passages: int = 200, n_questions: int = 100) -> None:
    """Materialize the world as corpus.jsonl and qa.jsonl under *out_dir*."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    passages, qa_pairs = synthetic_world(n_passages, n_questions)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(json.dumps({"id": p.id, "text": p.text, "source": p.source}, sort_keys=True))
            fh.write("\n")
    with open(out / "qa.jsonl", "w", encoding="utf-8") as fh:
        for qa in qa_pairs:
            record = {
                "id": qa.id,
                "question": qa.question,
                "answers": list(qa.answers),
                "format": qa.format.value,
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def main() -> None:
    parser = argparse.ArgumentParser(description="write a synthetic QA corpus")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--passages", type=int, default=200)
    parser.add_argument("--questions", type=int, default=100)
    args = parser.parse_args()
    write_world(args.out, args.passages, args.questions)
    print(f"wrote corpus.jsonl and qa.jsonl to {args.out}")


if __name__ == "__main__":
    main()
