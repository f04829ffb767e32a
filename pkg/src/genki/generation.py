"""End-to-end answer pipeline: two knowledge paths, format stage, selection.

Three model roles cooperate per question.  The full-knowledge model answers
from a prompt alone (it saw every passage during training), the
retrieved-knowledge model answers from a prompt carrying the top-k
passages, and the postprocessor rewrites each draft into the requested
format.  The ensemble module then picks one of the two postprocessed
candidates.

Training the roles is three invocations of lm_core.train over different
material: all passages, the retrieved subsets, and format-transcription
pairs built by pairing each retrieved-knowledge draft with its gold answer
(the draft rambles, the gold target teaches the format stage both the
wording and where to stop).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import CorpusStats, Passage, QaPair, TokenSeq, Vocabulary
from .ensemble import (
    AnswerCandidate,
    ExternalJudge,
    Provenance,
    ScoreBundle,
    audit_record,
    select,
)
from .lm_core import LmScorer, LossWeights, ToyLm, TrainExample, train
from .metrics import normalize_answer
from .retriever import DenseIndex, Embedder, top_k
from .reward import FormatSpec, PreferencePair, RewardModel

DEFAULT_MAX_OUTPUT_TOKENS = 50

DEFAULT_TEMPLATES = {
    "I": "answer from memory . question : {question}",
    "II": "context : {passages} question : {question}",
    "III": "rewrite the draft as a {format} answer . draft : {draft}",
    "IV": "question : {question} answer one : {answer_1} answer two : {answer_2} pick the better {format} answer",
}


class PipelineError(RuntimeError):
    """A stage of the answer pipeline failed for one question."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the pipeline needs besides models and data."""

    k: int
    weights: LossWeights = field(default_factory=LossWeights)
    format: FormatSpec = None  # type: ignore[assignment]
    prompt_templates: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.format is None:
            raise ValueError("a FormatSpec is required")
        missing = {"I", "II", "III", "IV"} - set(self.prompt_templates)
        if missing:
            raise ValueError(f"prompt templates missing: {sorted(missing)}")
        object.__setattr__(self, "prompt_templates", dict(self.prompt_templates))


def _render(templates: Mapping[str, str], name: str, **slots: str) -> str:
    try:
        return templates[name].format(**slots)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"prompt template {name} references an unknown slot: {exc}") from exc


def _format_slot(format: FormatSpec) -> str:
    return format.description if format.description else format.kind.value


@dataclass(frozen=True)
class PipelineRun:
    """Everything one question produced, including the routing audit."""

    qid: str
    question: str
    retrieved_ids: tuple[str, ...] = ()
    raw_full: str = ""
    raw_retrieved: str = ""
    post_full: str = ""
    post_retrieved: str = ""
    bundle: ScoreBundle | None = None
    final_answer: str = ""
    winner_provenance: str | None = None
    error: str | None = None


@dataclass
class PipelineModels:
    """The frozen models a pipeline run scores and generates with."""

    full: LmScorer
    retrieved: LmScorer
    postp: LmScorer
    reward: RewardModel
    judge: ExternalJudge
    consistency_scorer: LmScorer | None = None  # defaults to the full-knowledge model

    @property
    def scorer(self) -> LmScorer:
        return self.consistency_scorer if self.consistency_scorer is not None else self.full


def answer_paths(
    q: QaPair,
    full_model: LmScorer,
    retr_model: LmScorer,
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    cfg: PipelineConfig,
) -> tuple[AnswerCandidate, AnswerCandidate, tuple[str, ...]]:
    """Generate the two raw answer drafts for one question.

    Returns (full-knowledge candidate, retrieved-knowledge candidate,
    retrieved passage ids).  A failure on either path raises PipelineError
    naming the path.
    """
    results = top_k(index, embedder.embed_question(q.question), cfg.k)
    retrieved_ids = tuple(r.passage_id for r in results)
    missing = [pid for pid in retrieved_ids if pid not in passages]
    if missing:
        raise PipelineError(f"index returned unknown passage ids: {missing}")
    joined = " ".join(passages[pid].text for pid in retrieved_ids)

    prompt_full = _render(cfg.prompt_templates, "I", question=q.question)
    try:
        draft_full = full_model.generate(full_model.encode(prompt_full), cfg.max_output_tokens)
        cand_full = AnswerCandidate(draft_full.text, Provenance.FULL_KNOWLEDGE)
    except Exception as exc:
        raise PipelineError(f"full-knowledge path failed: {exc}") from exc

    prompt_retr = _render(cfg.prompt_templates, "II", passages=joined, question=q.question)
    try:
        draft_retr = retr_model.generate(retr_model.encode(prompt_retr), cfg.max_output_tokens)
        cand_retr = AnswerCandidate(draft_retr.text, Provenance.RETRIEVED_KNOWLEDGE)
    except Exception as exc:
        raise PipelineError(f"retrieved-knowledge path failed: {exc}") from exc
    return cand_full, cand_retr, retrieved_ids


def postprocess(
    cand: AnswerCandidate,
    postp_model: LmScorer,
    format: FormatSpec,
    cfg: PipelineConfig,
) -> AnswerCandidate:
    """Rewrite a raw draft into the requested format.

    Output length is capped at format.max_tokens.  An empty rewrite is an
    error rather than a silent empty answer.
    """
    if cand.postprocessed:
        raise ValueError("candidate is already postprocessed")
    prompt = _render(
        cfg.prompt_templates, "III", format=_format_slot(format), draft=cand.text
    )
    try:
        out = postp_model.generate(postp_model.encode(prompt), format.max_tokens)
    except Exception as exc:
        raise PipelineError(f"postprocess failed for {cand.provenance.value}: {exc}") from exc
    if not out.text.strip():
        raise PipelineError(f"postprocess produced empty output for {cand.provenance.value}")
    return AnswerCandidate(out.text, cand.provenance, postprocessed=True)


def _run_one(
    qa: QaPair,
    models: PipelineModels,
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    stats: CorpusStats,
    cfg: PipelineConfig,
) -> PipelineRun:
    retrieved_ids: tuple[str, ...] = ()
    raw_full = raw_retrieved = post_full_text = post_retr_text = ""
    try:
        cand_full, cand_retr, retrieved_ids = answer_paths(
            qa, models.full, models.retrieved, index, embedder, passages, cfg
        )
        raw_full, raw_retrieved = cand_full.text, cand_retr.text
        post_full = postprocess(cand_full, models.postp, cfg.format, cfg)
        post_full_text = post_full.text
        post_retr = postprocess(cand_retr, models.postp, cfg.format, cfg)
        post_retr_text = post_retr.text
        winner, bundle = select(
            qa.question, post_full, post_retr, models.scorer, stats,
            models.reward, models.judge, cfg.format,
        )
        return PipelineRun(
            qid=qa.id,
            question=qa.question,
            retrieved_ids=retrieved_ids,
            raw_full=raw_full,
            raw_retrieved=raw_retrieved,
            post_full=post_full_text,
            post_retrieved=post_retr_text,
            bundle=bundle,
            final_answer=winner.text,
            winner_provenance=winner.provenance.value,
        )
    except Exception as exc:  # per-question isolation: record and move on
        return PipelineRun(
            qid=qa.id,
            question=qa.question,
            retrieved_ids=retrieved_ids,
            raw_full=raw_full,
            raw_retrieved=raw_retrieved,
            post_full=post_full_text,
            post_retrieved=post_retr_text,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_pipeline(
    questions: Sequence[QaPair],
    models: PipelineModels,
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    stats: CorpusStats,
    cfg: PipelineConfig,
    audit_path: str | Path | None = None,
    jobs: int = 1,
) -> list[PipelineRun]:
    """Answer every question; failures are recorded per question, not raised.

    Questions are independent, so jobs > 1 fans them out over threads;
    results and audit rows keep the input order either way.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1:
        runs = [
            _run_one(qa, models, index, embedder, passages, stats, cfg) for qa in questions
        ]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(
                pool.map(
                    lambda qa: _run_one(qa, models, index, embedder, passages, stats, cfg),
                    questions,
                )
            )
    if audit_path is not None:
        with open(audit_path, "w", encoding="utf-8") as fh:
            for run in runs:
                if run.bundle is None:
                    continue
                winner = AnswerCandidate(
                    run.final_answer, Provenance(run.winner_provenance), postprocessed=True
                )
                fh.write(json.dumps(audit_record(run.qid, run.bundle, winner), sort_keys=True))
                fh.write("\n")
    return runs


def run_record(run: PipelineRun) -> dict:
    """One JSONL-ready dict for a pipeline run."""
    bundle = None
    if run.bundle is not None:
        bundle = {
            "cs1": run.bundle.cs1,
            "cs2": run.bundle.cs2,
            "rm1": run.bundle.rm1,
            "rm2": run.bundle.rm2,
            "len1": run.bundle.len1,
            "len2": run.bundle.len2,
            "s_c": run.bundle.s_c,
            "route": run.bundle.route.value,
            "reward_guard": run.bundle.reward_guard,
        }
    return {
        "qid": run.qid,
        "question": run.question,
        "retrieved_ids": list(run.retrieved_ids),
        "raw_full": run.raw_full,
        "raw_retrieved": run.raw_retrieved,
        "post_full": run.post_full,
        "post_retrieved": run.post_retrieved,
        "bundle": bundle,
        "final_answer": run.final_answer,
        "winner_provenance": run.winner_provenance,
        "error": run.error,
    }


@dataclass(frozen=True)
class TrainedModels:
    """The three trained model roles."""

    full: ToyLm
    retrieved: ToyLm
    postp: ToyLm


def build_vocabulary(
    passages: Sequence[Passage], qa_pairs: Sequence[QaPair], cfg: PipelineConfig
) -> Vocabulary:
    """One vocabulary covering passages, questions, answers, and prompt text."""
    texts = [p.text for p in passages]
    for qa in qa_pairs:
        texts.append(qa.question)
        texts.extend(qa.answers)
    texts.extend(cfg.prompt_templates.values())
    texts.append(_format_slot(cfg.format))
    return Vocabulary.from_texts(texts)


def _with_eos(seq: TokenSeq, vocab: Vocabulary) -> TokenSeq:
    return TokenSeq(seq.tokens + (vocab.eos_id,), seq.text)


def retrieved_passages(
    questions: Sequence[QaPair],
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    k: int,
) -> list[Passage]:
    """Union of every question's top-k passages, first-seen order, no repeats."""
    seen: set[str] = set()
    union: list[Passage] = []
    for qa in questions:
        for result in top_k(index, embedder.embed_question(qa.question), k):
            if result.passage_id not in seen:
                seen.add(result.passage_id)
                union.append(passages[result.passage_id])
    return union


def train_pipeline_models(
    passages: Sequence[Passage],
    train_qa: Sequence[QaPair],
    index: DenseIndex,
    embedder: Embedder,
    vocab: Vocabulary,
    cfg: PipelineConfig,
    steps: int = 50,
    learning_rate: float = 0.5,
) -> TrainedModels:
    """Train the three model roles from scratch.

    The full-knowledge role sees every passage, the retrieved-knowledge role
    only the union of top-k retrievals, and the format role trains purely on
    instruction pairs mapping each retrieved-knowledge draft to its gold
    answer with an end token appended, which is what teaches it to stop.
    """
    if not train_qa:
        raise ValueError("training needs at least one qa pair")
    passage_map = {p.id: p for p in passages}
    passage_seqs = [vocab.encode(p.text) for p in passages]

    def instruction_batch(template_name: str) -> list[TrainExample]:
        batch = []
        for qa in train_qa:
            if template_name == "I":
                prompt = _render(cfg.prompt_templates, "I", question=qa.question)
            else:
                retrieved = top_k(index, embedder.embed_question(qa.question), cfg.k)
                joined = " ".join(
                    passage_map[r.passage_id].text
                    for r in retrieved
                    if r.passage_id in passage_map
                )
                prompt = _render(cfg.prompt_templates, "II", passages=joined, question=qa.question)
            batch.append(TrainExample(vocab.encode(prompt), vocab.encode(qa.answers[0])))
        return batch

    def fresh() -> ToyLm:
        return ToyLm(vocab, seed=cfg.seed, learning_rate=learning_rate)

    full = train(fresh(), passage_seqs, instruction_batch("I"), cfg.weights, steps)

    retr_union = retrieved_passages(train_qa, index, embedder, passage_map, cfg.k)
    retr_seqs = [vocab.encode(p.text) for p in retr_union]
    retrieved = train(fresh(), retr_seqs, instruction_batch("II"), cfg.weights, steps)

    format_batch = []
    for qa in train_qa:
        draft = _draft(qa, retrieved, index, embedder, passage_map, cfg)
        prompt = _render(
            cfg.prompt_templates, "III", format=_format_slot(cfg.format), draft=draft
        )
        target = _with_eos(vocab.encode(qa.answers[0]), vocab)
        format_batch.append(TrainExample(vocab.encode(prompt), target))
    postp = train(fresh(), [], format_batch, cfg.weights, steps)
    return TrainedModels(full=full, retrieved=retrieved, postp=postp)


def _draft(
    qa: QaPair,
    model: LmScorer,
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    cfg: PipelineConfig,
) -> str:
    results = top_k(index, embedder.embed_question(qa.question), cfg.k)
    joined = " ".join(passages[r.passage_id].text for r in results if r.passage_id in passages)
    prompt = _render(cfg.prompt_templates, "II", passages=joined, question=qa.question)
    return model.generate(model.encode(prompt), cfg.max_output_tokens).text


def drafts_for_questions(
    questions: Sequence[QaPair],
    model: LmScorer,
    index: DenseIndex,
    embedder: Embedder,
    passages: Mapping[str, Passage],
    cfg: PipelineConfig,
) -> dict[str, str]:
    """Retrieved-knowledge drafts keyed by question id."""
    return {qa.id: _draft(qa, model, index, embedder, passages, cfg) for qa in questions}


def preference_pairs_from_drafts(
    questions: Sequence[QaPair], drafts: Mapping[str, str], format: FormatSpec
) -> list[PreferencePair]:
    """Preference pairs with gold answers positive and non-matching drafts negative.

    Questions whose draft already matches the gold (or is empty) contribute
    nothing; there is no preference signal to extract from them.
    """
    pairs = []
    for qa in questions:
        draft = drafts.get(qa.id, "")
        if not draft.strip():
            continue
        gold = qa.answers[0]
        if normalize_answer(gold) == normalize_answer(draft):
            continue
        pairs.append(
            PreferencePair(positive=gold, negative=draft, format=format, question=qa.question)
        )
    return pairs
