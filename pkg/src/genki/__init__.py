"""Retrieval-augmented QA: retrieve passages, train knowledge-integrated
generators, format drafts, and pick the better of two answer paths.

The public surface re-exported here is everything a pipeline caller needs;
the command line in genki.cli wires the same pieces together from files.
"""

from .clients import (
    AUTH_ENV_VAR,
    ClientError,
    EndpointConfig,
    HttpStatusError,
    ProtocolError,
    RemoteJudge,
    RemoteScorer,
    TransportError,
    remote_judge,
    remote_scorer,
)
from .consistency import ConsistencyScore, consistency
from .corpus import (
    EOS,
    UNK,
    AnswerKind,
    CorpusError,
    CorpusStats,
    Passage,
    QaPair,
    TokenSeq,
    Vocabulary,
    build_stats,
    ingest_passages,
    ingest_qa_pairs,
    normalize_text,
    split_sentences,
    tokenize,
)
from .ensemble import (
    AnswerCandidate,
    Choice,
    ExternalJudge,
    JudgeError,
    Provenance,
    Route,
    ScoreBundle,
    StubJudge,
    audit_record,
    judgment_score,
    resolve_winner,
    select,
    stub_judge,
)
from .generation import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_TEMPLATES,
    PipelineConfig,
    PipelineError,
    PipelineModels,
    PipelineRun,
    TrainedModels,
    answer_paths,
    build_vocabulary,
    drafts_for_questions,
    postprocess,
    preference_pairs_from_drafts,
    run_pipeline,
    run_record,
    train_pipeline_models,
)
from .lm_core import (
    LmScorer,
    LossWeights,
    ToyLm,
    TrainExample,
    load_checkpoint,
    loss_combined,
    loss_combined_grad,
    loss_f,
    loss_r,
    masked_cond_logprob,
    save_checkpoint,
    train,
)
from .metrics import (
    FitResult,
    LineFit,
    MetricReport,
    QuestionScore,
    bleu,
    evaluate_answers,
    exact_match,
    normalize_answer,
    quality_recall_points,
    report_tsv,
    retrieval_quality,
    rouge_l,
    text_f1,
    text_recall,
    two_segment_fit,
)
from .retriever import (
    DenseIndex,
    Embedder,
    HashEmbedder,
    IndexFormatError,
    RetrievalResult,
    load_index,
    save_index,
    similarity,
    top_k,
)
from .reward import (
    FEATURE_NAMES,
    FormatSpec,
    PreferencePair,
    RewardModel,
    ToyRewardModel,
    extract_features,
    load_reward_checkpoint,
    pairwise_loss,
    pairwise_loss_grad,
    save_reward_checkpoint,
    toy_reward_model,
    train_reward,
)
from .textstats import OOV_WORDS, SentenceWeight, TextStatsError, isf, iwf, nisf

__version__ = "0.1.0"

__all__ = [
    "AUTH_ENV_VAR",
    "AnswerCandidate",
    "AnswerKind",
    "Choice",
    "ClientError",
    "ConsistencyScore",
    "CorpusError",
    "CorpusStats",
    "DEFAULT_MAX_OUTPUT_TOKENS",
    "DEFAULT_TEMPLATES",
    "DenseIndex",
    "Embedder",
    "EndpointConfig",
    "EOS",
    "ExternalJudge",
    "FEATURE_NAMES",
    "FitResult",
    "FormatSpec",
    "HashEmbedder",
    "HttpStatusError",
    "IndexFormatError",
    "JudgeError",
    "LineFit",
    "LmScorer",
    "LossWeights",
    "MetricReport",
    "OOV_WORDS",
    "Passage",
    "PipelineConfig",
    "PipelineError",
    "PipelineModels",
    "PipelineRun",
    "PreferencePair",
    "ProtocolError",
    "Provenance",
    "QaPair",
    "QuestionScore",
    "RemoteJudge",
    "RemoteScorer",
    "RetrievalResult",
    "RewardModel",
    "Route",
    "ScoreBundle",
    "SentenceWeight",
    "StubJudge",
    "TextStatsError",
    "TokenSeq",
    "ToyLm",
    "ToyRewardModel",
    "TrainExample",
    "TrainedModels",
    "TransportError",
    "UNK",
    "Vocabulary",
    "answer_paths",
    "audit_record",
    "bleu",
    "build_stats",
    "build_vocabulary",
    "consistency",
    "drafts_for_questions",
    "evaluate_answers",
    "exact_match",
    "extract_features",
    "ingest_passages",
    "ingest_qa_pairs",
    "isf",
    "iwf",
    "judgment_score",
    "load_checkpoint",
    "load_index",
    "load_reward_checkpoint",
    "loss_combined",
    "loss_combined_grad",
    "loss_f",
    "loss_r",
    "masked_cond_logprob",
    "nisf",
    "normalize_answer",
    "normalize_text",
    "pairwise_loss",
    "pairwise_loss_grad",
    "postprocess",
    "preference_pairs_from_drafts",
    "quality_recall_points",
    "remote_judge",
    "remote_scorer",
    "report_tsv",
    "resolve_winner",
    "retrieval_quality",
    "rouge_l",
    "run_pipeline",
    "run_record",
    "save_checkpoint",
    "save_index",
    "save_reward_checkpoint",
    "select",
    "similarity",
    "split_sentences",
    "stub_judge",
    "text_f1",
    "text_recall",
    "tokenize",
    "top_k",
    "toy_reward_model",
    "train",
    "train_pipeline_models",
    "train_reward",
    "two_segment_fit",
]
