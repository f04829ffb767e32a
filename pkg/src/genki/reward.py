"""Reward scoring of (answer, format) pairs and pairwise preference training.

The training loss for a preference pair is -log sigmoid(score(A+) -
score(A-)): zero-margin pairs cost ln 2 and the loss falls monotonically as
the positive answer pulls ahead.  The toy model is a linear scorer over
three hand features; anything fancier (embedding-backed scorers) plugs in
through the same score(answer, format) interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import AnswerKind, tokenize

FEATURE_NAMES = ("answer_length", "format_overlap", "question_fraction")
CHECKPOINT_SCHEMA_VERSION = 1


class RewardModel(Protocol):
    """Scores how well an answer satisfies a format request."""

    def score(self, answer: str, format: "FormatSpec") -> float: ...


@dataclass(frozen=True)
class FormatSpec:
    """A requested answer shape: kind, length cap, and prompt wording."""

    kind: AnswerKind
    max_tokens: int
    description: str = ""

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class PreferencePair:
    """A preferred answer and a rejected one for the same format request.

    The question is optional context; the question-fraction feature reads it
    when present.
    """

    positive: str
    negative: str
    format: FormatSpec
    question: str = ""

    def __post_init__(self) -> None:
        if self.positive == self.negative:
            raise ValueError("preference pair needs two distinct answers")


def extract_features(answer: str, format: FormatSpec, question: str = "") -> np.ndarray:
    """The three hand features the toy model scores with.

    answer_length: answer token count.  format_overlap: distinct answer
    tokens also present in the format description.  question_fraction:
    fraction of distinct answer tokens that appear in the question (0 with
    no question).
    """
    toks = tokenize(answer)
    distinct = set(toks)
    format_words = set(tokenize(format.description))
    question_words = set(tokenize(question))
    fraction = len(distinct & question_words) / len(distinct) if distinct and question else 0.0
    return np.array([float(len(toks)), float(len(distinct & format_words)), fraction])


class ToyRewardModel:
    """Linear reward over extract_features(); weights train on preference pairs."""

    def __init__(
        self,
        weights: np.ndarray | Sequence[float] | None = None,
        seed: int = 0,
        learning_rate: float = 0.05,
        question: str = "",
    ):
        self.seed = seed
        self.learning_rate = learning_rate
        self.question = question
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = rng.normal(0.0, 0.01, len(FEATURE_NAMES))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"weights must have shape ({len(FEATURE_NAMES)},)")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        self.weights = weights

    def bind_question(self, question: str) -> "ToyRewardModel":
        """A view of this model that scores the question-fraction feature

        against *question*.  Shares the trained weights.
        """
        bound = ToyRewardModel(self.weights, self.seed, self.learning_rate, question)
        return bound

    def score(self, answer: str, format: FormatSpec) -> float:
        return float(self.weights @ extract_features(answer, format, self.question))


def toy_reward_model(
    weights: np.ndarray | Sequence[float] | None = None, seed: int = 0
) -> ToyRewardModel:
    """A fresh linear reward model; explicit weights override the seeded init."""
    return ToyRewardModel(weights=weights, seed=seed)


def _score_pair(model: RewardModel, pair: PreferencePair) -> tuple[float, float]:
    scorer = model
    if pair.question and isinstance(model, ToyRewardModel):
        scorer = model.bind_question(pair.question)
    return scorer.score(pair.positive, pair.format), scorer.score(pair.negative, pair.format)


def pairwise_loss(model: RewardModel, pair: PreferencePair) -> float:
    """-log sigmoid(score(positive) - score(negative)); ln 2 at zero margin."""
    pos, neg = _score_pair(model, pair)
    return float(np.logaddexp(0.0, -(pos - neg)))


def pairwise_loss_grad(model: ToyRewardModel, pair: PreferencePair) -> np.ndarray:
    """Exact gradient of pairwise_loss with respect to the toy weights."""
    question = pair.question or model.question
    delta = extract_features(pair.positive, pair.format, question) - extract_features(
        pair.negative, pair.format, question
    )
    margin = float(model.weights @ delta)
    # d/dm of -log sigmoid(m) is -sigmoid(-m); exp(-softplus(m)) is a
    # stable sigmoid(-m)
    return -np.exp(-np.logaddexp(0.0, margin)) * delta


def train_reward(
    model: ToyRewardModel, pairs: Sequence[PreferencePair], steps: int
) -> ToyRewardModel:
    """Full-batch gradient descent on the mean pairwise loss.

    Returns a new model; steps=0 returns an identical copy.  Deterministic
    for a fixed starting model.
    """
    if not pairs:
        raise ValueError("train_reward needs a non-empty pair list")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    trained = ToyRewardModel(
        model.weights.copy(), model.seed, model.learning_rate, model.question
    )
    for step in range(steps):
        grad = np.zeros_like(trained.weights)
        for pair in pairs:
            grad += pairwise_loss_grad(trained, pair)
        grad /= len(pairs)
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"reward training diverged (non-finite gradient) at step {step}")
        trained.weights = trained.weights - trained.learning_rate * grad
    return trained


def save_reward_checkpoint(model: ToyRewardModel, path: str | Path) -> None:
    """Write the weights plus the feature schema they were trained against."""
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "features": list(FEATURE_NAMES),
        "weights": [float(v) for v in model.weights],
        "seed": model.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_reward_checkpoint(path: str | Path) -> ToyRewardModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid checkpoint JSON ({exc.msg})") from exc
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {payload.get('schema_version')!r}")
    if payload.get("features") != list(FEATURE_NAMES):
        raise ValueError(f"{path}: feature schema mismatch: {payload.get('features')!r}")
    return ToyRewardModel(weights=np.array(payload["weights"]), seed=int(payload.get("seed", 0)))
