"""Language-model scoring interface, a trainable bigram model, and its losses.

Two objectives drive knowledge integration, both written as NLL to minimize:

    loss_f  instruction loss: NLL of each gold answer continuing its prompt
    loss_r  domain loss: NLL of each passage token given the tokens before it

and the combined objective lambda1 * loss_r + lambda2 * loss_f with
lambda1 > lambda2 > 0, so raw domain text carries more weight than the
instruction pairs.  ToyLm is the smallest autoregressive model that
exercises every term exactly: a V x V table of bigram logits trained by
plain gradient descent, deterministic under a seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import TokenSeq, Vocabulary


class LmScorer(Protocol):
    """Behavioral interface for anything that can score and extend token text."""

    def encode(self, text: str) -> TokenSeq: ...

    def logprob_cond(self, context: TokenSeq, target: TokenSeq) -> float: ...

    def generate(self, prompt: TokenSeq, max_tokens: int) -> TokenSeq: ...


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the combined objective; lambda1 > lambda2 > 0."""

    lambda1: float = 1.0
    lambda2: float = 0.5

    def __post_init__(self) -> None:
        if not (self.lambda1 > self.lambda2 > 0):
            raise ValueError(
                f"need lambda1 > lambda2 > 0, got {self.lambda1}, {self.lambda2}"
            )


@dataclass(frozen=True)
class TrainExample:
    """An instruction-plus-question input and the answer it should produce."""

    x: TokenSeq
    answer: TokenSeq

    def __post_init__(self) -> None:
        if not self.answer.tokens:
            raise ValueError("train example answer must be non-empty")


def _log_softmax(row: np.ndarray) -> np.ndarray:
    m = float(row.max())
    return row - (m + np.log(np.exp(row - m).sum()))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1)
    return m + np.log(np.exp(logits - m[:, None]).sum(axis=1))


class ToyLm:
    """Trainable bigram model: logits[i, j] scores token j following token i.

    Greedy decoding, seeded initialization, no hidden state; small enough
    that every loss and gradient can be checked by hand.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        seed: int = 0,
        learning_rate: float = 0.1,
        init_scale: float = 0.01,
        logits: np.ndarray | None = None,
    ):
        self.vocab = vocab
        self.seed = seed
        self.learning_rate = learning_rate
        self.step = 0
        if logits is None:
            rng = np.random.default_rng(seed)
            # init_scale=0 gives the uniform model (all logits equal)
            logits = rng.normal(0.0, init_scale, (vocab.size, vocab.size))
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (vocab.size, vocab.size):
            raise ValueError(f"logits must be {vocab.size}x{vocab.size}, got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        self.logits = logits

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def clone(self) -> "ToyLm":
        copy = ToyLm(self.vocab, self.seed, self.learning_rate, logits=self.logits.copy())
        copy.step = self.step
        return copy

    def encode(self, text: str) -> TokenSeq:
        return self.vocab.encode(text)

    def token_logprob(self, prev_id: int, next_id: int) -> float:
        """log P(next token | previous token) under the current table."""
        return float(_log_softmax(self.logits[prev_id])[next_id])

    def logprob_cond(self, context: TokenSeq, target: TokenSeq) -> float:
        """Total log-probability of *target* continuing *context*; always <= 0."""
        if not context.tokens:
            raise ValueError("bigram scoring needs a non-empty context")
        if not target.tokens:
            raise ValueError("target must be non-empty")
        total = 0.0
        prev = context.tokens[-1]
        for tok in target.tokens:
            total += self.token_logprob(prev, tok)
            prev = tok
        return total

    def generate(self, prompt: TokenSeq, max_tokens: int) -> TokenSeq:
        """Greedy continuation of *prompt*, stopping at ``</s>`` or the cap.

        Argmax ties resolve to the lowest token id.  The end token is not
        included in the output.
        """
        if not prompt.tokens:
            raise ValueError("generation needs a non-empty prompt")
        if max_tokens < 0:
            raise ValueError("max_tokens must be >= 0")
        out: list[int] = []
        prev = prompt.tokens[-1]
        for _ in range(max_tokens):
            nxt = int(np.argmax(self.logits[prev]))
            if nxt == self.vocab.eos_id:
                break
            out.append(nxt)
            prev = nxt
        return TokenSeq(tuple(out), self.vocab.decode(out))


def loss_f(model: ToyLm, batch: Sequence[TrainExample]) -> float:
    """Instruction loss: summed NLL of each answer continuing its input."""
    if not batch:
        raise ValueError("loss_f needs a non-empty batch")
    total = 0.0
    for ex in batch:
        total -= model.logprob_cond(ex.x, ex.answer)
    return total


def loss_r(model: ToyLm, passages: Sequence[TokenSeq]) -> float:
    """Domain loss: summed NLL of each passage token given its predecessor.

    Every passage needs at least 2 tokens (one transition).  An empty
    passage list contributes nothing and scores 0.
    """
    total = 0.0
    for seq in passages:
        if len(seq.tokens) < 2:
            raise ValueError(f"passage too short to score transitions: {seq.text!r}")
        for prev, nxt in zip(seq.tokens, seq.tokens[1:]):
            total -= model.token_logprob(prev, nxt)
    return total


def loss_combined(
    model: ToyLm,
    passages: Sequence[TokenSeq],
    batch: Sequence[TrainExample],
    w: LossWeights,
) -> float:
    """The training objective: w.lambda1 * loss_r + w.lambda2 * loss_f."""
    return w.lambda1 * loss_r(model, passages) + w.lambda2 * loss_f(model, batch)


def masked_cond_logprob(scorer: LmScorer, context: TokenSeq, target: TokenSeq) -> float:
    """Log-probability of *target* as a continuation of *context*.

    Infilling a masked slot is realized as conditional continuation, which
    any autoregressive scorer supports; scorers with true bidirectional
    infilling can override logprob_cond to use it.
    """
    if not target.tokens:
        raise ValueError("target must be non-empty")
    return scorer.logprob_cond(context, target)


def _weighted_counts(
    model: ToyLm,
    passages: Sequence[TokenSeq],
    batch: Sequence[TrainExample],
    w: LossWeights,
) -> np.ndarray:
    """Transition counts weighted by the loss each transition belongs to.

    The combined loss depends on the parameters only through these counts:
    loss = sum_i n_i * logsumexp(theta_i) - sum_ij counts_ij * theta_ij.
    """
    counts = np.zeros((model.vocab_size, model.vocab_size))
    for seq in passages:
        if len(seq.tokens) < 2:
            raise ValueError(f"passage too short to score transitions: {seq.text!r}")
        for prev, nxt in zip(seq.tokens, seq.tokens[1:]):
            counts[prev, nxt] += w.lambda1
    for ex in batch:
        if not ex.x.tokens:
            raise ValueError("bigram scoring needs a non-empty context")
        prev = ex.x.tokens[-1]
        for tok in ex.answer.tokens:
            counts[prev, tok] += w.lambda2
            prev = tok
    return counts


def loss_combined_grad(
    model: ToyLm,
    passages: Sequence[TokenSeq],
    batch: Sequence[TrainExample],
    w: LossWeights,
) -> np.ndarray:
    """Exact gradient of loss_combined with respect to the logit table."""
    counts = _weighted_counts(model, passages, batch, w)
    row_totals = counts.sum(axis=1)
    return _softmax_rows(model.logits) * row_totals[:, None] - counts


def train(
    model: ToyLm,
    passages: Sequence[TokenSeq],
    batch: Sequence[TrainExample],
    w: LossWeights,
    steps: int,
) -> ToyLm:
    """Full-batch gradient descent on the combined loss.

    Returns a new model; the input model is left untouched.  Uses the
    model's learning_rate.  Raises if the loss goes non-finite.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not batch:
        raise ValueError("training needs a non-empty instruction batch")
    counts = _weighted_counts(model, passages, batch, w)
    row_totals = counts.sum(axis=1)
    trained = model.clone()
    # overflow shows up as a non-finite loss, which we check for explicitly
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            loss = float(
                row_totals @ _logsumexp_rows(trained.logits) - (counts * trained.logits).sum()
            )
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged (non-finite loss) at step {step}; lower the learning rate"
                )
            grad = _softmax_rows(trained.logits) * row_totals[:, None] - counts
            trained.logits = trained.logits - trained.learning_rate * grad
            trained.step += 1
    return trained


def save_checkpoint(model: ToyLm, path: str | Path) -> None:
    """Write the model as human-diffable JSON: {vocab, logits, seed, step}."""
    payload = {
        "vocab": model.vocab.words(),
        "logits": [[float(v) for v in row] for row in model.logits],
        "seed": model.seed,
        "step": model.step,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str | Path) -> ToyLm:
    """Rebuild a ToyLm from save_checkpoint() output; exact float round-trip."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid checkpoint JSON ({exc.msg})") from exc
    missing = {"vocab", "logits", "seed", "step"} - set(payload)
    if missing:
        raise ValueError(f"{path}: checkpoint missing fields: {sorted(missing)}")
    vocab = Vocabulary(payload["vocab"])
    model = ToyLm(vocab, seed=int(payload["seed"]), logits=np.array(payload["logits"]))
    model.step = int(payload["step"])
    return model
