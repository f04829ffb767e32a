"""Command-line surface: ingest, index, retrieve, train, answer, eval, analyze.

Stages communicate through files (index binary, model checkpoints, JSONL
runs), so each command can be rerun or audited on its own.  Every command
is deterministic given identical inputs and seed: reruns produce
byte-identical outputs.

Exit codes: 0 success, 2 configuration errors, 3 data errors (missing or
malformed files), 4 model errors (training or backend failures).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

from .clients import ClientError, EndpointConfig, RemoteJudge, RemoteScorer
from .corpus import (
    AnswerKind,
    CorpusError,
    Passage,
    QaPair,
    build_stats,
    ingest_passages,
    ingest_qa_pairs,
)
from .ensemble import stub_judge
from .generation import (
    DEFAULT_TEMPLATES,
    PipelineConfig,
    PipelineModels,
    build_vocabulary,
    drafts_for_questions,
    preference_pairs_from_drafts,
    run_pipeline,
    run_record,
    train_pipeline_models,
)
from .lm_core import LossWeights, load_checkpoint, save_checkpoint
from .metrics import (
    evaluate_answers,
    quality_recall_points,
    report_tsv,
    retrieval_quality,
    text_recall,
    two_segment_fit,
)
from .retriever import (
    DenseIndex,
    HashEmbedder,
    IndexFormatError,
    load_index,
    save_index,
    top_k,
)
from .reward import FormatSpec, ToyRewardModel, load_reward_checkpoint, save_reward_checkpoint, train_reward

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4


class ConfigError(Exception):
    """Bad configuration: file contents, flag values, or missing settings."""


class DataError(Exception):
    """Missing or malformed input data or stage artifacts."""


class ModelError(Exception):
    """Training or model-backend failure."""


@dataclass
class CliConfig:
    """Settings from the config file; command-line flags override them."""

    k: int = 2
    lambda1: float = 1.0
    lambda2: float = 0.5
    seed: int = 0
    jobs: int = 1
    backend: str = "toy"
    max_output_tokens: int = 50
    corpus: str = ""
    qa: str = ""
    index: str = ""
    models: str = ""
    out: str = ""
    format_kind: str = "entity"
    format_max_tokens: int = 8
    format_description: str = ""
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    embedder_dim: int = 256
    embedder_seed: int = 0
    train_steps: int = 50
    train_learning_rate: float = 0.5
    reward_steps: int = 100
    reward_learning_rate: float = 0.05
    remote_scorer_url: str = ""
    remote_judge_url: str = ""
    remote_timeout_ms: int = 10_000
    remote_retries: int = 0
    remote_max_in_flight: int = 4


_NESTED_SECTIONS = {
    "format": {"kind": "format_kind", "max_tokens": "format_max_tokens",
               "description": "format_description"},
    "embedder": {"dim": "embedder_dim", "seed": "embedder_seed"},
    "train": {"steps": "train_steps", "learning_rate": "train_learning_rate",
              "reward_steps": "reward_steps", "reward_learning_rate": "reward_learning_rate"},
    "remote": {"scorer_url": "remote_scorer_url", "judge_url": "remote_judge_url",
               "timeout_ms": "remote_timeout_ms", "retries": "remote_retries",
               "max_in_flight": "remote_max_in_flight"},
}


def _load_config_file(path: str) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if path.endswith(".toml"):
        try:
            import tomllib  # Python 3.11+
        except ImportError:
            try:
                import tomli as tomllib  # type: ignore[no-redef]
            except ImportError:
                raise ConfigError(f"{path}: TOML support needs Python 3.11+ or the tomli package") from None
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(parsed, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return parsed


def load_cli_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, then the config file, then command-line flags; later wins."""
    cfg = CliConfig()
    scalar_names = {f.name for f in fields(CliConfig)} - {"templates"}
    if getattr(args, "config", None):
        data = _load_config_file(args.config)
        for key, value in data.items():
            if key == "templates":
                if not isinstance(value, dict):
                    raise ConfigError("config field 'templates' must be a table of strings")
                cfg.templates = {**cfg.templates, **value}
            elif key in _NESTED_SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be a table")
                for sub_key, sub_value in value.items():
                    target = _NESTED_SECTIONS[key].get(sub_key)
                    if target is None:
                        raise ConfigError(f"unknown config field {key}.{sub_key}")
                    setattr(cfg, target, sub_value)
            elif key in scalar_names:
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"unknown config field {key!r}")
    for name in ("k", "lambda1", "lambda2", "seed", "jobs", "backend",
                 "max_output_tokens", "corpus", "qa", "index", "models", "out"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, name, value)
    if cfg.backend not in ("toy", "remote"):
        raise ConfigError(f"backend must be 'toy' or 'remote', got {cfg.backend!r}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


def _pipeline_config(cfg: CliConfig) -> PipelineConfig:
    try:
        weights = LossWeights(cfg.lambda1, cfg.lambda2)
        fmt = FormatSpec(
            AnswerKind(cfg.format_kind), cfg.format_max_tokens, cfg.format_description
        )
        return PipelineConfig(
            k=cfg.k,
            weights=weights,
            format=fmt,
            prompt_templates=cfg.templates,
            max_output_tokens=cfg.max_output_tokens,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _need(value: str, flag: str, purpose: str) -> str:
    if not value:
        raise ConfigError(f"{purpose} required: pass {flag} or set it in the config file")
    return value


def _require_file(path: str, producer: str) -> str:
    if not Path(path).is_file():
        raise DataError(f"missing {path}; produce it with: {producer}")
    return path


def _load_passages(path: str) -> list[Passage]:
    try:
        return ingest_passages(_require_file(path, "your corpus exporter (JSONL of id/text)"))
    except CorpusError as exc:
        raise DataError(str(exc)) from exc


def _load_qa(path: str) -> list[QaPair]:
    try:
        return ingest_qa_pairs(_require_file(path, "your QA exporter (JSONL of id/question/answers/format)"))
    except CorpusError as exc:
        raise DataError(str(exc)) from exc


def _write_json(path: Path, payload: object) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def cmd_ingest(cfg: CliConfig, args: argparse.Namespace) -> int:
    passages = _load_passages(_need(cfg.corpus, "--corpus", "a passage file"))
    qa_pairs = _load_qa(cfg.qa) if cfg.qa else []
    try:
        stats = build_stats(passages)
    except CorpusError as exc:
        raise DataError(str(exc)) from exc
    summary = {
        "passages": len(passages),
        "qa_pairs": len(qa_pairs),
        "sentences": stats.sentence_count,
        "vocab": stats.vocab_size,
        "words": sum(stats.word_freq.values()),
    }
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "stats.json", summary)
    print(
        f"ingested {summary['passages']} passages, {summary['qa_pairs']} qa pairs, "
        f"{summary['sentences']} sentences, vocab {summary['vocab']}"
    )
    return EXIT_OK


def cmd_index(cfg: CliConfig, args: argparse.Namespace) -> int:
    passages = _load_passages(_need(cfg.corpus, "--corpus", "a passage file"))
    out = _need(cfg.out, "--out", "an index output path")
    embedder = HashEmbedder(cfg.embedder_dim, cfg.embedder_seed)
    try:
        index = DenseIndex.build(passages, embedder)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    print(f"indexed {index.count} passages (dim {index.dim}) -> {out}")
    return EXIT_OK


def _load_index_checked(path: str) -> DenseIndex:
    _require_file(path, "genki index --corpus <corpus.jsonl> --out " + path)
    try:
        return load_index(path)
    except IndexFormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_retrieve(cfg: CliConfig, args: argparse.Namespace) -> int:
    index = _load_index_checked(_need(cfg.index, "--index", "an index file"))
    qa_pairs = _load_qa(_need(cfg.qa, "--qa", "a QA file"))
    embedder = HashEmbedder(index.dim, cfg.embedder_seed)
    records = []
    for qa in qa_pairs:
        results = top_k(index, embedder.embed_question(qa.question), cfg.k)
        records.append(
            {
                "qid": qa.id,
                "retrieved": [
                    {"passage_id": r.passage_id, "score": r.score, "rank": r.rank}
                    for r in results
                ],
            }
        )
    if cfg.out:
        _write_jsonl(Path(cfg.out), records)
        print(f"retrieved top-{cfg.k} for {len(records)} questions -> {cfg.out}")
    else:
        for record in records:
            print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_train(cfg: CliConfig, args: argparse.Namespace) -> int:
    pipeline_cfg = _pipeline_config(cfg)
    passages = _load_passages(_need(cfg.corpus, "--corpus", "a passage file"))
    qa_pairs = _load_qa(_need(cfg.qa, "--qa", "a QA file"))
    index = _load_index_checked(_need(cfg.index, "--index", "an index file"))
    out = Path(_need(cfg.out, "--out", "a model output directory"))
    out.mkdir(parents=True, exist_ok=True)
    embedder = HashEmbedder(index.dim, cfg.embedder_seed)
    vocab = build_vocabulary(passages, qa_pairs, pipeline_cfg)
    passage_map = {p.id: p for p in passages}
    try:
        models = train_pipeline_models(
            passages, qa_pairs, index, embedder, vocab, pipeline_cfg,
            steps=cfg.train_steps, learning_rate=cfg.train_learning_rate,
        )
        drafts = drafts_for_questions(
            qa_pairs, models.retrieved, index, embedder, passage_map, pipeline_cfg
        )
        pairs = preference_pairs_from_drafts(qa_pairs, drafts, pipeline_cfg.format)
        reward = ToyRewardModel(seed=cfg.seed, learning_rate=cfg.reward_learning_rate)
        if pairs:
            reward = train_reward(reward, pairs, cfg.reward_steps)
    except (ValueError, RuntimeError) as exc:
        raise ModelError(f"training failed: {exc}") from exc
    save_checkpoint(models.full, out / "l1.json")
    save_checkpoint(models.retrieved, out / "l2.json")
    save_checkpoint(models.postp, out / "l3.json")
    save_reward_checkpoint(reward, out / "reward.json")
    print(
        f"trained models on {len(passages)} passages / {len(qa_pairs)} questions "
        f"({len(pairs)} preference pairs) -> {out}"
    )
    return EXIT_OK


def _load_models(cfg: CliConfig, models_dir: str) -> tuple:
    names = ("l1.json", "l2.json", "l3.json", "reward.json")
    for name in names:
        _require_file(
            str(Path(models_dir) / name),
            f"genki train --corpus <corpus> --qa <qa> --index <index> --out {models_dir}",
        )
    try:
        full = load_checkpoint(Path(models_dir) / "l1.json")
        retrieved = load_checkpoint(Path(models_dir) / "l2.json")
        postp = load_checkpoint(Path(models_dir) / "l3.json")
        reward = load_reward_checkpoint(Path(models_dir) / "reward.json")
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return full, retrieved, postp, reward


def cmd_answer(cfg: CliConfig, args: argparse.Namespace) -> int:
    pipeline_cfg = _pipeline_config(cfg)
    passages = _load_passages(_need(cfg.corpus, "--corpus", "a passage file"))
    qa_pairs = _load_qa(_need(cfg.qa, "--qa", "a QA file"))
    index = _load_index_checked(_need(cfg.index, "--index", "an index file"))
    models_dir = _need(cfg.models, "--models", "a trained model directory")
    out = Path(_need(cfg.out, "--out", "an output directory"))
    out.mkdir(parents=True, exist_ok=True)
    full, retrieved, postp, reward = _load_models(cfg, models_dir)
    try:
        stats = build_stats(passages)
    except CorpusError as exc:
        raise DataError(str(exc)) from exc

    if cfg.backend == "remote":
        if not cfg.remote_judge_url:
            raise ConfigError("backend 'remote' needs remote.judge_url in the config file")
        endpoint = EndpointConfig(
            cfg.remote_judge_url, cfg.remote_timeout_ms, cfg.remote_retries,
            cfg.remote_max_in_flight,
        )
        judge = RemoteJudge(endpoint)
        scorer = None
        if cfg.remote_scorer_url:
            scorer = RemoteScorer(
                EndpointConfig(
                    cfg.remote_scorer_url, cfg.remote_timeout_ms, cfg.remote_retries,
                    cfg.remote_max_in_flight,
                )
            )
    else:
        judge = stub_judge()
        scorer = None

    models = PipelineModels(
        full=full, retrieved=retrieved, postp=postp, reward=reward,
        judge=judge, consistency_scorer=scorer,
    )
    embedder = HashEmbedder(index.dim, cfg.embedder_seed)
    passage_map = {p.id: p for p in passages}
    try:
        runs = run_pipeline(
            qa_pairs, models, index, embedder, passage_map, stats, pipeline_cfg,
            audit_path=out / "audit.jsonl", jobs=cfg.jobs,
        )
    except ClientError as exc:
        raise ModelError(f"remote backend failed: {exc}") from exc
    _write_jsonl(out / "runs.jsonl", [run_record(r) for r in runs])
    failures = sum(1 for r in runs if r.error)
    print(f"answered {len(runs)} questions ({failures} failures) -> {out}")
    return EXIT_OK


def _load_answers(path: str) -> dict[str, str]:
    """Read runs.jsonl (final_answer) or a simple {'id', 'answer'} JSONL."""
    answers: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}: line {lineno}: expected a JSON object")
            if "final_answer" in record:
                key, value = record.get("qid"), record.get("final_answer")
            else:
                key, value = record.get("id"), record.get("answer")
            if not isinstance(key, str) or not isinstance(value, str):
                raise DataError(
                    f"{path}: line {lineno}: need qid/final_answer or id/answer string fields"
                )
            answers[key] = value
    return answers


def cmd_eval(cfg: CliConfig, args: argparse.Namespace) -> int:
    qa_pairs = _load_qa(_need(cfg.qa, "--qa", "a QA file"))
    answers_path = _require_file(
        _need(args.answers, "--answers", "an answers file"),
        "genki answer --corpus <corpus> --qa <qa> --index <index> --models <dir> --out <dir>",
    )
    answers = _load_answers(answers_path)
    missing = [qa.id for qa in qa_pairs if qa.id not in answers]
    if missing:
        shown = ", ".join(missing[:5])
        raise DataError(f"{answers_path}: no answer for {len(missing)} question(s): {shown}")
    items = [(qa, answers[qa.id]) for qa in qa_pairs]
    report = evaluate_answers(items, jobs=cfg.jobs)
    rendered = report_tsv(report)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(rendered, encoding="utf-8")
    print(
        f"em {report.em:.4f}  recall {report.recall:.4f}  f1 {report.f1:.4f}  "
        f"bleu1 {report.bleu[1]:.4f}  rouge_l {report.rouge_l:.4f}"
        + (f"  -> {cfg.out}" if cfg.out else "")
    )
    return EXIT_OK


def cmd_analyze(cfg: CliConfig, args: argparse.Namespace) -> int:
    qa_pairs = _load_qa(_need(cfg.qa, "--qa", "a QA file"))
    passages = _load_passages(_need(cfg.corpus, "--corpus", "a passage file"))
    runs_path = _require_file(
        _need(args.runs, "--runs", "a runs file"),
        "genki answer --corpus <corpus> --qa <qa> --index <index> --models <dir> --out <dir>",
    )
    out = Path(_need(cfg.out, "--out", "an output directory"))
    out.mkdir(parents=True, exist_ok=True)
    passage_map = {p.id: p for p in passages}
    qa_map = {qa.id: qa for qa in qa_pairs}
    points = []
    with open(runs_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{runs_path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            qa = qa_map.get(record.get("qid"))
            if qa is None or record.get("error"):
                continue
            texts = [
                passage_map[pid].text
                for pid in record.get("retrieved_ids", [])
                if pid in passage_map
            ]
            quality = max(retrieval_quality(gold, texts) for gold in qa.answers)
            recall = text_recall(list(qa.answers), record.get("final_answer", ""))
            points.append((quality, recall))
    if not points:
        raise DataError(f"{runs_path}: no usable runs (all missing, errored, or unmatched)")
    buckets = quality_recall_points(points)
    with open(out / "analysis.csv", "w", encoding="utf-8") as fh:
        fh.write("quality,mean_recall,count\n")
        for mid, mean_recall, count in buckets:
            fh.write(f"{mid:.6f},{mean_recall:.6f},{count}\n")
    if len(points) >= 6:
        try:
            fit = two_segment_fit(points)
            payload = {
                "segment1": {"slope": fit.segment1.slope, "intercept": fit.segment1.intercept,
                             "r2": fit.segment1.r2},
                "segment2": {"slope": fit.segment2.slope, "intercept": fit.segment2.intercept,
                             "r2": fit.segment2.r2},
                "breakpoint": fit.breakpoint,
                "single": {"slope": fit.single.slope, "intercept": fit.single.intercept,
                           "r2": fit.single.r2},
            }
        except ValueError as exc:
            payload = {"fit": None, "reason": str(exc)}
    else:
        payload = {"fit": None, "reason": f"need >= 6 points, have {len(points)}"}
    _write_json(out / "fit.json", payload)
    print(f"analyzed {len(points)} runs into {len(buckets)} buckets -> {out}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "config": (str, "config file (JSON or TOML)"),
        "corpus": (str, "passage JSONL file"),
        "qa": (str, "QA JSONL file"),
        "index": (str, "index file path"),
        "models": (str, "trained model directory"),
        "out": (str, "output file or directory"),
        "k": (int, "retrieval depth"),
        "lambda1": (float, "domain loss weight"),
        "lambda2": (float, "instruction loss weight"),
        "seed": (int, "random seed"),
        "jobs": (int, "parallel workers"),
        "max-output-tokens": (int, "generation length cap"),
    }
    for name in names:
        kind, help_text = flags[name]
        parser.add_argument(f"--{name}", type=kind, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genki",
        description="retrieval-augmented QA: retrieve, integrate knowledge, format, select",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and report statistics")
    _add_common(p, "config", "corpus", "qa", "out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="embed passages and write the index file")
    _add_common(p, "config", "corpus", "out", "seed")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="top-k passages per question")
    _add_common(p, "config", "index", "qa", "k", "out")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train", help="train the three model roles and the reward model")
    _add_common(p, "config", "corpus", "qa", "index", "k", "lambda1", "lambda2",
                "seed", "max-output-tokens", "out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("answer", help="run the full pipeline over a QA file")
    _add_common(p, "config", "corpus", "qa", "index", "models", "k", "seed",
                "jobs", "max-output-tokens", "out")
    p.add_argument("--backend", choices=["toy", "remote"], default=None,
                   help="judge/scorer backend")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="score answers against gold")
    _add_common(p, "config", "qa", "jobs", "out")
    p.add_argument("--answers", type=str, default=None,
                   help="runs.jsonl or a JSONL of {id, answer}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="retrieval quality vs recall trend")
    _add_common(p, "config", "corpus", "qa", "out")
    p.add_argument("--runs", type=str, default=None, help="runs.jsonl from genki answer")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_cli_config(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
