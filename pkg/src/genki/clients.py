"""HTTP clients so external services can back the scorer and judge interfaces.

Wire protocol, JSON over POST:

    /score    {context, target}                        -> {logprob}
    /generate {prompt, max_tokens}                     -> {text}
    /judge    {question, answer_1, answer_2, format}   -> {choice: 1|2, rationale?}

Nothing in the core touches the network unless one of these clients is
explicitly constructed.  The bearer token comes from the GENKI_API_TOKEN
environment variable at request time; config files never carry secrets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass

from .corpus import TokenSeq, tokenize
from .ensemble import Choice
from .reward import FormatSpec

logger = logging.getLogger(__name__)

AUTH_ENV_VAR = "GENKI_API_TOKEN"


class ClientError(Exception):
    """Base class for remote-backend failures."""


class TransportError(ClientError):
    """Timeout or connection failure that survived all retries."""


class HttpStatusError(ClientError):
    """Non-2xx response."""

    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class ProtocolError(ClientError):
    """Malformed JSON or a response violating the schema or its invariants."""


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach a remote backend."""

    base_url: str
    timeout_ms: int = 10_000
    retries: int = 0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class _JsonHttpClient:
    """POST JSON, parse JSON, with retries and an in-flight request bound."""

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg
        self._limiter = threading.BoundedSemaphore(cfg.max_in_flight)

    def post(self, path: str, payload: dict) -> dict:
        url = self.cfg.base_url.rstrip("/") + path
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(AUTH_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        attempts = self.cfg.retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                logger.info("retrying %s (attempt %d of %d) after: %s",
                            path, attempt + 1, attempts, last_error)
            request = urllib.request.Request(url, data=body, headers=headers, method="POST")
            try:
                with self._limiter:
                    with urllib.request.urlopen(request, timeout=self.cfg.timeout_ms / 1000.0) as resp:
                        raw = resp.read()
            except urllib.error.HTTPError as exc:
                if 500 <= exc.code < 600 and attempt + 1 < attempts:
                    last_error = exc
                    continue
                raise HttpStatusError(f"{url}: HTTP {exc.code}", status=exc.code) from exc
            except OSError as exc:  # URLError, timeouts, connection resets
                last_error = exc
                continue
            try:
                parsed = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"{url}: response is not valid JSON") from exc
            if not isinstance(parsed, dict):
                raise ProtocolError(f"{url}: response must be a JSON object")
            return parsed
        raise TransportError(f"{url}: no response after {attempts} attempt(s): {last_error}")


def _placeholder_tokens(text: str) -> tuple[int, ...]:
    # Local stand-in ids so TokenSeq plumbing works; the server only ever
    # sees the text.
    return tuple(
        int.from_bytes(hashlib.blake2b(w.encode("utf-8"), digest_size=4).digest(), "little")
        for w in tokenize(text)
    )


def _format_string(format: FormatSpec) -> str:
    return format.description if format.description else format.kind.value


class RemoteScorer:
    """LmScorer backed by the /score and /generate endpoints."""

    def __init__(self, cfg: EndpointConfig):
        self._client = _JsonHttpClient(cfg)

    def encode(self, text: str) -> TokenSeq:
        return TokenSeq(_placeholder_tokens(text), text)

    def logprob_cond(self, context: TokenSeq, target: TokenSeq) -> float:
        resp = self._client.post("/score", {"context": context.text, "target": target.text})
        value = resp.get("logprob")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError(f"/score returned non-numeric logprob: {value!r}")
        value = float(value)
        if value > 0.0:
            raise ProtocolError(f"/score returned positive logprob {value}")
        return value

    def generate(self, prompt: TokenSeq, max_tokens: int) -> TokenSeq:
        resp = self._client.post("/generate", {"prompt": prompt.text, "max_tokens": max_tokens})
        text = resp.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"/generate returned non-string text: {text!r}")
        return TokenSeq(_placeholder_tokens(text), text)


class RemoteJudge:
    """ExternalJudge backed by the /judge endpoint."""

    def __init__(self, cfg: EndpointConfig):
        self._client = _JsonHttpClient(cfg)

    def choose(self, question: str, a1: str, a2: str, format: FormatSpec) -> Choice:
        resp = self._client.post(
            "/judge",
            {
                "question": question,
                "answer_1": a1,
                "answer_2": a2,
                "format": _format_string(format),
            },
        )
        choice = resp.get("choice")
        if isinstance(choice, bool) or choice not in (1, 2):
            raise ProtocolError(f"/judge returned invalid choice: {choice!r}")
        rationale = resp.get("rationale")
        if rationale is not None:
            logger.debug("judge rationale: %s", rationale)
        return Choice.FIRST if choice == 1 else Choice.SECOND


def remote_scorer(cfg: EndpointConfig) -> RemoteScorer:
    return RemoteScorer(cfg)


def remote_judge(cfg: EndpointConfig) -> RemoteJudge:
    return RemoteJudge(cfg)
