"""Text-generation backends sharing one ``generate(request)`` contract.

``http`` talks to a chat-completion endpoint, ``replay`` serves recorded
responses keyed by prompt hash, ``scripted`` returns canned responses in
order, and ``synthetic`` writes a tagged trace by running the symbolic solver
on the question embedded in the prompt.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .contexts import parse_context, render_fact
from .errors import BackendError, FixtureMiss, NetworkError, ScriptExhausted
from .solver import SolverAnswer, _norm, extract_candidates, solve_facts
from .traces import Round, format_target, whitespace_tokens

BACKEND_KINDS = ("http", "replay", "scripted", "synthetic")
API_KEY_ENV = "TISER_API_KEY"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TIMEOUT_S = 120.0


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop_sequences: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class GenerationResult:
    text: str
    backend_id: str
    latency_ms: int = 0
    token_estimate: int = 0

    def __post_init__(self) -> None:
        if self.token_estimate < 0:
            raise ValueError("token_estimate must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    fixture_path: Optional[str] = None
    corruption_rate: float = 0.0
    seed: int = 0
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_retries: int = 3
    max_in_flight: int = 4
    auth_header: str = "Authorization"
    record_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model_name):
            raise ValueError("http backend needs endpoint and model_name")
        if self.kind == "replay" and not self.fixture_path:
            raise ValueError("replay backend needs fixture_path")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        if self.max_retries < 1 or self.max_in_flight < 1:
            raise ValueError("max_retries and max_in_flight must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend:
    """Base class; subclasses implement :meth:`_complete`."""

    backend_id = "backend"

    def generate(self, req: GenerationRequest) -> GenerationResult:
        t0 = time.perf_counter()
        text = self._complete(req)
        latency = int(round((time.perf_counter() - t0) * 1000))
        return GenerationResult(text, self.backend_id, latency, whitespace_tokens(text))

    def _complete(self, req: GenerationRequest) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


class _Retryable(Exception):
    pass


class HttpBackend(Backend):
    """Chat-completion client with bounded retries and an in-flight cap."""

    def __init__(self, cfg: BackendConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.backend_id = f"http:{cfg.model_name}"
        self._client = httpx.Client(timeout=cfg.timeout_s, transport=transport)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            value = f"Bearer {key}" if self.cfg.auth_header.lower() == "authorization" else key
            headers[self.cfg.auth_header] = value
        return headers

    def _payload(self, req: GenerationRequest) -> dict:
        body = {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.stop_sequences:
            body["stop"] = list(req.stop_sequences)
        return body

    def _attempt(self, req: GenerationRequest) -> str:
        try:
            resp = self._client.post(self.cfg.endpoint, json=self._payload(req), headers=self._headers())
        except httpx.TransportError as exc:
            raise _Retryable(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {resp.text[:200]}") from exc

    def _complete(self, req: GenerationRequest) -> str:
        retrying = Retrying(
            stop=stop_after_attempt(self.cfg.max_retries),
            wait=wait_exponential(multiplier=0.5, max=8),
            retry=retry_if_exception_type(_Retryable),
            sleep=self._sleep,
            reraise=True,
        )
        with self._slots:
            try:
                return retrying(self._attempt, req)
            except _Retryable as exc:
                raise NetworkError(f"gave up after {self.cfg.max_retries} attempts: {exc}") from exc

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# Record / replay
# ---------------------------------------------------------------------------


def load_fixtures(path: Union[str, Path]) -> dict[str, dict]:
    """Read a fixture JSONL file; later lines for the same hash win."""
    table: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                table[row["prompt_sha256"]] = row
            except (ValueError, KeyError, TypeError) as exc:
                raise BackendError(f"{path}:{lineno}: bad fixture line ({exc})") from exc
    return table


class ReplayBackend(Backend):
    def __init__(self, fixture_path: Union[str, Path]):
        self.fixture_path = Path(fixture_path)
        self._table = load_fixtures(self.fixture_path)
        self.backend_id = f"replay:{self.fixture_path.name}"

    def _complete(self, req: GenerationRequest) -> str:
        key = prompt_sha256(req.prompt)
        row = self._table.get(key)
        if row is None:
            raise FixtureMiss(f"no fixture for prompt {key[:12]}")
        return row["response"]


class RecordingBackend(Backend):
    """Pass-through wrapper that appends every exchange to a fixture file."""

    def __init__(self, inner: Backend, fixture_path: Union[str, Path]):
        self.inner = inner
        self.fixture_path = Path(fixture_path)
        self.backend_id = inner.backend_id
        self._lock = threading.Lock()

    def generate(self, req: GenerationRequest) -> GenerationResult:
        result = self.inner.generate(req)
        row = {
            "prompt_sha256": prompt_sha256(req.prompt),
            "response": result.text,
            "backend_id": result.backend_id,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        with self._lock, open(self.fixture_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        return result

    def close(self) -> None:
        self.inner.close()


def record(inner: Backend, fixture_path: Union[str, Path]) -> RecordingBackend:
    return RecordingBackend(inner, fixture_path)


# ---------------------------------------------------------------------------
# Scripted
# ---------------------------------------------------------------------------


class ScriptedBackend(Backend):
    """Returns scripted responses in order; an exception entry is raised instead."""

    backend_id = "scripted"

    def __init__(self, script: Sequence[Union[str, BaseException]]):
        self._script = list(script)
        self._next = 0
        self._lock = threading.Lock()
        self.prompts: list[str] = []

    @property
    def calls(self) -> int:
        return self._next

    def _complete(self, req: GenerationRequest) -> str:
        with self._lock:
            if self._next >= len(self._script):
                raise ScriptExhausted(f"script of {len(self._script)} responses exhausted")
            item = self._script[self._next]
            self._next += 1
            self.prompts.append(req.prompt)
        if isinstance(item, BaseException):
            raise item
        return item


# ---------------------------------------------------------------------------
# Synthetic
# ---------------------------------------------------------------------------

_QUESTION_RE = re.compile(r"Question:\s*(?P<q>.+?)\s*\n\s*\n\s*Temporal Context:\s*", re.DOTALL)
_CONTEXT_END = re.compile(r"\n\s*-----")
FALLBACK_WRONG_ANSWER = "No matching event"


def extract_question_context(prompt: str) -> tuple[str, str]:
    """Recover the question and context from a rendered prompt."""
    m = _QUESTION_RE.search(prompt)
    if m is None:
        raise BackendError("prompt has no 'Question:' / 'Temporal Context:' block")
    rest = prompt[m.end():]
    end = _CONTEXT_END.search(rest)
    return m["q"].strip(), (rest[: end.start()] if end else rest).strip()


def _wrong_answers(q: str, facts, right: str) -> list[str]:
    pools = (extract_candidates(q), [f.obj for f in facts if f.obj], [f.statement for f in facts])
    for pool in pools:
        out: list[str] = []
        for item in pool:
            if _norm(item) != _norm(right) and item not in out:
                out.append(item)
        if out:
            return out
    return []


class SyntheticBackend(Backend):
    """Solver-backed trace writer with seeded answer corruption.

    Each request draws from its own RNG seeded by ``(seed, prompt)``, so the
    outcome for a prompt never depends on call order or thread schedule.
    """

    def __init__(self, corruption_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        self.corruption_rate = corruption_rate
        self.seed = seed
        self.backend_id = f"synthetic:seed={seed}:corruption={corruption_rate}"

    def _rng(self, prompt: str) -> random.Random:
        digest = hashlib.sha256(f"{self.seed}\x00{prompt}".encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _complete(self, req: GenerationRequest) -> str:
        question, context = extract_question_context(req.prompt)
        facts = parse_context(context, lenient=True).facts
        solved = solve_facts(question, facts)
        answer = solved.answer if solved.ok else FALLBACK_WRONG_ANSWER
        rng = self._rng(req.prompt)
        if rng.random() < self.corruption_rate:
            wrong = _wrong_answers(question, facts, answer)
            answer = rng.choice(wrong) if wrong else (
                FALLBACK_WRONG_ANSWER if _norm(answer) != _norm(FALLBACK_WRONG_ANSWER) else "None"
            )
        return format_target([self._round(question, facts, solved)], answer)

    @staticmethod
    def _round(question: str, facts, solved: SolverAnswer) -> Round:
        ordered = sorted(facts, key=lambda f: (f.first_time.sort_key, f.source_index))
        timeline = "\n".join(f"{render_fact(f)}." for f in ordered)
        if solved.ok:
            support = set(solved.support)
            cited = "; ".join(render_fact(f) for f in facts if f.source_index in support)
            reasoning = (
                f"The question asks: {question} Classified as {solved.kind}. "
                f"Ordering the {len(facts)} dated facts in time, the relevant evidence is: {cited}. "
                f"This points to {solved.answer}."
            )
            reflection = "The timeline agrees with the reasoning and the answer follows from the cited facts."
        else:
            reasoning = f"The question asks: {question} The context does not settle it ({solved.error})."
            reflection = "The timeline does not contain enough information to determine a supported answer."
        return Round(reasoning=reasoning, timeline=timeline, reflection=reflection)


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------


def make_backend(cfg: BackendConfig, script: Optional[Sequence] = None,
                 transport: Optional[httpx.BaseTransport] = None) -> Backend:
    if cfg.kind == "http":
        backend: Backend = HttpBackend(cfg, transport=transport)
    elif cfg.kind == "replay":
        backend = ReplayBackend(cfg.fixture_path)
    elif cfg.kind == "scripted":
        backend = ScriptedBackend(script or [])
    else:
        backend = SyntheticBackend(cfg.corruption_rate, cfg.seed)
    if cfg.record_path:
        backend = RecordingBackend(backend, cfg.record_path)
    return backend


def generate(cfg: BackendConfig, req: GenerationRequest) -> GenerationResult:
    """One-shot convenience wrapper around :func:`make_backend`."""
    backend = make_backend(cfg)
    try:
        return backend.generate(req)
    finally:
        backend.close()
