#!/usr/bin/env python3
"""
Generation backends
Given a prompt and B, return B scored candidate continuations (scripted fixture or remote HTTP)
"""

import asyncio
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Tuple, Union

import httpx
from dotenv import load_dotenv

from agreement import BeamCandidate
from errors import (
    BackendTimeoutError,
    BackendTransportError,
    ConfigError,
    FixtureFormatError,
    FixtureMissError,
    InvalidInputError,
    MalformedResponseError,
)
from text_stream import EOS, TargetToken


# Configure logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=logging.INFO
)
logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).parent.parent
TOKEN_ENV = "SIMULMT_API_TOKEN"
URL_ENV = "SIMULMT_BACKEND_URL"

JOINING_STYLES = ("continuation-marker", "preceding-space-marker", "byte-level")
_DEFAULT_MARKERS = {
    "continuation-marker": "@@",
    "preceding-space-marker": "▁",
    "byte-level": "",
}


@dataclass(frozen=True)
class JoiningConvention:
    """How a backend's subword pieces join into surface text"""

    style: str = "byte-level"
    marker: str = ""

    def __post_init__(self):
        if self.style not in JOINING_STYLES:
            raise ConfigError(f"unknown joining style {self.style!r}; choose from {', '.join(JOINING_STYLES)}")
        if self.style != "byte-level" and not self.marker:
            raise ConfigError(f"joining style {self.style!r} needs a non-empty marker")

    @classmethod
    def named(cls, style: str, marker: Optional[str] = None) -> "JoiningConvention":
        if style not in _DEFAULT_MARKERS:
            raise ConfigError(f"unknown joining style {style!r}; choose from {', '.join(JOINING_STYLES)}")
        return cls(style=style, marker=_DEFAULT_MARKERS[style] if marker is None else marker)


BYTE_LEVEL = JoiningConvention()


@dataclass(frozen=True)
class GenerationRequest:
    """
    Args:
        prompt: X_t
        num_candidates: B
        max_new_tokens: Per-invocation generation cap
        stop_sequences: Extra stop strings
        session_id: Sentence id (scripted backends route on it)
        cursor: Revealed source words at request time
        invocation_index: Backend call number within the session
    """

    prompt: str
    num_candidates: int = 1
    max_new_tokens: int = 64
    stop_sequences: Tuple[str, ...] = ()
    session_id: str = ""
    cursor: int = 0
    invocation_index: int = 0

    def __post_init__(self):
        if self.num_candidates < 1:
            raise InvalidInputError("num_candidates must be >= 1")
        if self.max_new_tokens < 1:
            raise InvalidInputError("max_new_tokens must be >= 1")

    @property
    def request_id(self) -> str:
        return f"{self.session_id}:{self.cursor}:{self.invocation_index}"


@dataclass(frozen=True)
class GenerationResponse:
    """Candidates are continuation-only and sorted by descending score"""

    candidates: Tuple[BeamCandidate, ...]
    model_id: str
    latency_ms: float = 0.0


class GenerationBackend(Protocol):
    joining: JoiningConvention

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        ...


def sort_candidates(candidates: List[BeamCandidate]) -> Tuple[BeamCandidate, ...]:
    # stable: equal scores keep backend order
    return tuple(sorted(candidates, key=lambda c: -c.score))


def _make_candidate(tokens: List[str], score: float, finished: bool) -> BeamCandidate:
    pieces = tuple(TargetToken(text=t) for t in tokens)
    if finished:
        pieces += (EOS,)
    return BeamCandidate(tokens=pieces, score=score, finished=finished)


def _pieces(value: Any, field_name: str) -> List[str]:
    # a bare string would otherwise iterate into characters
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise TypeError(f"'{field_name}' must be a list of strings")
    return value


def _numbers(value: Any, field_name: str) -> List[float]:
    if not isinstance(value, list) or not all(_is_number(x) for x in value):
        raise TypeError(f"'{field_name}' must be a list of numbers")
    return [float(x) for x in value]


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class ScriptedBackend:
    """
    Deterministic fixture backend

    Answers (session_id, cursor) lookups with the stored candidate list; immutable after load.
    """

    def __init__(
        self,
        entries: Dict[Tuple[str, int], Tuple[BeamCandidate, ...]],
        joining: JoiningConvention = BYTE_LEVEL,
        model_id: str = "scripted",
    ):
        self._entries = dict(entries)
        self.joining = joining
        self.model_id = model_id

    def __len__(self) -> int:
        return len(self._entries)

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        start = time.perf_counter()
        key = (request.session_id, request.cursor)
        candidates = self._entries.get(key)
        if candidates is None:
            logger.error(f"Fixture miss for {key}")
            raise FixtureMissError(key, request.request_id)
        return GenerationResponse(
            candidates=candidates[:request.num_candidates],
            model_id=self.model_id,
            latency_ms=(time.perf_counter() - start) * 1000,
        )

    async def aclose(self):
        pass


def load_script(path: Union[str, Path], joining: JoiningConvention = BYTE_LEVEL) -> ScriptedBackend:
    """
    Load a scripted fixture

    Each JSONL line: {"id": str, "cursor": int, "candidates": [{"tokens": [str], "score": float, "finished": bool}]}

    Raises:
        FixtureFormatError: unparseable line, invalid candidate, or duplicate (id, cursor)
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FixtureFormatError("fixture file not found", path=str(path))

    entries: Dict[Tuple[str, int], Tuple[BeamCandidate, ...]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            cursor = obj["cursor"]
            if type(cursor) is not int:
                raise TypeError(f"'cursor' must be an integer, got {cursor!r}")
            key = (str(obj["id"]), cursor)
            raw_candidates = obj["candidates"]
            if not isinstance(raw_candidates, list) or not raw_candidates:
                raise ValueError("'candidates' must be a non-empty list")
            candidates = []
            for c in raw_candidates:
                if not _is_number(c["score"]):
                    raise TypeError(f"'score' must be a number, got {c['score']!r}")
                finished = c.get("finished", False)
                if not isinstance(finished, bool):
                    raise TypeError(f"'finished' must be a boolean, got {finished!r}")
                candidates.append(_make_candidate(_pieces(c["tokens"], "tokens"), float(c["score"]), finished))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            # InvalidInputError is a ValueError: candidate invariants land here too
            raise FixtureFormatError(f"invalid entry: {e}", path=str(path), line=lineno)

        if key in entries:
            raise FixtureFormatError(f"duplicate entry for id={key[0]!r} cursor={key[1]}",
                                     path=str(path), line=lineno)
        entries[key] = sort_candidates(candidates)

    logger.info(f"Loaded {len(entries)} scripted entries from {path}")
    return ScriptedBackend(entries, joining=joining, model_id=f"scripted:{path.name}")


class RemoteBackend:
    """
    Client for the native wire protocol (POST /v1/generate)

    One shared AsyncClient; at most max_in_flight requests are outstanding at once.
    Failures are never retried.
    """

    endpoint = "/v1/generate"

    def __init__(
        self,
        base_url: Optional[str] = None,
        token: Optional[str] = None,
        joining: JoiningConvention = BYTE_LEVEL,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        model: Optional[str] = None,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        token_env: str = TOKEN_ENV,
    ):
        """
        Initialize backend client

        Args:
            base_url: Server root. If None, loads SIMULMT_BACKEND_URL from .env / environment
            token: Bearer token. If None, read from `token_env` (after loading .env)
            joining: Joining convention of the server's token pieces
            timeout: Seconds per invocation
            max_in_flight: Concurrent request bound
            model: Optional model name forwarded to the server
            transport: Custom httpx transport (tests use httpx.MockTransport)
        """
        env_file = PROJECT_ROOT / ".env"
        if env_file.exists():
            load_dotenv(env_file)

        if base_url is None:
            base_url = os.getenv(URL_ENV)
            if not base_url:
                raise ConfigError(
                    f"No backend URL provided and {URL_ENV} not set. "
                    "Run 'python scripts/init_backend.py' first."
                )
        if token is None:
            token = os.getenv(token_env)

        if max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")

        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"

        self.base_url = base_url.rstrip("/")
        self.joining = joining
        self.model = model
        self.timeout = timeout
        self._semaphore = asyncio.Semaphore(max_in_flight)
        self._client = httpx.AsyncClient(
            base_url=self.base_url,
            headers=headers,
            timeout=timeout,
            transport=transport,
        )
        logger.info(f"{type(self).__name__} initialized for {self.base_url}")

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.aclose()

    async def aclose(self):
        await self._client.aclose()

    def _payload(self, request: GenerationRequest) -> Dict[str, Any]:
        payload = {
            "prompt": request.prompt,
            "n": request.num_candidates,
            "max_new_tokens": request.max_new_tokens,
            "stop": list(request.stop_sequences),
            "logprobs": True,
        }
        if self.model:
            payload["model"] = self.model
        return payload

    def _parse(self, body: Any, request: GenerationRequest) -> Tuple[List[BeamCandidate], str]:
        rid = request.request_id
        if not isinstance(body, dict) or not isinstance(body.get("candidates"), list):
            raise MalformedResponseError("response has no 'candidates' list", rid)

        candidates = []
        for i, raw in enumerate(body["candidates"]):
            try:
                tokens = _pieces(raw["tokens"], "tokens")
                logprobs = _numbers(raw["token_logprobs"], "token_logprobs")
                finished = bool(raw.get("finished", False))
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedResponseError(f"candidate {i}: {e}", rid)
            candidates.append(self._candidate(tokens, logprobs, finished, rid, i))
        return candidates, str(body.get("model", "unknown"))

    def _candidate(self, tokens: List[str], logprobs: List[float], finished: bool,
                   rid: str, index: int) -> BeamCandidate:
        # per-token log-probs are summed client-side; the EOS step may carry one extra entry
        if len(logprobs) not in (len(tokens), len(tokens) + 1):
            raise MalformedResponseError(
                f"candidate {index}: {len(tokens)} tokens but {len(logprobs)} log-probs", rid
            )
        score = math.fsum(logprobs)
        try:
            return _make_candidate(tokens, score, finished)
        except InvalidInputError as e:
            raise MalformedResponseError(f"candidate {index}: {e}", rid)

    def _check_continuation_only(self, candidates: List[BeamCandidate], request: GenerationRequest):
        tail = request.prompt[-16:].strip()
        if not tail:
            return
        for cand in candidates:
            text = "".join(t.text for t in cand.visible_tokens()).lstrip()
            if text.startswith(tail):
                raise MalformedResponseError("candidate echoes the prompt; expected continuation only",
                                             request.request_id)

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        """
        Request B candidate continuations of the prompt

        Raises:
            BackendTimeoutError, BackendTransportError, MalformedResponseError
        """
        rid = request.request_id
        async with self._semaphore:
            start = time.perf_counter()
            try:
                response = await self._client.post(self.endpoint, json=self._payload(request))
                response.raise_for_status()
                body = response.json()
            except httpx.TimeoutException as e:
                logger.error(f"Generation timed out [{rid}]: {e}")
                raise BackendTimeoutError(f"timed out after {self.timeout}s", rid) from e
            except httpx.HTTPStatusError as e:
                logger.error(f"Generation failed [{rid}]: {e}")
                raise BackendTransportError(f"HTTP {e.response.status_code}", rid) from e
            except httpx.HTTPError as e:
                logger.error(f"Generation failed [{rid}]: {e}")
                raise BackendTransportError(str(e) or type(e).__name__, rid) from e
            except json.JSONDecodeError as e:
                logger.error(f"Malformed response [{rid}]: {e}")
                raise MalformedResponseError(f"body is not JSON: {e}", rid) from e
            latency_ms = (time.perf_counter() - start) * 1000

        candidates, model_id = self._parse(body, request)
        if not candidates:
            raise MalformedResponseError("response has zero candidates", rid)
        if len(candidates) > request.num_candidates:
            raise MalformedResponseError(
                f"asked for {request.num_candidates} candidates, got {len(candidates)}", rid
            )
        self._check_continuation_only(candidates, request)

        return GenerationResponse(
            candidates=sort_candidates(candidates),
            model_id=model_id,
            latency_ms=latency_ms,
        )


class OpenAICompletionsBackend(RemoteBackend):
    """
    Adapter for OpenAI-style completion servers (vLLM, llama.cpp server, ...)

    Maps `n` parallel completions with per-token log-probs onto the native schema.
    Beam search is requested through the `use_beam_search` extension when use_beam_search is set.
    """

    endpoint = "/v1/completions"

    def __init__(self, *args, use_beam_search: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self.use_beam_search = use_beam_search

    def _payload(self, request: GenerationRequest) -> Dict[str, Any]:
        payload = {
            "prompt": request.prompt,
            "n": request.num_candidates,
            "max_tokens": request.max_new_tokens,
            "logprobs": 1,
            "echo": False,
            "temperature": 0.0 if self.use_beam_search else 1.0,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if self.use_beam_search:
            payload["use_beam_search"] = True
            payload["best_of"] = request.num_candidates
        if self.model:
            payload["model"] = self.model
        return payload

    def _parse(self, body: Any, request: GenerationRequest) -> Tuple[List[BeamCandidate], str]:
        rid = request.request_id
        if not isinstance(body, dict) or not isinstance(body.get("choices"), list):
            raise MalformedResponseError("response has no 'choices' list", rid)

        candidates = []
        for i, choice in enumerate(body["choices"]):
            try:
                logprobs = choice["logprobs"]
                tokens = _pieces(logprobs["tokens"], "tokens")
                token_logprobs = _numbers(logprobs["token_logprobs"], "token_logprobs")
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedResponseError(f"choice {i} lacks log-probs: {e}", rid)
            finished = choice.get("finish_reason") == "stop"
            candidates.append(self._candidate(tokens, token_logprobs, finished, rid, i))
        return candidates, str(body.get("model", "unknown"))


def make_backend(
    descriptor: Optional[str],
    joining: JoiningConvention = BYTE_LEVEL,
    *,
    timeout: float = 60.0,
    max_in_flight: int = 4,
    token_env: str = TOKEN_ENV,
    model: Optional[str] = None,
) -> GenerationBackend:
    """
    Build a backend from a descriptor

    Args:
        descriptor: 'script:<path>', 'http(s)://...', 'openai:<base-url>', or None for SIMULMT_BACKEND_URL
    """
    if descriptor and descriptor.startswith("script:"):
        return load_script(descriptor[len("script:"):], joining=joining)

    kwargs = dict(joining=joining, timeout=timeout, max_in_flight=max_in_flight,
                  token_env=token_env, model=model)
    if descriptor and descriptor.startswith("openai:"):
        return OpenAICompletionsBackend(descriptor[len("openai:"):], **kwargs)
    if descriptor is None or descriptor.startswith(("http://", "https://")):
        return RemoteBackend(descriptor, **kwargs)
    raise ConfigError(
        f"unknown backend descriptor {descriptor!r}; use script:<path>, http(s)://<url> or openai:<url>"
    )
