#!/usr/bin/env python3
"""
Mixture READ/WRITE policy and the session controller
Wait-k / read-n gating decides when to call the backend; RALCP decides what to commit
"""

import asyncio
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from agreement import AgreementConfig, BeamCandidate, ralcp
from backend import GenerationBackend, GenerationRequest
from errors import (
    BackendError,
    ConfigError,
    EmissionCapError,
    SessionError,
    SimulMTError,
    TraceFormatError,
)
from prompting import IncrementalState, PromptTemplate, build_prompt
from text_stream import ParallelPair, SourceStream, TargetToken, detokenize, natural_sort_key


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyConfig:
    """
    Args:
        k: Source words to read before the first write attempt
        n: Read chunk; write attempts happen when t mod n == 0
        beam: B, candidates requested per invocation
        gamma: RALCP agreement threshold
        max_new_tokens: Generation cap per invocation
        max_target_tokens: Session emission cap; None means 4 x source words + 32
        write_until_empty: Re-consult the policy at the same step after a write
        filter_disagreeing: RALCP drops candidates that disagree with an accepted token
        stop_sequences: Extra stop strings forwarded to the backend
    """

    k: int = 3
    n: int = 3
    beam: int = 5
    gamma: float = 0.6
    max_new_tokens: int = 64
    max_target_tokens: Optional[int] = None
    write_until_empty: bool = False
    filter_disagreeing: bool = True
    stop_sequences: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.max_target_tokens is not None and self.max_target_tokens < 1:
            raise ConfigError(f"max_target_tokens must be >= 1, got {self.max_target_tokens}")

    def target_cap(self, source_words: int) -> int:
        if self.max_target_tokens is not None:
            return self.max_target_tokens
        return 4 * source_words + 32

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["stop_sequences"] = list(self.stop_sequences)
        return d


# Named (beam, k, n, gamma) settings; "offline" never writes before the source ends
PRESETS: Dict[str, Dict[str, Any]] = {
    "low-latency": {"beam": 5, "k": 3, "n": 3, "gamma": 0.6},
    "high-quality": {"beam": 10, "k": 6, "n": 6, "gamma": 0.6},
    "offline": {"beam": 5, "k": 10 ** 6, "n": 1, "gamma": 0.6},
}


class ActionKind(Enum):
    READ = "read"
    WRITE = "write"
    FINISH = "finish"


@dataclass(frozen=True)
class Action:
    """
    READ | WRITE(payload) | FINISH

    `final` marks a WRITE made on the finished source (FINISH follows it);
    `invocation_index` is set when the decision called the backend.
    """

    kind: ActionKind
    payload: Tuple[TargetToken, ...] = ()
    final: bool = False
    invocation_index: Optional[int] = None

    def __post_init__(self):
        if self.kind is ActionKind.WRITE and not self.payload:
            raise ValueError("WRITE payload must be non-empty")


@dataclass(frozen=True)
class SessionEvent:
    kind: str
    t: int
    cursor: int
    payload: Tuple[str, ...] = ()
    invocation_index: Optional[int] = None

    def to_record(self) -> Dict[str, Any]:
        return {"kind": self.kind, "t": self.t, "cursor": self.cursor, "payload": list(self.payload)}


@dataclass
class SessionTrace:
    """Full event log of one streamed sentence"""

    id: str
    source: str
    reference: Optional[str]
    hypothesis: str
    events: List[SessionEvent] = field(default_factory=list)
    delays: List[int] = field(default_factory=list)
    invocations: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def src_len(self) -> int:
        return len(self.source.split())

    @property
    def hyp_len(self) -> int:
        return len(self.hypothesis.split())

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "reference": self.reference,
            "hypothesis": self.hypothesis,
            "events": [e.to_record() for e in self.events],
            "delays": list(self.delays),
            "invocations": self.invocations,
            "config": self.config,
        }

    @classmethod
    def from_record(cls, obj: Dict[str, Any]) -> "SessionTrace":
        """Raises KeyError / TypeError / ValueError on schema violations"""
        if not isinstance(obj, dict):
            raise TypeError("trace record must be a JSON object")
        delays = [int(d) for d in obj["delays"]]
        if any(type(d) is not int for d in obj["delays"]):
            raise ValueError("delays must be integers")
        events = [
            SessionEvent(
                kind=str(e["kind"]),
                t=int(e["t"]),
                cursor=int(e["cursor"]),
                payload=tuple(str(p) for p in e["payload"]),
            )
            for e in obj["events"]
        ]
        reference = obj["reference"]
        return cls(
            id=str(obj["id"]),
            source=str(obj["source"]),
            reference=None if reference is None else str(reference),
            hypothesis=str(obj["hypothesis"]),
            events=events,
            delays=delays,
            invocations=int(obj["invocations"]),
            config=dict(obj["config"]),
        )


def should_attempt_write(t: int, k: int, n: int, source_finished: bool) -> bool:
    """
    Reading gate

    Returns:
        True iff the source is finished, or t > k and t mod n == 0
    """
    if source_finished:
        return True
    return t > k and t % n == 0


def _argmax(candidates: Sequence[BeamCandidate]) -> BeamCandidate:
    best = candidates[0]
    for cand in candidates[1:]:
        if cand.score > best.score:
            best = cand
    return best


def _until_eos(tokens: Sequence[TargetToken]) -> Tuple[TargetToken, ...]:
    out = []
    for tok in tokens:
        if tok.is_eos:
            break
        out.append(tok)
    return tuple(out)


async def decide(
    state: IncrementalState,
    config: PolicyConfig,
    backend: GenerationBackend,
    template: PromptTemplate,
    *,
    session_id: str = "",
    invocation_index: int = 0,
) -> Action:
    """
    One policy decision a_t = pi(S_t, T_t, t)

    Args:
        state: Current S_t / T_t
        config: Policy parameters
        backend: Candidate generator
        template: Prompt template
        session_id: Sentence id forwarded to the backend
        invocation_index: Index this call would get if the backend is invoked

    Returns:
        READ without a backend call when the gate is closed; otherwise READ, WRITE or FINISH

    Raises:
        SessionError: the backend failed (carries invocation_index)
        EmissionCapError: committing the payload would exceed the emission cap
    """
    finished = state.source.finished()
    if not should_attempt_write(state.t, config.k, config.n, finished):
        return Action(ActionKind.READ)

    request = GenerationRequest(
        prompt=build_prompt(template, state, backend.joining),
        num_candidates=config.beam,
        max_new_tokens=config.max_new_tokens,
        stop_sequences=config.stop_sequences,
        session_id=session_id,
        cursor=state.source.cursor,
        invocation_index=invocation_index,
    )
    try:
        response = await backend.generate(request)
    except BackendError as e:
        raise SessionError(str(e), session_id, invocation_index, cause=e) from e

    candidates = response.candidates
    if finished:
        payload = _until_eos(_argmax(candidates).tokens)
    else:
        if len(candidates) < config.beam:
            logger.warning(
                f"[{request.request_id}] backend returned {len(candidates)} of {config.beam} candidates; "
                f"votes still normalized by {config.beam}"
            )
        agreement = AgreementConfig(
            gamma=config.gamma,
            strip_eos=True,
            filter_disagreeing=config.filter_disagreeing,
        )
        payload = tuple(ralcp(candidates, agreement, beam=config.beam))

    logger.debug(
        f"[{request.request_id}] t={state.t} finished={finished} "
        f"committing {len(payload)} token(s)"
    )

    if not payload:
        kind = ActionKind.FINISH if finished else ActionKind.READ
        return Action(kind, invocation_index=invocation_index)

    cap = config.target_cap(state.source.total)
    if len(state.target_tokens) + len(payload) > cap:
        raise EmissionCapError(
            f"emission cap of {cap} target tokens exceeded", session_id, invocation_index
        )

    return Action(ActionKind.WRITE, payload=payload, final=finished, invocation_index=invocation_index)


def word_delays(writes: Sequence[Tuple[int, int]], hypothesis: str) -> List[int]:
    """
    Per-word delays d_i

    Args:
        writes: (committed text length after the write, source cursor at the write), in order
        hypothesis: Final detokenized hypothesis

    Returns:
        For each whitespace-delimited word, the cursor of the first write whose committed
        text reaches the word's last character
    """
    delays = []
    j = 0
    for match in re.finditer(r"\S+", hypothesis):
        end = match.end()
        while j < len(writes) - 1 and writes[j][0] < end:
            j += 1
        delays.append(writes[j][1])
    return delays


async def run_session(
    source_sentence: str,
    reference: Optional[str],
    config: PolicyConfig,
    backend: GenerationBackend,
    template: PromptTemplate,
    *,
    session_id: str = "0",
) -> SessionTrace:
    """
    Stream one sentence through the policy until FINISH

    Raises:
        EmptySourceError: the sentence has no words
        SessionError: a backend call failed or the emission cap was hit
    """
    state = IncrementalState(source=SourceStream.from_sentence(source_sentence).reveal())
    events = [SessionEvent("read", t=state.t, cursor=state.source.cursor)]
    writes: List[Tuple[int, int]] = []
    invocations = 0
    force_read = False

    while True:
        if force_read:
            action = Action(ActionKind.READ)
            force_read = False
        else:
            action = await decide(state, config, backend, template,
                                  session_id=session_id, invocation_index=invocations)
        if action.invocation_index is not None:
            invocations += 1

        if action.kind is ActionKind.READ:
            state = state.read()
            events.append(SessionEvent("read", t=state.t, cursor=state.source.cursor,
                                       invocation_index=action.invocation_index))
            continue

        if action.kind is ActionKind.WRITE:
            state = state.commit(action.payload)
            writes.append((len(detokenize(state.target_tokens, backend.joining)), state.source.cursor))
            events.append(SessionEvent(
                "write",
                t=state.t,
                cursor=state.source.cursor,
                payload=tuple(tok.text for tok in action.payload),
                invocation_index=action.invocation_index,
            ))
            if not action.final:
                force_read = not config.write_until_empty
                continue

        events.append(SessionEvent("finish", t=state.t, cursor=state.source.cursor,
                                   invocation_index=None if action.final else action.invocation_index))
        break

    hypothesis = detokenize(state.target_tokens, backend.joining)
    return SessionTrace(
        id=session_id,
        source=source_sentence,
        reference=reference,
        hypothesis=hypothesis,
        events=events,
        delays=word_delays(writes, hypothesis) if writes else [],
        invocations=invocations,
        config=config.to_dict(),
    )


@dataclass
class CorpusRun:
    traces: List[SessionTrace]
    failures: List[SimulMTError]


async def run_corpus(
    pairs: Sequence[ParallelPair],
    config: PolicyConfig,
    backend: GenerationBackend,
    template: PromptTemplate,
    *,
    parallelism: int = 1,
    keep_going: bool = False,
    on_done: Optional[Callable[[], None]] = None,
) -> CorpusRun:
    """
    Stream every pair with at most `parallelism` sessions in flight

    Traces come back sorted by id whatever the completion order. Without keep_going the
    first failure is raised; with it failures are collected and their sentences skipped.
    """
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    semaphore = asyncio.Semaphore(parallelism)

    async def one(pair: ParallelPair):
        async with semaphore:
            try:
                return await run_session(pair.source, pair.target, config, backend, template,
                                         session_id=pair.id)
            except SimulMTError as e:
                if not keep_going:
                    raise
                logger.error(f"Session {pair.id} failed: {e}")
                return e
            finally:
                if on_done is not None:
                    on_done()

    results = await asyncio.gather(*(one(p) for p in pairs))
    traces = sorted((r for r in results if isinstance(r, SessionTrace)), key=lambda t: natural_sort_key(t.id))
    failures = [r for r in results if isinstance(r, SimulMTError)]
    return CorpusRun(traces=traces, failures=failures)


def write_traces(path: Union[str, Path], traces: Sequence[SessionTrace]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for trace in sorted(traces, key=lambda t: natural_sort_key(t.id)):
            f.write(json.dumps(trace.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_traces(path: Union[str, Path]) -> List[SessionTrace]:
    """
    Raises:
        TraceFormatError: naming the offending line
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise TraceFormatError("trace file not found", path=str(path))

    traces = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            traces.append(SessionTrace.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise TraceFormatError(f"schema violation: {e!r}", path=str(path), line=lineno)
    return traces
