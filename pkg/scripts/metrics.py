#!/usr/bin/env python3
"""
Quality and latency evaluation over session traces
Corpus BLEU (13a tokenization, no smoothing) and LAAL in source words
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from sacrebleu.metrics import BLEU

from errors import InvalidInputError, MetricError, MissingReferenceError
from policy_engine import SessionTrace
from text_stream import natural_sort_key, word_count


logger = logging.getLogger(__name__)

MAX_ORDER = 4


@dataclass(frozen=True)
class DelayProfile:
    """
    Args:
        delays: d_i, source words revealed when hypothesis word i was committed
        src_len: |X| in words
        hyp_len: |Y| in words
        ref_len: |Y*| in words
    """

    delays: Tuple[int, ...]
    src_len: int
    hyp_len: int
    ref_len: int

    def __post_init__(self):
        if len(self.delays) != self.hyp_len:
            raise MetricError(f"{len(self.delays)} delays for {self.hyp_len} hypothesis words")
        if any(d < 1 or d > self.src_len for d in self.delays):
            raise MetricError(f"delays must lie in [1, {self.src_len}]")
        if any(a > b for a, b in zip(self.delays, self.delays[1:])):
            raise MetricError("delays must be non-decreasing")

    @classmethod
    def from_trace(cls, trace: SessionTrace, reference: str) -> "DelayProfile":
        return cls(
            delays=tuple(trace.delays),
            src_len=trace.src_len,
            hyp_len=trace.hyp_len,
            ref_len=word_count(reference),
        )


def _tau(profile: DelayProfile) -> int:
    for i, d in enumerate(profile.delays, 1):
        if d == profile.src_len:
            return i
    logger.warning(
        f"no delay reaches the source length {profile.src_len}; averaging over all {len(profile.delays)} words"
    )
    return len(profile.delays)


def _lagging(profile: DelayProfile, target_len: int) -> float:
    if not profile.delays:
        raise MetricError("lagging is undefined for an empty delay profile")
    rate = target_len / profile.src_len
    tau = _tau(profile)
    return math.fsum(d - i / rate for i, d in enumerate(profile.delays[:tau])) / tau


def laal(profile: DelayProfile) -> float:
    """
    Length-adaptive average lagging

    LAAL = 1/tau * sum_{i<=tau} [d_i - (i-1) * |X| / max(|Y|, |Y*|)], tau = first i with d_i == |X|

    Raises:
        MetricError: empty delays
    """
    return _lagging(profile, max(profile.hyp_len, profile.ref_len))


def average_lagging(profile: DelayProfile) -> float:
    """Plain AL (rate from the hypothesis length); kept for cross-checking LAAL, not reported"""
    return _lagging(profile, profile.hyp_len)


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: Tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


_BLEU = BLEU(tokenize="13a", smooth_method="none", effective_order=False, max_ngram_order=MAX_ORDER)


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str]) -> BleuScore:
    """
    Corpus-level BLEU-4, one reference per hypothesis

    Raises:
        InvalidInputError: empty lists or length mismatch
    """
    if not hypotheses or len(hypotheses) != len(references):
        raise InvalidInputError(
            f"need equal-length non-empty lists, got {len(hypotheses)} hypotheses and {len(references)} references"
        )
    if not any(h.strip() for h in hypotheses):
        logger.warning("All hypotheses are empty; BLEU is 0")

    stats = _BLEU.corpus_score(list(hypotheses), [list(references)])
    hyp_len, ref_len = stats.sys_len, stats.ref_len
    precisions = tuple(c / t if t else 0.0 for c, t in zip(stats.counts, stats.totals))

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1 - ref_len / hyp_len)

    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100 * bp * math.exp(math.fsum(math.log(p) for p in precisions) / MAX_ORDER)

    return BleuScore(score=score, precisions=precisions, brevity_penalty=bp,
                     hyp_len=hyp_len, ref_len=ref_len)


@dataclass(frozen=True)
class SentenceMetrics:
    id: str
    laal: float
    invocations: int


@dataclass
class MetricsReport:
    corpus_bleu: BleuScore
    mean_laal: float
    mean_invocations: float
    mean_delay: Optional[float]
    per_sentence: List[SentenceMetrics] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["corpus_bleu"]["precisions"] = list(self.corpus_bleu.precisions)
        return d


def sentence_laal(trace: SessionTrace, reference: str) -> float:
    if not trace.hypothesis.split():
        logger.warning(f"Sentence {trace.id} has an empty hypothesis; LAAL set to its source length")
        return float(trace.src_len)
    return laal(DelayProfile.from_trace(trace, reference))


def report(
    traces: Sequence[SessionTrace],
    references: Mapping[str, str],
    config: Optional[Dict[str, Any]] = None,
) -> MetricsReport:
    """
    Aggregate BLEU and latency over a corpus

    Args:
        traces: One trace per sentence (any order)
        references: Sentence id -> reference text
        config: Echoed into the report; defaults to the first trace's config

    Raises:
        MissingReferenceError: a trace id has no reference
        MetricError: no traces, or a trace's delays are inconsistent
    """
    if not traces:
        raise MetricError("no traces to score")
    missing = [t.id for t in traces if t.id not in references]
    if missing:
        raise MissingReferenceError(sorted(missing, key=natural_sort_key))

    ordered = sorted(traces, key=lambda t: natural_sort_key(t.id))
    per_sentence = []
    for trace in ordered:
        try:
            value = sentence_laal(trace, references[trace.id])
        except MetricError as e:
            raise MetricError(f"sentence {trace.id}: {e}") from e
        per_sentence.append(SentenceMetrics(id=trace.id, laal=value, invocations=trace.invocations))

    bleu = corpus_bleu([t.hypothesis for t in ordered], [references[t.id] for t in ordered])
    all_delays = [d for t in ordered for d in t.delays]

    return MetricsReport(
        corpus_bleu=bleu,
        mean_laal=math.fsum(s.laal for s in per_sentence) / len(per_sentence),
        mean_invocations=math.fsum(s.invocations for s in per_sentence) / len(per_sentence),
        mean_delay=math.fsum(all_delays) / len(all_delays) if all_delays else None,
        per_sentence=per_sentence,
        config=dict(config if config is not None else ordered[0].config),
    )


def write_report_json(path: Union[str, Path], result: MetricsReport):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                    encoding="utf-8")


def write_report_csv(path: Union[str, Path], result: MetricsReport):
    """One row per sentence (id, laal, invocations) and a final summary row"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "laal", "invocations"])
        for s in result.per_sentence:
            writer.writerow([s.id, f"{s.laal:.6f}", s.invocations])
        writer.writerow(["ALL", f"{result.mean_laal:.6f}", f"{result.mean_invocations:.6f}"])
