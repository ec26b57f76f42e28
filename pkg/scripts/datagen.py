#!/usr/bin/env python3
"""
Prefix-to-prefix fine-tuning data
Truncates sampled sources to 20-80% of their words, translates the prefixes with the
configured backend and mixes them with full-sentence pairs into SFT JSONL
"""

import asyncio
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from backend import GenerationBackend, GenerationRequest
from errors import BackendError, ConfigError, InvalidInputError
from prompting import IncrementalState, PromptTemplate, build_prompt
from text_stream import ParallelPair, SourceStream, SourceWord, detokenize, join_words, tokenize_source


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrefixSpec:
    samples_per_pair: int = 1000
    min_frac: float = 0.2
    max_frac: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_pair < 1:
            raise ConfigError("samples_per_pair must be >= 1")
        if not 0 < self.min_frac <= self.max_frac <= 1:
            raise ConfigError(
                f"need 0 < min_frac <= max_frac <= 1, got {self.min_frac}, {self.max_frac}"
            )


@dataclass(frozen=True)
class SftRecord:
    src_lang: str
    tgt_lang: str
    prompt: str
    completion: str
    origin: str
    loss_on_prompt: bool = False

    def __post_init__(self):
        if self.loss_on_prompt:
            raise InvalidInputError("SFT records never train on the prompt")
        if self.origin not in ("full", "prefix"):
            raise InvalidInputError(f"origin must be 'full' or 'prefix', got {self.origin!r}")


@dataclass
class DatagenStats:
    prefix_records: Dict[str, int] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    @property
    def total_prefix(self) -> int:
        return sum(self.prefix_records.values())

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def truncate_prefix(words: Sequence[SourceWord], frac: float) -> List[SourceWord]:
    """
    First max(1, round(frac * len(words))) words, rounding half up

    Raises:
        InvalidInputError: empty input
    """
    if not words:
        raise InvalidInputError("cannot truncate an empty sentence")
    keep = max(1, _round_half_up(frac * len(words)))
    return list(words[:keep])


def _prompt_for(template: PromptTemplate, words: Sequence[SourceWord]) -> str:
    stream = SourceStream(words=tuple(words), cursor=len(words))
    return build_prompt(template, IncrementalState(source=stream))


def full_records(pairs: Iterable[ParallelPair], template: PromptTemplate) -> List[SftRecord]:
    """Full-sentence pairs rendered with an empty T_t"""
    return [
        SftRecord(
            src_lang=template.src_lang,
            tgt_lang=template.tgt_lang,
            prompt=_prompt_for(template, tokenize_source(p.source)),
            completion=p.target.strip(),
            origin="full",
        )
        for p in pairs
    ]


async def build_prefix_dataset(
    corpora: Mapping[str, Sequence[ParallelPair]],
    spec: PrefixSpec,
    backend: GenerationBackend,
    templates: Callable[[str], PromptTemplate],
    *,
    parallelism: int = 1,
    max_new_tokens: int = 128,
) -> Tuple[List[SftRecord], DatagenStats]:
    """
    Sample, truncate and translate source prefixes for each language pair

    Args:
        corpora: Language pair code -> parallel sentences
        spec: Sample count, truncation range and seed
        backend: Prefix translator (top-scoring candidate is used)
        templates: Language pair code -> prompt template
        parallelism: Concurrent backend calls

    Returns:
        Records sorted by (pair, sample index) and per-pair counts

    Raises:
        InvalidInputError: a pair's corpus is smaller than samples_per_pair
    """
    for pair, sentences in corpora.items():
        if len(sentences) < spec.samples_per_pair:
            raise InvalidInputError(
                f"corpus for {pair} has {len(sentences)} sentences, "
                f"fewer than the {spec.samples_per_pair} samples requested"
            )

    jobs = []
    for pair in sorted(corpora):
        # one generator per pair: adding a pair leaves the others' samples unchanged
        rng = random.Random(f"{spec.seed}:{pair}")
        sampled = rng.sample(list(corpora[pair]), spec.samples_per_pair)
        for index, sentence in enumerate(sampled):
            frac = rng.uniform(spec.min_frac, spec.max_frac)
            prefix = truncate_prefix(tokenize_source(sentence.source), frac)
            jobs.append((pair, index, sentence, prefix))

    semaphore = asyncio.Semaphore(parallelism)
    stats = DatagenStats(prefix_records={p: 0 for p in corpora}, skipped={p: 0 for p in corpora})

    async def translate(pair: str, index: int, sentence: ParallelPair, prefix: List[SourceWord]):
        template = templates(pair)
        request = GenerationRequest(
            prompt=_prompt_for(template, prefix),
            num_candidates=1,
            max_new_tokens=max_new_tokens,
            session_id=f"{pair}/{sentence.id}",
            cursor=len(prefix),
        )
        async with semaphore:
            try:
                response = await backend.generate(request)
            except BackendError as e:
                logger.warning(f"Skipping {pair} sample {index} ({join_words(prefix)!r}): {e}")
                return None
        best = response.candidates[0]
        completion = detokenize(best.tokens, backend.joining).strip()
        if not completion:
            logger.warning(f"Skipping {pair} sample {index}: empty translation")
            return None
        return SftRecord(
            src_lang=template.src_lang,
            tgt_lang=template.tgt_lang,
            prompt=request.prompt,
            completion=completion,
            origin="prefix",
        )

    results = await asyncio.gather(*(translate(*job) for job in jobs))

    records = []
    for (pair, _, _, _), record in zip(jobs, results):
        if record is None:
            stats.skipped[pair] += 1
        else:
            stats.prefix_records[pair] += 1
            records.append(record)
    return records, stats


def mix_datasets(
    full: Sequence[SftRecord],
    prefix: Sequence[SftRecord],
    seed: int = 0,
) -> List[SftRecord]:
    """Concatenate and shuffle with a seeded generator; counts are preserved"""
    mixed = list(full) + list(prefix)
    random.Random(seed).shuffle(mixed)
    return mixed


def write_sft_jsonl(path: Union[str, Path], records: Iterable[SftRecord]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(asdict(record), ensure_ascii=False) + "\n")
            count += 1
    return count
