#!/usr/bin/env python3
"""
Source words, target tokens and corpus ingestion
Source text streams word by word; target text is whatever subword units the backend emits
"""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple, Union

from errors import CorpusFormatError, EmptySourceError, InvalidInputError

if TYPE_CHECKING:
    from backend import JoiningConvention


logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s")


@dataclass(frozen=True)
class SourceWord:
    """One whitespace-delimited source word"""

    text: str

    def __post_init__(self):
        if not self.text:
            raise InvalidInputError("source word must not be empty")
        if _WHITESPACE.search(self.text):
            raise InvalidInputError(f"source word contains whitespace: {self.text!r}")

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class SourceStream:
    """
    Incrementally revealed source sentence

    Args:
        words: All words of the sentence
        cursor: Number of words revealed so far
    """

    words: Tuple[SourceWord, ...]
    cursor: int = 0

    def __post_init__(self):
        if not 0 <= self.cursor <= len(self.words):
            raise InvalidInputError(
                f"cursor {self.cursor} outside [0, {len(self.words)}]"
            )

    @classmethod
    def from_sentence(cls, sentence: str) -> "SourceStream":
        return cls(words=tuple(tokenize_source(sentence)))

    @property
    def total(self) -> int:
        return len(self.words)

    def revealed(self) -> Tuple[SourceWord, ...]:
        return self.words[:self.cursor]

    def revealed_text(self) -> str:
        return " ".join(w.text for w in self.revealed())

    def finished(self) -> bool:
        return self.cursor == self.total

    def reveal(self, count: int = 1) -> "SourceStream":
        """Return the stream with up to `count` more words revealed"""
        if count < 0:
            raise InvalidInputError("cannot un-reveal source words")
        return replace(self, cursor=min(self.total, self.cursor + count))


@dataclass(frozen=True)
class TargetToken:
    """One backend-native target unit; EOS carries no visible text"""

    text: str
    is_eos: bool = False

    def __str__(self) -> str:
        return "" if self.is_eos else self.text


EOS = TargetToken(text="", is_eos=True)


@dataclass(frozen=True)
class ParallelPair:
    id: str
    source: str
    target: str


def tokenize_source(sentence: str) -> List[SourceWord]:
    """
    Split a sentence into streamable words

    Args:
        sentence: Source text (any Unicode whitespace separates words)

    Returns:
        Words in order; runs of whitespace collapse

    Raises:
        EmptySourceError: the sentence holds no words
    """
    words = [SourceWord(piece) for piece in sentence.split()]
    if not words:
        raise EmptySourceError("source sentence is empty or whitespace only")
    return words


def detokenize(tokens: Iterable[TargetToken], joining: Optional["JoiningConvention"] = None) -> str:
    """
    Join backend pieces into surface text

    Args:
        tokens: Target tokens; EOS tokens are skipped
        joining: Declared joining convention, byte-level when None

    Returns:
        Surface string
    """
    pieces = [t.text for t in tokens if not t.is_eos]
    if not pieces:
        return ""

    style = joining.style if joining is not None else "byte-level"
    marker = joining.marker if joining is not None else ""

    if style == "continuation-marker":
        out = []
        for i, piece in enumerate(pieces):
            if marker and piece.endswith(marker):
                out.append(piece[:-len(marker)])
            else:
                out.append(piece)
                if i < len(pieces) - 1:
                    out.append(" ")
        return "".join(out)

    if style == "preceding-space-marker":
        text = "".join(p.replace(marker, " ") if marker else p for p in pieces)
        return text.lstrip()

    # byte-level: pieces already carry their own spacing
    text = "".join(pieces)
    if marker:
        text = text.replace(marker, " ")
    return text


def natural_sort_key(sentence_id: str) -> Tuple[int, Union[int, str]]:
    """Numeric ids sort numerically, before any non-numeric id"""
    if sentence_id.isdigit():
        return (0, int(sentence_id))
    return (1, sentence_id)


def read_parallel_corpus(path: Union[str, Path]) -> List[ParallelPair]:
    """
    Read a `source<TAB>target` corpus, one pair per line, no header

    Sentence ids are the 1-based line numbers.

    Raises:
        CorpusFormatError: a line does not have exactly two fields, or has an empty source
    """
    path = Path(path)
    pairs = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise CorpusFormatError("corpus file not found", path=str(path))
    except UnicodeDecodeError as e:
        raise CorpusFormatError(f"not UTF-8: {e}", path=str(path))

    for lineno, line in enumerate(lines, 1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusFormatError(
                f"expected 2 tab-separated fields, got {len(fields)}", path=str(path), line=lineno
            )
        source, target = fields
        if not source.split():
            raise CorpusFormatError("empty source sentence", path=str(path), line=lineno)
        pairs.append(ParallelPair(id=str(lineno), source=source, target=target))

    logger.info(f"Loaded {len(pairs)} sentence pair(s) from {path}")
    return pairs


def word_count(text: str) -> int:
    return len(text.split())


def join_words(words: Sequence[SourceWord]) -> str:
    return " ".join(w.text for w in words)
