#!/usr/bin/env python3
"""
Prompt construction for incremental states
X_t = open + instruction(S_t) + close + T_t
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Tuple, Union

from errors import ConfigError, EmptySourceError
from text_stream import SourceStream, TargetToken, detokenize

if TYPE_CHECKING:
    from backend import JoiningConvention


DEFAULT_INSTRUCTION = "Translate the following sentence from {src_lang} to {tgt_lang}: {source}"

# MuST-C style English-source pairs
LANGUAGE_NAMES = {
    "en": "English",
    "cs": "Czech",
    "de": "German",
    "es": "Spanish",
    "fr": "French",
    "it": "Italian",
    "nl": "Dutch",
    "pt": "Portuguese",
    "ro": "Romanian",
    "ru": "Russian",
}


@dataclass(frozen=True)
class PromptTemplate:
    """
    Instruction template with chat markers

    Args:
        instruction_pattern: Text with {src_lang}, {tgt_lang} and exactly one {source}
        open_marker: Emitted before the instruction
        close_marker: Emitted after the instruction, right before the target text
        one_shot: Optional (example_source, example_target) exchange rendered first
        src_lang: Name substituted for {src_lang}
        tgt_lang: Name substituted for {tgt_lang}
        shot_separator: Text between the example exchange and the live prompt
    """

    instruction_pattern: str = DEFAULT_INSTRUCTION
    open_marker: str = "[INST] "
    close_marker: str = " [/INST] "
    one_shot: Optional[Tuple[str, str]] = None
    src_lang: str = "English"
    tgt_lang: str = "German"
    shot_separator: str = "\n"

    def __post_init__(self):
        count = self.instruction_pattern.count("{source}")
        if count != 1:
            raise ConfigError(
                f"instruction pattern must contain {{source}} exactly once, found {count}"
            )

    def render_instruction(self, source_text: str) -> str:
        # plain replacement: braces inside the source must survive untouched
        return (self.instruction_pattern
                .replace("{src_lang}", self.src_lang)
                .replace("{tgt_lang}", self.tgt_lang)
                .replace("{source}", source_text))

    def render_exchange(self, source_text: str, target_text: str) -> str:
        return self.open_marker + self.render_instruction(source_text) + self.close_marker + target_text


@dataclass(frozen=True)
class IncrementalState:
    """
    S_t and T_t at time step t (t == number of revealed source words)
    """

    source: SourceStream
    target_tokens: Tuple[TargetToken, ...] = field(default_factory=tuple)

    @property
    def t(self) -> int:
        return self.source.cursor

    def commit(self, payload) -> "IncrementalState":
        return IncrementalState(source=self.source, target_tokens=self.target_tokens + tuple(payload))

    def read(self) -> "IncrementalState":
        return IncrementalState(source=self.source.reveal(), target_tokens=self.target_tokens)


def build_prompt(
    template: PromptTemplate,
    state: IncrementalState,
    joining: Optional["JoiningConvention"] = None,
) -> str:
    """
    Render X_t for a state

    Args:
        template: Instruction template and markers
        state: Revealed source words and committed target tokens
        joining: How committed target pieces become surface text

    Returns:
        The prompt; it always ends with close_marker + detokenized T_t

    Raises:
        EmptySourceError: no source word has been revealed yet
    """
    if state.source.cursor < 1:
        raise EmptySourceError("cannot build a prompt before any source word is revealed")

    prompt = ""
    if template.one_shot is not None:
        example_source, example_target = template.one_shot
        prompt += template.render_exchange(example_source, example_target) + template.shot_separator

    prompt += template.render_exchange(
        state.source.revealed_text(),
        detokenize(state.target_tokens, joining),
    )
    return prompt


def languages_for_pair(pair: str) -> Tuple[str, str]:
    """'en-de' -> ('English', 'German'); unknown codes are returned unchanged"""
    try:
        src, tgt = pair.split("-")
    except ValueError:
        raise ConfigError(f"language pair must look like 'en-de', got {pair!r}")
    return LANGUAGE_NAMES.get(src, src), LANGUAGE_NAMES.get(tgt, tgt)


def load_template(
    path: Optional[Union[str, Path]] = None,
    *,
    pair: Optional[str] = None,
    open_marker: str = "[INST] ",
    close_marker: str = " [/INST] ",
    one_shot: Optional[Tuple[str, str]] = None,
) -> PromptTemplate:
    """
    Build a template from an optional instruction file

    Args:
        path: UTF-8 file holding the instruction pattern (trailing newline stripped)
        pair: Language pair code, e.g. 'en-de'
    """
    pattern = DEFAULT_INSTRUCTION
    if path is not None:
        try:
            pattern = Path(path).read_text(encoding="utf-8").rstrip("\n")
        except FileNotFoundError:
            raise ConfigError(f"template file not found: {path}")

    src_lang, tgt_lang = languages_for_pair(pair) if pair else ("English", "German")
    return PromptTemplate(
        instruction_pattern=pattern,
        open_marker=open_marker,
        close_marker=close_marker,
        one_shot=one_shot,
        src_lang=src_lang,
        tgt_lang=tgt_lang,
    )
