#!/usr/bin/env python3
"""
Simultaneous translation harness
Stream a corpus through an offline LLM, score traces, sweep gamma/k/n/beam, build prefix SFT data
"""

import argparse
import asyncio
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from backend import JOINING_STYLES, TOKEN_ENV, JoiningConvention, make_backend
from datagen import PrefixSpec, build_prefix_dataset, full_records, mix_datasets, write_sft_jsonl
from errors import EXIT_OK, EXIT_UNEXPECTED, ConfigError, SimulMTError
from metrics import MetricsReport, report, write_report_csv, write_report_json
from policy_engine import PRESETS, PolicyConfig, read_traces, run_corpus, write_traces
from prompting import PromptTemplate, load_template
from text_stream import read_parallel_corpus


logger = logging.getLogger(__name__)

DEFAULT_GAMMAS = tuple(round(0.1 * i, 1) for i in range(1, 11))
SWEEP_COLUMNS = ["k", "n", "beam", "gamma", "corpus_bleu", "mean_laal", "mean_invocations"]

_HINTS = {
    2: "Check the flags with --print-config",
    3: "Check the file path and its format",
    4: "Check the backend descriptor, the fixture entries or the server",
    5: "Check that every trace id has a reference in --corpus",
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one command invocation; keys match the long flag names"""

    corpus: Optional[str] = None
    corpora: Tuple[str, ...] = ()
    traces: Optional[str] = None
    out: Optional[str] = None
    backend: Optional[str] = None
    template: Optional[str] = None
    pair: Optional[str] = None
    one_shot: Optional[Tuple[str, str]] = None
    open_marker: str = "[INST] "
    close_marker: str = " [/INST] "
    joining: str = "byte-level"
    joining_marker: Optional[str] = None
    k: int = 3
    n: int = 3
    beam: int = 5
    gamma: float = 0.6
    max_new_tokens: int = 64
    max_target_tokens: Optional[int] = None
    write_until_empty: bool = False
    no_filter: bool = False
    stop: Tuple[str, ...] = ()
    parallelism: int = 1
    keep_going: bool = False
    timeout: float = 60.0
    max_in_flight: int = 4
    token_env: str = TOKEN_ENV
    model: Optional[str] = None
    seed: int = 0
    gammas: Optional[Tuple[float, ...]] = None
    ks: Optional[Tuple[int, ...]] = None
    ns: Optional[Tuple[int, ...]] = None
    beams: Optional[Tuple[int, ...]] = None
    samples: int = 1000
    min_frac: float = 0.2
    max_frac: float = 0.8
    no_full: bool = False

    def policy(self, **overrides) -> PolicyConfig:
        values = dict(
            k=self.k,
            n=self.n,
            beam=self.beam,
            gamma=self.gamma,
            max_new_tokens=self.max_new_tokens,
            max_target_tokens=self.max_target_tokens,
            write_until_empty=self.write_until_empty,
            filter_disagreeing=not self.no_filter,
            stop_sequences=tuple(self.stop),
        )
        values.update(overrides)
        return PolicyConfig(**values)

    def joining_convention(self) -> JoiningConvention:
        return JoiningConvention.named(self.joining, self.joining_marker)

    def prompt_template(self, pair: Optional[str] = None) -> PromptTemplate:
        return load_template(
            self.template,
            pair=pair or self.pair,
            open_marker=self.open_marker,
            close_marker=self.close_marker,
            one_shot=self.one_shot,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_TUPLE_KEYS = {"corpora", "one_shot", "stop", "gammas", "ks", "ns", "beams"}


def _from_mapping(values: Dict[str, Any], origin: str) -> Dict[str, Any]:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {origin}: {', '.join(unknown)}")
    out = {}
    for key, value in values.items():
        if key in _TUPLE_KEYS and value is not None:
            value = tuple(value)
        out[key] = value
    return out


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge settings: CLI flags > --config file > --preset > defaults

    Flags that were not given are absent from the namespace (argparse.SUPPRESS).
    """
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "preset", "print_config", "verbose", "quiet")}
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}

    file_preset = file_values.pop("preset", None)
    preset_name = getattr(args, "preset", None) or file_preset
    merged: Dict[str, Any] = {}
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; choose from {', '.join(PRESETS)}")
        merged.update(PRESETS[preset_name])
    merged.update(_from_mapping(file_values, getattr(args, "config", "config file")))
    merged.update(_from_mapping(flags, "flags"))

    try:
        config = RunConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e))
    # validate the policy part eagerly so --print-config never shows an invalid setting
    config.policy()
    if config.parallelism < 1:
        raise ConfigError("--parallelism must be >= 1")
    return config


def _float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _pair_path(text: str) -> str:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected PAIR=PATH, got {text!r}")
    return text


def _print_report(result: MetricsReport):
    print("\n📋 Report:")
    print(f"   Sentences: {len(result.per_sentence)}")
    print(f"   BLEU: {result.corpus_bleu.score:.2f}")
    print(f"   Mean LAAL: {result.mean_laal:.4f} words")
    print(f"   Mean invocations: {result.mean_invocations:.4f}")
    if result.mean_delay is not None:
        print(f"   Mean delay: {result.mean_delay:.4f} words")


def _write_report(out: Path, result: MetricsReport):
    write_report_json(out / "report.json", result)
    write_report_csv(out / "report.csv", result)


def _out_dir(config: RunConfig) -> Path:
    if not config.out:
        raise ConfigError("--out is required")
    return Path(config.out)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


async def _close(backend):
    aclose = getattr(backend, "aclose", None)
    if aclose is not None:
        await aclose()


def _make_backend(config: RunConfig):
    return make_backend(
        config.backend,
        config.joining_convention(),
        timeout=config.timeout,
        max_in_flight=config.max_in_flight,
        token_env=config.token_env,
        model=config.model,
    )


async def cmd_run(config: RunConfig, quiet: bool = False) -> int:
    """Stream every corpus sentence, then write traces.jsonl, report.json and report.csv"""
    pairs = read_parallel_corpus(_require(config.corpus, "--corpus"))
    out = _out_dir(config)
    template = config.prompt_template()
    policy = config.policy()
    backend = _make_backend(config)

    print(f"🚀 Streaming {len(pairs)} sentence(s) with k={policy.k} n={policy.n} "
          f"beam={policy.beam} gamma={policy.gamma}")
    progress = tqdm(total=len(pairs), desc="sessions", unit="sent", disable=quiet)
    try:
        corpus_run = await run_corpus(
            pairs, policy, backend, template,
            parallelism=config.parallelism,
            keep_going=config.keep_going,
            on_done=lambda: progress.update(1),
        )
    finally:
        progress.close()
        await _close(backend)

    write_traces(out / "traces.jsonl", corpus_run.traces)
    print(f"✅ Wrote {len(corpus_run.traces)} trace(s) to {out / 'traces.jsonl'}")
    if corpus_run.failures:
        print(f"⚠️  {len(corpus_run.failures)} session(s) failed and were skipped (--keep-going)")

    result = report(corpus_run.traces, {p.id: p.target for p in pairs})
    _write_report(out, result)
    _print_report(result)
    print(f"\n✅ Report saved to {out / 'report.json'} and {out / 'report.csv'}")
    return EXIT_OK


async def cmd_sweep(config: RunConfig, quiet: bool = False) -> int:
    """One corpus run per (k, n, beam, gamma) cell; rows go to <out>/sweep.csv"""
    grids = {
        "k": config.ks if config.ks is not None else (config.k,),
        "n": config.ns if config.ns is not None else (config.n,),
        "beam": config.beams if config.beams is not None else (config.beam,),
        "gamma": config.gammas if config.gammas is not None else DEFAULT_GAMMAS,
    }
    for name, grid in grids.items():
        if not grid:
            raise ConfigError(f"the {name} grid is empty")

    cells = [
        config.policy(k=k, n=n, beam=beam, gamma=gamma)
        for k in grids["k"] for n in grids["n"] for beam in grids["beam"] for gamma in grids["gamma"]
    ]
    pairs = read_parallel_corpus(_require(config.corpus, "--corpus"))
    references = {p.id: p.target for p in pairs}
    out = _out_dir(config)
    template = config.prompt_template()
    backend = _make_backend(config)

    print(f"🚀 Sweeping {len(cells)} configuration(s) over {len(pairs)} sentence(s)")
    rows = []
    try:
        for policy in tqdm(cells, desc="sweep", unit="cfg", disable=quiet):
            corpus_run = await run_corpus(pairs, policy, backend, template,
                                          parallelism=config.parallelism,
                                          keep_going=config.keep_going)
            result = report(corpus_run.traces, references)
            rows.append([
                policy.k, policy.n, policy.beam, policy.gamma,
                f"{result.corpus_bleu.score:.4f}",
                f"{result.mean_laal:.4f}",
                f"{result.mean_invocations:.4f}",
            ])
    finally:
        await _close(backend)

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)

    print("\n📋 Sweep:")
    for row in rows:
        print(f"   k={row[0]} n={row[1]} beam={row[2]} gamma={row[3]}  "
              f"BLEU={row[4]}  LAAL={row[5]}  calls={row[6]}")
    print(f"\n✅ Saved {len(rows)} row(s) to {out / 'sweep.csv'}")
    return EXIT_OK


async def cmd_score(config: RunConfig, quiet: bool = False) -> int:
    """Re-score stored traces against the references of --corpus"""
    traces = read_traces(_require(config.traces, "--traces"))
    pairs = read_parallel_corpus(_require(config.corpus, "--corpus"))
    references = {p.id: p.target for p in pairs}

    traced = {t.id for t in traces}
    untraced = [p.id for p in pairs if p.id not in traced]
    if untraced:
        logger.warning(f"{len(untraced)} corpus sentence(s) have no trace: {', '.join(untraced[:10])}")

    result = report(traces, references)
    _print_report(result)
    if config.out:
        out = Path(config.out)
        _write_report(out, result)
        print(f"\n✅ Report saved to {out / 'report.json'} and {out / 'report.csv'}")
    return EXIT_OK


def _parse_corpora(entries: Sequence[str]) -> Dict[str, str]:
    corpora: Dict[str, str] = {}
    for entry in entries:
        pair, _, path = entry.partition("=")
        if not pair or not path:
            raise ConfigError(f"expected PAIR=PATH, got {entry!r}")
        if pair in corpora:
            raise ConfigError(f"language pair {pair} given twice")
        corpora[pair] = path
    if not corpora:
        raise ConfigError("at least one --corpus PAIR=PATH is required")
    return corpora


async def cmd_datagen(config: RunConfig, quiet: bool = False) -> int:
    """Prefix records per language pair, mixed with full-sentence records into one JSONL file"""
    paths = _parse_corpora(config.corpora)
    out = Path(_require(config.out, "--out"))
    spec = PrefixSpec(samples_per_pair=config.samples, min_frac=config.min_frac,
                      max_frac=config.max_frac, seed=config.seed)
    corpora = {pair: read_parallel_corpus(path) for pair, path in sorted(paths.items())}
    templates = {pair: config.prompt_template(pair) for pair in corpora}
    backend = _make_backend(config)

    print(f"🚀 Building prefix data for {len(corpora)} language pair(s), "
          f"{spec.samples_per_pair} sample(s) each")
    try:
        prefix, stats = await build_prefix_dataset(
            corpora, spec, backend, templates.__getitem__,
            parallelism=config.parallelism,
            max_new_tokens=config.max_new_tokens,
        )
    finally:
        await _close(backend)

    full = [] if config.no_full else [
        record for pair in sorted(corpora) for record in full_records(corpora[pair], templates[pair])
    ]
    count = write_sft_jsonl(out, mix_datasets(full, prefix, seed=spec.seed))

    print("\n📋 Prefix records:")
    for pair in sorted(corpora):
        print(f"   {pair}: {stats.prefix_records[pair]} written, {stats.skipped[pair]} skipped")
    print(f"\n✅ Wrote {count} record(s) ({len(full)} full, {stats.total_prefix} prefix, "
          f"{stats.total_skipped} skipped) to {out}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "score": cmd_score,
    "datagen": cmd_datagen,
}


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', help='JSON file with settings (keys = long flag names)')
    common.add_argument('--print-config', action='store_true', help='Print the resolved settings and exit')
    common.add_argument('--verbose', action='store_true', help='Debug logging')
    common.add_argument('--quiet', action='store_true', help='No progress bars')
    return common


def _generation_options() -> argparse.ArgumentParser:
    gen = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    gen.add_argument('--backend', help='script:<fixture.jsonl>, http(s)://<url> or openai:<url>')
    gen.add_argument('--template', help='Instruction pattern file')
    gen.add_argument('--pair', help='Language pair code, e.g. en-de')
    gen.add_argument('--one-shot', nargs=2, metavar=('SOURCE', 'TARGET'), help='Example exchange shown first')
    gen.add_argument('--open-marker', help='Text before the instruction')
    gen.add_argument('--close-marker', help='Text after the instruction')
    gen.add_argument('--joining', choices=JOINING_STYLES, help='How target pieces join')
    gen.add_argument('--joining-marker', help='Marker of the joining convention')
    gen.add_argument('--max-new-tokens', type=int, help='Generation cap per call')
    gen.add_argument('--parallelism', type=int, help='Concurrent sessions / calls (default 1)')
    gen.add_argument('--timeout', type=float, help='Seconds per backend call')
    gen.add_argument('--max-in-flight', type=int, help='Concurrent HTTP requests')
    gen.add_argument('--token-env', help=f'Environment variable holding the API token (default {TOKEN_ENV})')
    gen.add_argument('--model', help='Model name forwarded to the server')
    return gen


def _policy_options() -> argparse.ArgumentParser:
    pol = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    pol.add_argument('--preset', choices=sorted(PRESETS), help='Named (beam, k, n, gamma) setting')
    pol.add_argument('--corpus', help='source<TAB>target corpus')
    pol.add_argument('--out', help='Output directory')
    pol.add_argument('--k', type=int, help='Words read before the first write attempt')
    pol.add_argument('--n', type=int, help='Read chunk between write attempts')
    pol.add_argument('--beam', type=int, help='Candidates per call')
    pol.add_argument('--gamma', type=float, help='Agreement threshold in (0, 1]')
    pol.add_argument('--max-target-tokens', type=int, help='Session emission cap')
    pol.add_argument('--write-until-empty', action='store_true', help='Keep writing at the same step')
    pol.add_argument('--no-filter', action='store_true', help='Disagreeing candidates keep voting')
    pol.add_argument('--stop', action='append', help='Extra stop sequence (repeatable)')
    pol.add_argument('--keep-going', action='store_true', help='Skip failed sessions instead of aborting')
    return pol


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Simultaneous translation with an offline LLM')
    subparsers = parser.add_subparsers(dest='command', help='Commands')
    common, gen, pol = _common_options(), _generation_options(), _policy_options()

    # Run
    subparsers.add_parser('run', parents=[common, gen, pol], help='Stream a corpus and report BLEU / LAAL')

    # Sweep
    sweep_parser = subparsers.add_parser('sweep', parents=[common, gen, pol],
                                         help='Grid over gamma / k / n / beam')
    sweep_parser.add_argument('--gammas', type=_float_list, default=argparse.SUPPRESS,
                              help='Comma-separated gammas (default 0.1..1.0)')
    sweep_parser.add_argument('--ks', type=_int_list, default=argparse.SUPPRESS, help='Comma-separated k values')
    sweep_parser.add_argument('--ns', type=_int_list, default=argparse.SUPPRESS, help='Comma-separated n values')
    sweep_parser.add_argument('--beams', type=_int_list, default=argparse.SUPPRESS,
                              help='Comma-separated beam sizes')

    # Score
    score_parser = subparsers.add_parser('score', parents=[common], help='Score stored traces')
    score_parser.add_argument('--traces', default=argparse.SUPPRESS, help='traces.jsonl from run')
    score_parser.add_argument('--corpus', default=argparse.SUPPRESS, help='Corpus holding the references')
    score_parser.add_argument('--out', default=argparse.SUPPRESS, help='Directory for report.json / report.csv')

    # Datagen
    datagen_parser = subparsers.add_parser('datagen', parents=[common, gen], help='Build prefix SFT data')
    datagen_parser.add_argument('--corpus', dest='corpora', action='append', type=_pair_path,
                                default=argparse.SUPPRESS, help='PAIR=PATH (repeatable)')
    datagen_parser.add_argument('--out', default=argparse.SUPPRESS, help='Output JSONL file')
    datagen_parser.add_argument('--samples', type=int, default=argparse.SUPPRESS,
                                help='Sampled sentences per pair (default 1000)')
    datagen_parser.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='Sampling seed')
    datagen_parser.add_argument('--min-frac', type=float, default=argparse.SUPPRESS, help='Lowest prefix fraction')
    datagen_parser.add_argument('--max-frac', type=float, default=argparse.SUPPRESS, help='Highest prefix fraction')
    datagen_parser.add_argument('--no-full', action='store_true', default=argparse.SUPPRESS,
                                help='Only write prefix records')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    if getattr(args, "verbose", False):
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = resolve_config(args)
        if getattr(args, "print_config", False):
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
            return EXIT_OK
        return asyncio.run(COMMANDS[args.command](config, quiet=getattr(args, "quiet", False)))
    except SimulMTError as e:
        print(f"❌ {type(e).__name__}: {e}")
        hint = _HINTS.get(e.exit_code)
        if hint:
            print(f"\n💡 {hint}")
        return e.exit_code
    except KeyboardInterrupt:
        print("\n\nCancelled.")
        return EXIT_OK
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"❌ Error: {e}")
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
