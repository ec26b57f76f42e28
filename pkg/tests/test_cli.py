"""End-to-end runs of the simulmt commands on the toy fixture"""

import csv
import json

import pytest

from backend import make_backend
from errors import EXIT_BACKEND, EXIT_METRIC, EXIT_OK, EXIT_USAGE
from simulmt import main


@pytest.fixture
def backend_flag(toy_script_path):
    return f"script:{toy_script_path}"


def _run(corpus, backend, out, *extra):
    return main(["run", "--corpus", str(corpus), "--backend", backend, "--out", str(out), "--quiet", *extra])


def _sweep_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_no_command_prints_help():
    assert main([]) == EXIT_USAGE


def test_run_writes_traces_and_report(tmp_path, toy_corpus_path, backend_flag):
    assert _run(toy_corpus_path, backend_flag, tmp_path) == EXIT_OK

    traces = [json.loads(line) for line in (tmp_path / "traces.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [t["id"] for t in traces] == ["1", "2", "3"]
    assert traces[1]["hypothesis"] == "vielen Dank"
    assert traces[0]["delays"] == [6, 6, 6, 9, 9, 9, 9, 9]

    data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert data["mean_laal"] == pytest.approx(13.2625 / 3)
    assert data["corpus_bleu"]["score"] == 100.0
    assert (tmp_path / "report.csv").exists()


def test_run_is_reproducible(tmp_path, toy_corpus_path, backend_flag):
    assert _run(toy_corpus_path, backend_flag, tmp_path / "a") == EXIT_OK
    assert _run(toy_corpus_path, backend_flag, tmp_path / "b", "--parallelism", "3") == EXIT_OK
    for name in ("traces.jsonl", "report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_score_reproduces_the_run_report(tmp_path, toy_corpus_path, backend_flag):
    assert _run(toy_corpus_path, backend_flag, tmp_path / "run") == EXIT_OK
    code = main(["score", "--traces", str(tmp_path / "run" / "traces.jsonl"),
                 "--corpus", str(toy_corpus_path), "--out", str(tmp_path / "score")])
    assert code == EXIT_OK
    assert (tmp_path / "run" / "report.json").read_bytes() == (tmp_path / "score" / "report.json").read_bytes()


def test_score_without_a_reference_exits_with_metric_code(tmp_path, toy_corpus_path, backend_flag):
    assert _run(toy_corpus_path, backend_flag, tmp_path / "run") == EXIT_OK
    short = tmp_path / "short.tsv"
    short.write_text("\n".join(toy_corpus_path.read_text(encoding="utf-8").splitlines()[:2]) + "\n",
                     encoding="utf-8")
    code = main(["score", "--traces", str(tmp_path / "run" / "traces.jsonl"), "--corpus", str(short)])
    assert code == EXIT_METRIC


def test_fixture_miss_exits_with_backend_code(tmp_path, toy_corpus_path, backend_flag, capsys):
    assert _run(toy_corpus_path, backend_flag, tmp_path, "--k", "1", "--n", "1") == EXIT_BACKEND
    assert "no fixture entry" in capsys.readouterr().out


def test_keep_going_skips_failed_sessions(tmp_path, toy_corpus_path, backend_flag):
    # only the four-word sentence reaches its fixture entry at the end of the source
    code = _run(toy_corpus_path, backend_flag, tmp_path, "--k", "4", "--n", "1", "--keep-going")
    assert code == EXIT_OK
    traces = (tmp_path / "traces.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["id"] for line in traces] == ["2"]


def test_sweep_gamma_tradeoff(tmp_path, toy_corpus_path, backend_flag):
    code = main(["sweep", "--corpus", str(toy_corpus_path), "--backend", backend_flag,
                 "--out", str(tmp_path), "--gammas", "0.6,1.0", "--quiet"])
    assert code == EXIT_OK
    rows = _sweep_rows(tmp_path / "sweep.csv")
    assert list(rows[0]) == ["k", "n", "beam", "gamma", "corpus_bleu", "mean_laal", "mean_invocations"]
    relaxed, strict = rows
    assert float(relaxed["mean_laal"]) <= float(strict["mean_laal"])
    assert float(relaxed["corpus_bleu"]) >= float(strict["corpus_bleu"])


def test_sweep_default_gamma_grid(tmp_path, toy_corpus_path, backend_flag):
    code = main(["sweep", "--corpus", str(toy_corpus_path), "--backend", backend_flag,
                 "--out", str(tmp_path), "--quiet"])
    assert code == EXIT_OK
    rows = _sweep_rows(tmp_path / "sweep.csv")
    assert [float(r["gamma"]) for r in rows] == pytest.approx([0.1 * i for i in range(1, 11)])


def test_sweep_grid_has_one_row_per_cell(tmp_path, toy_corpus_path, backend_flag):
    code = main(["sweep", "--corpus", str(toy_corpus_path), "--backend", backend_flag, "--out", str(tmp_path),
                 "--ks", "3,5", "--beams", "3,5", "--gammas", "0.6", "--quiet"])
    assert code == EXIT_OK
    rows = _sweep_rows(tmp_path / "sweep.csv")
    assert [(r["k"], r["n"], r["beam"], r["gamma"]) for r in rows] == [
        ("3", "3", "3", "0.6"), ("3", "3", "5", "0.6"), ("5", "3", "3", "0.6"), ("5", "3", "5", "0.6"),
    ]
    # both waits first reach a write attempt at the sixth word
    assert rows[0]["mean_laal"] == rows[2]["mean_laal"]
    assert rows[1]["mean_laal"] == rows[3]["mean_laal"]
    assert float(rows[1]["mean_laal"]) == pytest.approx(13.2625 / 3, abs=1e-4)


def test_sweep_uses_the_default_gammas_per_cell(tmp_path, toy_corpus_path, backend_flag):
    code = main(["sweep", "--corpus", str(toy_corpus_path), "--backend", backend_flag, "--out", str(tmp_path),
                 "--ks", "3,5", "--quiet"])
    assert code == EXIT_OK
    rows = _sweep_rows(tmp_path / "sweep.csv")
    assert len(rows) == 20
    assert [r["k"] for r in rows] == ["3"] * 10 + ["5"] * 10


def test_sweep_with_an_empty_grid(tmp_path, toy_corpus_path, backend_flag):
    code = main(["sweep", "--corpus", str(toy_corpus_path), "--backend", backend_flag,
                 "--out", str(tmp_path), "--gammas", ""])
    assert code == EXIT_USAGE
    assert not (tmp_path / "sweep.csv").exists()


def test_print_config_applies_presets_and_flags(capsys):
    assert main(["run", "--preset", "offline", "--gamma", "0.8", "--print-config"]) == EXIT_OK
    config = json.loads(capsys.readouterr().out)
    assert config["k"] == 10 ** 6
    assert config["n"] == 1
    assert config["gamma"] == 0.8


def test_flags_override_the_config_file(tmp_path, capsys):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"preset": "high-quality", "k": 4, "gamma": 0.9}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--k", "5", "--print-config"]) == EXIT_OK
    config = json.loads(capsys.readouterr().out)
    assert (config["k"], config["n"], config["beam"], config["gamma"]) == (5, 6, 10, 0.9)


def test_print_config_shows_prompt_and_joining_flags(tmp_path, capsys):
    template = tmp_path / "instruction.txt"
    code = main(["run", "--template", str(template), "--pair", "en-fr", "--one-shot", "good day", "bon jour",
                 "--joining", "continuation-marker", "--joining-marker", "@@", "--print-config"])
    assert code == EXIT_OK
    config = json.loads(capsys.readouterr().out)
    assert config["template"] == str(template)
    assert config["pair"] == "en-fr"
    assert config["one_shot"] == ["good day", "bon jour"]
    assert (config["joining"], config["joining_marker"]) == ("continuation-marker", "@@")


def test_one_shot_from_the_config_file(tmp_path, capsys):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"one_shot": ["good day", "bon jour"], "pair": "en-fr"}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--print-config"]) == EXIT_OK
    config = json.loads(capsys.readouterr().out)
    assert config["one_shot"] == ["good day", "bon jour"]
    assert config["pair"] == "en-fr"


def test_prompt_flags_reach_the_backend(tmp_path, monkeypatch):
    corpus = tmp_path / "en-fr.tsv"
    corpus.write_text("hello there\tBonjour\n", encoding="utf-8")
    fixture = tmp_path / "fixture.jsonl"
    fixture.write_text(json.dumps({"id": "1", "cursor": 2, "candidates": [
        {"tokens": ["Bon@@", "jour"], "score": -0.1, "finished": True},
    ]}) + "\n", encoding="utf-8")
    template = tmp_path / "instruction.txt"
    template.write_text("Render {source} from {src_lang} into {tgt_lang}.\n", encoding="utf-8")

    prompts = []

    def recording_backend(descriptor, joining, **kwargs):
        backend = make_backend(descriptor, joining, **kwargs)
        generate = backend.generate

        async def record(request):
            prompts.append(request.prompt)
            return await generate(request)

        backend.generate = record
        return backend

    monkeypatch.setattr("simulmt.make_backend", recording_backend)
    code = _run(corpus, f"script:{fixture}", tmp_path / "out", "--template", str(template), "--pair", "en-fr",
                "--one-shot", "good day", "bon jour", "--joining", "continuation-marker")
    assert code == EXIT_OK

    assert len(prompts) == 1
    assert prompts[0].startswith("[INST] Render good day from English into French. [/INST] bon jour")
    assert prompts[0].endswith("[INST] Render hello there from English into French. [/INST] ")
    trace = json.loads((tmp_path / "out" / "traces.jsonl").read_text(encoding="utf-8"))
    assert trace["hypothesis"] == "Bonjour"


@pytest.mark.parametrize("settings", [{"kk": 3}, {"gamma": 0.0}, {"preset": "fastest"}])
def test_bad_settings_exit_with_usage_code(tmp_path, settings):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps(settings), encoding="utf-8")
    assert main(["run", "--config", str(path), "--print-config"]) == EXIT_USAGE


def _datagen_inputs(tmp_path):
    corpus = tmp_path / "en-de.tsv"
    corpus.write_text("".join(f"s{i} a b c d\tz{i} e f g h\n" for i in range(1, 13)), encoding="utf-8")
    fixture = tmp_path / "prefixes.jsonl"
    with open(fixture, "w", encoding="utf-8") as f:
        for i in range(1, 13):
            for cursor in range(1, 6):
                entry = {"id": f"en-de/{i}", "cursor": cursor,
                         "candidates": [{"tokens": [f"z{i}", f" p{cursor}"], "score": -1.0, "finished": True}]}
                f.write(json.dumps(entry) + "\n")
    return corpus, fixture


def test_datagen_is_seeded(tmp_path):
    corpus, fixture = _datagen_inputs(tmp_path)
    outputs = []
    for name in ("a.jsonl", "b.jsonl"):
        code = main(["datagen", "--corpus", f"en-de={corpus}", "--backend", f"script:{fixture}",
                     "--samples", "10", "--seed", "7", "--out", str(tmp_path / name), "--quiet"])
        assert code == EXIT_OK
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]

    records = [json.loads(line) for line in outputs[0].decode("utf-8").splitlines()]
    assert len(records) == 22
    assert sum(r["origin"] == "prefix" for r in records) == 10
    assert all(r["loss_on_prompt"] is False for r in records)
    assert {r["tgt_lang"] for r in records} == {"German"}


def test_datagen_needs_enough_sentences(tmp_path):
    corpus, fixture = _datagen_inputs(tmp_path)
    code = main(["datagen", "--corpus", f"en-de={corpus}", "--backend", f"script:{fixture}",
                 "--samples", "50", "--out", str(tmp_path / "sft.jsonl")])
    assert code == EXIT_USAGE
