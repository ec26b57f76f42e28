"""Setup and connectivity helper scripts"""

import asyncio
import json
from itertools import chain, repeat

from backend import BYTE_LEVEL, TOKEN_ENV, URL_ENV
from check_backend import check
from init_backend import init_backend


def _answers(monkeypatch, *values):
    replies = chain(values, repeat(""))
    monkeypatch.setattr("builtins.input", lambda prompt="": next(replies))


def test_init_writes_env_and_gitignore(tmp_path, monkeypatch, capsys):
    _answers(monkeypatch, "http://localhost:8000", "secret")
    init_backend(tmp_path)
    env = (tmp_path / ".env").read_text()
    assert f"{URL_ENV}=http://localhost:8000" in env
    assert f"{TOKEN_ENV}=secret" in env
    assert ".env" in (tmp_path / ".gitignore").read_text().splitlines()

    out = capsys.readouterr().out
    assert f"Saved {URL_ENV} and {TOKEN_ENV} to .env" in out
    assert "check_backend.py --beam 5 --joining byte-level" in out
    assert "simulmt.py run --corpus data.tsv --preset low-latency" in out
    assert "simulmt.py sweep" in out


def test_init_without_a_token(tmp_path, monkeypatch, capsys):
    _answers(monkeypatch, "https://mt.example.org", "")
    init_backend(tmp_path)
    assert TOKEN_ENV not in (tmp_path / ".env").read_text()
    assert f"Saved {URL_ENV} to .env" in capsys.readouterr().out


def test_init_keeps_an_existing_env(tmp_path, monkeypatch):
    (tmp_path / ".env").write_text("KEEP=1\n")
    _answers(monkeypatch, "n")
    init_backend(tmp_path)
    assert (tmp_path / ".env").read_text() == "KEEP=1\n"


def test_check_against_a_fixture(tmp_path, capsys):
    fixture = tmp_path / "check.jsonl"
    fixture.write_text(json.dumps({"id": "check", "cursor": 4, "candidates": [
        {"tokens": ["vielen", " Dank"], "score": -0.2, "finished": True},
        {"tokens": ["danke"], "score": -0.9, "finished": True},
    ]}) + "\n", encoding="utf-8")

    code = asyncio.run(check(f"script:{fixture}", 2, BYTE_LEVEL, "thank you very much"))
    out = capsys.readouterr().out
    assert code == 0
    assert "Candidates: 2 of 2 requested" in out
    assert "'vielen Dank'" in out


def test_check_reports_a_miss(toy_script_path, capsys):
    code = asyncio.run(check(f"script:{toy_script_path}", 5, BYTE_LEVEL, "hello"))
    assert code == 1
    assert "Connection Failed" in capsys.readouterr().out


def test_check_rejects_an_unknown_descriptor(capsys):
    assert asyncio.run(check("ftp://nowhere", 5, BYTE_LEVEL, "hello")) == 1
    assert "Configuration Error" in capsys.readouterr().out
