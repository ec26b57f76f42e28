"""Smoke test against a real generation server; set SIMULMT_LIVE_URL to enable"""

import asyncio
import math
import os

import pytest

from backend import make_backend
from metrics import report
from policy_engine import PolicyConfig, run_corpus
from prompting import PromptTemplate


LIVE_URL = os.getenv("SIMULMT_LIVE_URL")

pytestmark = [
    pytest.mark.live,
    pytest.mark.skipif(not LIVE_URL, reason="SIMULMT_LIVE_URL is not set"),
]


def test_live_session_on_the_toy_corpus(toy_pairs):
    config = PolicyConfig()

    async def stream():
        backend = make_backend(LIVE_URL, timeout=120.0)
        try:
            return await run_corpus(toy_pairs, config, backend, PromptTemplate())
        finally:
            await backend.aclose()

    corpus_run = asyncio.run(stream())
    assert len(corpus_run.traces) == len(toy_pairs)
    for trace in corpus_run.traces:
        assert trace.hypothesis.strip()
        assert trace.invocations <= math.ceil(trace.src_len / config.n) + 1

    result = report(corpus_run.traces, {p.id: p.target for p in toy_pairs})
    assert math.isfinite(result.mean_laal)
    assert 0.0 <= result.corpus_bleu.score <= 100.0
