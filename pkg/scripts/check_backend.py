#!/usr/bin/env python3
"""
Test the generation backend
Sends one short prompt and prints model id, candidate count and latency
"""

import argparse
import asyncio
import sys

from backend import JOINING_STYLES, GenerationRequest, JoiningConvention, make_backend
from errors import BackendError, SimulMTError
from prompting import IncrementalState, build_prompt, load_template
from text_stream import SourceStream, detokenize


async def check(descriptor, beam: int, joining: JoiningConvention, sentence: str) -> int:
    print("🔍 Testing generation backend...\n")

    try:
        backend = make_backend(descriptor, joining)
    except (ValueError, SimulMTError) as e:
        print(f"❌ Configuration Error: {e}")
        print("\n💡 Run 'python scripts/init_backend.py' to set up your backend")
        return 1

    state = IncrementalState(source=SourceStream.from_sentence(sentence).reveal(len(sentence.split())))
    template = load_template()
    request = GenerationRequest(
        prompt=build_prompt(template, state),
        num_candidates=beam,
        session_id="check",
        cursor=state.t,
    )

    try:
        response = await backend.generate(request)
    except BackendError as e:
        print(f"❌ Connection Failed: {e}")
        print("\n💡 Check the backend URL, the API token and that the server is running")
        return 1
    finally:
        aclose = getattr(backend, "aclose", None)
        if aclose is not None:
            await aclose()

    print("✅ Backend responded!\n")
    print("📋 Response:")
    print(f"   Model: {response.model_id}")
    print(f"   Candidates: {len(response.candidates)} of {beam} requested")
    print(f"   Latency: {response.latency_ms:.0f} ms")
    for i, cand in enumerate(response.candidates):
        print(f"   [{i}] {cand.score:.3f}  {detokenize(cand.tokens, backend.joining)!r}")

    if len(response.candidates) < beam:
        print("\n💡 Fewer candidates than requested: agreement votes stay normalized by the beam size")
    else:
        print("\n✅ Your backend is ready to use!")
    return 0


def main():
    parser = argparse.ArgumentParser(description='Send one test generation to the backend')
    parser.add_argument('--backend', default=None, help='Descriptor (default: SIMULMT_BACKEND_URL from .env)')
    parser.add_argument('--beam', type=int, default=5, help='Candidates to request')
    parser.add_argument('--joining', choices=JOINING_STYLES, default='byte-level', help='How target pieces join')
    parser.add_argument('--sentence', default='thank you very much', help='Source sentence to translate')
    args = parser.parse_args()

    sys.exit(asyncio.run(check(args.backend, args.beam, JoiningConvention.named(args.joining), args.sentence)))


if __name__ == '__main__':
    main()
