"""CPU latency and peak-allocation benchmarks for the NAR and AR decoders."""

from __future__ import annotations

import contextlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from torch.profiler import ProfilerActivity, profile

from .data import Corpus, Vocabulary
from .inference import MaxStepsExceeded, parse_utterance
from .model import regime_of


@dataclass
class BenchRow:
    regime: str
    form: str
    k: int
    n: int
    p50_ms: float
    p99_ms: float
    peak_alloc_bytes: Optional[int]
    examples_per_sec: float
    n_unfinished: int = 0  # AR searches that hit the step cap (timed all the same)


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    threads: int = 1
    hardware: str = field(default_factory=lambda: f"{platform.machine()} {platform.processor() or platform.system()} ({os.cpu_count()} cpus)")

    def to_jsonl(self) -> str:
        env = {"threads": self.threads, "hardware": self.hardware}
        return "".join(json.dumps({**asdict(r), **env}) + "\n" for r in self.rows)

    def table(self) -> str:
        head = f"{'regime':<7}{'form':<10}{'k':>3}{'n':>6}{'p50 ms':>10}{'p99 ms':>10}{'peak KiB':>11}{'ex/s':>9}{'unfinished':>12}"
        lines = [f"# threads={self.threads} hardware={self.hardware}", head, "-" * len(head)]
        for r in self.rows:
            peak = f"{r.peak_alloc_bytes / 1024:.1f}" if r.peak_alloc_bytes is not None else "-"
            lines.append(f"{r.regime:<7}{r.form:<10}{r.k:>3}{r.n:>6}{r.p50_ms:>10.3f}{r.p99_ms:>10.3f}{peak:>11}{r.examples_per_sec:>9.1f}{r.n_unfinished:>12d}")
        return "\n".join(lines) + "\n"


@contextlib.contextmanager
def thread_cap(threads: int):
    before = torch.get_num_threads()
    torch.set_num_threads(threads)
    try:
        yield
    finally:
        torch.set_num_threads(before)


def _parse_counting(model, vocab: Vocabulary, text: str, k: int) -> bool:
    """Parse once; False when an AR search ran out of steps."""
    try:
        parse_utterance(model, vocab, text, k)
    except MaxStepsExceeded:
        return False
    return True


def measure_latencies(model, vocab: Vocabulary, corpus: Corpus, k: int, warmup: int = 5,
                      threads: int = 1) -> tuple[list[float], int]:
    """Per-example end-to-end parse times in ms (tokenize, decode, rebuild frame).

    Also returns how many AR searches stopped at the step cap.
    """
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    texts = [ex.utterance.text for ex in corpus]
    if not texts:
        return [], 0
    model.eval()
    out, unfinished = [], 0
    with thread_cap(threads):
        for i in range(warmup):
            _parse_counting(model, vocab, texts[i % len(texts)], k)
        for text in texts:
            t0 = time.perf_counter()
            ok = _parse_counting(model, vocab, text, k)
            out.append((time.perf_counter() - t0) * 1e3)
            unfinished += not ok
    return out, unfinished


def bench_latency(model, vocab: Vocabulary, corpus: Corpus, k: int, warmup: int = 5,
                  threads: int = 1, memory: bool = True) -> Optional[BenchRow]:
    times, unfinished = measure_latencies(model, vocab, corpus, k, warmup, threads)
    if not times:
        return None
    arr = np.asarray(times)
    peak = bench_memory(model, vocab, corpus, k, threads) if memory else None
    return BenchRow(
        regime=regime_of(model),
        form=model.cfg.form,
        k=k,
        n=len(times),
        p50_ms=float(np.percentile(arr, 50)),
        p99_ms=float(np.percentile(arr, 99)),
        peak_alloc_bytes=peak,
        examples_per_sec=float(len(times) / (arr.sum() / 1e3)),
        n_unfinished=unfinished,
    )


def peak_live_bytes(prof) -> int:
    """Largest running total of CPU allocations minus frees in a profile."""
    events = [e for e in prof.profiler.kineto_results.events() if e.name() == "[memory]"]
    deltas = sorted((e.start_ns(), e.nbytes()) for e in events)
    live = peak = 0
    for _, nbytes in deltas:
        live += nbytes
        peak = max(peak, live)
    return peak


def bench_memory(model, vocab: Vocabulary, corpus: Corpus, k: int, threads: int = 1) -> int:
    """Peak transient bytes allocated while parsing the longest utterance."""
    if not len(corpus):
        raise ValueError("memory benchmark needs a non-empty corpus")
    longest = max(corpus, key=lambda ex: len(ex.utterance)).utterance.text
    model.eval()
    with thread_cap(threads):
        _parse_counting(model, vocab, longest, k)
        with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
            _parse_counting(model, vocab, longest, k)
    return peak_live_bytes(prof)


def run_benchmarks(entries, corpus: Corpus, beams=(1, 5), warmup: int = 5, threads: int = 1,
                   memory: bool = True, regimes=None) -> BenchReport:
    """Benchmark every ``(model, vocab)`` pair at every beam size.

    ``regimes`` (e.g. ``{"nar"}``) restricts which models run; ``None`` runs all.
    """
    report = BenchReport(threads=threads)
    for model, vocab in entries:
        if regimes is not None and regime_of(model) not in regimes:
            continue
        for k in beams:
            row = bench_latency(model, vocab, corpus, k, warmup, threads, memory)
            if row is not None:
                report.rows.append(row)
    return report
