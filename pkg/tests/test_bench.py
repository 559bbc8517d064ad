import json

import pytest

from spanptr.bench import BenchReport, bench_latency, bench_memory, measure_latencies, run_benchmarks
from spanptr.data import Corpus, SyntheticGrammarConfig, build_vocab, generate_synthetic, max_target_length
from spanptr.model import build_model
from spanptr.plotting import plot_bench, plot_length_histograms, plot_training_curves
from spanptr.training import TrainConfig, train


@pytest.fixture(scope="module")
def setup():
    corpus = generate_synthetic(SyntheticGrammarConfig(seed=0, vocab_size=20), 12)
    vocab = build_vocab(corpus)
    L = max_target_length(corpus, "span")
    nar = build_model(vocab, "nar", max_len_classes=L + 2, d_model=16, n_heads=2, d_ff=32).eval()
    ar = build_model(vocab, "ar", max_len_classes=L + 2, d_model=16, n_heads=2, d_ff=32).eval()
    return corpus, vocab, nar, ar


def test_latency_row(setup):
    corpus, vocab, nar, _ = setup
    row = bench_latency(nar, vocab, corpus, k=2, warmup=1)
    assert row.n == len(corpus) and row.regime == "nar" and row.form == "span"
    assert 0 < row.p50_ms <= row.p99_ms
    assert row.peak_alloc_bytes > 0


def test_empty_corpus_gives_no_row(setup):
    _, vocab, nar, _ = setup
    assert bench_latency(nar, vocab, Corpus([]), k=1) is None


def test_warmup_must_be_positive(setup):
    corpus, vocab, nar, _ = setup
    with pytest.raises(ValueError):
        measure_latencies(nar, vocab, corpus, 1, warmup=0)


def test_memory_monotone_in_k_and_width(setup):
    corpus, vocab, nar, _ = setup
    assert bench_memory(nar, vocab, corpus, 5) >= bench_memory(nar, vocab, corpus, 1)
    L = nar.cfg.max_len_classes
    wide = build_model(vocab, "nar", max_len_classes=L, d_model=32, n_heads=2, d_ff=32).eval()
    assert bench_memory(wide, vocab, corpus, 1) > bench_memory(nar, vocab, corpus, 1)


def test_memory_needs_corpus(setup):
    _, vocab, nar, _ = setup
    with pytest.raises(ValueError):
        bench_memory(nar, vocab, Corpus([]), 1)


def test_untrained_ar_counts_unfinished(setup):
    corpus, vocab, _, ar = setup
    small = Corpus(corpus.examples[:2])
    row = bench_latency(ar, vocab, small, k=1, warmup=1, memory=False)
    assert row.n == 2 and 0 <= row.n_unfinished <= 2 and row.peak_alloc_bytes is None


def test_report_formats(setup, tmp_path):
    corpus, vocab, nar, ar = setup
    small = Corpus(corpus.examples[:3])
    rep = run_benchmarks([(nar, vocab), (ar, vocab)], small, beams=(1, 2), warmup=1, regimes={"nar"})
    assert [(r.regime, r.k) for r in rep.rows] == [("nar", 1), ("nar", 2)]
    lines = rep.to_jsonl().splitlines()
    assert json.loads(lines[0])["threads"] == 1
    assert "p99 ms" in rep.table()
    assert plot_bench(rep, tmp_path).stat().st_size > 0


def test_plots(setup, tmp_path):
    corpus, vocab, nar, _ = setup
    assert plot_length_histograms(corpus, ["canonical", "span"], tmp_path).exists()
    rep = train(nar, vocab, corpus, TrainConfig(max_epochs=2, eval_every=1))
    assert plot_training_curves(rep, tmp_path).exists()
    nar.eval()


def test_empty_report_table():
    assert "regime" in BenchReport().table()
