"""Acceptance suite: one test per acceptance criterion.

Every test prints a ``[ACCEPT C<n>] PASS|FAIL ...`` line with the measured
numbers (visible with ``pytest -s`` and in failure reports). Training-heavy
criteria carry the ``slow`` marker; deselect them with ``-m "not slow"``.

The dataset-statistics criterion needs a TOPv2-format TSV: point
``SPANPTR_TOPV2_TSV`` at it (it is skipped with a message otherwise).
"""

import json
import os
import random
import time

import pytest
import torch

from spanptr.bench import bench_latency
from spanptr.cli import run
from spanptr.data import (
    Corpus,
    SyntheticGrammarConfig,
    build_vocab,
    compute_length_stats,
    generate_synthetic,
    label_counts,
    max_target_length,
    spis_sample,
    write_tsv,
)
from spanptr.frames import (
    INDEX,
    SPAN,
    LeafArg,
    Utterance,
    Frame,
    from_span_form,
    intent,
    linearize,
    parse_frame,
    serialize_frame,
    slot,
    to_index_form,
    to_span_form,
)
from spanptr.inference import evaluate, predict_many, write_predictions
from spanptr.model import build_model, codec_for, count_params
from spanptr.training import (
    LossComponents,
    TrainConfig,
    compute_components,
    grad_check,
    make_batch,
    r3f_terms,
    sample_noise,
    tiny_gradcheck_setup,
    total_loss,
    train,
)


def report(n, ok, detail):
    print(f"\n[ACCEPT C{n}] {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def synthetic_10k():
    return generate_synthetic(SyntheticGrammarConfig(seed=0), 10_000, "c1")


def test_c01_round_trip_10k(synthetic_10k):
    t0 = time.perf_counter()
    failures = 0
    for ex in synthetic_10k:
        u, f = ex.utterance, ex.gold
        span = to_span_form(f, u)
        ok = from_span_form(span, u) == f
        ok &= parse_frame(serialize_frame(f), u) == f
        ok &= parse_frame(serialize_frame(span), u, SPAN) == span
        failures += not ok
    elapsed = time.perf_counter() - t0
    report(1, failures == 0 and elapsed < 10, f"{len(synthetic_10k) - failures}/{len(synthetic_10k)} in {elapsed:.2f}s")
    assert failures == 0
    assert elapsed < 10


def test_c02_span_length_determinism(synthetic_10k):
    span = compute_length_stats(synthetic_10k, "span")
    canon = compute_length_stats(synthetic_10k, "canonical")
    ok = span.mean_lengths_per_skeleton == 1.0 and canon.mean_lengths_per_skeleton > 1.0
    report(2, ok, f"span {span.mean_lengths_per_skeleton} canonical {canon.mean_lengths_per_skeleton:.3f}")
    assert span.mean_lengths_per_skeleton == 1.0
    assert canon.mean_lengths_per_skeleton > 1.0


def test_c03_worked_example():
    u = Utterance(tuple("message I'll be there at 6pm".split()))
    canon = parse_frame("[IN:SEND_MESSAGE [SL:CONTENT_EXACT I'll be there at 6pm ] ]", u)
    index = to_index_form(canon, u)
    span = to_span_form(canon, u)
    lengths = (len(linearize(canon)), len(linearize(index)), len(linearize(span)))
    expected = Frame(intent("SEND_MESSAGE", slot("CONTENT_EXACT", LeafArg(span=(1, 5)))), SPAN)
    ok = lengths == (9, 9, 6) and span == expected and index.form == INDEX
    report(3, ok, f"lengths canonical/index/span = {lengths}, span leaf {span.leaves()[0].leaf_arg.span}")
    assert lengths == (9, 9, 6)
    assert span == expected


def test_c04_gradient_check():
    t0 = time.perf_counter()
    model, _, batch = tiny_gradcheck_setup(seed=0)
    cfg = TrainConfig(beta1=0.1, beta2=0.1, r3f_enabled=True, sigma=0.01)
    res = grad_check(model, batch, cfg, epsilon=1e-4)
    elapsed = time.perf_counter() - t0
    n_params = count_params(model)
    ok = n_params <= 5000 and res.max_rel_error < 1e-3 and elapsed < 60
    report(4, ok, f"{n_params} params, max rel error {res.max_rel_error:.2e} ({res.worst_param}), {elapsed:.1f}s")
    assert n_params <= 5000 and res.n_checked == n_params
    assert res.max_rel_error < 1e-3
    assert elapsed < 60


@pytest.mark.slow
def test_c05_overfit_200():
    t0 = time.perf_counter()
    corpus = generate_synthetic(SyntheticGrammarConfig(seed=0), 200, "overfit")
    vocab = build_vocab(corpus)
    model = build_model(vocab, "nar", max_len_classes=max_target_length(corpus, "span"), dropout=0.1)
    rep = train(model, vocab, corpus, TrainConfig(max_epochs=300, eval_every=10, target_em=100.0))
    res = evaluate(model, vocab, corpus, k=1)
    elapsed = time.perf_counter() - t0
    epochs = len(rep.epochs)
    ok = res.em >= 95 and res.length_accuracy >= 95 and epochs <= 300 and elapsed < 600
    report(5, ok, f"EM {res.em:.1f} length acc {res.length_accuracy:.1f} after {epochs} epochs, {elapsed:.0f}s")
    assert res.em >= 95 and res.length_accuracy >= 95
    assert epochs <= 300 and elapsed < 600


def _max_span(ex):
    return max(len(leaf.leaf_arg.tokens()) for leaf in ex.gold.leaves())


@pytest.mark.slow
def test_c06_longer_test_spans():
    # Training spans are mostly short; the held-out set only has spans longer than
    # almost every training span (a 2% trickle of long spans keeps the target
    # lengths representable, see the decisions ledger).
    grammar = dict(num_intents=6, num_slots=8, vocab_size=40, max_depth=1, max_slots_per_intent=2,
                   span_length_range=(1, 6))
    pool = generate_synthetic(SyntheticGrammarConfig(seed=0, **grammar), 6000, "pool")
    rng = random.Random(0)
    tr = Corpus([e for e in pool if _max_span(e) <= 3 or rng.random() < 0.02][:1500], "train")
    held = generate_synthetic(SyntheticGrammarConfig(seed=9, **grammar), 1000, "test")
    te = Corpus([e for e in held if _max_span(e) > 3][:200], "test")
    assert len(te) == 200
    assert sum(_max_span(e) > 3 for e in tr) < 0.05 * len(tr)
    vocab = build_vocab(Corpus(list(tr) + list(te)))
    src_max = max(len(e.utterance) for e in list(tr) + list(te))
    em = {}
    for form in ("span", "canonical"):
        L = max(max_target_length(tr, form), max_target_length(te, form))
        model = build_model(vocab, "nar", max_len_classes=L, max_src_len=src_max, form=form)
        train(model, vocab, tr, TrainConfig(max_epochs=30, eval_every=30))
        em[form] = evaluate(model, vocab, te, k=5).em
    ok = em["span"] >= em["canonical"]
    report(6, ok, f"held-out EM span {em['span']:.1f} vs canonical text generation {em['canonical']:.1f}")
    assert em["span"] >= em["canonical"]


@pytest.fixture(scope="module")
def latency_models():
    cfg = SyntheticGrammarConfig(vocab_size=1000)
    corpus = generate_synthetic(cfg, 400, "train")
    dev = generate_synthetic(SyntheticGrammarConfig(seed=5, vocab_size=1000), 50, "dev")
    vocab = build_vocab(Corpus(list(corpus) + list(dev)))
    src_max = max(len(e.utterance) for e in list(corpus) + list(dev))

    def fit(regime, form):
        L = max(max_target_length(corpus, form), max_target_length(dev, form)) + 4
        model = build_model(vocab, regime, max_len_classes=L, max_src_len=src_max, form=form)
        train(model, vocab, corpus, TrainConfig(max_epochs=40, eval_every=40))
        return model.eval()

    return vocab, dev, {
        "nar": fit("nar", "span"),
        "ar_text": fit("ar", "canonical"),
        "ar_span": fit("ar", "span"),
    }


@pytest.mark.slow
def test_c07_latency_and_memory(latency_models):
    vocab, dev, models = latency_models
    nar = bench_latency(models["nar"], vocab, dev, k=5)
    ar = bench_latency(models["ar_text"], vocab, dev, k=5)
    ratio = ar.p99_ms / nar.p99_ms
    ok = nar.p99_ms <= ar.p99_ms / 3 and nar.peak_alloc_bytes < ar.peak_alloc_bytes
    report(7, ok, f"P99 NAR {nar.p99_ms:.2f} ms vs AR {ar.p99_ms:.2f} ms ({ratio:.1f}x); "
                  f"peak NAR {nar.peak_alloc_bytes / 1024:.0f} KiB vs AR {ar.peak_alloc_bytes / 1024:.0f} KiB; "
                  f"AR unfinished {ar.n_unfinished}/{ar.n}")
    assert count_params(models["nar"]) > 0 and models["nar"].cfg.d_model == models["ar_text"].cfg.d_model
    assert nar.p99_ms <= ar.p99_ms / 3
    assert nar.peak_alloc_bytes < ar.peak_alloc_bytes


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="parallel decoding of k padded lengths outweighs a span-pointer AR "
                                       "beam's working set at desk scale; see the decisions ledger")
def test_c07_memory_against_span_pointer_ar(latency_models):
    vocab, dev, models = latency_models
    nar = bench_latency(models["nar"], vocab, dev, k=5, warmup=1)
    ar = bench_latency(models["ar_span"], vocab, dev, k=5, warmup=1)
    print(f"\n[ACCEPT C7-span-AR] peak NAR {nar.peak_alloc_bytes / 1024:.0f} KiB vs span AR "
          f"{ar.peak_alloc_bytes / 1024:.0f} KiB; P99 {nar.p99_ms:.2f} vs {ar.p99_ms:.2f} ms")
    assert nar.peak_alloc_bytes < ar.peak_alloc_bytes


def test_c08_r3f_sanity():
    corpus = generate_synthetic(SyntheticGrammarConfig(seed=0, num_intents=3, num_slots=4, vocab_size=8), 12)
    vocab = build_vocab(corpus)
    model = build_model(vocab, max_len_classes=40, d_model=16, n_heads=2, d_ff=32).train()
    batch = make_batch(list(corpus), vocab, codec_for(model, vocab))
    with torch.no_grad():
        zero = r3f_terms(model, batch, 0.0, torch.Generator().manual_seed(0))
        pos = r3f_terms(model, batch, 0.01, torch.Generator().manual_seed(0))
        cfg = TrainConfig(r3f_enabled=True, sigma=0.01)
        noise = sample_noise(model, batch, cfg.sigma, torch.Generator().manual_seed(0))
        c = compute_components(model, batch, cfg, noise)
        got = float(total_loss(c, cfg))
    oracle = (float(c.label) + cfg.lambda1 * float(c.length) + cfg.lambda2 * float(c.r3f_length)
              + cfg.lambda3 * float(c.r3f_label))
    fixed = float(total_loss(LossComponents(*(torch.tensor(v, dtype=torch.float64) for v in (2.0, 1.0, 0.4, 0.2))),
                             TrainConfig(lambda1=0.5, lambda2=0.01, lambda3=0.001, r3f_enabled=True)))
    ok = (float(zero[0]) == 0.0 and float(zero[1]) == 0.0 and float(pos[0]) >= 0 and float(pos[1]) >= 0
          and abs(got - oracle) < 1e-12 and abs(fixed - 2.5042) < 1e-12)
    report(8, ok, f"sigma=0 terms {float(zero[0])}, {float(zero[1])}; sigma>0 terms {float(pos[0]):.3e}, "
                  f"{float(pos[1]):.3e}; |total - oracle| = {abs(got - oracle):.1e}")
    assert float(zero[0]) == 0.0 and float(zero[1]) == 0.0
    assert float(pos[0]) >= 0 and float(pos[1]) >= 0
    assert float(c.r3f_length) >= 0 and float(c.r3f_label) >= 0
    assert abs(got - oracle) < 1e-12
    assert abs(fixed - 2.5042) < 1e-12


def test_c09_spis_coverage():
    corpus = generate_synthetic(SyntheticGrammarConfig(seed=3), 2000, "spis")
    totals = label_counts(corpus)
    details = []
    for k in (1, 10, 25):
        sample = spis_sample(corpus, k, seed=11)
        counts = label_counts(sample)
        short = [lab for lab, n in totals.items() if counts[lab] < min(k, n)]
        again = spis_sample(corpus, k, seed=11)
        same = [e.id for e in again] == [e.id for e in sample]
        details.append(f"k={k}: {len(sample)} examples, {len(short)} short labels, reproducible={same}")
        assert not short, f"k={k}: under-covered labels {short}"
        assert same
    report(9, True, "; ".join(details))


def _independent_em(pred_path, gold_path):
    """Exact string comparison of canonical frames, with no library code involved."""
    gold = {}
    with open(gold_path, encoding="utf-8") as fh:
        for line in fh:
            utterance, frame, ex_id = line.rstrip("\n").split("\t")
            gold[ex_id] = " ".join(frame.split())
    hits = 0
    with open(pred_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["frame"] is not None and " ".join(rec["frame"].split()) == gold.get(rec["id"]):
                hits += 1
    return 100.0 * hits / len(gold)


def test_c10_em_oracle(tmp_path, capsys):
    grammar = SyntheticGrammarConfig(seed=2, num_intents=4, num_slots=6, vocab_size=20, max_depth=1)
    corpus = generate_synthetic(grammar, 1000, "em")
    vocab = build_vocab(corpus)
    model = build_model(vocab, "nar", max_len_classes=max_target_length(corpus, "span"), d_model=32, n_heads=2,
                        d_ff=64)
    train(model, vocab, Corpus(corpus.examples[:300]), TrainConfig(max_epochs=20, eval_every=20))
    preds = predict_many(model, vocab, [ex.utterance for ex in corpus], k=2)
    gold_path, pred_path = tmp_path / "gold.tsv", tmp_path / "pred.jsonl"
    write_tsv(corpus, gold_path)
    write_predictions(pred_path, [ex.id for ex in corpus], preds)
    assert len(pred_path.read_text().splitlines()) == 1000
    module_em = evaluate(model, vocab, corpus, k=2).em
    capsys.readouterr()
    assert run(["eval", "--gold", str(gold_path), "--predictions", str(pred_path)]) == 0
    cli_em = json.loads(capsys.readouterr().out)["em"]
    oracle = _independent_em(pred_path, gold_path)
    ok = module_em == oracle == cli_em and 0 < oracle < 100
    with capsys.disabled():
        report(10, ok, f"module {module_em} / eval command {cli_em} / oracle {oracle} over 1000 predictions")
    assert 0 < oracle < 100, "a degenerate EM would make the comparison vacuous"
    assert module_em == oracle
    assert cli_em == oracle


def test_c11_topv2_statistics(capsys):
    path = os.environ.get("SPANPTR_TOPV2_TSV")
    if not path or not os.path.isfile(path):
        pytest.skip("TOPv2 dataset absent: set SPANPTR_TOPV2_TSV to a TOPv2-format TSV to run this check")
    assert run(["stats", "--in", path, "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    span, canon = stats["span"], stats["canonical"]
    got = (span["num_length_classes"], span["max_length"], canon["num_length_classes"], canon["max_length"])
    with capsys.disabled():
        report(11, got == (20, 58, 47, 62), f"span {got[0]}/{got[1]} vs canonical {got[2]}/{got[3]}")
    assert got == (20, 58, 47, 62)
