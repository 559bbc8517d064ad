"""Beam-over-lengths prediction, the autoregressive baseline decoder and EM scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import torch
import torch.nn.functional as F

from .data import Corpus, Vocabulary, whitespace_tokenize
from .frames import (
    CANONICAL,
    Frame,
    FrameError,
    Utterance,
    exact_match,
    from_span_form,
    linearize,
    parse_frame,
    serialize_frame,
)
from .model import AutoregressiveParser, EncoderState, SpanPointerParser, TargetCodec, codec_for


class MaxStepsExceeded(RuntimeError):
    pass


@dataclass
class Candidate:
    tokens: list[str]
    frame: Optional[Frame]
    length: int
    length_logprob: float
    mean_token_logprob: float
    score: float

    @property
    def malformed(self) -> bool:
        return self.frame is None

    def canonical(self, u: Utterance) -> Optional[Frame]:
        if self.frame is None:
            return None
        return from_span_form(self.frame, u)


@dataclass
class Prediction:
    utterance: Utterance
    candidates: list[Candidate]
    chosen: int = 0

    @property
    def best(self) -> Candidate:
        return self.candidates[self.chosen]

    @property
    def frame(self) -> Optional[Frame]:
        return self.best.frame


def _build_candidate(tokens: list[str], form: str, u: Utterance, length: int,
                     length_lp: float, token_lps: Sequence[float]) -> Candidate:
    mean_lp = sum(token_lps) / len(token_lps) if len(token_lps) else 0.0
    try:
        frame = parse_frame(" ".join(tokens), u, form)
        # resolving to text must also succeed for the candidate to count
        from_span_form(frame, u)
        score = length_lp + mean_lp
    except FrameError:
        frame, score = None, -math.inf
    return Candidate(tokens, frame, length, length_lp, mean_lp, score)


def _select(cands: list[Candidate]) -> list[Candidate]:
    # ties (including all-malformed) fall back to the length module's ranking
    return sorted(cands, key=lambda c: (c.score, c.length_logprob), reverse=True)


def _source_batch(vocab: Vocabulary, utterances: Sequence[Utterance]):
    ids = [vocab.encode_source(u) for u in utterances]
    S = max(len(i) for i in ids)
    src = torch.zeros(len(ids), S, dtype=torch.long)
    for b, row in enumerate(ids):
        src[b, :len(row)] = torch.tensor(row)
    return src, src == 0


def _expand(state: EncoderState, k: int) -> EncoderState:
    return EncoderState(*(t.repeat_interleave(k, dim=0) for t in state))


@torch.no_grad()
def predict_batch(model: SpanPointerParser, vocab: Vocabulary, utterances: Sequence[Utterance],
                  k: int = 1, codec: Optional[TargetCodec] = None) -> list[Prediction]:
    """Decode the top-``k`` lengths of every utterance, one argmax parse per length."""
    if k < 1:
        raise ValueError("beam size k must be >= 1")
    if not utterances:
        return []
    codec = codec or codec_for(model, vocab)
    src, pad = _source_batch(vocab, utterances)
    state = model.encode(src, pad)
    len_logp = F.log_softmax(model.predict_length_logits(state), dim=-1)
    kk = min(k, len_logp.shape[-1])
    top_lp, top_idx = len_logp.topk(kk, dim=-1)
    lengths = (top_idx + 1).reshape(-1)
    logp = F.log_softmax(model.decode_logits(_expand(state, kk), lengths), dim=-1)
    tok_lp, tok_ids = logp.max(dim=-1)
    tok_lp, tok_ids = tok_lp.tolist(), tok_ids.tolist()
    out = []
    for b, u in enumerate(utterances):
        cands = []
        for j in range(kk):
            row = b * kk + j
            ell = int(lengths[row])
            tokens = codec.decode(tok_ids[row][:ell])
            cands.append(_build_candidate(tokens, codec.form, u, ell, float(top_lp[b, j]), tok_lp[row][:ell]))
        out.append(Prediction(u, _select(cands)))
    return out


def predict(model: SpanPointerParser, vocab: Vocabulary, u: Utterance, k: int = 1) -> Prediction:
    return predict_batch(model, vocab, [u], k)[0]


@torch.no_grad()
def ar_decode_baseline(model: AutoregressiveParser, vocab: Vocabulary, u: Utterance, beam: int = 1,
                       codec: Optional[TargetCodec] = None, max_steps: Optional[int] = None) -> Prediction:
    """Left-to-right beam search with an end-of-frame token.

    Hypotheses are ranked by summed token log-probability.  Search stops once
    the best finished hypothesis outscores every live one (scores only fall).
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    codec = codec or codec_for(model, vocab)
    cap = max_steps or 2 * model.cfg.max_len_classes
    src, pad = _source_batch(vocab, [u])
    state = model.encode(src, pad)
    alive: list[tuple[list[int], float, list[float]]] = [([], 0.0, [])]
    finished: list[tuple[list[int], float, list[float]]] = []
    for _ in range(cap):
        nb = len(alive)
        prev = torch.tensor([[model.bos_id] + ids for ids, _, _ in alive], dtype=torch.long)
        logits = model.decode_logits(_expand(state, nb), prev)[:, -1]
        logp = F.log_softmax(logits, dim=-1)
        scores = torch.tensor([s for _, s, _ in alive], dtype=logp.dtype)[:, None] + logp
        top_s, top_i = scores.reshape(-1).topk(min(beam, scores.numel()))
        V = logp.shape[-1]
        nxt = []
        for s, flat in zip(top_s.tolist(), top_i.tolist()):
            b, tok = divmod(flat, V)
            ids, _, lps = alive[b]
            step_lp = float(logp[b, tok])
            if tok == codec.eos_id:
                finished.append((ids, s, lps))
            else:
                nxt.append((ids + [tok], s, lps + [step_lp]))
        alive = nxt[:beam]
        finished.sort(key=lambda h: h[1], reverse=True)
        if not alive or (finished and finished[0][1] >= alive[0][1]) or len(finished) >= beam:
            break
    if not finished:
        raise MaxStepsExceeded(f"no hypothesis ended within {cap} steps")
    cands = []
    for ids, s, lps in finished[:beam]:
        c = _build_candidate(codec.decode(ids), codec.form, u, len(ids), 0.0, lps)
        if c.frame is not None:
            c.score = s
        cands.append(c)
    cands.sort(key=lambda c: c.score, reverse=True)
    return Prediction(u, cands)


def parse_utterance(model, vocab: Vocabulary, text: str, k: int = 1) -> Prediction:
    """End-to-end: tokenize raw text and decode with either regime."""
    u = whitespace_tokenize(text)
    if isinstance(model, AutoregressiveParser):
        return ar_decode_baseline(model, vocab, u, k)
    return predict(model, vocab, u, k)


# -- evaluation ------------------------------------------------------------------------


@dataclass
class EvalResult:
    em: float
    length_accuracy: float
    malformed_rate: float
    n: int
    predictions: list[Prediction] = field(default_factory=list, repr=False)


def _gold_length(ex, form: str) -> int:
    from .frames import to_form

    return len(linearize(to_form(ex.gold, ex.utterance, form)))


def _failed_prediction(u: Utterance) -> Prediction:
    return Prediction(u, [Candidate([], None, 0, 0.0, 0.0, -math.inf)])


def predict_many(model, vocab: Vocabulary, utterances: Sequence[Utterance], k: int = 1,
                 batch_size: int = 64, codec: Optional[TargetCodec] = None) -> list[Prediction]:
    """Predictions for many utterances with either regime, in input order.

    NAR utterances are decoded ``batch_size`` at a time; AR decodes one at a
    time and a search that never emits the end token yields a malformed prediction.
    """
    codec = codec or codec_for(model, vocab)
    was_training = model.training
    model.eval()
    preds: list[Prediction] = []
    try:
        if isinstance(model, AutoregressiveParser):
            for u in utterances:
                try:
                    preds.append(ar_decode_baseline(model, vocab, u, k, codec))
                except MaxStepsExceeded:
                    preds.append(_failed_prediction(u))
        else:
            for start in range(0, len(utterances), batch_size):
                preds.extend(predict_batch(model, vocab, utterances[start:start + batch_size], k, codec))
    finally:
        model.train(was_training)
    return preds


def evaluate(model, vocab: Vocabulary, corpus: Corpus, k: int = 1, batch_size: int = 64) -> EvalResult:
    """EM (percent), top-1 length accuracy (percent) and malformed-candidate rate."""
    examples = list(corpus)
    if not examples:
        return EvalResult(0.0, 0.0, 0.0, 0)
    codec = codec_for(model, vocab)
    preds = predict_many(model, vocab, [ex.utterance for ex in examples], k, batch_size, codec)
    hits = length_hits = malformed = n_cands = 0
    for ex, pred in zip(examples, preds):
        if pred.frame is not None and exact_match(pred.frame, ex.gold, ex.utterance):
            hits += 1
        top_length = max(pred.candidates, key=lambda c: c.length_logprob).length
        if top_length == _gold_length(ex, codec.form):
            length_hits += 1
        malformed += sum(c.malformed for c in pred.candidates)
        n_cands += len(pred.candidates)
    n = len(examples)
    return EvalResult(100.0 * hits / n, 100.0 * length_hits / n, malformed / max(n_cands, 1), n, preds)


# -- prediction records ------------------------------------------------------------------


def prediction_record(ex_id: str, pred: Prediction) -> dict:
    u = pred.utterance
    best = pred.best
    canon = best.canonical(u)
    return {
        "id": ex_id,
        "utterance": u.text,
        "frame": serialize_frame(canon) if canon is not None else None,
        "span_frame": serialize_frame(best.frame) if best.frame is not None else None,
        "score": best.score if math.isfinite(best.score) else None,
        "candidates": [
            {
                "tokens": " ".join(c.tokens),
                "length": c.length,
                "length_logprob": c.length_logprob,
                "mean_token_logprob": c.mean_token_logprob,
                "score": c.score if math.isfinite(c.score) else None,
                "malformed": c.malformed,
            }
            for c in pred.candidates
        ],
    }


def write_predictions(path, ids: Sequence[str], preds: Sequence[Prediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, p in zip(ids, preds):
            fh.write(json.dumps(prediction_record(ex_id, p)) + "\n")


def read_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def score_records(records: Iterable[dict], gold: Corpus) -> float:
    """Offline EM (percent) of prediction records against a gold corpus.

    Gold examples without a record, or whose record has no parsable frame,
    count as misses.
    """
    by_id = {r["id"]: r for r in records}
    if not len(gold):
        return 0.0
    hits = 0
    for ex in gold:
        rec = by_id.get(ex.id)
        if rec is None or rec.get("frame") is None:
            continue
        try:
            pred = parse_frame(rec["frame"], ex.utterance, CANONICAL)
        except FrameError:
            continue
        hits += exact_match(pred, ex.gold, ex.utterance)
    return 100.0 * hits / len(gold)
