"""Objective, R3F regularization, optimization loop and gradient checking."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

from .data import Corpus, Example, Vocabulary
from .frames import linearize
from .model import (
    AutoregressiveParser,
    LengthOutOfRange,
    SpanPointerParser,
    TargetCodec,
    codec_for,
)

log = logging.getLogger(__name__)


class TargetOutOfVocab(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class DivergedLoss(NonFiniteLoss):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.001
    lambda3: float = 0.01
    beta1: float = 0.0
    beta2: float = 0.0
    sigma: float = 1e-5
    r3f_enabled: bool = False
    smoothing: str = "confidence"
    lr: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 10
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    threads: int = 1
    eval_every: int = 1
    eval_beam: int = 1
    target_em: Optional[float] = None
    grad_clip: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "beta1", "beta2", "sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.smoothing not in ("confidence", "uniform"):
            raise ConfigError(f"unknown smoothing {self.smoothing!r}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1, max_epochs >= 0")

    @classmethod
    def from_mapping(cls, kv: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        args = {}
        for key, val in kv.items():
            if key not in types:
                raise ConfigError(f"unknown training key {key!r}")
            t = str(types[key])
            if val is None or (isinstance(val, str) and val.lower() == "none"):
                args[key] = None
            elif "bool" in t:
                args[key] = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes", "on")
            elif "int" in t:
                args[key] = int(val)
            elif "float" in t:
                args[key] = float(val)
            else:
                args[key] = str(val)
        return cls(**args)


@dataclass
class LossComponents:
    label: torch.Tensor
    length: torch.Tensor
    r3f_length: torch.Tensor
    r3f_label: torch.Tensor
    label_nll: float = 0.0
    label_ls: float = 0.0
    length_nll: float = 0.0
    length_ls: float = 0.0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    label_nll: float
    label_ls: float
    length_nll: float
    length_ls: float
    r3f_length: float
    r3f_label: float
    lr: float
    train_em: Optional[float] = None
    dev_em: Optional[float] = None
    dev_length_acc: Optional[float] = None
    wall_time: float = 0.0


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.epochs)

    def summary(self) -> dict:
        last = self.final
        evals = [r for r in self.epochs if r.dev_em is not None]
        best = max(evals, key=lambda r: r.dev_em) if evals else None
        return {
            "epochs": len(self.epochs),
            "wall_time": self.wall_time,
            "final_loss": last.loss if last else None,
            "final_dev_em": last.dev_em if last else None,
            "best_dev_em": best.dev_em if best else None,
            "best_epoch": best.epoch if best else None,
        }


# -- loss terms ---------------------------------------------------------------------


def neg_entropy(logp: torch.Tensor) -> torch.Tensor:
    """``-H(p)`` along the last axis; the confidence penalty."""
    return (logp.exp() * logp).sum(-1)


def _smoothing_term(logp: torch.Tensor, kind: str, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    if kind == "confidence":
        return neg_entropy(logp)
    # cross-entropy against the uniform distribution over the valid classes
    if valid is None:
        return -logp.mean(-1)
    v = valid.to(logp.dtype)
    return -(logp * v).sum(-1) / v.sum(-1)


def label_loss(logits: torch.Tensor, targets: torch.Tensor, beta2: float,
               mask: Optional[torch.Tensor] = None, smoothing: str = "confidence",
               parts: Optional[dict] = None) -> torch.Tensor:
    """Mean token NLL plus ``beta2`` times the smoothing term.

    ``logits`` is ``(..., T, V)``, ``targets`` ``(..., T)``; ``mask`` marks the
    real (non-padding) target positions.
    """
    V = logits.shape[-1]
    targets = torch.as_tensor(targets, device=logits.device)
    if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= V):
        raise TargetOutOfVocab(f"target ids must lie in [0, {V}), got range "
                               f"[{int(targets.min())}, {int(targets.max())}]")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    ls = _smoothing_term(logp, smoothing, logits > 0.5 * -1e9)
    if mask is None:
        nll_m, ls_m = nll.mean(), ls.mean()
    else:
        w = mask.to(logits.dtype)
        n = w.sum().clamp(min=1.0)
        nll_m, ls_m = (nll * w).sum() / n, (ls * w).sum() / n
    if parts is not None:
        parts["nll"], parts["ls"] = float(nll_m.detach()), float(ls_m.detach())
    return nll_m + beta2 * ls_m


def length_loss(length_logits: torch.Tensor, ell_star, beta1: float,
                smoothing: str = "confidence", parts: Optional[dict] = None) -> torch.Tensor:
    """NLL of the gold length class (1-based ``ell_star``) plus ``beta1`` times smoothing."""
    L = length_logits.shape[-1]
    ell = torch.as_tensor(ell_star, device=length_logits.device)
    if ell.numel() and (int(ell.min()) < 1 or int(ell.max()) > L):
        raise LengthOutOfRange(f"gold lengths must lie in 1..{L}")
    logp = F.log_softmax(length_logits, dim=-1)
    nll = -logp.gather(-1, (ell - 1).reshape(*logp.shape[:-1], 1)).squeeze(-1)
    ls = _smoothing_term(logp, smoothing)
    if parts is not None:
        parts["nll"], parts["ls"] = float(nll.detach().mean()), float(ls.detach().mean())
    return nll.mean() + beta1 * ls.mean()


def symmetric_kl(logp: torch.Tensor, logq: torch.Tensor) -> torch.Tensor:
    """``KL(p||q) + KL(q||p)`` along the last axis."""
    return ((logp.exp() - logq.exp()) * (logp - logq)).sum(-1)


def total_loss(c: LossComponents, cfg: TrainConfig) -> torch.Tensor:
    """``L_label + lambda1 L_length [+ lambda2 L_r3f_length + lambda3 L_r3f_label]``."""
    terms = [c.label, c.length]
    if cfg.r3f_enabled:
        terms += [c.r3f_length, c.r3f_label]
    for t in terms:
        if not torch.isfinite(torch.as_tensor(t)).all():
            raise NonFiniteLoss(f"non-finite loss component {t}")
    # summed in float64 so the total is the weighted sum of the displayed components
    f64 = [torch.as_tensor(t).double() for t in terms]
    loss = f64[0] + cfg.lambda1 * f64[1]
    if cfg.r3f_enabled:
        loss = loss + cfg.lambda2 * f64[2] + cfg.lambda3 * f64[3]
    return loss


# -- batching --------------------------------------------------------------------------


@dataclass
class Batch:
    src: torch.Tensor  # (B, S) source ids, 0 = PAD
    src_pad: torch.Tensor  # (B, S)
    tgt: torch.Tensor  # (B, T) output ids, 0 at padding
    tgt_mask: torch.Tensor  # (B, T) True at real positions
    lengths: torch.Tensor  # (B,) gold target lengths

    def __len__(self):
        return self.src.shape[0]


def encode_example(ex: Example, vocab: Vocabulary, codec: TargetCodec,
                   append_eos: bool = False) -> tuple[list[int], list[int]]:
    ids = codec.encode(linearize(ex.in_form(codec.form).gold))
    if append_eos:
        ids.append(codec.eos_id)
    return vocab.encode_source(ex.utterance), ids


def collate(pairs: Sequence[tuple[list[int], list[int]]]) -> Batch:
    B = len(pairs)
    S = max(len(s) for s, _ in pairs)
    T = max(len(t) for _, t in pairs)
    src = torch.zeros(B, S, dtype=torch.long)
    tgt = torch.zeros(B, T, dtype=torch.long)
    for b, (s, t) in enumerate(pairs):
        src[b, :len(s)] = torch.tensor(s)
        tgt[b, :len(t)] = torch.tensor(t)
    lengths = torch.tensor([len(t) for _, t in pairs])
    tgt_mask = torch.arange(T)[None, :] < lengths[:, None]
    return Batch(src, src == 0, tgt, tgt_mask, lengths)


def make_batch(examples: Sequence[Example], vocab: Vocabulary, codec: TargetCodec,
               append_eos: bool = False) -> Batch:
    return collate([encode_example(ex, vocab, codec, append_eos) for ex in examples])


def sample_noise(model, batch: Batch, sigma: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    shape = (*batch.src.shape, model.cfg.d_model)
    dtype = next(model.parameters()).dtype
    z = torch.rand(shape, generator=generator, dtype=dtype)
    return (2 * z - 1) * sigma


def compute_components(model: SpanPointerParser, batch: Batch, cfg: TrainConfig,
                       noise: Optional[torch.Tensor] = None) -> LossComponents:
    """Every term of the non-autoregressive objective for one batch.

    The clean and noised passes share dropout masks: the noised pass replays the
    RNG state of the clean one, so ``sigma = 0`` gives exactly zero R3F terms.
    """
    rng_state = torch.get_rng_state()
    state = model.encode(batch.src, batch.src_pad)
    len_logits = model.predict_length_logits(state)
    logits = model.decode_logits(state, batch.lengths)
    lab_parts: dict = {}
    len_parts: dict = {}
    lab = label_loss(logits, batch.tgt, cfg.beta2, batch.tgt_mask, cfg.smoothing, lab_parts)
    ln = length_loss(len_logits, batch.lengths, cfg.beta1, cfg.smoothing, len_parts)
    zero = logits.new_zeros(())
    r3f_len, r3f_lab = zero, zero
    if cfg.r3f_enabled:
        if noise is None:
            raise ValueError("R3F needs a noise tensor")
        after = torch.get_rng_state()
        torch.set_rng_state(rng_state)
        try:
            noisy = model.encode(batch.src, batch.src_pad, noise)
            n_len_logits = model.predict_length_logits(noisy)
            n_logits = model.decode_logits(noisy, batch.lengths)
        finally:
            torch.set_rng_state(after)
        r3f_len, r3f_lab = r3f_from_logits(len_logits, n_len_logits, logits, n_logits, batch.tgt_mask)
    return LossComponents(lab, ln, r3f_len, r3f_lab, lab_parts["nll"], lab_parts["ls"],
                          len_parts["nll"], len_parts["ls"])


def r3f_from_logits(len_clean, len_noisy, lab_clean, lab_noisy, tgt_mask):
    r3f_len = symmetric_kl(F.log_softmax(len_clean, -1), F.log_softmax(len_noisy, -1)).mean()
    kl = symmetric_kl(F.log_softmax(lab_clean, -1), F.log_softmax(lab_noisy, -1))
    w = tgt_mask.to(kl.dtype)
    r3f_lab = (kl * w).sum() / w.sum().clamp(min=1.0)
    return r3f_len, r3f_lab


def r3f_terms(model: SpanPointerParser, batch: Batch, sigma: float,
              generator: Optional[torch.Generator] = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Symmetric KL between clean and embedding-noised length / label distributions."""
    cfg = TrainConfig(sigma=sigma, r3f_enabled=True)
    noise = sample_noise(model, batch, sigma, generator)
    c = compute_components(model, batch, cfg, noise)
    return c.r3f_length, c.r3f_label


def ar_loss(model: AutoregressiveParser, batch: Batch, cfg: TrainConfig) -> torch.Tensor:
    """Teacher-forced token NLL for the causal baseline (targets end with EOS)."""
    state = model.encode(batch.src, batch.src_pad)
    bos = torch.full((len(batch), 1), model.bos_id, dtype=torch.long)
    prev = torch.cat([bos, batch.tgt[:, :-1]], dim=1)
    logits = model.decode_logits(state, prev, ~batch.tgt_mask)
    return label_loss(logits, batch.tgt, cfg.beta2, batch.tgt_mask, cfg.smoothing)


# -- training loop ---------------------------------------------------------------------


def train(model, vocab: Vocabulary, corpus: Corpus, cfg: TrainConfig,
          dev: Optional[Corpus] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainReport:
    """Adam + reduce-on-plateau (keyed to dev EM) over shuffled mini-batches.

    Works for both :class:`SpanPointerParser` and :class:`AutoregressiveParser`;
    the latter ignores the length and R3F terms.  Parameters are updated in place.
    """
    from .inference import evaluate  # inference imports training-free helpers only

    if not len(corpus):
        raise ConfigError("training corpus is empty")
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    shuffle_rng = random.Random(cfg.seed)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 1)
    is_ar = isinstance(model, AutoregressiveParser)
    codec = codec_for(model, vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="max", factor=cfg.lr_factor, patience=cfg.lr_patience)
    report = TrainReport()
    order = list(range(len(corpus)))
    encoded = [encode_example(ex, vocab, codec, append_eos=is_ar) for ex in corpus]
    if not is_ar:
        longest = max(len(t) for _, t in encoded)
        if longest > model.cfg.max_len_classes:
            raise ConfigError(f"gold length {longest} exceeds max_len_classes={model.cfg.max_len_classes}")
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        shuffle_rng.shuffle(order)
        sums = dict(loss=0.0, label_nll=0.0, label_ls=0.0, length_nll=0.0, length_ls=0.0,
                    r3f_length=0.0, r3f_label=0.0)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = collate([encoded[i] for i in order[start:start + cfg.batch_size]])
            if is_ar:
                loss = ar_loss(model, batch, cfg)
                if not torch.isfinite(loss):
                    raise DivergedLoss(f"epoch {epoch}: loss became {float(loss)}")
                sums["label_nll"] += float(loss.detach())
            else:
                noise = sample_noise(model, batch, cfg.sigma, noise_gen) if cfg.r3f_enabled else None
                comps = compute_components(model, batch, cfg, noise)
                try:
                    loss = total_loss(comps, cfg)
                except NonFiniteLoss as err:
                    raise DivergedLoss(f"epoch {epoch}: {err}") from err
                sums["label_nll"] += comps.label_nll
                sums["label_ls"] += comps.label_ls
                sums["length_nll"] += comps.length_nll
                sums["length_ls"] += comps.length_ls
                sums["r3f_length"] += float(comps.r3f_length.detach())
                sums["r3f_label"] += float(comps.r3f_label.detach())
            sums["loss"] += float(loss.detach())
            n_batches += 1
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
        rec = EpochRecord(epoch=epoch, lr=optimizer.param_groups[0]["lr"],
                          **{k: v / max(n_batches, 1) for k, v in sums.items()})
        last = epoch == cfg.max_epochs
        if epoch % cfg.eval_every == 0 or last:
            model.eval()
            train_eval = evaluate(model, vocab, corpus, k=cfg.eval_beam)
            rec.train_em = train_eval.em
            watch = train_eval
            if dev is not None and len(dev):
                watch = evaluate(model, vocab, dev, k=cfg.eval_beam)
            rec.dev_em = watch.em
            rec.dev_length_acc = watch.length_accuracy
            scheduler.step(watch.em)
        rec.wall_time = time.perf_counter() - t0
        report.epochs.append(rec)
        log.info("epoch %d loss %.4f train_em %s dev_em %s", epoch, rec.loss, rec.train_em, rec.dev_em)
        if on_epoch is not None:
            on_epoch(rec)
        if cfg.target_em is not None and rec.dev_em is not None and rec.dev_em >= cfg.target_em:
            break
    model.eval()
    report.wall_time = time.perf_counter() - t0
    return report


# -- gradient check ----------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst_param: str
    grad_norm: float


def rel_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> torch.Tensor:
    return (analytic - numeric).abs() / torch.maximum(
        torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))


def grad_check(model: SpanPointerParser, batch: Batch, cfg: TrainConfig, epsilon: float = 1e-4,
               noise: Optional[torch.Tensor] = None, floor: float = 1e-6) -> GradCheckResult:
    """Compare autograd gradients of the full objective with central differences.

    Runs in float64 with dropout disabled; R3F noise (when enabled) is frozen so
    the objective is a deterministic function of the parameters.
    """
    model = model.double().eval()
    if cfg.r3f_enabled and noise is None:
        noise = sample_noise(model, batch, cfg.sigma, torch.Generator().manual_seed(cfg.seed + 1))
    if noise is not None:
        noise = noise.double()

    def objective() -> torch.Tensor:
        return total_loss(compute_components(model, batch, cfg, noise), cfg)

    model.zero_grad()
    objective().backward()
    worst, worst_name, n, sq = 0.0, "", 0, 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            sq += float((analytic ** 2).sum())
            flat = p.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + epsilon
                up = float(objective())
                flat[i] = orig - epsilon
                down = float(objective())
                flat[i] = orig
                numeric[i] = (up - down) / (2 * epsilon)
            err = float(rel_error(analytic.view(-1), numeric, floor).max()) if flat.numel() else 0.0
            n += flat.numel()
            if err > worst:
                worst, worst_name = err, name
    return GradCheckResult(worst, n, worst_name, math.sqrt(sq))


def tiny_gradcheck_setup(seed: int = 0, n_examples: int = 3, d_model: int = 8):
    """A small span-pointer model, its vocabulary and one batch, sized for finite differences."""
    from .data import SyntheticGrammarConfig, build_vocab, generate_synthetic
    from .model import build_model

    grammar = SyntheticGrammarConfig(num_intents=2, num_slots=2, max_depth=1, max_slots_per_intent=2,
                                     span_length_range=(1, 2), vocab_size=3, seed=seed)
    corpus = generate_synthetic(grammar, n_examples, "gradcheck")
    vocab = build_vocab(corpus)
    codec = TargetCodec(vocab, "span")
    longest = max(len(linearize(ex.in_form("span").gold)) for ex in corpus)
    model = build_model(vocab, "nar", max_len_classes=longest, d_model=d_model, n_heads=2,
                        n_enc_layers=1, n_dec_layers=1, d_ff=2 * d_model, dropout=0.0, seed=seed)
    return model, vocab, make_batch(list(corpus), vocab, codec)
