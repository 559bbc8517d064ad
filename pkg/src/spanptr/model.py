"""Non-autoregressive span pointer parser and its autoregressive twin.

Both models share a from-scratch transformer encoder and a pointer-generator
output head: per target position the logits are ``[generate | copy]`` where the
generate block scores ontology tokens and the copy block scores every source
position ``i`` as ``dec_t . W_cpy . h_i``.  One softmax over the concatenation
gives the token distribution.
"""

from __future__ import annotations

import math
import os
import zipfile
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .data import UNK, Vocabulary
from .frames import CANONICAL, FORMS, SPAN

NEG_INF = -1e9
EOS = "<eos>"
CHECKPOINT_VERSION = 1


class SourceTooLong(ValueError):
    pass


class LengthOutOfRange(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    src_vocab_size: int
    gen_vocab_size: int
    max_src_len: int
    max_len_classes: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 1
    d_ff: int = 128
    dropout: float = 0.1
    seed: int = 0
    form: str = SPAN

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.form not in FORMS:
            raise ValueError(f"unknown target form {self.form!r}")
        if self.max_len_classes < 1 or self.max_src_len < 1:
            raise ValueError("max_len_classes and max_src_len must be positive")

    @property
    def copy(self) -> bool:
        """Index/span targets point into the source; canonical targets are generated."""
        return self.form != CANONICAL

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class TargetCodec:
    """Maps linearized frame tokens to output ids and back.

    Ids ``0..n_gen-1`` are generated tokens; ``n_gen + i`` copies source index ``i``.
    """

    def __init__(self, vocab: Vocabulary, form: str = SPAN, eos: bool = False):
        self.form = form
        gen = list(vocab.ontology)
        if form == CANONICAL:
            gen += [UNK, *vocab.words]
        if eos:
            gen.append(EOS)
        self.gen_tokens: tuple[str, ...] = tuple(gen)
        self._gen_ids = {t: i for i, t in enumerate(self.gen_tokens)}
        self.eos_id = self._gen_ids.get(EOS)

    @property
    def n_gen(self) -> int:
        return len(self.gen_tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        ids = []
        for tok in tokens:
            if tok in self._gen_ids:
                ids.append(self._gen_ids[tok])
            elif self.form != CANONICAL and tok.isdigit():
                ids.append(self.n_gen + int(tok))
            elif self.form == CANONICAL:
                ids.append(self._gen_ids[UNK])
            else:
                raise KeyError(f"target token {tok!r} is not in the output vocabulary")
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.gen_tokens[i] if i < self.n_gen else str(i - self.n_gen) for i in ids]


class EncoderState(NamedTuple):
    hidden: torch.Tensor  # (B, S + 1, d); column n_b holds row b's END marker
    pooled: torch.Tensor  # (B, d)
    pad: torch.Tensor  # (B, S + 1) True at padding
    n_tokens: torch.Tensor  # (B,) utterance lengths, END excluded


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem, key_pad=None, causal=False):
        B, T, _ = x.shape
        S = mem.shape[1]
        q = self.q(x).view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k(mem).view(B, S, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v(mem).view(B, S, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], NEG_INF)
        if causal:
            future = torch.ones(T, S, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, NEG_INF)
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, T, -1)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, pad):
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h, key_pad=pad))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y, tgt_pad, mem, src_pad, causal=False):
        h = self.ln1(y)
        y = y + self.drop(self.self_attn(h, h, key_pad=tgt_pad, causal=causal))
        y = y + self.drop(self.cross_attn(self.ln2(y), mem, key_pad=src_pad))
        return y + self.drop(self.ff(self.ln3(y)))


class _Seq2Seq(nn.Module):
    causal = False

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.src_embed = nn.Embedding(cfg.src_vocab_size, d, padding_idx=0)
        self.src_pos = nn.Embedding(cfg.max_src_len + 1, d)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.gen_proj = nn.Linear(d, cfg.gen_vocab_size)
        self.copy_proj = nn.Linear(d, d, bias=False) if cfg.copy else None
        self.drop = nn.Dropout(cfg.dropout)

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor, noise: Optional[torch.Tensor] = None) -> EncoderState:
        """Bidirectional encoding of padded, END-terminated source ids ``(B, S + 1)``.

        ``noise`` (same shape as the token embeddings) perturbs the token
        embeddings before positions are added.
        """
        S = src.shape[1]
        if S - 1 > self.cfg.max_src_len:
            raise SourceTooLong(f"source length {S - 1} exceeds max_src_len={self.cfg.max_src_len}")
        emb = self.src_embed(src)
        if noise is not None:
            emb = emb + noise
        x = self.drop(emb + self.src_pos(torch.arange(S, device=src.device)))
        for layer in self.enc_layers:
            x = layer(x, src_pad)
        hidden = self.enc_norm(x)
        keep = (~src_pad).to(hidden.dtype).unsqueeze(-1)
        pooled = (hidden * keep).sum(1) / keep.sum(1).clamp(min=1.0)
        return EncoderState(hidden, pooled, src_pad, (~src_pad).sum(1) - 1)

    def output_logits(self, y: torch.Tensor, state: EncoderState) -> torch.Tensor:
        """``(B, T, n_gen [+ S])`` logits, ``S`` the longest utterance in the batch.

        Copy columns past a row's own length (its END marker and padding) get ``NEG_INF``.
        """
        gen = self.gen_proj(y)
        if self.copy_proj is None:
            return gen
        mem = state.hidden[:, :-1]
        copy = self.copy_proj(y) @ mem.transpose(1, 2)
        blocked = torch.arange(mem.shape[1], device=mem.device)[None, :] >= state.n_tokens[:, None]
        copy = copy.masked_fill(blocked[:, None, :], NEG_INF)
        return torch.cat([gen, copy], dim=-1)

    def run_decoder(self, y, tgt_pad, state: EncoderState) -> torch.Tensor:
        y = self.drop(y)
        for layer in self.dec_layers:
            y = layer(y, tgt_pad, state.hidden, state.pad, causal=self.causal)
        return self.output_logits(self.dec_norm(y), state)


class SpanPointerParser(_Seq2Seq):
    """Encoder, MLP length module and one-pass masked decoder."""

    def __init__(self, cfg: ModelConfig):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            super().__init__(cfg)
            self._build_nar(cfg)

    def _build_nar(self, cfg: ModelConfig):
        d = cfg.d_model
        self.length_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, cfg.max_len_classes))
        self.mask_embed = nn.Parameter(torch.randn(d) * 0.02)
        self.tgt_pos = nn.Embedding(cfg.max_len_classes, d)

    def predict_length_logits(self, state: EncoderState) -> torch.Tensor:
        """``(B, L_max)`` logits; column ``j`` scores target length ``j + 1``."""
        return self.length_head(state.pooled)

    def decode_logits(self, state: EncoderState, lengths: torch.Tensor) -> torch.Tensor:
        """Fill ``lengths[b]`` MASK slots per row in a single parallel pass.

        Returns ``(B, max(lengths), n_gen [+ S])``; rows shorter than the max
        are padded and their extra positions must be ignored.
        """
        lengths = torch.as_tensor(lengths, device=state.hidden.device).reshape(-1)
        if lengths.numel() and (int(lengths.min()) < 1 or int(lengths.max()) > self.cfg.max_len_classes):
            raise LengthOutOfRange(
                f"target lengths must lie in 1..{self.cfg.max_len_classes}, got {lengths.tolist()}"
            )
        T = int(lengths.max())
        pos = torch.arange(T, device=lengths.device)
        tgt_pad = pos[None, :] >= lengths[:, None]
        y = self.mask_embed + self.tgt_pos(pos)
        y = y.unsqueeze(0).expand(lengths.shape[0], T, -1)
        return self.run_decoder(y, tgt_pad, state)

    def forward(self, src, src_pad, lengths, noise=None):
        state = self.encode(src, src_pad, noise)
        return self.predict_length_logits(state), self.decode_logits(state, lengths)


class AutoregressiveParser(_Seq2Seq):
    """Causal-decoder baseline: same encoder, head and sizes, token-by-token decoding.

    Decoder inputs embed previously emitted output ids plus a BOS id; generation
    stops on the EOS token, which lives in the generate block.
    """

    causal = True

    def __init__(self, cfg: ModelConfig):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            super().__init__(cfg)
            self._build_ar(cfg)

    def _build_ar(self, cfg: ModelConfig):
        n_in = cfg.gen_vocab_size + (cfg.max_src_len if cfg.copy else 0) + 1
        self.bos_id = n_in - 1
        self.tgt_embed = nn.Embedding(n_in, cfg.d_model)
        self.tgt_pos = nn.Embedding(2 * cfg.max_len_classes + 1, cfg.d_model)

    def decode_logits(self, state: EncoderState, prev: torch.Tensor, tgt_pad: Optional[torch.Tensor] = None):
        """Teacher-forced logits for input ids ``prev`` (BOS-prefixed), ``(B, T, V)``."""
        T = prev.shape[1]
        y = self.tgt_embed(prev) + self.tgt_pos(torch.arange(T, device=prev.device))
        return self.run_decoder(y, tgt_pad, state)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def head_param_count(d_model: int, out_vocab: int, copy: bool) -> int:
    """Closed-form size of the output head: generation projection plus W_cpy."""
    return d_model * out_vocab + out_vocab + (d_model * d_model if copy else 0)


def build_model(vocab: Vocabulary, regime: str = "nar", max_len_classes: int = 64,
                max_src_len: Optional[int] = None, **kwargs) -> _Seq2Seq:
    form = kwargs.get("form", SPAN)
    codec = TargetCodec(vocab, form, eos=regime == "ar")
    cfg = ModelConfig(
        src_vocab_size=len(vocab.source_tokens),
        gen_vocab_size=codec.n_gen,
        max_src_len=max_src_len or vocab.max_index + 1,
        max_len_classes=max_len_classes,
        **kwargs,
    )
    return (AutoregressiveParser if regime == "ar" else SpanPointerParser)(cfg)


def regime_of(model: nn.Module) -> str:
    return "ar" if isinstance(model, AutoregressiveParser) else "nar"


def codec_for(model: _Seq2Seq, vocab: Vocabulary) -> TargetCodec:
    codec = TargetCodec(vocab, model.cfg.form, eos=regime_of(model) == "ar")
    if codec.n_gen != model.cfg.gen_vocab_size:
        raise CheckpointError(
            f"vocabulary yields {codec.n_gen} output tokens, model expects {model.cfg.gen_vocab_size}"
        )
    return codec


def save_checkpoint(path, model: _Seq2Seq, vocab: Vocabulary, extra: Optional[dict] = None) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "regime": regime_of(model),
            "config": model.cfg.to_dict(),
            "vocab": vocab.to_dict(),
            "state": {k: v.detach().cpu() for k, v in model.state_dict().items()},
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path) -> tuple[_Seq2Seq, Vocabulary]:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint {path} does not exist")
    if not zipfile.is_zipfile(path):
        raise CheckpointError(f"{path} is not a checkpoint file")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as err:  # torch raises a zoo of types for corrupt files
        first = str(err).strip().splitlines()[0] if str(err).strip() else type(err).__name__
        raise CheckpointError(f"cannot read checkpoint {path}: {first}") from err
    if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {blob.get('version') if isinstance(blob, dict) else None}")
    cfg = ModelConfig.from_dict(blob["config"])
    vocab = Vocabulary.from_dict(blob["vocab"])
    cls = AutoregressiveParser if blob["regime"] == "ar" else SpanPointerParser
    model = cls(cfg)
    own = model.state_dict()
    for name, tensor in blob["state"].items():
        if name in own and own[name].shape != tensor.shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(tensor.shape)}, expected {tuple(own[name].shape)}")
    try:
        model.load_state_dict(blob["state"], strict=True)
    except RuntimeError as err:
        raise CheckpointError(f"{path}: {err}") from err
    model.eval()
    return model, vocab
