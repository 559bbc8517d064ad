"""Corpora, vocabularies, SPIS subsampling and a synthetic frame grammar."""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .frames import (
    CANONICAL,
    CLOSE,
    INTENT,
    SLOT,
    Frame,
    FrameError,
    FrameNode,
    LeafArg,
    LengthStats,
    Utterance,
    align_frame,
    length_stats,
    parse_frame,
    serialize_frame,
    to_form,
)

log = logging.getLogger(__name__)

MASK = "<mask>"
PAD = "<pad>"
UNK = "<unk>"
END = "</s>"


class MalformedLine(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class InvalidK(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    utterance: Utterance
    gold: Frame
    id: str

    def in_form(self, form: str) -> "Example":
        return Example(self.utterance, to_form(self.gold, self.utterance, form), self.id)


@dataclass
class Corpus:
    examples: list[Example] = field(default_factory=list)
    split_name: str = ""
    skipped: int = 0

    def __post_init__(self):
        ids = [ex.id for ex in self.examples]
        if len(ids) != len(set(ids)):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate example id {dup!r} in corpus {self.split_name!r}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def in_form(self, form: str) -> "Corpus":
        return Corpus([ex.in_form(form) for ex in self.examples], self.split_name, self.skipped)


def whitespace_tokenize(text: str) -> Utterance:
    return Utterance(tuple(text.split()))


def align_leaf_spans(f: Frame, u: Utterance) -> Frame:
    """Map every canonical leaf to a contiguous token run (index form).

    Leaves are matched in frame order, each search starting after the previous
    leaf's match; when nothing matches there, the leftmost match anywhere wins.
    """
    return align_frame(f, u)


# -- TSV I/O ---------------------------------------------------------------------

TOPV2_HEADER = ("domain", "utterance", "semantic_parse")


def parse_tsv_lines(lines: Iterable[str], form: str = CANONICAL, split_name: str = "") -> Corpus:
    examples = []
    skipped = 0
    seen: set[str] = set()
    topv2 = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if not examples and not skipped and not topv2 and cols == list(TOPV2_HEADER):
            topv2 = True
            continue
        if topv2:
            if len(cols) < 3:
                raise MalformedLine(lineno, "expected domain, utterance and frame fields")
            cols = [cols[1], cols[2]]
        if len(cols) < 2:
            raise MalformedLine(lineno, "expected at least 2 tab-separated fields")
        ex_id = cols[2].strip() if len(cols) > 2 and cols[2].strip() else f"{split_name or 'ex'}-{lineno}"
        try:
            u = whitespace_tokenize(cols[0])
            frame = parse_frame(cols[1], u, form)
            # alignment is validated for every example, whatever form it is stored in
            to_form(frame, u, "span")
        except FrameError as err:
            log.warning("line %d skipped: %s", lineno, err)
            skipped += 1
            continue
        if ex_id in seen:
            raise MalformedLine(lineno, f"duplicate id {ex_id!r}")
        seen.add(ex_id)
        examples.append(Example(u, frame, ex_id))
    if skipped:
        log.warning("%d line(s) skipped while loading %s", skipped, split_name or "corpus")
    return Corpus(examples, split_name, skipped)


def load_tsv(path, form: str = CANONICAL) -> Corpus:
    """Read ``utterance<TAB>frame[<TAB>id]`` lines; ``#`` lines are comments.

    A file whose first line is the TOPv2 header ``domain<TAB>utterance<TAB>semantic_parse``
    is read in that column layout instead.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_tsv_lines(fh, form, path.stem)


def read_utterances(path) -> list[tuple[str, Utterance]]:
    """``(id, utterance)`` pairs from a TSV or a plain one-utterance-per-line file.

    Only the first column is read; ids follow the same rules as :func:`load_tsv`.
    """
    path = Path(path)
    out = []
    topv2 = False
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if not out and not topv2 and cols == list(TOPV2_HEADER):
                topv2 = True
                continue
            if topv2:
                cols = cols[1:2]
            ex_id = cols[2].strip() if len(cols) > 2 and cols[2].strip() else f"{path.stem}-{lineno}"
            try:
                out.append((ex_id, whitespace_tokenize(cols[0])))
            except FrameError as err:
                raise MalformedLine(lineno, str(err)) from err
    return out


def format_tsv(corpus: Corpus, form: Optional[str] = None) -> str:
    rows = []
    for ex in corpus:
        frame = ex.gold if form is None else to_form(ex.gold, ex.utterance, form)
        rows.append(f"{ex.utterance.text}\t{serialize_frame(frame)}\t{ex.id}\n")
    return "".join(rows)


def write_tsv(corpus: Corpus, path, form: Optional[str] = None) -> None:
    Path(path).write_text(format_tsv(corpus, form), encoding="utf-8")


def compute_length_stats(corpus: Corpus, form: str) -> LengthStats:
    return length_stats(ex.in_form(form).gold for ex in corpus)


# -- vocabulary ------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Token inventories shared by the parser and its baselines.

    ``ontology`` is the generation vocabulary (intent/slot open tokens and
    ``]``); copy targets are the utterance indices ``0..max_index``.  ``words``
    is the source vocabulary; the text-generation variant also generates from it.
    """

    ontology: tuple[str, ...]
    max_index: int
    words: tuple[str, ...]
    specials: tuple[str, ...] = (MASK, PAD)

    def __post_init__(self):
        clash = set(self.ontology) & {str(i) for i in range(self.max_index + 1)}
        if clash:
            raise ValueError(f"ontology tokens overlap index tokens: {sorted(clash)}")

    @property
    def index_tokens(self) -> tuple[str, ...]:
        return tuple(str(i) for i in range(self.max_index + 1))

    @property
    def source_tokens(self) -> tuple[str, ...]:
        """Encoder input vocabulary: PAD, UNK, END, then the words."""
        return (PAD, UNK, END) + self.words

    def encode_source(self, u: Utterance) -> list[int]:
        """Token ids followed by the END marker (which is never a copy target)."""
        lookup = self._source_ids
        return [lookup.get(t, 1) for t in u.tokens] + [2]

    @property
    def _source_ids(self) -> dict[str, int]:
        cached = self.__dict__.get("_src_cache")
        if cached is None:
            cached = {t: i for i, t in enumerate(self.source_tokens)}
            object.__setattr__(self, "_src_cache", cached)
        return cached

    def to_dict(self) -> dict:
        return {"ontology": list(self.ontology), "max_index": self.max_index, "words": list(self.words)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["ontology"]), int(d["max_index"]), tuple(d["words"]))


def build_vocab(corpus: Corpus) -> Vocabulary:
    if not len(corpus):
        raise ValueError("cannot build a vocabulary from an empty corpus")
    onto = set()
    words = set()
    for ex in corpus:
        onto.update(n.open_token for n in ex.gold.root.walk())
        words.update(ex.utterance.tokens)
    onto.add(CLOSE)
    max_len = max(len(ex.utterance) for ex in corpus)
    return Vocabulary(tuple(sorted(onto)), max_len - 1, tuple(sorted(words)))


# -- SPIS ------------------------------------------------------------------------


def spis_sample(corpus: Corpus, k: int, seed: int) -> Corpus:
    """Subsample so every intent/slot label keeps at least ``min(k, total)`` examples.

    Greedy quota fill over a seeded shuffle; accepted examples keep corpus order.
    """
    if k <= 0:
        raise InvalidK(f"k must be positive, got {k}")
    labels = [ex.gold.labels() for ex in corpus]
    totals = Counter(lab for labs in labels for lab in labs)
    quota = {lab: min(k, n) for lab, n in totals.items()}
    have: Counter = Counter()
    order = list(range(len(corpus)))
    random.Random(seed).shuffle(order)
    chosen = []
    for i in order:
        if any(have[lab] < quota[lab] for lab in labels[i]):
            chosen.append(i)
            have.update(labels[i])
    chosen.sort()
    name = f"{corpus.split_name}.spis{k}" if corpus.split_name else f"spis{k}"
    return Corpus([corpus.examples[i] for i in chosen], name)


# -- synthetic grammar -------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticGrammarConfig:
    num_intents: int = 8
    num_slots: int = 12
    max_depth: int = 2
    max_slots_per_intent: int = 3
    span_length_range: tuple[int, int] = (1, 3)
    vocab_size: int = 60
    seed: int = 0
    nest_prob: float = 0.3

    def __post_init__(self):
        lo, hi = self.span_length_range
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_intents < 1 or self.num_slots < 1 or self.max_slots_per_intent < 1:
            raise ValueError("num_intents, num_slots and max_slots_per_intent must be >= 1")
        if not 1 <= lo <= hi:
            raise ValueError(f"bad span_length_range {self.span_length_range}")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if not 0.0 <= self.nest_prob <= 1.0:
            raise ValueError("nest_prob must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, kv: dict) -> "SyntheticGrammarConfig":
        known = {f.name: f for f in fields(cls)}
        args = {}
        for key, val in kv.items():
            if key not in known:
                raise ValueError(f"unknown synthetic grammar key {key!r}")
            if key == "span_length_range":
                lo, hi = str(val).replace(",", " ").split()
                args[key] = (int(lo), int(hi))
            elif key == "nest_prob":
                args[key] = float(val)
            else:
                args[key] = int(val)
        return cls(**args)


def intent_name(i: int) -> str:
    return f"INTENT_{i}"


def slot_name(i: int) -> str:
    return f"SLOT_{i}"


def _intent_cue(i: int) -> str:
    return f"do{i}"


def _slot_cue(i: int) -> str:
    return f"with{i}"


def _filler(i: int) -> str:
    return f"w{i}"


def generate_synthetic(cfg: SyntheticGrammarConfig, n: int, split_name: str = "synthetic") -> Corpus:
    """Random alternating intent/slot trees realized as utterances.

    Each intent contributes a cue word, each slot a cue word followed either by
    its filler span or by a nested intent.  Filler words never collide with cue
    words, so left-to-right alignment recovers every leaf exactly.
    """
    rng = random.Random(cfg.seed)
    lo, hi = cfg.span_length_range
    examples = []
    for ex_i in range(n):
        tokens: list[str] = []

        def make_intent(depth: int) -> FrameNode:
            i = rng.randrange(cfg.num_intents)
            tokens.append(_intent_cue(i))
            n_slots = rng.randint(1, cfg.max_slots_per_intent)
            slot_ids = rng.sample(range(cfg.num_slots), min(n_slots, cfg.num_slots))
            slots = []
            for s in slot_ids:
                tokens.append(_slot_cue(s))
                if depth < cfg.max_depth and rng.random() < cfg.nest_prob:
                    slots.append(FrameNode(SLOT, slot_name(s), (make_intent(depth + 1),)))
                else:
                    span = [_filler(rng.randrange(cfg.vocab_size)) for _ in range(rng.randint(lo, hi))]
                    tokens.extend(span)
                    slots.append(FrameNode(SLOT, slot_name(s), (), LeafArg(text=tuple(span))))
            return FrameNode(INTENT, intent_name(i), tuple(slots))

        root = make_intent(1)
        examples.append(Example(Utterance(tuple(tokens)), Frame(root, CANONICAL), f"{split_name}-{ex_i}"))
    return Corpus(examples, split_name)


def label_counts(corpus: Corpus) -> Counter:
    """Number of examples each intent/slot label occurs in."""
    return Counter(lab for ex in corpus for lab in ex.gold.labels())


def max_target_length(corpus: Corpus, form: str) -> int:
    from .frames import linearize

    return max(len(linearize(ex.in_form(form).gold)) for ex in corpus)


def split_corpus(corpus: Corpus, sizes: Sequence[int], names: Sequence[str]) -> list[Corpus]:
    out, start = [], 0
    for size, name in zip(sizes, names):
        out.append(Corpus(corpus.examples[start:start + size], name))
        start += size
    return out
