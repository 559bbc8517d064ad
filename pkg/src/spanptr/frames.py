"""Decoupled frames in canonical, index and span forms.

A frame is a tree of intents and slots.  Utterance tokens only ever appear as
slot leaf arguments, and the three forms differ solely in how a leaf argument
is written:

* canonical: the utterance tokens themselves (``I'll be there at 6pm``)
* index: the 0-based positions of those tokens (``1 2 3 4 5``)
* span: the inclusive endpoints of that run (``1 5``)

Serialized frames are whitespace tokenized, e.g.::

    [IN:SEND_MESSAGE [SL:CONTENT_EXACT 1 5 ] ]
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from statistics import mean
from typing import Iterable, Iterator, Optional, Sequence

CANONICAL = "canonical"
INDEX = "index"
SPAN = "span"
FORMS = (CANONICAL, INDEX, SPAN)

INTENT = "intent"
SLOT = "slot"

INTENT_PREFIX = "[IN:"
SLOT_PREFIX = "[SL:"
CLOSE = "]"
_RESERVED = ("[", "]")


class FrameError(ValueError):
    """Base class for every frame parsing / conversion failure."""


class UnbalancedBrackets(FrameError):
    pass


class UnknownOntologyPrefix(FrameError):
    pass


class MalformedLeaf(FrameError):
    pass


class IndexOutOfRange(FrameError):
    pass


class AlignmentFailure(FrameError):
    pass


class EmptyUtterance(FrameError):
    pass


class InvalidToken(FrameError):
    pass


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise EmptyUtterance("utterance has no tokens")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise InvalidToken(f"bad utterance token {tok!r}")
            if any(r in tok for r in _RESERVED):
                raise InvalidToken(f"token {tok!r} contains a reserved bracket")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class LeafArg:
    """Exactly one of ``text``, ``indices`` or ``span`` is set."""

    text: Optional[tuple[str, ...]] = None
    indices: Optional[tuple[int, ...]] = None
    span: Optional[tuple[int, int]] = None

    def __post_init__(self):
        set_fields = [f for f in (self.text, self.indices, self.span) if f is not None]
        if len(set_fields) != 1:
            raise MalformedLeaf("a leaf argument holds exactly one of text/indices/span")
        if self.text is not None and not self.text:
            raise MalformedLeaf("empty leaf text")
        if self.indices is not None:
            idx = self.indices
            if not idx:
                raise MalformedLeaf("empty index list")
            if any(b != a + 1 for a, b in zip(idx, idx[1:])):
                raise MalformedLeaf(f"indices {list(idx)} are not a contiguous run")
            if idx[0] < 0:
                raise IndexOutOfRange(f"negative index {idx[0]}")
        if self.span is not None:
            start, end = self.span
            if start < 0:
                raise IndexOutOfRange(f"negative span start {start}")
            if start > end:
                raise MalformedLeaf(f"span start {start} after end {end}")

    @property
    def form(self) -> str:
        if self.text is not None:
            return CANONICAL
        return INDEX if self.indices is not None else SPAN

    def tokens(self) -> list[str]:
        """The argument as it appears in a serialized / linearized frame."""
        if self.text is not None:
            return list(self.text)
        if self.indices is not None:
            return [str(i) for i in self.indices]
        return [str(self.span[0]), str(self.span[1])]

    def bounds(self) -> Optional[tuple[int, int]]:
        if self.indices is not None:
            return self.indices[0], self.indices[-1]
        return self.span


@dataclass(frozen=True)
class FrameNode:
    kind: str
    name: str
    children: tuple["FrameNode", ...] = ()
    leaf_arg: Optional[LeafArg] = None

    def __post_init__(self):
        if self.kind not in (INTENT, SLOT):
            raise FrameError(f"unknown node kind {self.kind!r}")
        if not self.name:
            raise FrameError("empty ontology label")
        child_kind = SLOT if self.kind == INTENT else INTENT
        for child in self.children:
            if child.kind != child_kind:
                raise FrameError(f"{self.kind} {self.name} cannot contain a {child.kind}")
        if self.leaf_arg is not None:
            if self.kind == INTENT:
                raise MalformedLeaf(f"intent {self.name} cannot hold a leaf argument")
            if self.children:
                raise MalformedLeaf(f"slot {self.name} has both children and a leaf")

    @property
    def label(self) -> str:
        return f"{'IN' if self.kind == INTENT else 'SL'}:{self.name}"

    @property
    def open_token(self) -> str:
        return "[" + self.label

    def walk(self) -> Iterator["FrameNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


def intent(name: str, *slots: FrameNode) -> FrameNode:
    return FrameNode(INTENT, name, tuple(slots))


def slot(name: str, arg: Optional[LeafArg] = None, *intents: FrameNode) -> FrameNode:
    return FrameNode(SLOT, name, tuple(intents), arg)


@dataclass(frozen=True)
class Frame:
    root: FrameNode
    form: str = CANONICAL

    def __post_init__(self):
        if self.form not in FORMS:
            raise FrameError(f"unknown form {self.form!r}")
        if self.root.kind != INTENT:
            raise FrameError("frame root must be an intent")
        for node in self.root.walk():
            if node.leaf_arg is not None and node.leaf_arg.form != self.form:
                raise MalformedLeaf(
                    f"{node.label} holds a {node.leaf_arg.form} argument in a {self.form} frame"
                )

    def leaves(self) -> list[FrameNode]:
        """Slots carrying an argument, in left-to-right (preorder) order."""
        return [n for n in self.root.walk() if n.leaf_arg is not None]

    def labels(self) -> set[str]:
        return {n.label for n in self.root.walk()}

    def __str__(self) -> str:
        return serialize_frame(self)


@dataclass(frozen=True)
class LengthStats:
    num_length_classes: int
    mean_lengths_per_skeleton: float
    mean_length: float
    max_length: int


# -- parsing / serialization -------------------------------------------------


def _parse_int(tok: str) -> Optional[int]:
    if tok.isdigit() and tok.isascii():
        return int(tok)
    return None


def _make_leaf(args: list[str], form: str, label: str) -> Optional[LeafArg]:
    if not args:
        return None
    if form == CANONICAL:
        return LeafArg(text=tuple(args))
    ints = [_parse_int(a) for a in args]
    if any(i is None for i in ints):
        raise MalformedLeaf(f"{label}: mixed text and indices in {' '.join(args)!r}")
    if form == INDEX:
        return LeafArg(indices=tuple(ints))
    if len(ints) != 2:
        raise MalformedLeaf(f"{label}: a span needs exactly 2 indices, got {len(ints)}")
    return LeafArg(span=(ints[0], ints[1]))


def parse_frame(s: str, u: Optional[Utterance] = None, form: str = CANONICAL) -> Frame:
    """Parse a serialized frame written in ``form``.

    When ``u`` is given, index and span arguments are bounds checked against it.
    """
    if form not in FORMS:
        raise FrameError(f"unknown form {form!r}")
    tokens = s.split()
    if not tokens:
        raise UnbalancedBrackets("empty frame string")
    pos = 0

    def node() -> FrameNode:
        nonlocal pos
        tok = tokens[pos]
        if tok.startswith(INTENT_PREFIX):
            kind, name = INTENT, tok[len(INTENT_PREFIX):]
        elif tok.startswith(SLOT_PREFIX):
            kind, name = SLOT, tok[len(SLOT_PREFIX):]
        elif tok.startswith("["):
            raise UnknownOntologyPrefix(f"unknown ontology token {tok!r}")
        else:
            raise FrameError(f"expected an ontology token at position {pos}, got {tok!r}")
        pos += 1
        children: list[FrameNode] = []
        args: list[str] = []
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets(f"missing ']' for {tok}")
            cur = tokens[pos]
            if cur == CLOSE:
                pos += 1
                break
            if cur.startswith("["):
                if args:
                    raise MalformedLeaf(f"{tok}: argument tokens mixed with nested nodes")
                children.append(node())
            elif cur.endswith(CLOSE) or "]" in cur:
                raise UnbalancedBrackets(f"stray bracket in token {cur!r}")
            else:
                if kind == INTENT:
                    raise MalformedLeaf(f"intent {name} cannot hold argument {cur!r}")
                if children:
                    raise MalformedLeaf(f"{tok}: argument tokens mixed with nested nodes")
                args.append(cur)
                pos += 1
        if not name:
            raise FrameError(f"empty ontology label in {tok!r}")
        return FrameNode(kind, name, tuple(children), _make_leaf(args, form, tok))

    root = node()
    if pos != len(tokens):
        if tokens[pos] == CLOSE:
            raise UnbalancedBrackets(f"unmatched ']' at position {pos}")
        raise FrameError(f"trailing tokens after frame: {' '.join(tokens[pos:])!r}")
    if root.kind != INTENT:
        raise FrameError("frame root must be an intent")
    frame = Frame(root, form)
    if u is not None:
        check_bounds(frame, u)
    return frame


def check_bounds(frame: Frame, u: Utterance) -> None:
    for leaf in frame.leaves():
        b = leaf.leaf_arg.bounds()
        if b is not None and b[1] >= len(u):
            raise IndexOutOfRange(
                f"{leaf.label} refers to index {b[1]} of a {len(u)}-token utterance"
            )


def _node_tokens(node: FrameNode, out: list[str]) -> None:
    out.append(node.open_token)
    if node.leaf_arg is not None:
        out.extend(node.leaf_arg.tokens())
    for child in node.children:
        _node_tokens(child, out)
    out.append(CLOSE)


def linearize(f: Frame) -> list[str]:
    """Flat target sequence; its length is the length-module target."""
    out: list[str] = []
    _node_tokens(f.root, out)
    return out


def serialize_frame(f: Frame) -> str:
    return " ".join(linearize(f))


# -- form conversion -----------------------------------------------------------


def _map_leaves(node: FrameNode, fn) -> FrameNode:
    if node.leaf_arg is not None:
        return replace(node, leaf_arg=fn(node))
    if not node.children:
        return node
    return replace(node, children=tuple(_map_leaves(c, fn) for c in node.children))


def find_runs(needle: Sequence[str], hay: Sequence[str]) -> list[int]:
    """Start positions of every contiguous occurrence of ``needle`` in ``hay``."""
    m = len(needle)
    return [i for i in range(len(hay) - m + 1) if tuple(hay[i:i + m]) == tuple(needle)]


def align_frame(f: Frame, u: Utterance) -> Frame:
    """Canonical -> index form.

    Leaves are aligned left to right; each search starts just after the previous
    leaf's match and falls back to the leftmost match anywhere.
    """
    if f.form != CANONICAL:
        raise FrameError(f"alignment needs a canonical frame, got {f.form}")
    cursor = 0

    def align(node: FrameNode) -> LeafArg:
        nonlocal cursor
        text = node.leaf_arg.text
        starts = find_runs(text, u.tokens)
        if not starts:
            raise AlignmentFailure(
                f"{node.label}: {' '.join(text)!r} is not a contiguous run of {u.text!r}"
            )
        after = [s for s in starts if s >= cursor]
        start = after[0] if after else starts[0]
        cursor = start + len(text)
        return LeafArg(indices=tuple(range(start, start + len(text))))

    return Frame(_map_leaves(f.root, align), INDEX)


def to_index_form(f: Frame, u: Utterance) -> Frame:
    if f.form == INDEX:
        check_bounds(f, u)
        return f
    if f.form == SPAN:
        check_bounds(f, u)
        return Frame(
            _map_leaves(
                f.root,
                lambda n: LeafArg(indices=tuple(range(n.leaf_arg.span[0], n.leaf_arg.span[1] + 1))),
            ),
            INDEX,
        )
    return align_frame(f, u)


def to_span_form(f: Frame, u: Utterance) -> Frame:
    if f.form == SPAN:
        check_bounds(f, u)
        return f
    indexed = to_index_form(f, u)
    check_bounds(indexed, u)
    return Frame(
        _map_leaves(
            indexed.root,
            lambda n: LeafArg(span=(n.leaf_arg.indices[0], n.leaf_arg.indices[-1])),
        ),
        SPAN,
    )


def from_span_form(f: Frame, u: Utterance) -> Frame:
    """Resolve index/span arguments back to utterance text."""
    if f.form == CANONICAL:
        return f
    check_bounds(f, u)

    def resolve(node: FrameNode) -> LeafArg:
        start, end = node.leaf_arg.bounds()
        return LeafArg(text=tuple(u.tokens[start:end + 1]))

    return Frame(_map_leaves(f.root, resolve), CANONICAL)


def to_form(f: Frame, u: Utterance, form: str) -> Frame:
    if form == CANONICAL:
        return from_span_form(f, u)
    if form == INDEX:
        return to_index_form(f, u)
    if form == SPAN:
        return to_span_form(f, u)
    raise FrameError(f"unknown form {form!r}")


def strip_semantics(f: Frame) -> Frame:
    """Drop every leaf argument, keeping the ontology skeleton."""

    def strip(node: FrameNode) -> FrameNode:
        return FrameNode(node.kind, node.name, tuple(strip(c) for c in node.children))

    return Frame(strip(f.root), f.form)


def skeleton_key(f: Frame) -> str:
    return serialize_frame(strip_semantics(f))


# -- evaluation helpers --------------------------------------------------------


def exact_match(pred: Frame, gold: Frame, u: Utterance) -> bool:
    try:
        a = serialize_frame(from_span_form(pred, u))
        b = serialize_frame(from_span_form(gold, u))
    except IndexOutOfRange:
        return False
    return a == b


def length_stats(frames: Iterable[Frame]) -> LengthStats:
    """Target-length statistics over frames already converted to one form."""
    by_skeleton: dict[str, set[int]] = defaultdict(set)
    lengths = []
    for f in frames:
        n = len(linearize(f))
        lengths.append(n)
        by_skeleton[skeleton_key(f)].add(n)
    if not lengths:
        raise ValueError("length statistics need at least one frame")
    return LengthStats(
        num_length_classes=len(set(lengths)),
        mean_lengths_per_skeleton=float(mean(len(v) for v in by_skeleton.values())),
        mean_length=float(mean(lengths)),
        max_length=max(lengths),
    )
