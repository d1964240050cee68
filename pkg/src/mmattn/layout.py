"""Modality-tagged sequence layouts.

A layout is an ordered list of segments (system prompt, image, query, caption,
answer), each of which covers a contiguous run of token positions. The
position -> modality map (``phi``) is what the generalized mutual-attention
mask is defined over.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

MAX_ORDER_SEGMENTS = 6


@dataclass(frozen=True)
class ModalityTag:
    """Modality of a token. Names compare case-insensitively."""

    name: str

    def __post_init__(self):
        name = self.name.strip().upper() if isinstance(self.name, str) else ""
        if not name or any(c.isspace() for c in name):
            raise InvalidArgument(f"modality name must be a nonempty word, got {self.name!r}")
        object.__setattr__(self, "name", name)

    @classmethod
    def other(cls, name: str) -> "ModalityTag":
        tag = cls(name)
        if tag in BUILTIN_MODALITIES:
            raise InvalidArgument(f"{name!r} is a built-in modality, not OTHER")
        return tag

    @property
    def is_text(self) -> bool:
        return self.name == "TEXT"

    def __str__(self):
        return self.name


TEXT = ModalityTag("TEXT")
IMAGE = ModalityTag("IMAGE")
AUDIO = ModalityTag("AUDIO")
BUILTIN_MODALITIES = (TEXT, IMAGE, AUDIO)


class SegmentRole(enum.Enum):
    SYSTEM = "SYSTEM"
    IMAGE = "IMAGE"
    QUERY = "QUERY"
    CAPTION = "CAPTION"
    ANSWER = "ANSWER"


TEXT_ROLES = frozenset({SegmentRole.SYSTEM, SegmentRole.QUERY, SegmentRole.CAPTION, SegmentRole.ANSWER})


class Template(enum.Enum):
    IT = "IT"  # image, then text
    TI = "TI"  # text, then image


@dataclass(frozen=True)
class Segment:
    id: str
    modality: ModalityTag
    role: SegmentRole
    length: int

    def __post_init__(self):
        if not self.id or any(c.isspace() for c in self.id):
            raise InvalidArgument(f"segment id must be a nonempty word, got {self.id!r}")
        if isinstance(self.length, bool) or not isinstance(self.length, (int, np.integer)) or self.length < 1:
            raise InvalidArgument(f"segment {self.id!r}: length must be a positive integer, got {self.length!r}")
        object.__setattr__(self, "length", int(self.length))
        if self.role in TEXT_ROLES and not self.modality.is_text:
            raise InvalidArgument(f"segment {self.id!r}: role {self.role.name} requires TEXT modality")
        # IMAGE role carries any non-text perceptual input (IMAGE, AUDIO, OTHER).
        if self.role is SegmentRole.IMAGE and self.modality.is_text:
            raise InvalidArgument(f"segment {self.id!r}: role IMAGE cannot carry TEXT")


@dataclass(frozen=True)
class SequenceLayout:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise InvalidArgument("layout needs at least one segment")
        ids = [s.id for s in segs]
        if len(set(ids)) != len(ids):
            raise InvalidArgument(f"duplicate segment ids in {ids}")
        roles = [s.role for s in segs]
        n_sys = roles.count(SegmentRole.SYSTEM)
        if n_sys > 1 or (n_sys == 1 and roles[0] is not SegmentRole.SYSTEM):
            raise InvalidArgument("at most one SYSTEM segment, and only in first place")
        seen_answer = False
        for r in roles:
            if r is SegmentRole.ANSWER:
                seen_answer = True
            elif seen_answer:
                raise InvalidArgument("ANSWER segments must come last")

    @classmethod
    def of(cls, *segments: Segment) -> "SequenceLayout":
        return cls(tuple(segments))

    @cached_property
    def total_len(self) -> int:
        return sum(s.length for s in self.segments)

    @cached_property
    def starts(self) -> tuple[int, ...]:
        return tuple(itertools.accumulate((s.length for s in self.segments[:-1]), initial=0))

    def span(self, seg_id: str) -> range:
        for seg, start in zip(self.segments, self.starts):
            if seg.id == seg_id:
                return range(start, start + seg.length)
        raise InvalidArgument(f"no segment with id {seg_id!r}")

    def segment_at(self, i: int) -> Segment:
        if isinstance(i, bool) or not 0 <= i < self.total_len:
            raise InvalidArgument(f"position {i} outside [0, {self.total_len})")
        for seg, start in zip(self.segments, self.starts):
            if i < start + seg.length:
                return seg
        raise AssertionError("unreachable")

    @cached_property
    def modality_codes(self) -> np.ndarray:
        """Integer code per position; equal codes mean equal modality."""
        names = sorted({s.modality.name for s in self.segments})
        code = {n: k for k, n in enumerate(names)}
        return np.repeat([code[s.modality.name] for s in self.segments], [s.length for s in self.segments])

    @cached_property
    def role_per_position(self) -> tuple[SegmentRole, ...]:
        return tuple(s.role for s in self.segments for _ in range(s.length))

    def positions(self, *roles: SegmentRole) -> np.ndarray:
        """Boolean vector marking positions whose segment has one of ``roles``."""
        wanted = set(roles)
        return np.array([r in wanted for r in self.role_per_position], dtype=bool)

    def prefill(self) -> "SequenceLayout":
        """The layout with trailing ANSWER segments removed."""
        segs = tuple(s for s in self.segments if s.role is not SegmentRole.ANSWER)
        return self if len(segs) == len(self.segments) else SequenceLayout(segs)

    def describe(self) -> str:
        return "".join(f"{s.id} {s.modality} {s.role.name} {s.length}\n" for s in self.segments)

    def __str__(self):
        return "[" + ", ".join(f"{s.role.name}x{s.length}" for s in self.segments) + "]"


def build_layout(template: Template | str, sys_len: int, v_len: int, tq_len: int) -> SequenceLayout:
    """Prompt layout for the image-then-text (IT) or text-then-image (TI) order."""
    template = Template(template)
    if v_len < 1 or tq_len < 1 or sys_len < 0:
        raise InvalidArgument(f"need v_len >= 1, tq_len >= 1, sys_len >= 0; got {v_len}, {tq_len}, {sys_len}")
    image = Segment("image", IMAGE, SegmentRole.IMAGE, v_len)
    query = Segment("query", TEXT, SegmentRole.QUERY, tq_len)
    body = (image, query) if template is Template.IT else (query, image)
    if sys_len:
        body = (Segment("system", TEXT, SegmentRole.SYSTEM, sys_len), *body)
    return SequenceLayout(body)


def phi(layout: SequenceLayout, i: int) -> ModalityTag:
    """Modality of the token at position ``i``."""
    return layout.segment_at(i).modality


def reorder(layout: SequenceLayout, order: Sequence[str]) -> SequenceLayout:
    """Permute the non-ANSWER segments into ``order`` (a list of segment ids).

    ANSWER segments stay at the end; SYSTEM must stay first.
    """
    movable = [s for s in layout.segments if s.role is not SegmentRole.ANSWER]
    answers = [s for s in layout.segments if s.role is SegmentRole.ANSWER]
    by_id = {s.id: s for s in movable}
    order = list(order)
    if sorted(order) != sorted(by_id):
        raise InvalidArgument(f"order {order} is not a permutation of {sorted(by_id)}")
    if movable[0].role is SegmentRole.SYSTEM and order[0] != movable[0].id:
        raise InvalidArgument("the SYSTEM segment must remain first")
    return SequenceLayout(tuple(by_id[i] for i in order) + tuple(answers))


def modality_order_ids(layout: SequenceLayout, modality_order: Sequence[ModalityTag | str]) -> list[str]:
    """Segment-id order that groups movable segments by ``modality_order``.

    SYSTEM stays first; within a modality the original relative order is kept.
    """
    rank = {ModalityTag(m).name if isinstance(m, str) else m.name: k for k, m in enumerate(modality_order)}
    movable = [s for s in layout.segments if s.role is not SegmentRole.ANSWER]
    head = [s.id for s in movable if s.role is SegmentRole.SYSTEM]
    rest = [s for s in movable if s.role is not SegmentRole.SYSTEM]
    missing = {s.modality.name for s in rest} - set(rank)
    if missing:
        raise InvalidArgument(f"modality order {list(rank)} lacks {sorted(missing)}")
    rest.sort(key=lambda s: rank[s.modality.name])
    return head + [s.id for s in rest]


def permute_positions(src: SequenceLayout, dst: SequenceLayout) -> np.ndarray:
    """Index array ``idx`` such that ``values_dst = values_src[idx]``."""
    return np.concatenate([np.asarray(src.span(s.id)) for s in dst.segments])


def enumerate_orders(n: int) -> list[tuple[int, ...]]:
    """All n! orderings of n segments, lexicographically sorted."""
    if isinstance(n, bool) or not 1 <= n <= MAX_ORDER_SEGMENTS:
        raise InvalidArgument(f"n must lie in [1, {MAX_ORDER_SEGMENTS}], got {n}")
    orders = list(itertools.permutations(range(n)))
    assert len(orders) == math.factorial(n)
    return orders


def parse_layout(text: str) -> SequenceLayout:
    """Parse ``<id> <modality> <role> <length>`` lines; '#' starts a comment."""
    segments = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InvalidArgument(f"line {lineno}: expected '<id> <modality> <role> <length>', got {raw!r}")
        seg_id, modality, role, length = parts
        try:
            role_enum = SegmentRole[role.upper()]
        except KeyError:
            raise InvalidArgument(f"line {lineno}: unknown role {role!r}") from None
        try:
            n = int(length)
        except ValueError:
            raise InvalidArgument(f"line {lineno}: length {length!r} is not an integer") from None
        segments.append(Segment(seg_id, ModalityTag(modality), role_enum, n))
    return SequenceLayout(tuple(segments))


def load_layout(path: str | Path) -> SequenceLayout:
    return parse_layout(Path(path).read_text())


def layout_from_roles(parts: Iterable[tuple[SegmentRole | str, int]]) -> SequenceLayout:
    """Convenience builder: ``[("IMAGE", 2), ("QUERY", 2)]`` -> layout with ids ``<role><k>``."""
    segments = []
    for k, (role, n) in enumerate(parts):
        role = SegmentRole[role] if isinstance(role, str) else role
        modality = IMAGE if role is SegmentRole.IMAGE else TEXT
        segments.append(Segment(f"{role.name.lower()}{k}", modality, role, n))
    return SequenceLayout(tuple(segments))
