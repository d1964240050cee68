"""Additive attention masks: causal, pairwise mutual, generalized mutual.

Every mask is a dense n x n float array holding exactly ``0.0`` (attend) or
``NEG_INF`` (blocked). Positions are 0-indexed; the image rows of the pairwise
mask unlock the columns of the text segment that follows the image(s).
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .layout import SegmentRole, SequenceLayout

NEG_INF = -1e9
MAX_MASK_LEN = 4096


class MaskPolicy(enum.Enum):
    CAUSAL = "CAUSAL"
    MMA_PAIRWISE = "MMA_PAIRWISE"
    MMA_GENERALIZED = "MMA_GENERALIZED"

    @classmethod
    def parse(cls, value: "MaskPolicy | str") -> "MaskPolicy":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).strip().upper().replace("-", "_")]
        except KeyError:
            raise InvalidArgument(f"unknown mask policy {value!r}; choose from {[p.name for p in cls]}") from None


class Readout(enum.Enum):
    """How answer rows attend: ordinary causal rows, or only image positions (plus answer rows so far)."""

    NORMAL = "NORMAL"
    IMAGE_ONLY = "IMAGE_ONLY"

    @classmethod
    def parse(cls, value: "Readout | str") -> "Readout":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).strip().upper().replace("-", "_")]
        except KeyError:
            raise InvalidArgument(f"unknown readout {value!r}") from None


@dataclass(frozen=True, eq=False)
class AttentionMask:
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] < 1:
            raise InvalidArgument(f"mask must be a nonempty square matrix, got shape {e.shape}")
        if e.shape[0] > MAX_MASK_LEN:
            raise InvalidArgument(f"mask length {e.shape[0]} exceeds {MAX_MASK_LEN}")
        if not np.all((e == 0.0) | (e == NEG_INF)):
            raise InvalidArgument("mask entries must be exactly 0 or NEG_INF")
        if np.any(np.diag(e) != 0.0):
            raise InvalidArgument("every token must attend to itself")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def allowed(self) -> np.ndarray:
        return self.entries == 0.0

    def __eq__(self, other):
        return isinstance(other, AttentionMask) and np.array_equal(self.entries, other.entries)

    __hash__ = None

    @classmethod
    def from_allowed(cls, allowed: np.ndarray) -> "AttentionMask":
        return cls(np.where(allowed, 0.0, NEG_INF))


def _check_len(n: int) -> None:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgument(f"mask length must be a positive integer, got {n!r}")
    if n > MAX_MASK_LEN:
        raise InvalidArgument(f"mask length {n} exceeds {MAX_MASK_LEN}")


def _causal_allowed(n: int) -> np.ndarray:
    return np.tri(n, dtype=bool)


def build_causal(n: int) -> AttentionMask:
    _check_len(n)
    return AttentionMask.from_allowed(_causal_allowed(n))


def pairwise_regions(layout: SequenceLayout) -> tuple[range, range]:
    """Image rows and text columns unlocked by the pairwise mask.

    Accepts ``[SYSTEM?, IMAGE+, QUERY|CAPTION]``; raises otherwise.
    """
    segs = list(layout.segments)
    if segs and segs[0].role is SegmentRole.SYSTEM:
        segs = segs[1:]
    images, rest = [], segs
    while rest and rest[0].role is SegmentRole.IMAGE:
        images.append(rest[0])
        rest = rest[1:]
    if not images or len(rest) != 1 or rest[0].role not in (SegmentRole.QUERY, SegmentRole.CAPTION):
        raise InvalidArgument(f"pairwise mutual attention needs [SYSTEM?, IMAGE+, QUERY|CAPTION], got {layout}")
    first = layout.span(images[0].id).start
    text = layout.span(rest[0].id)
    return range(first, text.start), text


def build_mma_pairwise(layout: SequenceLayout) -> AttentionMask:
    """Causal mask plus every image row unlocking every query/caption column."""
    image_rows, text_cols = pairwise_regions(layout)
    _check_len(layout.total_len)
    allowed = _causal_allowed(layout.total_len)
    allowed[image_rows.start:image_rows.stop, text_cols.start:text_cols.stop] = True
    return AttentionMask.from_allowed(allowed)


def build_mma_generalized(layout: SequenceLayout) -> AttentionMask:
    """Causal mask plus every pair of positions whose modalities differ."""
    _check_len(layout.total_len)
    codes = layout.modality_codes
    allowed = _causal_allowed(layout.total_len) | (codes[:, None] != codes[None, :])
    return AttentionMask.from_allowed(allowed)


def build_decode_row(prefill_len: int, t: int) -> np.ndarray:
    """Mask row for the ``t``-th generated token: it sees every earlier position and itself."""
    if isinstance(prefill_len, bool) or prefill_len < 1:
        raise InvalidArgument(f"prefill_len must be >= 1, got {prefill_len}")
    if t < 0:
        raise InvalidArgument(f"generated-token index must be >= 0, got {t}")
    return np.zeros(prefill_len + t + 1)


def build_readout_row(prefill: SequenceLayout, t: int, readout: Readout = Readout.NORMAL) -> np.ndarray:
    """Decode row honoring ``readout``; IMAGE_ONLY hides all prefill text."""
    row = build_decode_row(prefill.total_len, t)
    if Readout.parse(readout) is Readout.IMAGE_ONLY:
        row[: prefill.total_len][~prefill.positions(SegmentRole.IMAGE)] = NEG_INF
    return row


def build_mask(layout: SequenceLayout, policy: MaskPolicy | str) -> AttentionMask:
    policy = MaskPolicy.parse(policy)
    if policy is MaskPolicy.CAUSAL:
        return build_causal(layout.total_len)
    if policy is MaskPolicy.MMA_PAIRWISE:
        return build_mma_pairwise(layout)
    return build_mma_generalized(layout)


def build_composite(layout: SequenceLayout, policy: MaskPolicy | str,
                    readout: Readout | str = Readout.NORMAL) -> AttentionMask:
    """Mask for a full training/teacher-forced sequence.

    Prefill rows use ``policy`` over the non-ANSWER part and never see answer
    columns; ANSWER rows are decode rows (causal, or image-only under
    IMAGE_ONLY readout).
    """
    prefill = layout.prefill()
    n, m = layout.total_len, prefill.total_len
    _check_len(n)
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:m, :m] = build_mask(prefill, policy).allowed
    for t in range(n - m):
        allowed[m + t, : m + t + 1] = build_readout_row(prefill, t, readout) == 0.0
    return AttentionMask.from_allowed(allowed)


def oracle_mask(layout: SequenceLayout, policy: MaskPolicy | str) -> AttentionMask:
    """Evaluate the defining predicate for every (i, j) pair, one at a time."""
    policy = MaskPolicy.parse(policy)
    n = layout.total_len
    _check_len(n)
    roles = [layout.segment_at(i).role for i in range(n)]
    mods = [layout.segment_at(i).modality.name for i in range(n)]
    if policy is MaskPolicy.MMA_PAIRWISE:
        body = [s for s in layout.segments if s.role is not SegmentRole.SYSTEM]
        ok = (len(body) >= 2 and all(s.role is SegmentRole.IMAGE for s in body[:-1])
              and body[-1].role in (SegmentRole.QUERY, SegmentRole.CAPTION))
        if not ok:
            raise InvalidArgument(f"pairwise mutual attention needs [SYSTEM?, IMAGE+, QUERY|CAPTION], got {layout}")
    image_row = [r is SegmentRole.IMAGE for r in roles]
    text_col = [r in (SegmentRole.QUERY, SegmentRole.CAPTION) for r in roles]
    if policy is MaskPolicy.CAUSAL:
        def open_(i, j):
            return j <= i
    elif policy is MaskPolicy.MMA_PAIRWISE:
        def open_(i, j):
            return j <= i or (image_row[i] and text_col[j])
    else:
        def open_(i, j):
            return j <= i or mods[i] != mods[j]
    rows = [[0.0 if open_(i, j) else NEG_INF for j in range(n)] for i in range(n)]
    return AttentionMask(np.array(rows))


def render_mask(mask: AttentionMask) -> str:
    """'.' for attend, '#' for blocked, one line per row."""
    return "\n".join("".join("." if v == 0.0 else "#" for v in row) for row in mask.entries)


def mask_csv(mask: AttentionMask) -> str:
    buf = io.StringIO()
    buf.write("i,j,value\n")
    for i, row in enumerate(mask.entries):
        for j, v in enumerate(row):
            buf.write(f"{i},{j},{'0' if v == 0.0 else '-inf'}\n")
    return buf.getvalue()

