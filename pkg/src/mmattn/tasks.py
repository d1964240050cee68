"""Synthetic image/text tasks.

Image tokens are drawn from a symbol range of the vocabulary that text never
uses, standing in for encoder outputs. Both tasks show k distinct symbols
and a one-token query naming a slot index; the answer is the symbol in that
slot. They differ only in how the answer row may attend:

* plain recall: the answer row is an ordinary causal row.
* blind readout: the answer row sees image positions only, so it can answer
  only if the image states already encode the query. Under a causal mask they
  cannot (the query comes later), which caps accuracy at 1/k.

The blind readout is an invented probe, not a benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .layout import (
    IMAGE,
    TEXT,
    ModalityTag,
    Segment,
    SegmentRole,
    SequenceLayout,
    modality_order_ids,
    permute_positions,
    reorder,
)
from .masks import Readout

IMAGE_SYMBOLS = 64


@dataclass(frozen=True)
class Vocab:
    """Token-id plan: text ids first, image symbols in the top ``image_size`` ids."""

    size: int = 128
    image_size: int = IMAGE_SYMBOLS

    def __post_init__(self):
        if self.size - self.image_size < 2 or self.image_size < 2:
            raise InvalidArgument(f"vocab of {self.size} cannot hold {self.image_size} image symbols plus text")

    @classmethod
    def for_size(cls, size: int) -> "Vocab":
        """Default plan for a model vocabulary: up to 64 image symbols, at most half the ids."""
        return cls(size, min(IMAGE_SYMBOLS, size // 2))

    @property
    def text_size(self) -> int:
        return self.size - self.image_size

    read_token = 0  # marks the start of an answer or caption

    def index_token(self, q: int) -> int:
        return 1 + q

    def symbol(self, s: int) -> int:
        return self.text_size + s

    @property
    def max_k(self) -> int:
        return min(self.image_size, self.text_size - 1)


@dataclass(frozen=True, eq=False)
class TaskSample:
    layout: SequenceLayout
    tokens: np.ndarray       # int [n]
    target: tuple[int, ...]  # answer tokens
    loss_mask: np.ndarray    # bool [n]
    labels: np.ndarray       # int [n]; next-token target where loss_mask is set, else 0
    readout: Readout = Readout.NORMAL
    candidates: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.layout.total_len
        for name in ("tokens", "loss_mask", "labels"):
            if np.shape(getattr(self, name)) != (n,):
                raise InvalidArgument(f"{name} must have length {n}")

    @property
    def prefill_layout(self) -> SequenceLayout:
        return self.layout.prefill()

    @property
    def prefill_tokens(self) -> np.ndarray:
        return self.tokens[: self.prefill_layout.total_len]


def _check_k(k: int, vocab: Vocab) -> None:
    if isinstance(k, bool) or not 2 <= k <= 64:
        raise InvalidArgument(f"k_symbols must lie in [2, 64], got {k}")
    if k > vocab.max_k:
        raise InvalidArgument(f"k_symbols={k} needs more text ids than a vocab of {vocab.size} provides")


def _recall_samples(k: int, n: int, seed: int, vocab: Vocab, readout: Readout) -> list[TaskSample]:
    _check_k(k, vocab)
    if n < 1:
        raise InvalidArgument(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    layout = SequenceLayout((
        Segment("image", IMAGE, SegmentRole.IMAGE, k),
        Segment("query", TEXT, SegmentRole.QUERY, 1),
        Segment("answer", TEXT, SegmentRole.ANSWER, 1),
    ))
    loss = np.zeros(k + 2, dtype=bool)
    loss[-1] = True
    out = []
    for _ in range(n):
        symbols = [vocab.symbol(int(s)) for s in rng.choice(vocab.image_size, size=k, replace=False)]
        q = int(rng.integers(k))
        tokens = np.array(symbols + [vocab.index_token(q), vocab.read_token])
        labels = np.zeros(k + 2, dtype=np.int64)
        labels[-1] = symbols[q]
        out.append(TaskSample(layout, tokens, (symbols[q],), loss, labels, readout, tuple(symbols)))
    return out


def gen_blind_readout(k_symbols: int, n_queries: int, seed: int, vocab: Vocab = Vocab()) -> list[TaskSample]:
    return _recall_samples(k_symbols, n_queries, seed, vocab, Readout.IMAGE_ONLY)


def gen_plain_recall(k_symbols: int, n_queries: int, seed: int, vocab: Vocab = Vocab()) -> list[TaskSample]:
    return _recall_samples(k_symbols, n_queries, seed, vocab, Readout.NORMAL)


TASKS = {"blind_readout": gen_blind_readout, "plain_recall": gen_plain_recall}


def caption_view(sample: TaskSample, vocab: Vocab = Vocab()) -> TaskSample:
    """Pretraining view of a sample: the caption spells out the image symbols.

    Caption inputs are the READ marker followed by the symbols shifted by
    one, so caption position j is trained to emit symbol j. Loss covers
    every caption position.
    """
    image = sample.layout.span("image")
    symbols = [int(t) for t in sample.tokens[image.start:image.stop]]
    k = len(symbols)
    layout = SequenceLayout((
        Segment("image", IMAGE, SegmentRole.IMAGE, k),
        Segment("caption", TEXT, SegmentRole.CAPTION, k),
    ))
    tokens = np.array(symbols + [vocab.read_token] + symbols[:-1])
    labels = np.array([0] * k + symbols, dtype=np.int64)
    loss = np.array([False] * k + [True] * k)
    return TaskSample(layout, tokens, tuple(symbols), loss, labels, Readout.NORMAL, tuple(symbols))


def reorder_sample(sample: TaskSample, modality_order: Sequence[ModalityTag | str]) -> TaskSample:
    """Move whole segments into ``modality_order``; per-position fields follow their segment."""
    layout = reorder(sample.layout, modality_order_ids(sample.layout, modality_order))
    if layout == sample.layout:
        return sample
    idx = permute_positions(sample.layout, layout)
    return TaskSample(layout, sample.tokens[idx], sample.target, sample.loss_mask[idx], sample.labels[idx],
                      sample.readout, sample.candidates)
