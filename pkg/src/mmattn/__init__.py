"""Testbed for modality-mutual attention masks in decoder-only transformers."""

from .errors import InvalidArgument, NumericalFailure
from .layout import (
    AUDIO,
    IMAGE,
    TEXT,
    ModalityTag,
    Segment,
    SegmentRole,
    SequenceLayout,
    Template,
    build_layout,
    enumerate_orders,
    parse_layout,
    phi,
    reorder,
)
from .masks import (
    NEG_INF,
    AttentionMask,
    MaskPolicy,
    Readout,
    build_causal,
    build_composite,
    build_decode_row,
    build_mask,
    build_mma_generalized,
    build_mma_pairwise,
    oracle_mask,
    render_mask,
)

__version__ = "0.1.0"
