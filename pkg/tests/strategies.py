"""Hypothesis strategies and seeded generators for layouts."""

import numpy as np
from hypothesis import strategies as st

from mmattn.layout import ModalityTag, Segment, SegmentRole, SequenceLayout, TEXT

TEXT_ROLES = (SegmentRole.QUERY, SegmentRole.CAPTION)
OTHER_MODALITIES = ("IMAGE", "AUDIO", "DEPTH")


@st.composite
def pairwise_layouts(draw, max_len=64, max_images=3):
    """[SYSTEM?, IMAGE+, QUERY|CAPTION] with every segment length in [1, max_len]."""
    segs = []
    if draw(st.booleans()):
        segs.append(Segment("sys", TEXT, SegmentRole.SYSTEM, draw(st.integers(1, max_len))))
    for k in range(draw(st.integers(1, max_images))):
        segs.append(Segment(f"img{k}", ModalityTag("IMAGE"), SegmentRole.IMAGE, draw(st.integers(1, max_len))))
    segs.append(Segment("txt", TEXT, draw(st.sampled_from(TEXT_ROLES)), draw(st.integers(1, max_len))))
    return SequenceLayout(tuple(segs))


@st.composite
def general_layouts(draw, max_len=64, max_segments=5):
    """Any valid mix of SYSTEM, text, and non-text segments."""
    segs = []
    if draw(st.booleans()):
        segs.append(Segment("sys", TEXT, SegmentRole.SYSTEM, draw(st.integers(1, max_len))))
    for k in range(draw(st.integers(1, max_segments))):
        n = draw(st.integers(1, max_len))
        if draw(st.booleans()):
            segs.append(Segment(f"s{k}", TEXT, draw(st.sampled_from(TEXT_ROLES)), n))
        else:
            segs.append(Segment(f"s{k}", ModalityTag(draw(st.sampled_from(OTHER_MODALITIES))), SegmentRole.IMAGE, n))
    return SequenceLayout(tuple(segs))


def random_pairwise_layout(rng: np.random.Generator, max_len=64) -> SequenceLayout:
    segs = []
    if rng.random() < 0.5:
        segs.append(Segment("sys", TEXT, SegmentRole.SYSTEM, int(rng.integers(1, max_len + 1))))
    for k in range(int(rng.integers(1, 4))):
        segs.append(Segment(f"img{k}", ModalityTag("IMAGE"), SegmentRole.IMAGE, int(rng.integers(1, max_len + 1))))
    role = TEXT_ROLES[int(rng.integers(2))]
    segs.append(Segment("txt", TEXT, role, int(rng.integers(1, max_len + 1))))
    return SequenceLayout(tuple(segs))


def random_general_layout(rng: np.random.Generator, max_len=64) -> SequenceLayout:
    segs = []
    if rng.random() < 0.3:
        segs.append(Segment("sys", TEXT, SegmentRole.SYSTEM, int(rng.integers(1, max_len + 1))))
    for k in range(int(rng.integers(1, 5))):
        n = int(rng.integers(1, max_len + 1))
        if rng.random() < 0.5:
            segs.append(Segment(f"s{k}", TEXT, TEXT_ROLES[int(rng.integers(2))], n))
        else:
            segs.append(Segment(f"s{k}", ModalityTag(OTHER_MODALITIES[int(rng.integers(3))]), SegmentRole.IMAGE, n))
    return SequenceLayout(tuple(segs))
