"""Training pipelines: conventional (canonical order only) and dual-order.

A dual-order pipeline trains every stage under every ordering of the input
modalities, finishing each stage on the canonical order used at inference.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import InvalidArgument
from .layout import MAX_ORDER_SEGMENTS, enumerate_orders

CANONICAL_ORDER = ("IMAGE", "TEXT")


class StageKind(enum.Enum):
    PT = "PT"
    SFT = "SFT"


class Pipeline(enum.Enum):
    CONVENTIONAL = "CONVENTIONAL"
    DOT = "DOT"

    @classmethod
    def parse(cls, value: "Pipeline | str") -> "Pipeline":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise InvalidArgument(f"unknown pipeline {value!r}; choose CONVENTIONAL or DOT") from None


@dataclass(frozen=True)
class Stage:
    kind: StageKind
    order: tuple[str, ...]
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or self.steps <= 0:
            raise InvalidArgument(f"stage steps must be positive, got {self.steps}")
        order = tuple(str(m).upper() for m in self.order)
        if not order or len(set(order)) != len(order):
            raise InvalidArgument(f"stage order must list distinct modalities, got {self.order}")
        object.__setattr__(self, "order", order)

    @property
    def label(self) -> str:
        return f"{self.kind.value}:{'&'.join(m[0] for m in self.order)}"


@dataclass(frozen=True)
class TrainSchedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        stages = tuple(self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise InvalidArgument("a schedule needs at least one stage")
        kinds = [s.kind is StageKind.SFT for s in stages]
        if kinds != sorted(kinds):
            raise InvalidArgument("all PT stages must precede all SFT stages")

    @property
    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)

    def __iter__(self):
        return iter(self.stages)


def stage_orders(modalities: tuple[str, ...], pipeline: Pipeline) -> list[tuple[str, ...]]:
    """Orders trained within one stage; the canonical order always comes last."""
    if pipeline is Pipeline.CONVENTIONAL:
        return [tuple(modalities)]
    perms = [tuple(modalities[k] for k in p) for p in enumerate_orders(len(modalities))]
    return [p for p in perms if p != tuple(modalities)] + [tuple(modalities)]


def build_schedule(pipeline: Pipeline | str, pt_steps: int, sft_steps: int,
                   modalities: tuple[str, ...] = CANONICAL_ORDER) -> TrainSchedule:
    """PT then SFT, each expanded over the pipeline's orders. Zero-step stages are left out."""
    pipeline = Pipeline.parse(pipeline)
    stages = []
    for kind, steps in ((StageKind.PT, pt_steps), (StageKind.SFT, sft_steps)):
        if steps < 0:
            raise InvalidArgument(f"{kind.value} steps must be >= 0, got {steps}")
        if steps:
            stages += [Stage(kind, order, steps) for order in stage_orders(modalities, pipeline)]
    return TrainSchedule(tuple(stages))


def conventional_schedule(pt_steps: int, sft_steps: int, modalities=CANONICAL_ORDER) -> TrainSchedule:
    return build_schedule(Pipeline.CONVENTIONAL, pt_steps, sft_steps, modalities)


def dot_schedule(pt_steps: int, sft_steps: int, modalities=CANONICAL_ORDER) -> TrainSchedule:
    return build_schedule(Pipeline.DOT, pt_steps, sft_steps, modalities)


def schedule_cost(n_modalities: int, steps_per_stage: int, pipeline: Pipeline | str) -> int:
    """Total optimizer steps for one PT and one SFT stage."""
    if isinstance(n_modalities, bool) or not 1 <= n_modalities <= MAX_ORDER_SEGMENTS:
        raise InvalidArgument(f"n_modalities must lie in [1, {MAX_ORDER_SEGMENTS}], got {n_modalities}")
    if steps_per_stage < 0:
        raise InvalidArgument(f"steps_per_stage must be >= 0, got {steps_per_stage}")
    per_stage = 1 if Pipeline.parse(pipeline) is Pipeline.CONVENTIONAL else math.factorial(n_modalities)
    return 2 * per_stage * steps_per_stage
