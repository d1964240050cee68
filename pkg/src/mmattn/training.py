"""Training and evaluation loops over synthetic task samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InvalidArgument, NumericalFailure
from .masks import MaskPolicy, Readout, build_composite, build_mask, build_readout_row
from .model import ModelConfig, ModelParams, decode_step, forward, greedy, prefill
from .schedule import Stage, StageKind, TrainSchedule
from .tasks import TaskSample, Vocab, caption_view, reorder_sample


@dataclass(frozen=True)
class TrainConfig:
    optimizer: T.OptimizerConfig = T.OptimizerConfig()
    batch_size: int = 32
    seed: int = 0
    mma_in_pt: bool = False  # PT stages run causal unless set

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class RunMetrics:
    seed: int
    records: list[dict] = field(default_factory=list)  # one per step: step, stage, loss, lr
    stage_steps: dict[str, int] = field(default_factory=dict)
    accuracy: dict[str, float] = field(default_factory=dict)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])

    def window_means(self, frac: float = 0.05) -> tuple[float, float]:
        """Mean loss over the first and last ``frac`` of steps."""
        losses = self.losses
        w = max(1, int(round(len(losses) * frac)))
        return float(losses[:w].mean()), float(losses[-w:].mean())


def stage_policy(stage: Stage, policy: MaskPolicy, cfg: TrainConfig) -> MaskPolicy:
    if stage.kind is StageKind.PT and not cfg.mma_in_pt:
        return MaskPolicy.CAUSAL
    return policy


def stage_view(dataset: list[TaskSample], stage: Stage, vocab: Vocab) -> list[TaskSample]:
    samples = [caption_view(s, vocab) for s in dataset] if stage.kind is StageKind.PT else dataset
    return [reorder_sample(s, stage.order) for s in samples]


def _stack(samples: list[TaskSample]):
    layout = samples[0].layout
    if any(s.layout != layout for s in samples):
        raise InvalidArgument("every sample in a training stage must share one layout")
    return (layout, np.stack([s.tokens for s in samples]), np.stack([s.labels for s in samples]),
            np.stack([s.loss_mask for s in samples]), samples[0].readout)


def train(config: ModelConfig, schedule: TrainSchedule, policy: MaskPolicy | str, dataset: list[TaskSample],
          train_cfg: TrainConfig = TrainConfig(), params: ModelParams | None = None) -> tuple[ModelParams, RunMetrics]:
    """Run every stage of ``schedule`` in order on views of ``dataset``."""
    policy = MaskPolicy.parse(policy)
    if not dataset:
        raise InvalidArgument("dataset is empty")
    vocab = Vocab.for_size(config.vocab_size)
    params = ModelParams.init(config) if params is None else params
    rng = np.random.default_rng(train_cfg.seed)
    opt = train_cfg.optimizer
    state = T.OptimizerState()
    metrics = RunMetrics(seed=train_cfg.seed)
    plist = list(params)
    step = 0
    for stage in schedule:
        layout, tokens, labels, loss_mask, readout = _stack(stage_view(dataset, stage, vocab))
        mask = build_composite(layout, stage_policy(stage, policy, train_cfg), readout)
        for _ in range(stage.steps):
            idx = rng.integers(len(tokens), size=train_cfg.batch_size)
            params.zero_grad()
            try:
                # overflow surfaces as a NumericalFailure from the non-finite check
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = T.cross_entropy(forward(params, tokens[idx], mask), labels[idx], loss_mask[idx])
                    loss.backward()
                    T.optimizer_step(plist, params.grads(), state, opt)
            except NumericalFailure as exc:
                raise NumericalFailure("training diverged", step=step) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalFailure("training diverged", step=step)
            metrics.records.append({"step": step, "stage": stage.label, "loss": value, "lr": opt.lr})
            step += 1
        metrics.stage_steps[stage.label] = metrics.stage_steps.get(stage.label, 0) + stage.steps
    return params, metrics


def predict(params: ModelParams, sample: TaskSample, policy: MaskPolicy | str,
            readout: Readout | str | None = None, constrained: bool = True) -> tuple[int, ...]:
    """Greedy answer: prefill the prompt under ``policy``, then decode the answer rows.

    The first answer row is fed the sample's own marker token. With
    ``constrained`` the argmax is taken over the sample's candidate answers.
    """
    readout = sample.readout if readout is None else Readout.parse(readout)
    pre = sample.prefill_layout
    _, cache = prefill(params, sample.prefill_tokens, build_mask(pre, policy))
    token = int(sample.tokens[pre.total_len])
    cands = np.array(sample.candidates) if constrained and sample.candidates else None
    out = []
    for t in range(len(sample.target)):
        row, cache = decode_step(params, cache, token, build_readout_row(pre, t, readout))
        token = int(cands[greedy(row[cands])]) if cands is not None else greedy(row)
        out.append(token)
    return tuple(out)


def evaluate(params: ModelParams, dataset: list[TaskSample], policy: MaskPolicy | str,
             readout: Readout | str | None = None, constrained: bool = True) -> float:
    """Exact-match accuracy of greedy answers."""
    if not dataset:
        raise InvalidArgument("dataset is empty")
    hits = sum(predict(params, s, policy, readout, constrained) == s.target for s in dataset)
    return hits / len(dataset)
