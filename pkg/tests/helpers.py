"""Shared numerical probes for the model, flow, and acceptance tests."""

import numpy as np

from mmattn.layout import ModalityTag, Segment, SegmentRole, SequenceLayout, TEXT
from mmattn.masks import MaskPolicy, Readout, build_composite, build_mask, build_readout_row
from mmattn.model import ModelConfig, ModelParams, decode_step, forward, hidden_states, prefill

from strategies import random_general_layout, random_pairwise_layout


def tiny_config(seed=0, precision=64, **kw):
    base = dict(d_model=16, n_heads=2, n_layers=2, d_ff=32, vocab_size=32, max_len=48, seed=seed,
                precision=precision)
    base.update(kw)
    return ModelConfig(**base)


def with_answer(layout: SequenceLayout, n: int) -> SequenceLayout:
    if n == 0:
        return layout
    return SequenceLayout(layout.segments + (Segment("ans", TEXT, SegmentRole.ANSWER, n),))


def decode_trial(rng: np.random.Generator, precision: int = 64) -> float:
    """Max-abs logit gap between prefill + decode and one composite-mask forward pass."""
    cfg = tiny_config(seed=int(rng.integers(1 << 30)), precision=precision,
                      n_layers=int(rng.integers(1, 4)), n_heads=int(rng.choice([1, 2, 4])))
    params = ModelParams.init(cfg)
    policy = MaskPolicy(rng.choice([p.value for p in MaskPolicy]))
    while True:
        gen = random_pairwise_layout if policy is MaskPolicy.MMA_PAIRWISE else random_general_layout
        pre = gen(rng, max_len=8)
        if pre.total_len <= 32:
            break
    steps = int(rng.integers(0, 9))
    readout = Readout.IMAGE_ONLY if rng.random() < 0.3 else Readout.NORMAL
    full_layout = with_answer(pre, steps)
    tokens = rng.integers(0, cfg.vocab_size, full_layout.total_len)
    m = pre.total_len

    logits, cache = prefill(params, tokens[:m], build_mask(pre, policy))
    rows = [logits.data]
    for t in range(steps):
        row, cache = decode_step(params, cache, int(tokens[m + t]), build_readout_row(pre, t, readout))
        rows.append(row[None, :])
    incremental = np.concatenate(rows)
    full = forward(params, tokens, build_composite(full_layout, policy, readout)).data
    assert cache.length == full_layout.total_len
    return float(np.max(np.abs(incremental - full)))


def query_perturbation_gap(seed: int, policy: MaskPolicy, k=6, q=3) -> float:
    """Max-abs change of IMAGE hidden states after layer 1 when one QUERY token changes."""
    rng = np.random.default_rng(seed)
    cfg = tiny_config(seed=seed, d_model=32, n_heads=4)
    params = ModelParams.init(cfg)
    layout = SequenceLayout((Segment("img", ModalityTag("IMAGE"), SegmentRole.IMAGE, k),
                             Segment("q", TEXT, SegmentRole.QUERY, q)))
    mask = build_mask(layout, policy)
    tokens = rng.integers(0, cfg.vocab_size, k + q)
    other = tokens.copy()
    j = k + int(rng.integers(q))
    other[j] = (other[j] + 1 + int(rng.integers(cfg.vocab_size - 1))) % cfg.vocab_size
    a = hidden_states(params, tokens, mask)[1][:k]
    b = hidden_states(params, other, mask)[1][:k]
    return float(np.max(np.abs(a - b)))


def future_influence(params: ModelParams, layout: SequenceLayout, mask, loss: np.ndarray, seed: int) -> np.ndarray:
    """effect[p, q]: max-abs change of the final hidden state at loss row p when token q > p changes."""
    rng = np.random.default_rng(seed)
    n, vocab = layout.total_len, params.config.vocab_size
    tokens = rng.integers(0, vocab, n)
    base = hidden_states(params, tokens, mask)[-1]
    effect = np.zeros((n, n))
    for q in range(n):
        other = tokens.copy()
        other[q] = (other[q] + 1 + int(rng.integers(vocab - 1))) % vocab
        out = hidden_states(params, other, mask)[-1]
        for p in np.flatnonzero(loss):
            if q > p:
                effect[p, q] = np.max(np.abs(out[p] - base[p]))
    return effect
