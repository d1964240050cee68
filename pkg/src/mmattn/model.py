"""Toy pre-LayerNorm decoder-only transformer with pluggable attention masks.

Prefill runs the input under whatever mask the caller supplies (causal or
mutual) and stores every layer's keys/values; decoding appends one token at a
time whose row attends to everything cached plus itself.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import InvalidArgument
from .layout import SequenceLayout
from .masks import AttentionMask, MaskPolicy, build_decode_row, build_mask
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MMATTN-CKPT\x00"
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 256
    vocab_size: int = 128
    max_len: int = 128
    seed: int = 0
    precision: int = 64

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise InvalidArgument(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 2:
            raise InvalidArgument(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.precision not in (32, 64):
            raise InvalidArgument(f"precision must be 32 or 64, got {self.precision}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_len, d))]
    for l in range(cfg.n_layers):
        shapes += [
            (f"l{l}.ln1.g", (d,)), (f"l{l}.ln1.b", (d,)),
            (f"l{l}.wq", (d, d)), (f"l{l}.wk", (d, d)), (f"l{l}.wv", (d, d)), (f"l{l}.wo", (d, d)),
            (f"l{l}.ln2.g", (d,)), (f"l{l}.ln2.b", (d,)),
            (f"l{l}.w1", (d, f)), (f"l{l}.b1", (f,)), (f"l{l}.w2", (f, d)), (f"l{l}.b2", (d,)),
        ]
    shapes += [("lnf.g", (d,)), ("lnf.b", (d,)), ("head", (d, cfg.vocab_size))]
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(repr=False)

    @classmethod
    def init(cls, config: ModelConfig, seed: int | None = None) -> "ModelParams":
        """Normal(0, 0.02) weights, unit layernorm gains, zero biases."""
        rng = np.random.default_rng(config.seed if seed is None else seed)
        tensors = {}
        for name, shape in _param_shapes(config):
            if name.endswith(".g"):
                data = np.ones(shape)
            elif name.endswith((".b", ".b1", ".b2")):
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, INIT_STD, size=shape)
            tensors[name] = Tensor(data.astype(config.dtype), requires_grad=True)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def named(self):
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                                         for k, v in self.tensors.items()})

    def grads(self) -> list[np.ndarray | None]:
        return [p.grad for p in self.tensors.values()]

    def zero_grad(self) -> None:
        T.zero_grads(self.tensors.values())

    def n_params(self) -> int:
        return sum(p.data.size for p in self.tensors.values())


@dataclass
class KVCache:
    """Per-layer keys/values, each ``[heads, length, head_dim]``; append-only."""

    keys: list[Tensor]
    values: list[Tensor]
    max_len: int

    @property
    def length(self) -> int:
        return self.keys[0].shape[-2] if self.keys else 0

    def append(self, layer: int, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
        self.keys[layer] = T.concat_rows(self.keys[layer], k)
        self.values[layer] = T.concat_rows(self.values[layer], v)
        return self.keys[layer], self.values[layer]


# ---------------------------------------------------------------------------
# forward passes


def _check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim not in (1, 2) or ids.shape[-1] < 1:
        raise InvalidArgument(f"tokens must be a nonempty [n] or [batch, n] array, got shape {ids.shape}")
    if ids.shape[-1] > cfg.max_len:
        raise InvalidArgument(f"sequence length {ids.shape[-1]} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InvalidArgument(f"token ids must lie in [0, {cfg.vocab_size})")
    return ids


def _mask_entries(mask, n: int) -> np.ndarray:
    entries = mask.entries if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    if entries.shape != (n, n):
        raise InvalidArgument(f"mask is {entries.shape[0]}x{entries.shape[-1]}, tokens have length {n}")
    return entries


def _block(params: ModelParams, l: int, x: Tensor, mask_rows: np.ndarray, cache: KVCache | None = None):
    """One transformer block. Returns (new residual stream, k, v) for the rows of ``x``.

    With a cache, the new keys/values are appended and attention runs over all
    cached rows.
    """
    cfg = params.config
    p = params.tensors
    h = T.layernorm(x, p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
    q = T.split_heads(T.matmul(h, p[f"l{l}.wq"]), cfg.n_heads)
    k = T.split_heads(T.matmul(h, p[f"l{l}.wk"]), cfg.n_heads)
    v = T.split_heads(T.matmul(h, p[f"l{l}.wv"]), cfg.n_heads)
    keys, vals = (k, v) if cache is None else cache.append(l, k, v)
    scores = T.matmul(q, T.transpose_last(keys))
    att = T.masked_softmax(scores, mask_rows, 1.0 / math.sqrt(cfg.head_dim))
    ctx = T.merge_heads(T.matmul(att, vals))
    x = T.add(x, T.matmul(ctx, p[f"l{l}.wo"]))
    h = T.layernorm(x, p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
    ff = T.matmul(T.gelu(T.add(T.matmul(h, p[f"l{l}.w1"]), p[f"l{l}.b1"])), p[f"l{l}.w2"])
    x = T.add(x, T.add(ff, p[f"l{l}.b2"]))
    return x, k, v


def _embed(params: ModelParams, ids: np.ndarray, start: int) -> Tensor:
    n = ids.shape[-1]
    tok = T.embedding(params["tok_emb"], ids)
    pos = T.embedding(params["pos_emb"], np.broadcast_to(np.arange(start, start + n), ids.shape))
    return T.add(tok, pos)


def _head(params: ModelParams, x: Tensor) -> Tensor:
    p = params.tensors
    return T.matmul(T.layernorm(x, p["lnf.g"], p["lnf.b"]), p["head"])


def _run(params: ModelParams, tokens, mask, collect_kv: bool = False):
    ids = _check_tokens(params.config, tokens)
    entries = _mask_entries(mask, ids.shape[-1])
    x = _embed(params, ids, 0)
    hidden = [x]
    ks, vs = [], []
    for l in range(params.config.n_layers):
        x, k, v = _block(params, l, x, entries)
        hidden.append(x)
        if collect_kv:
            ks.append(k)
            vs.append(v)
    return _head(params, x), hidden, ks, vs


def forward(params: ModelParams, tokens, mask) -> Tensor:
    """Logits ``[n, vocab]`` (or ``[batch, n, vocab]``) under ``mask``."""
    return _run(params, tokens, mask)[0]


def hidden_states(params: ModelParams, tokens, mask) -> list[np.ndarray]:
    """Residual stream after the embedding (index 0) and after each layer."""
    with T.no_grad():
        return [h.data for h in _run(params, tokens, mask)[1]]


def prefill(params: ModelParams, tokens, mask) -> tuple[Tensor, KVCache]:
    ids = np.asarray(tokens)
    if ids.ndim != 1:
        raise InvalidArgument("prefill takes a single unbatched sequence")
    with T.no_grad():
        logits, _, ks, vs = _run(params, ids, mask, collect_kv=True)
    return logits, KVCache(ks, vs, params.config.max_len)


def decode_step(params: ModelParams, cache: KVCache, token: int,
                row_mask: np.ndarray | None = None) -> tuple[np.ndarray, KVCache]:
    """Run one new token against the cache; returns its logits row.

    ``row_mask`` defaults to the all-zero decode row (causal over everything).
    """
    pos = cache.length
    if pos + 1 > cache.max_len:
        raise InvalidArgument(f"cache full: length {pos} has reached max_len {cache.max_len}")
    row = build_decode_row(pos, 0) if row_mask is None else np.asarray(row_mask, dtype=np.float64)
    if row.shape != (pos + 1,):
        raise InvalidArgument(f"decode row must have length {pos + 1}, got {row.shape}")
    if row[-1] != 0.0:
        raise InvalidArgument("a decoded token must attend to itself")
    ids = _check_tokens(params.config, [token])
    with T.no_grad():
        x = _embed(params, ids, pos)
        for l in range(params.config.n_layers):
            x, _, _ = _block(params, l, x, row[None, :], cache)
        logits = _head(params, x)
    return logits.data[-1], cache


def greedy(row: np.ndarray) -> int:
    """Argmax with ties going to the lowest index."""
    return int(np.argmax(row))


def generate(params: ModelParams, layout: SequenceLayout, tokens, policy: MaskPolicy | str,
             max_new: int, stop_token: int | None = None) -> list[int]:
    """Greedy decoding: prefill under ``policy``, then causal decode rows."""
    if max_new < 1:
        raise InvalidArgument(f"max_new must be >= 1, got {max_new}")
    if len(tokens) != layout.total_len:
        raise InvalidArgument(f"{len(tokens)} tokens for a layout of length {layout.total_len}")
    logits, cache = prefill(params, tokens, build_mask(layout, policy))
    out = [greedy(logits.data[-1])]
    while len(out) < max_new and out[-1] != stop_token:
        row, cache = decode_step(params, cache, out[-1])
        out.append(greedy(row))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Header: magic, u32 length, JSON (config + tensor names/shapes). Then f64 LE blocks."""
    header = {
        "config": asdict(params.config),
        "tensors": [[name, list(t.shape)] for name, t in params.named()],
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in params.named():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise InvalidArgument(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen])
    off += hlen
    config = ModelConfig(**header["config"])
    expected = [[n, list(s)] for n, s in _param_shapes(config)]
    if header["tensors"] != expected:
        raise InvalidArgument(f"{path}: tensor table does not match its config")
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        tensors[name] = Tensor(data.astype(config.dtype), requires_grad=True)
    if off != len(raw):
        raise InvalidArgument(f"{path}: {len(raw) - off} trailing bytes")
    return ModelParams(config, tensors)
