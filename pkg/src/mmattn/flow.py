"""Structural information flow through stacked attention layers.

Position i receives from j in one layer iff the mask entry (i, j) is open.
After L layers, i can carry information that originated at j iff there is an
attention path of at most L hops. A loss position that can reach a later
position can see (part of) its own target: that is leakage.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .layout import SegmentRole, SequenceLayout
from .masks import AttentionMask, MaskPolicy, Readout, build_composite


@dataclass(frozen=True, eq=False)
class FlowGraph:
    receives: np.ndarray  # bool [n, n]: receives[i, j] <=> i attends to j

    @property
    def n(self) -> int:
        return self.receives.shape[0]


@dataclass(frozen=True, eq=False)
class ReachabilityReport:
    depth: int
    reach: np.ndarray
    leaky_positions: list[tuple[int, int]]

    @property
    def leaks(self) -> bool:
        return bool(self.leaky_positions)


def one_step_flow(mask: AttentionMask) -> FlowGraph:
    return FlowGraph(mask.entries == 0.0)


def reach(graph: FlowGraph, depth: int) -> np.ndarray:
    """Boolean matrix power: ``(A | I)`` composed ``depth`` times, starting at identity."""
    if depth < 0:
        raise InvalidArgument(f"depth must be >= 0, got {depth}")
    step = graph.receives | np.eye(graph.n, dtype=bool)
    out = np.eye(graph.n, dtype=bool)
    a = step.astype(np.int64)
    for _ in range(depth):
        nxt = (out.astype(np.int64) @ a) > 0
        if np.array_equal(nxt, out):
            break
        out = nxt
    return out


def reach_bfs(graph: FlowGraph, depth: int) -> np.ndarray:
    """Same relation as :func:`reach`, via a depth-limited BFS from each position."""
    if depth < 0:
        raise InvalidArgument(f"depth must be >= 0, got {depth}")
    n = graph.n
    nbrs = [np.flatnonzero(graph.receives[i]) for i in range(n)]
    out = np.zeros((n, n), dtype=bool)
    for src in range(n):
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if dist[u] == depth:
                continue
            for v in nbrs[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        out[src, list(dist)] = True
    return out


def _check(layout: SequenceLayout, mask: AttentionMask, loss_mask) -> np.ndarray:
    loss = np.asarray(loss_mask, dtype=bool)
    if loss.shape != (layout.total_len,):
        raise InvalidArgument(f"loss_mask has shape {loss.shape}, layout length is {layout.total_len}")
    if mask.n != layout.total_len:
        raise InvalidArgument(f"mask length {mask.n} != layout length {layout.total_len}")
    return loss


def audit_training(layout: SequenceLayout, mask: AttentionMask, loss_mask, depth: int) -> ReachabilityReport:
    """Every (p, q) with a loss at p, q > p, and q reachable from p in ``depth`` layers."""
    loss = _check(layout, mask, loss_mask)
    if depth < 1:
        raise InvalidArgument(f"audit depth must be >= 1, got {depth}")
    r = reach(one_step_flow(mask), depth)
    future = np.triu(r, k=1) & loss[:, None]
    pairs = [(int(p), int(q)) for p, q in zip(*np.nonzero(future))]
    return ReachabilityReport(depth, r, pairs)


def min_leak_depth(layout: SequenceLayout, mask: AttentionMask, loss_mask) -> int | None:
    """Smallest depth with any leak, searching up to the sequence length."""
    loss = _check(layout, mask, loss_mask)
    g = one_step_flow(mask)
    for depth in range(1, layout.total_len + 1):
        if (np.triu(reach(g, depth), k=1) & loss[:, None]).any():
            return depth
    return None


def audit_layout(layout: SequenceLayout, policy: MaskPolicy | str, loss_role: SegmentRole | str, depth: int,
                 readout: Readout | str = Readout.NORMAL) -> tuple[AttentionMask, np.ndarray, ReachabilityReport]:
    """Audit with loss on every position of ``loss_role``; ANSWER rows decode causally."""
    role = SegmentRole[loss_role.upper()] if isinstance(loss_role, str) else loss_role
    loss = layout.positions(role)
    if not loss.any():
        raise InvalidArgument(f"layout has no {role.name} positions to put a loss on")
    mask = build_composite(layout, policy, readout)
    return mask, loss, audit_training(layout, mask, loss, depth)


def format_report(layout: SequenceLayout, policy: MaskPolicy | str, loss_role: str, mask: AttentionMask,
                  loss: np.ndarray, report: ReachabilityReport) -> str:
    """``key = value`` lines, stable order."""
    depth_min = min_leak_depth(layout, mask, loss)
    pairs = " ".join(f"{p}->{q}" for p, q in report.leaky_positions) or "-"
    lines = [
        f"layout = {layout}",
        f"policy = {MaskPolicy.parse(policy).name}",
        f"loss_role = {loss_role.upper() if isinstance(loss_role, str) else loss_role.name}",
        f"loss_positions = {' '.join(str(int(i)) for i in np.flatnonzero(loss))}",
        f"depth = {report.depth}",
        f"leaky_count = {len(report.leaky_positions)}",
        f"leaky_positions = {pairs}",
        f"leaky_loss_rows = {' '.join(str(p) for p in sorted({p for p, _ in report.leaky_positions})) or '-'}",
        f"min_leak_depth = {'none' if depth_min is None else depth_min}",
        f"leak_free = {str(not report.leaks).lower()}",
    ]
    return "\n".join(lines) + "\n"
