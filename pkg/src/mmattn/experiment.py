"""The compare experiment: every (row, task, seed) cell trained and evaluated on identical data."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import OUT_DIR_ENV, ExperimentConfig, RowSpec
from .flow import audit_layout, format_report
from .masks import Readout, build_composite, mask_csv, render_mask
from .tasks import TASKS, Vocab, caption_view
from .training import evaluate, train

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 10_000


@dataclass(frozen=True)
class Cell:
    row: RowSpec
    task: str
    seed: int

    @property
    def slug(self) -> str:
        return f"{row_slug(self.row.label)}__{self.task}__seed{self.seed}"


def row_slug(label: str) -> str:
    return label.lower().replace("+", "-").replace("_", "-")


def datasets(cfg: ExperimentConfig, task: str, seed: int):
    vocab = Vocab.for_size(cfg["model.vocab_size"])
    gen = TASKS[task]
    k, base = cfg["task.k_symbols"], cfg["task.data_seed"] + seed
    return gen(k, cfg["task.n_train"], base, vocab), gen(k, cfg["task.n_eval"], base + EVAL_SEED_OFFSET, vocab)


def run_cell(cfg: ExperimentConfig, cell: Cell) -> dict:
    train_set, eval_set = datasets(cfg, cell.task, cell.seed)
    params, metrics = train(cfg.model_config(cell.seed), cfg.schedule(cell.row.pipeline), cell.row.policy,
                            train_set, cfg.train_config(cell.seed))
    acc = evaluate(params, eval_set, cell.row.policy)
    first, last = metrics.window_means(0.05)
    return {"slug": cell.slug, "row": cell.row.label, "task": cell.task, "seed": cell.seed,
            "accuracy": acc, "loss_first5": first, "loss_last5": last,
            "steps": len(metrics.records), "stage_steps": metrics.stage_steps, "records": metrics.records}


def _run_cell_args(args):
    return run_cell(*args)


def output_dir(explicit: str | Path | None, default: str | Path) -> Path:
    """Explicit path, else the env override, else ``default``."""
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUT_DIR_ENV) or default)


def _write_masks_and_audits(cfg: ExperimentConfig, out: Path, figures: bool) -> None:
    k = cfg["task.k_symbols"]
    sample = TASKS["blind_readout"](k, 1, 0, Vocab.for_size(cfg["model.vocab_size"]))[0]
    pt_layout = caption_view(sample).layout
    for policy in dict.fromkeys(r.policy for r in cfg.rows):
        slug = row_slug(policy.name)
        mask = build_composite(sample.layout, policy, Readout.IMAGE_ONLY)
        (out / "masks" / f"{slug}.txt").write_text(render_mask(mask) + "\n")
        (out / "masks" / f"{slug}.csv").write_text(mask_csv(mask))
        depth = cfg["model.n_layers"]
        sections = []
        for name, layout, role in (("pt", pt_layout, "CAPTION"), ("sft", sample.layout, "ANSWER")):
            m, loss, report = audit_layout(layout, policy, role, depth)
            sections.append(f"[{name}]\n" + format_report(layout, policy, role, m, loss, report))
            if figures:
                from .plotting import plot_reach
                plot_reach(report.reach, out / "figures" / f"reach_{slug}_{name}.png",
                           f"{policy.name} {name.upper()} reach, depth {depth}", report.leaky_positions, layout)
        (out / "audits" / f"{slug}.txt").write_text("\n".join(sections))
        if figures:
            from .plotting import plot_mask
            plot_mask(mask, out / "figures" / f"mask_{slug}.png", f"{policy.name}, image-only readout", sample.layout)


def summarize(results: list[dict]) -> list[dict]:
    rows = []
    for key in dict.fromkeys((r["row"], r["task"]) for r in results):
        group = [r for r in results if (r["row"], r["task"]) == key]
        accs = np.array([r["accuracy"] for r in group])
        rows.append({
            "row": key[0], "task": key[1], "seeds": [r["seed"] for r in group],
            "steps": group[0]["steps"], "acc_mean": float(accs.mean()), "acc_min": float(accs.min()),
            "acc_max": float(accs.max()),
            "loss_first5": float(np.mean([r["loss_first5"] for r in group])),
            "loss_last5": float(np.mean([r["loss_last5"] for r in group])),
        })
    return rows


def format_table(summary: list[dict]) -> str:
    head = f"{'row':<20} {'task':<14} {'steps':>7} {'acc_mean':>9} {'acc_min':>8} {'acc_max':>8} {'loss_first5':>12} {'loss_last5':>11}"
    lines = [head, "-" * len(head)]
    for r in summary:
        lines.append(f"{r['row']:<20} {r['task']:<14} {r['steps']:>7d} {r['acc_mean']:>9.4f} {r['acc_min']:>8.4f} "
                     f"{r['acc_max']:>8.4f} {r['loss_first5']:>12.5f} {r['loss_last5']:>11.5f}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out: str | Path, jobs: int = 1, figures: bool = True) -> list[dict]:
    """Train/evaluate every cell, then write metrics, masks, audits, summary, and figures under ``out``."""
    out = Path(out)
    for sub in ("metrics", "masks", "audits"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cells = [Cell(row, task, seed) for row in cfg.rows for task in cfg.tasks for seed in cfg["train.seeds"]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, [(cfg, c) for c in cells]))
    else:
        results = []
        for c in cells:
            log.info("training %s", c.slug)
            results.append(run_cell(cfg, c))
            log.info("%s accuracy %.4f", c.slug, results[-1]["accuracy"])
    for r in results:
        with open(out / "metrics" / f"{r['slug']}.jsonl", "w") as fh:
            for rec in r["records"]:
                fh.write(json.dumps(rec) + "\n")
    summary = summarize(results)
    (out / "summary.txt").write_text(format_table(summary))
    cells_json = [{k: v for k, v in r.items() if k != "records"} for r in results]
    (out / "summary.json").write_text(json.dumps({"rows": summary, "cells": cells_json}, indent=2) + "\n")
    _write_masks_and_audits(cfg, out, figures)
    if figures:
        from .plotting import plot_accuracy, plot_loss_curves
        for task in cfg.tasks:
            curves = {f"{r['row']} s{r['seed']}": [x["loss"] for x in r["records"]]
                      for r in results if r["task"] == task}
            plot_loss_curves(curves, out / "figures" / f"loss_{task}.png")
        plot_accuracy(summary, out / "figures" / "accuracy.png", chance=1.0 / cfg["task.k_symbols"])
    return summary
