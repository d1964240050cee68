"""Command line: mask, analyze, schedule, train, eval, compare.

Exit codes: 0 ok, 1 usage, 2 validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import OUT_DIR_ENV, documented_defaults, load_config
from .errors import InvalidArgument, NumericalFailure
from .experiment import datasets, output_dir, row_slug, run_experiment
from .flow import audit_layout, format_report
from .layout import load_layout
from .masks import MaskPolicy, Readout, build_composite, mask_csv, render_mask
from .model import load_checkpoint, save_checkpoint
from .schedule import Pipeline, build_schedule, schedule_cost

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("mmattn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _policy(s: str) -> MaskPolicy:
    try:
        return MaskPolicy.parse(s)
    except InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_mask(args) -> int:
    layout = load_layout(args.layout)
    mask = build_composite(layout, args.policy, args.readout)
    grid = render_mask(mask)
    print(grid)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = row_slug(args.policy.name)
        (out / f"mask_{stem}.txt").write_text(grid + "\n")
        (out / f"mask_{stem}.csv").write_text(mask_csv(mask))
        if not args.no_figures:
            from .plotting import plot_mask
            plot_mask(mask, out / f"mask_{stem}.png", args.policy.name, layout)
    return EXIT_OK


def cmd_analyze(args) -> int:
    layout = load_layout(args.layout)
    mask, loss, report = audit_layout(layout, args.policy, args.loss_role, args.depth)
    text = format_report(layout, args.policy, args.loss_role, mask, loss, report)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"audit_{row_slug(args.policy.name)}_{args.loss_role.lower()}_d{args.depth}"
        (out / f"{stem}.txt").write_text(text)
        if not args.no_figures:
            from .plotting import plot_reach
            plot_reach(report.reach, out / f"{stem}.png", f"reach, depth {args.depth}", report.leaky_positions, layout)
    return EXIT_OK


def cmd_schedule(args) -> int:
    modalities = tuple(m.upper() for m in args.modalities.split(","))
    sched = build_schedule(args.pipeline, args.steps, args.steps, modalities)
    for k, stage in enumerate(sched):
        print(f"{k}\t{stage.kind.value}\t{'>'.join(stage.order)}\t{stage.steps}")
    print(f"total_steps\t{schedule_cost(len(modalities), args.steps, args.pipeline)}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import evaluate, train

    cfg = load_config(args.config)
    seed = cfg["train.seeds"][0]
    out = output_dir(args.out, Path("runs") / Path(args.config).stem)
    out.mkdir(parents=True, exist_ok=True)
    policy = MaskPolicy.parse(cfg["schedule.policy"])
    summary = {}
    for task in cfg.tasks:
        train_set, eval_set = datasets(cfg, task, seed)
        params, metrics = train(cfg.model_config(seed), cfg.schedule(), policy, train_set, cfg.train_config(seed))
        save_checkpoint(params, out / f"{task}.ckpt")
        with open(out / f"metrics_{task}.jsonl", "w") as fh:
            for rec in metrics.records:
                fh.write(json.dumps(rec) + "\n")
        summary[task] = evaluate(params, eval_set, policy)
        print(f"{task}\taccuracy\t{summary[task]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training import evaluate

    cfg = load_config(args.config)
    params = load_checkpoint(args.checkpoint)
    seed = cfg["train.seeds"][0]
    task = args.task or cfg.tasks[0]
    _, eval_set = datasets(cfg, task, seed)
    acc = evaluate(params, eval_set, args.policy or cfg["schedule.policy"], args.readout)
    print(f"{task}\taccuracy\t{acc:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(args.out, Path("runs") / Path(args.config).stem)
    run_experiment(cfg, out, jobs=args.jobs, figures=not args.no_figures)
    sys.stdout.write((out / "summary.txt").read_text())
    return EXIT_OK


def cmd_defaults(args) -> int:
    sys.stdout.write(documented_defaults())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmattn", description="Mutual-attention masks, leakage audits, and toy training runs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mask", help="render a layout's mask and dump it as CSV")
    m.add_argument("layout", help="layout file: '<id> <modality> <role> <length>' per line")
    m.add_argument("--policy", type=_policy, default=MaskPolicy.MMA_PAIRWISE)
    m.add_argument("--readout", type=Readout.parse, default=Readout.NORMAL, help="answer rows: NORMAL or IMAGE_ONLY")
    m.add_argument("--out", help="directory for the grid, CSV, and figure")
    m.add_argument("--no-figures", action="store_true")
    m.set_defaults(func=cmd_mask)

    a = sub.add_parser("analyze", help="leakage audit of a training layout")
    a.add_argument("layout")
    a.add_argument("--policy", type=_policy, default=MaskPolicy.MMA_PAIRWISE)
    a.add_argument("--loss-role", choices=["CAPTION", "QUERY", "ANSWER"], type=str.upper, default="CAPTION")
    a.add_argument("--depth", type=int, default=2, help="attention layers to propagate through")
    a.add_argument("--out")
    a.add_argument("--no-figures", action="store_true")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("schedule", help="print a training pipeline and its step cost")
    s.add_argument("--pipeline", type=Pipeline.parse, default=Pipeline.DOT)
    s.add_argument("--modalities", default="IMAGE,TEXT", help="canonical order, comma separated")
    s.add_argument("--steps", type=int, default=5000, help="steps per stage")
    s.set_defaults(func=cmd_schedule)

    t = sub.add_parser("train", help="train one model per task and save checkpoints")
    t.add_argument("config")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the config's held-out set")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--task", choices=["blind_readout", "plain_recall"])
    e.add_argument("--policy", type=_policy)
    e.add_argument("--readout", type=Readout.parse, help="override the task's own readout")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train/evaluate every (row, task, seed) cell and write reports")
    c.add_argument("config")
    c.add_argument("--out", help=f"output directory (else ${OUT_DIR_ENV}, else runs/<config>)")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("defaults", help="print every config key with its default")
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
