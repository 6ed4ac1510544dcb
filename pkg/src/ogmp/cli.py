"""Command-line entry point: ``ogmp {train,eval,ablate,plot}``.

Exit status: 0 success, 2 usage or input error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .metrics import (
    TraceError,
    aggregate,
    emit_traces,
    plot_transition_matrix,
    read_transition_csv,
    write_report,
    write_transition_csv,
)
from .policy_opt.train import (
    BASELINE_MODES,
    CheckpointError,
    baseline_config,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    split_budget,
    train,
    train_multi_policy_baseline,
    write_curves,
)
from .world import write_trajectory_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
ARMS = (
    ("single_pref", "single-policy"),
    ("single_nopref", "single-policy w/o pref"),
    ("multi_policy", "multi-policy (baseline)"),
)

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ogmp", description="Oracle-guided multi-mode policy experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, repeatable")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: output_dir from the config)")

    sp = sub.add_parser("train", help="train a single multi-mode policy")
    common(sp)
    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="default: <out>/checkpoints/final.npz")
    sp.add_argument("--episodes", type=int)
    sp = sub.add_parser("ablate", help="preference / no-preference / multi-policy at equal budget")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp = sub.add_parser("plot", help="trace plots or a transition-matrix heatmap")
    sp.add_argument("--run", help="run directory containing traces/")
    sp.add_argument("--vars", default="", help="comma-separated trajectory columns")
    sp.add_argument("--transition-matrix", nargs="?", const="", metavar="CSV",
                    help="plot a transition CSV (default: <run>/transitions.csv)")
    sp.add_argument("--out", help="output directory (default: <run>/plots)")
    return p


# ------------------------------------------------------------------ helpers
def _load_config(args) -> cfgmod.RunConfig:
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output_dir={args.out}")
    return cfgmod.load(args.config, overrides, seed=args.seed)


def _write_echo(out: Path, cfg: cfgmod.RunConfig):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfgmod.dumps(cfg))


def _eval_and_report(policy, cfg: cfgmod.RunConfig, out: Path, name: str, episodes: int | None = None):
    n = episodes or cfg.eval.episodes
    records, trajs = evaluate(policy, cfg.env, n, cfg.eval.seed, record_trajectories=cfg.eval.record_trajectories)
    report = aggregate(records, name, _modes(cfg))
    write_report(out, [report])
    write_transition_csv(out / "transitions.csv", report.transitions)
    write_transition_csv(out / "transitions_row_conditional.csv", report.transitions, row_conditional=True)
    if cfg.eval.record_trajectories:
        for i, rows in enumerate(trajs[: cfg.eval.trajectory_sample]):
            write_trajectory_csv(out / "traces" / f"episode_{i:03d}.csv", rows)
    return report


def _modes(cfg) -> tuple[str, ...]:
    return ("reach", "avoid") if cfg.env.task.task == "reach_avoid" else ("reach", "manipulate", "detach")


# ------------------------------------------------------------------ commands
def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    _write_echo(out, cfg)
    res = train(cfg.train)
    save_checkpoint(out / "checkpoints" / "final.npz", res.params, cfg.train, cfg.train.total_iterations,
                    res.optimizer, config_echo=cfgmod.to_dict(cfg), rng_state=res.rng_state)
    write_curves(out / "curves.csv", res.curve)
    print(f"trained {cfg.train.total_iterations} iterations ({res.total_env_steps} env steps) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args) if args.config or args.set else None
    out_default = Path(args.out) if args.out else (Path(cfg.output_dir) if cfg else Path("runs/default"))
    ckpt = Path(args.checkpoint) if args.checkpoint else out_default / "checkpoints" / "final.npz"
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    params, meta = load_checkpoint(ckpt)
    stored = cfgmod.from_dict(meta["config"])
    if cfg is None:
        cfg = stored
    if cfg.env.task.task != stored.env.task.task:
        raise CheckpointError(f"{ckpt}: trained on task {stored.env.task.task!r}, config asks for {cfg.env.task.task!r}")
    if params.obs_dim != cfg.env.obs_dim:
        raise CheckpointError(f"{ckpt}: network expects {params.obs_dim} observations, config yields {cfg.env.obs_dim}")
    if args.seed is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, seed=args.seed))
    out = out_default
    report = _eval_and_report(params, cfg, out, "single-policy", args.episodes)
    print(f"success {report.success_pct:.1f}%  contacts {report.avg_object_contacts:.2f}  "
          f"out_of_arena {report.fail_pct:.1f}%  -> {out}")
    return EXIT_OK


def run_arm(arm: str, cfg: cfgmod.RunConfig, out: Path):
    """Train one ablation arm; returns (policy, total env steps)."""
    out.mkdir(parents=True, exist_ok=True)
    if arm == "multi_policy":
        results = train_multi_policy_baseline(cfg.train)
        for mode, iters in zip(BASELINE_MODES, split_budget(cfg.train.total_iterations)):
            res = results[mode]
            save_checkpoint(out / "checkpoints" / f"{mode}_final.npz", res.params,
                            baseline_config(cfg.train, mode, iters), iters, res.optimizer, rng_state=res.rng_state)
            write_curves(out / f"curves_{mode}.csv", res.curve)
        return {m: results[m].params for m in BASELINE_MODES}, sum(r.total_env_steps for r in results.values())
    train_cfg = cfg.train
    if arm == "single_nopref":
        train_cfg = replace(train_cfg, env=replace(train_cfg.env, preference_enabled=False))
    res = train(train_cfg)
    save_checkpoint(out / "checkpoints" / "final.npz", res.params, train_cfg, train_cfg.total_iterations,
                    res.optimizer, rng_state=res.rng_state)
    write_curves(out / "curves.csv", res.curve)
    return res.params, res.total_env_steps


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    _write_echo(out, cfg)
    reports, budget, errors = [], {}, {}
    for arm, label in ARMS:
        try:
            policy, steps = run_arm(arm, cfg, out / arm)
            budget[arm] = steps
            rep = _eval_and_report(policy, cfg, out / arm, label, args.episodes)
            reports.append(rep)
            write_transition_csv(out / f"transitions_{arm}.csv", rep.transitions)
        except (FloatingPointError, ValueError) as exc:
            errors[arm] = f"{exc.__class__.__name__}: {exc}"
            print(f"arm {arm} failed: {errors[arm]}", file=sys.stderr)
    if reports:
        write_report(out, reports)
    (out / "ablation.json").write_text(json.dumps({"env_steps": budget, "errors": errors}, indent=2, sort_keys=True) + "\n")
    if reports:
        print((out / "report.txt").read_text(), end="")
    return EXIT_RUNTIME if errors else EXIT_OK


def cmd_plot(args) -> int:
    if args.transition_matrix is not None:
        src = Path(args.transition_matrix) if args.transition_matrix else None
        if src is None:
            if not args.run:
                raise UsageError("plot --transition-matrix needs a CSV path or --run")
            src = Path(args.run) / "transitions.csv"
        if not src.is_file():
            raise UsageError(f"transition CSV not found: {src}")
        out = Path(args.out) if args.out else src.parent / "plots"
        path = plot_transition_matrix(read_transition_csv(src), out / f"{src.stem}.svg", title=src.stem)
        print(path)
        return EXIT_OK
    if not args.run:
        raise UsageError("plot needs --run (or --transition-matrix)")
    traces = sorted((Path(args.run) / "traces").glob("*.csv"))
    if not traces:
        raise UsageError(f"no trajectory CSVs under {Path(args.run) / 'traces'}")
    out = Path(args.out) if args.out else Path(args.run) / "plots"
    written = emit_traces(traces, [v.strip() for v in args.vars.split(",")], out)
    print(f"wrote {len(written)} files -> {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FileNotFoundError, cfgmod.ConfigError, CheckpointError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, ValueError, OSError) as exc:
        print(f"runtime fault: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
