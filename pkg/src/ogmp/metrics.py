"""Transition matrices, episode aggregates, report files and trace plots."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MODE_ORDER = ("reach", "manipulate", "detach", "avoid")
MODE_COLORS = {"reach": "#cfe3f7", "manipulate": "#f9dcc4", "detach": "#d5ecd4", "avoid": "#f3d1dc"}
FAILURE_REASONS = ("out_of_arena", "diverged", "collision", "timeout", "reference_bound", "mode_exit")
REPORT_COLUMNS = ("policy", "success_pct", "avg_contacts", "fail_pct")


@dataclass
class TransitionMatrix:
    modes: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        """Counts over the total number of transitions (self-pairs included)."""
        total = self.counts.sum()
        return self.counts / total if total else np.zeros(self.counts.shape)

    def row_conditional(self) -> np.ndarray:
        """Diagnostic view: P(next | current) per row."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def p(self, src: str, dst: str) -> float:
        return float(self.probabilities[self.modes.index(src), self.modes.index(dst)])

    def self_mass(self) -> float:
        return float(np.trace(self.probabilities))

    def __add__(self, other: "TransitionMatrix") -> "TransitionMatrix":
        if self.modes != other.modes:
            raise ValueError("cannot add matrices over different mode sets")
        return TransitionMatrix(self.modes, self.counts + other.counts)


def _mode_order(traces) -> tuple[str, ...]:
    seen = {m for t in traces for m in t}
    known = [m for m in MODE_ORDER if m in seen]
    return tuple(known + sorted(seen - set(known)))


def transition_matrix(traces: Iterable[Sequence[str]], modes: Sequence[str] | None = None) -> TransitionMatrix:
    """Count every consecutive pair (including self-pairs) across all traces."""
    traces = [list(t) for t in traces]
    if not traces or not any(traces):
        raise ValueError("transition_matrix needs at least one nonempty trace")
    modes = tuple(modes) if modes is not None else _mode_order(traces)
    idx = {m: i for i, m in enumerate(modes)}
    counts = np.zeros((len(modes), len(modes)), dtype=np.int64)
    for t in traces:
        try:
            k = [idx[m] for m in t]
        except KeyError as exc:
            raise ValueError(f"trace contains mode {exc} outside {modes}") from exc
        np.add.at(counts, (k[:-1], k[1:]), 1)
    if counts.sum() == 0:
        raise ValueError("traces contain no transitions (all have length 1)")
    return TransitionMatrix(modes, counts)


@dataclass
class RunReport:
    policy: str
    n_episodes: int
    success_pct: float
    avg_object_contacts: float
    failure_pct: dict[str, float]
    mean_return: float
    transitions: TransitionMatrix
    episodes: list[dict] = field(default_factory=list)

    @property
    def fail_pct(self) -> float:
        """Planar analogue of a fall rate: share of episodes that left the arena."""
        return self.failure_pct["out_of_arena"]

    def as_dict(self) -> dict:
        return dict(
            policy=self.policy,
            n_episodes=self.n_episodes,
            success_pct=self.success_pct,
            avg_object_contacts=self.avg_object_contacts,
            fail_pct_out_of_arena=self.fail_pct,
            failure_pct=self.failure_pct,
            mean_return=self.mean_return,
            transition_modes=list(self.transitions.modes),
            transition_counts=self.transitions.counts.tolist(),
            transition_probabilities=[[round(float(x), 12) for x in r] for r in self.transitions.probabilities],
            episodes=self.episodes,
        )


def aggregate(records, policy: str = "policy", modes: Sequence[str] | None = None) -> RunReport:
    records = list(records)
    if not records:
        raise ValueError("aggregate needs at least one episode record")
    n = len(records)
    outcomes = Counter(r.outcome for r in records)
    reasons = list(FAILURE_REASONS) + sorted(set(outcomes) - set(FAILURE_REASONS) - {"success"})
    episodes = [dict(episode=i, outcome=r.outcome, steps=r.steps, contacts=r.ball_contacts,
                     episode_return=round(r.episode_return, 9), pref_violations=r.pref_violations)
                for i, r in enumerate(records)]
    return RunReport(
        policy=policy,
        n_episodes=n,
        success_pct=100.0 * outcomes["success"] / n,
        avg_object_contacts=float(np.mean([r.ball_contacts for r in records])),
        failure_pct={k: 100.0 * outcomes[k] / n for k in reasons},
        mean_return=float(np.mean([r.episode_return for r in records])),
        transitions=transition_matrix([r.mode_trace for r in records], modes),
        episodes=episodes,
    )


# ------------------------------------------------------------------ writers
def format_table(reports: Sequence[RunReport]) -> str:
    rows = [REPORT_COLUMNS] + [(r.policy, f"{r.success_pct:.1f}", f"{r.avg_object_contacts:.2f}", f"{r.fail_pct:.1f}")
                               for r in reports]
    widths = [max(len(row[c]) for row in rows) for c in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def write_report(out_dir, reports: Sequence[RunReport], stem: str = "report") -> list[Path]:
    """``report.txt`` (fixed-column table) and ``report.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt = out / f"{stem}.txt"
    txt.write_text(format_table(reports))
    js = out / f"{stem}.json"
    js.write_text(json.dumps([r.as_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    return [txt, js]


def write_transition_csv(path, tm: TransitionMatrix, row_conditional: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    probs = tm.row_conditional() if row_conditional else tm.probabilities
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from\\to", *tm.modes])
        for m, row in zip(tm.modes, probs):
            w.writerow([m, *(f"{x:.6f}" for x in row)])
    return path


def read_transition_csv(path) -> TransitionMatrix:
    """Probabilities as written (counts scaled to 1e6 so ratios survive)."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    modes = tuple(rows[0][1:])
    probs = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return TransitionMatrix(modes, np.rint(probs * 1e6).astype(np.int64))


# ------------------------------------------------------------------ traces
class TraceError(ValueError):
    pass


def read_trace_csv(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise TraceError(f"{path}:1: empty file")
        return list(reader.fieldnames), list(reader)


def mode_bands(times: Sequence[float], modes: Sequence[str], t0: float = 0.0) -> list[tuple[float, float, str]]:
    """Partition ``[t0, times[-1]]`` into maximal intervals of constant mode.

    Sample ``k`` at ``times[k]`` reports the mode active over
    ``(times[k-1], times[k]]``.
    """
    if len(times) == 0:
        return []
    bands = []
    start, cur = t0, modes[0]
    for k in range(1, len(times)):
        if modes[k] != cur:
            bands.append((start, float(times[k - 1]), cur))
            start, cur = float(times[k - 1]), modes[k]
    bands.append((start, float(times[-1]), cur))
    return bands


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "ogmp"
    return plt


def emit_traces(csv_paths, selector: Sequence[str], out_dir) -> list[Path]:
    """One SVG (a panel per variable, mode-coloured background) and one CSV per input trace."""
    selector = [s for s in selector if s]
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise TraceError("no trajectory CSVs given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in paths:
        if not path.is_file():
            raise TraceError(f"{path}: trajectory CSV not found")
        columns, rows = read_trace_csv(path)
        numeric = [c for c in columns if c != "mode"]
        if not selector:
            raise TraceError(f"{path}:1: no variables selected; available columns: {', '.join(numeric)}")
        missing = [s for s in selector if s not in columns]
        if missing:
            raise TraceError(f"{path}:1: unknown column(s) {', '.join(missing)}; available columns: {', '.join(numeric)}")
        for key in ("t", "mode"):
            if key not in columns:
                raise TraceError(f"{path}:1: required column {key!r} missing")
        t = np.array([float(r["t"]) for r in rows])
        modes = [r["mode"] for r in rows]
        series = {s: np.array([float(r[s]) for r in rows]) for s in selector}

        csv_out = out / f"{path.stem}_trace.csv"
        with csv_out.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mode", *selector])
            for k in range(len(rows)):
                w.writerow([rows[k]["t"], modes[k], *(rows[k][s] for s in selector)])

        plt = _svg_figure()
        fig, axes = plt.subplots(len(selector), 1, figsize=(7, 2.2 * len(selector)), sharex=True, squeeze=False)
        bands = mode_bands(t, modes)
        for ax, s in zip(axes[:, 0], selector):
            for a, b, m in bands:
                ax.axvspan(a, b, color=MODE_COLORS.get(m, "#eeeeee"), lw=0)
            ax.plot(t, series[s], color="k", lw=1.2)
            ax.set_ylabel(s)
        axes[-1, 0].set_xlabel("t [s]")
        handles = [plt.Rectangle((0, 0), 1, 1, color=MODE_COLORS.get(m, "#eeeeee")) for m in dict.fromkeys(modes)]
        axes[0, 0].legend(handles, list(dict.fromkeys(modes)), loc="upper right", fontsize=8)
        fig.tight_layout()
        svg_out = out / f"{path.stem}_trace.svg"
        fig.savefig(svg_out, format="svg", metadata={"Date": None})
        plt.close(fig)
        written += [svg_out, csv_out]
    return written


def plot_transition_matrix(tm: TransitionMatrix, path, title: str = "") -> Path:
    plt = _svg_figure()
    probs = tm.probabilities
    fig, ax = plt.subplots(figsize=(3.8, 3.4))
    im = ax.imshow(probs, cmap="Blues", vmin=0.0, vmax=max(probs.max(), 1e-12))
    ax.set_xticks(range(len(tm.modes)), tm.modes)
    ax.set_yticks(range(len(tm.modes)), tm.modes)
    ax.set_xlabel("to")
    ax.set_ylabel("from")
    for i in range(len(tm.modes)):
        for j in range(len(tm.modes)):
            ax.text(j, i, f"{probs[i, j]:.3f}", ha="center", va="center", fontsize=8,
                    color="white" if probs[i, j] > 0.5 * probs.max() else "black")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
