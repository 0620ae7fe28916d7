"""Benchmark statistics and learning-curve output.

IQM trims ``floor(n / 4)`` values from each tail. Confidence intervals are
percentile bootstraps of the IQM; 2-D input is read as (runs, tasks) and runs
are resampled within each task before pooling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .envs import Env, success


def iqm(values) -> float:
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("iqm of an empty collection")
    k = x.size // 4
    return float(np.mean(x[k : x.size - k]))


def _iqm_rows(sorted_rows: np.ndarray) -> np.ndarray:
    n = sorted_rows.shape[1]
    k = n // 4
    return sorted_rows[:, k : n - k].mean(axis=1)


def bootstrap_ci(values, resamples: int = 2000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the IQM, deterministic in ``seed``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("bootstrap_ci of an empty collection")
    if resamples < 1000:
        raise ValueError("use at least 1000 bootstrap resamples")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("values must be 1-D or (runs, tasks)")
    runs, tasks = arr.shape
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, runs, size=(resamples, tasks, runs))
    pooled = arr[idx, np.arange(tasks)[None, :, None]].reshape(resamples, -1)
    stats = _iqm_rows(np.sort(pooled, axis=1))
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(stats, [tail, 1.0 - tail])
    return float(low), float(high)


@dataclass
class RunResult:
    task: str
    seed: int
    steps: list[int]
    success: list[float]
    returns: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.steps) != len(self.success):
            raise ValueError("steps and success have different lengths")
        if self.returns and len(self.returns) != len(self.steps):
            raise ValueError("steps and returns have different lengths")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("checkpoint steps must be strictly increasing")
        if any(not 0.0 <= s <= 1.0 for s in self.success):
            raise ValueError("success rates must lie in [0, 1]")

    @classmethod
    def from_log(cls, task: str, seed: int, rows: Sequence[dict]) -> "RunResult":
        return cls(
            task,
            seed,
            [int(r["env_step"]) for r in rows],
            [float(r["eval_success"]) for r in rows],
            [float(r["eval_return"]) for r in rows],
        )

    def first_step_reaching(self, threshold: float) -> int | None:
        for step, s in zip(self.steps, self.success):
            if s >= threshold:
                return step
        return None

    def success_at(self, step: int) -> float:
        """Success at the latest checkpoint at or before ``step`` (a run that stopped early keeps its last value)."""
        pos = np.searchsorted(self.steps, step, side="right") - 1
        if pos < 0:
            raise ValueError(f"no checkpoint at or before step {step}")
        return self.success[pos]


@dataclass
class CurvePoint:
    task: str
    env_step: int
    iqm: float
    ci_low: float
    ci_high: float
    n_runs: int


def aggregate_curve(results: Sequence[RunResult], task: str, resamples: int = 2000, seed: int = 0) -> list[CurvePoint]:
    """IQM and CI per checkpoint over every run that reached it; task "*" pools all tasks."""
    chosen = [r for r in results if task == "*" or r.task == task]
    steps = sorted({s for r in chosen for s in r.steps})
    points = []
    for step in steps:
        vals = [r.success[r.steps.index(step)] for r in chosen if step in r.steps]
        low, high = bootstrap_ci(vals, resamples=resamples, seed=seed)
        point = iqm(vals)
        points.append(CurvePoint(task, step, point, min(low, point), max(high, point), len(vals)))
    return points


def sweep_receding_horizon(actor, env: Env, k_values: Sequence[int], episodes: int = 100, seed: int = 0) -> list[tuple[int, float, float]]:
    """(k, success rate, mean return) per k with the same episode seeds for every k."""
    from .algo import receding_horizon_rollout

    n = actor.chunk_size
    bad = [k for k in k_values if not 1 <= k <= n]
    if bad:
        raise ValueError(f"receding horizons {bad} outside [1, {n}]")
    table = []
    for k in k_values:
        eps = [receding_horizon_rollout(env, actor, k, seed=seed + i) for i in range(episodes)]
        table.append(
            (int(k), float(np.mean([success(e) for e in eps])), float(np.mean([e.episode_return for e in eps])))
        )
    return table


# ---------------------------------------------------------------- curve files


def _num(x: float) -> str:
    return f"{x:.6g}"


def _svg(points: list[CurvePoint], title: str) -> str:
    width, height, pad = 480, 320, 48
    xs = [p.env_step for p in points]
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1

    def px(step):
        return pad + (step - x_lo) / span * (width - 2 * pad)

    def py(v):
        return height - pad - v * (height - 2 * pad)

    upper = [f"{px(p.env_step):.2f},{py(p.ci_high):.2f}" for p in points]
    lower = [f"{px(p.env_step):.2f},{py(p.ci_low):.2f}" for p in reversed(points)]
    line = [f"{px(p.env_step):.2f},{py(p.iqm):.2f}" for p in points]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for v in (0.0, 0.5, 1.0):
        out.append(
            f'<text x="{pad - 6}" y="{py(v) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.1f}</text>'
        )
    out.append(
        f'<text x="{pad}" y="{height - pad + 16}" font-family="sans-serif" font-size="10">{x_lo}</text>'
    )
    out.append(
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-family="sans-serif" font-size="10">{x_hi}</text>'
    )
    out.append(f'<polygon points="{" ".join(upper + lower)}" fill="steelblue" fill-opacity="0.25" stroke="none"/>')
    out.append(f'<polyline points="{" ".join(line)}" fill="none" stroke="steelblue" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def emit_curves(results: Sequence[RunResult], path, resamples: int = 2000, seed: int = 0) -> list[Path]:
    """Write raw.csv, one curve CSV/SVG per task, and an aggregated pair; returns the written paths."""
    if not results:
        raise ValueError("emit_curves needs at least one RunResult")
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create curve directory {root}: {exc}") from exc
    written = []

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "seed", "env_step", "eval_success", "eval_return"])
    for r in results:
        for i, step in enumerate(r.steps):
            ret = _num(r.returns[i]) if r.returns else ""
            w.writerow([r.task, r.seed, step, _num(r.success[i]), ret])
    written.append(_write(root / "raw.csv", buf.getvalue()))

    tasks = sorted({r.task for r in results})
    for task in tasks + ["*"]:
        points = aggregate_curve(results, task, resamples=resamples, seed=seed)
        stem = "aggregate" if task == "*" else _safe(task)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "env_step", "iqm", "ci_low", "ci_high", "n_runs"])
        for p in points:
            w.writerow([task, p.env_step, _num(p.iqm), _num(p.ci_low), _num(p.ci_high), p.n_runs])
        written.append(_write(root / f"{stem}.csv", buf.getvalue()))
        title = "all tasks (IQM, 95% CI)" if task == "*" else f"{task} (IQM, 95% CI)"
        written.append(_write(root / f"{stem}.svg", _svg(points, title)))
    return written


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path
