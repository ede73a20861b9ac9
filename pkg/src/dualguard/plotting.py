"""SVG renders of scenes, trajectories and benchmark tables.

Figures are built on ``matplotlib.figure.Figure`` directly (no pyplot state),
with a fixed SVG hash salt and no date stamp so identical inputs give
identical bytes.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Circle, Rectangle

from .controllers import METHOD_ORDER, VARIANTS
from .environment import Environment, RaceTrack
from .reachability import ValueField, zero_level_contours

METHOD_COLORS = {
    "obs_penalty": "#d62728",
    "brt_penalty": "#ff7f0e",
    "obs_penalty_lrf": "#9467bd",
    "brt_penalty_lrf": "#8c564b",
    "shield": "#1f77b4",
    "dualguard": "#2ca02c",
}
OBSTACLE_COLOR = "#9a9a9a"
BRT_COLOR = "#008080"
OUTCOME_COLORS = {"Success": "#2ca02c", "Timeout": "#bcbd22", "Failure": "#d62728"}


def _svg_bytes(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "dualguard", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def _write(fig: Figure, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".svg":
        path.write_bytes(_svg_bytes(fig))
    else:
        fig.savefig(path, dpi=150, metadata={"Software": None} if path.suffix == ".png" else None)
    return path


def _label(method: str) -> str:
    return VARIANTS[method].label if method in VARIANTS else method


def draw_scene(ax, failure, vf: ValueField | None = None, heading: float | None = None) -> None:
    if isinstance(failure, RaceTrack):
        pts = failure.centerline
        closed = np.vstack([pts, pts[:1]])
        ax.plot(closed[:, 0], closed[:, 1], ls="--", lw=0.8, color="#555555")
        # off-track region, from l sampled on a fine mesh
        lo, hi = pts.min(axis=0) - 1.5 * failure.half_width, pts.max(axis=0) + 1.5 * failure.half_width
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], 241), np.linspace(lo[1], hi[1], 241))
        lv = failure.l(np.stack([gx.ravel(), gy.ravel()], axis=1)).reshape(gx.shape)
        ax.contourf(gx, gy, lv, levels=[lv.min() - 1, 0.0], colors=[OBSTACLE_COLOR])
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
    else:
        lo, hi = failure.lower, failure.upper
        ax.add_patch(Rectangle(lo, hi[0] - lo[0], hi[1] - lo[1], fill=False,
                               lw=1.2, color="black"))
        for cx, cy, r in failure.obstacles:
            ax.add_patch(Circle((cx, cy), r, color=OBSTACLE_COLOR, lw=0))
        pad = 0.02 * (hi[0] - lo[0])
        ax.set_xlim(lo[0] - pad, hi[0] + pad)
        ax.set_ylim(lo[1] - pad, hi[1] + pad)
    if vf is not None and heading is not None:
        for i, seg in enumerate(zero_level_contours(vf, heading)):
            ax.plot(seg[:, 0], seg[:, 1], color=BRT_COLOR, lw=1.0,
                    label=f"BRT slice, heading {np.degrees(heading):.0f} deg" if i == 0 else None)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def render_scene(failure, trajectories: Sequence[dict] = (), vf: ValueField | None = None,
                 heading: float | None = None, path=None, title: str | None = None) -> bytes:
    """Environment, optional BRT slice and one polyline per trajectory.

    Each trajectory is a mapping with ``states`` (T x n) and optionally
    ``method``, ``goal`` and ``outcome``.  Returns the SVG bytes and writes
    them to ``path`` when given.
    """
    if vf is not None and heading is not None and vf.grid.ndim < 3:
        raise ValueError("a heading slice needs a value field with at least three dimensions")
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    draw_scene(ax, failure, vf, heading)
    seen: set[str] = set()
    for tr in trajectories:
        states = np.asarray(tr["states"], dtype=float)
        if states.ndim != 2 or states.shape[1] < 2:
            raise ValueError("trajectory states must be a T x n array with n >= 2")
        method = tr.get("method", "trajectory")
        label = None if method in seen else _label(method)
        seen.add(method)
        ax.plot(states[:, 0], states[:, 1], lw=1.0, color=METHOD_COLORS.get(method, "black"),
                label=label)
        ax.plot(states[0, 0], states[0, 1], "o", ms=3, color="black")
        if tr.get("goal") is not None:
            ax.plot(tr["goal"][0], tr["goal"][1], "*", ms=7, color="black")
    if seen or (vf is not None and heading is not None):
        ax.legend(loc="upper right", fontsize=7, framealpha=0.8)
    if title:
        ax.set_title(title)
    data = _svg_bytes(fig)
    if path is not None:
        Path(path).write_bytes(data)
    return data


def plot_outcomes(tables, path) -> Path:
    """Stacked Success/Timeout/Failure bars, one panel per K."""
    fig = Figure(figsize=(4 * max(1, len(tables)), 3.6))
    axes = fig.subplots(1, max(1, len(tables)), squeeze=False)[0]
    for ax, table in zip(axes, tables):
        names = [r.method for r in table.rows]
        x = np.arange(len(names))
        bottom = np.zeros(len(names))
        for outcome, attr in (("Success", "success"), ("Timeout", "timeout"), ("Failure", "failure")):
            vals = np.array([getattr(r, attr) for r in table.rows])
            ax.bar(x, vals, bottom=bottom, color=OUTCOME_COLORS[outcome], label=outcome)
            bottom += vals
        ax.set_xticks(x, [_label(n) for n in names], rotation=35, ha="right", fontsize=7)
        ax.set_ylim(0, 100)
        ax.set_ylabel("episodes [%]")
        ax.set_title(f"K = {table.K}")
    axes[0].legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    return _write(fig, path)


def plot_relcost(tables, path) -> Path:
    """RelCost with standard-error bars per method and K."""
    fig = Figure(figsize=(6, 3.6))
    ax = fig.add_subplot()
    methods = [m for m in METHOD_ORDER if any(m in [r.method for r in t.rows] for t in tables)]
    width = 0.8 / max(1, len(tables))
    for i, table in enumerate(tables):
        xs, ys, es = [], [], []
        for j, m in enumerate(methods):
            try:
                r = table.row(m)
            except KeyError:
                continue
            if r.relcost is None:
                continue
            xs.append(j + (i - (len(tables) - 1) / 2) * width)
            ys.append(r.relcost)
            es.append(r.relcost_se or 0.0)
        ax.bar(xs, ys, width=width, yerr=es, capsize=2, label=f"K = {table.K}")
    ax.axhline(1.0, color="black", lw=0.6)
    ax.set_xticks(np.arange(len(methods)), [_label(m) for m in methods], rotation=35, ha="right",
                  fontsize=7)
    ax.set_ylabel("RelCost")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _write(fig, path)
