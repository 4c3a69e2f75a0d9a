"""Static SVG emission for loss curves.

One polyline per run, epoch on x, validation loss on y, legend labelled with
each run's label (e.g. "r=0.4,tb2"). Output is plain text SVG so curve
artifacts diff cleanly and need no plotting dependency.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .errors import ContractError
from .training import RunLog

_WIDTH, _HEIGHT = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56, 150, 20, 40
_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
    "#bcbd22",
    "#e377c2",
)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_curves(runlogs: Sequence[RunLog], path) -> None:
    """Write the validation-loss curves of `runlogs` to `path` as SVG."""
    runlogs = list(runlogs)
    if not runlogs:
        raise ContractError("emit_curves needs at least one run log")
    if any(not log.records for log in runlogs):
        raise ContractError("every run log must contain at least one epoch")

    losses = [r.val_loss for log in runlogs for r in log.records]
    lo, hi = min(losses), max(losses)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    y_min, y_max = lo - pad, hi + pad
    x_max = max(len(log.records) - 1 for log in runlogs)
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(epoch: float) -> float:
        frac = epoch / x_max if x_max else 0.0
        return _MARGIN_L + frac * plot_w

    def sy(loss: float) -> float:
        frac = (loss - y_min) / (y_max - y_min)
        return _MARGIN_T + (1.0 - frac) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{_HEIGHT - _MARGIN_B}" stroke="black"/>',
        f'<line x1="{_MARGIN_L}" y1="{_HEIGHT - _MARGIN_B}" x2="{_WIDTH - _MARGIN_R}" '
        f'y2="{_HEIGHT - _MARGIN_B}" stroke="black"/>',
        f'<text x="{_MARGIN_L}" y="{_HEIGHT - 8}" font-size="12">0</text>',
        f'<text x="{_WIDTH - _MARGIN_R - 10}" y="{_HEIGHT - 8}" font-size="12">{x_max}</text>',
        f'<text x="4" y="{_HEIGHT - _MARGIN_B}" font-size="12">{_fmt(lo)}</text>',
        f'<text x="4" y="{_MARGIN_T + 10}" font-size="12">{_fmt(hi)}</text>',
        f'<text x="{_MARGIN_L + plot_w // 2 - 20}" y="{_HEIGHT - 8}" font-size="12">epoch</text>',
    ]
    for i, log in enumerate(runlogs):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(
            f"{_fmt(sx(r.epoch))},{_fmt(sy(r.val_loss))}" for r in log.records
        )
        parts.append(f'<polyline fill="none" stroke="{color}" points="{points}"/>')
        ly = _MARGIN_T + 14 + 16 * i
        lx = _WIDTH - _MARGIN_R + 8
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}"/>'
        )
        parts.append(f'<text x="{lx + 22}" y="{ly}" font-size="12">{log.label}</text>')
    parts.append("</svg>")
    Path(path).write_bytes(("\n".join(parts) + "\n").encode("utf-8"))
