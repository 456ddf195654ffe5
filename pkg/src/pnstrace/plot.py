"""Deterministic SVG rendering of a scene and its predictions."""

from __future__ import annotations

import numpy as np

OBS_COLOR = "#555555"
GT_COLOR = "#1a9e3a"
PRED_COLOR = "#d62728"
PRED_AGENT_COLOR = "#1f77b4"


def _polyline(points, color, width=1.5, opacity=1.0, dash=None):
    pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity:.3f}"{extra}/>')


def render_svg(scene, modes=None, mode_probs=None, predecessors=(), size=480, margin=20):
    """SVG text showing observed tracks, the true future and predicted modes.

    Observed tracks are grey; agents listed in ``predecessors`` (indices)
    are drawn thicker in blue. The successor's ground-truth future is green
    and each predicted mode is red, with opacity scaled by its probability.
    """
    pos, pres = scene.observed
    pieces = [pos[pres]]
    gt = scene.successor_future
    pieces.append(gt)
    if modes is not None:
        modes = np.asarray(modes, dtype=np.float64)
        pieces.append(modes.reshape(-1, 2))
    allp = np.concatenate(pieces)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = max(float((hi - lo).max()), 1e-6)
    scale = (size - 2 * margin) / span

    def tr(p):
        p = np.atleast_2d(p)
        x = margin + (p[:, 0] - lo[0]) * scale
        y = size - margin - (p[:, 1] - lo[1]) * scale  # y axis points up
        return np.stack([x, y], axis=1)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    highlighted = set(int(p) for p in predecessors)
    for a in range(scene.n_agents):
        pts = pos[a][pres[a]]
        if len(pts) == 0:
            continue
        color, width = (PRED_AGENT_COLOR, 3.0) if a in highlighted else (OBS_COLOR, 1.5)
        if a == scene.target_index:
            width = 2.5
        out.append(_polyline(tr(pts), color, width))
        x, y = tr(pts[-1])[0]
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" fill="{color}"/>')
    last = pos[scene.target_index, -1]
    if modes is not None:
        probs = np.ones(len(modes)) / len(modes) if mode_probs is None else np.asarray(mode_probs, dtype=np.float64)
        top = probs.max() if probs.size else 1.0
        for m in np.argsort(-probs, kind="stable"):
            path = np.concatenate([last[None], modes[m]])
            out.append(_polyline(tr(path), PRED_COLOR, 1.2, 0.25 + 0.75 * probs[m] / top))
    out.append(_polyline(tr(np.concatenate([last[None], gt])), GT_COLOR, 2.0, dash="4,2"))
    out.append("</svg>")
    return "\n".join(out) + "\n"
