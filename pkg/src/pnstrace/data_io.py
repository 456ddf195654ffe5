"""Raw trajectory files, windowing into scenes, splits and the scene archive."""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import NonNumericCoordinate, ParseError, UnknownSubset
from .scene import Scene, build_scene

ARCHIVE_FORMAT = "pnstrace-scenes"
ARCHIVE_VERSION = 1


@dataclass(frozen=True, order=True)
class RawTrack:
    """One sample of one agent; ordering is by (agent, frame)."""

    agent: int
    frame: int
    x: float
    y: float


@dataclass(frozen=True)
class DatasetConfig:
    rate_hz: float
    obs_seconds: float
    pred_seconds: float
    window_stride: int = 1

    def __post_init__(self):
        for name in ("rate_hz", "obs_seconds", "pred_seconds"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.window_stride < 1:
            raise ValueError("window_stride must be >= 1")
        for secs in (self.obs_seconds, self.pred_seconds):
            steps = self.rate_hz * secs
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"{self.rate_hz} Hz x {secs} s is not a whole number of steps")

    @property
    def t_h(self):
        return int(round(self.rate_hz * self.obs_seconds))

    @property
    def t_f(self):
        return int(round(self.rate_hz * self.pred_seconds))

    @property
    def dt(self):
        return 1.0 / self.rate_hz


PRESETS = {
    "eth_ucy": DatasetConfig(2.5, 3.2, 4.8),
    "nuscenes": DatasetConfig(2.0, 2.0, 6.0),
}


# -- raw files ---------------------------------------------------------------


def parse_tsv(text):
    """Parse whitespace-separated ``frame agent x y`` lines; blank lines are skipped."""
    rows = []
    seen = set()
    for no, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ParseError(f"expected 4 columns, got {len(parts)}", no)
        try:
            frame, agent = int(float(parts[0])), int(float(parts[1]))
        except ValueError:
            raise ParseError(f"non-integer frame or agent id {parts[:2]}", no) from None
        try:
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise NonNumericCoordinate(f"non-numeric coordinate in {parts[2:]}", no) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise NonNumericCoordinate(f"non-finite coordinate in {parts[2:]}", no)
        if (frame, agent) in seen:
            raise ParseError(f"duplicate sample for agent {agent} at frame {frame}", no)
        seen.add((frame, agent))
        rows.append(RawTrack(agent, frame, x, y))
    rows.sort()
    return rows


def load_tsv(path):
    with open(path, encoding="utf-8") as fh:
        return parse_tsv(fh.read())


def downsample(tracks, keep_every, base_step=1):
    """Keep samples whose frame is a multiple of ``keep_every * base_step``."""
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    period = keep_every * base_step
    return [r for r in tracks if r.frame % period == 0]


def frame_step(tracks):
    """Spacing between consecutive frames: gcd of all positive frame gaps."""
    frames = sorted({r.frame for r in tracks})
    gaps = [b - a for a, b in zip(frames, frames[1:])]
    return reduce(math.gcd, gaps) if gaps else 1


def sliding_windows(tracks, config, step=None):
    """One scene per (agent, window start) where that agent covers every step.

    The covering agent is the successor; every other agent seen inside the
    window joins as a neighbor, partially present ones included. Scenes are
    ordered by agent id, then window start.
    """
    if not tracks:
        return []
    step = step or frame_step(tracks)
    n_steps = config.t_h + config.t_f
    by_frame = defaultdict(dict)
    by_agent = defaultdict(set)
    for r in tracks:
        by_frame[r.frame][r.agent] = (r.x, r.y)
        by_agent[r.agent].add(r.frame)
    first = min(by_frame)
    scenes = []
    for agent in sorted(by_agent):
        frames = by_agent[agent]
        for start in sorted(frames):
            if (start - first) % (step * config.window_stride):
                continue
            window = [start + i * step for i in range(n_steps)]
            if not all(f in frames for f in window):
                continue
            samples = defaultdict(list)
            for i, f in enumerate(window):
                for aid, (x, y) in by_frame[f].items():
                    samples[aid].append((i, x, y))
            order = [agent] + sorted(a for a in samples if a != agent)
            scenes.append(build_scene(samples, agent, config.t_h, config.t_f, dt=config.dt, agent_order=order))
    return scenes


def leave_one_out_split(subsets, held_out):
    """``subsets`` maps a name to its scenes; returns (train, test).

    Test scenes come from ``held_out`` only, train scenes from every other
    subset in name order.
    """
    if held_out not in subsets:
        raise UnknownSubset(f"unknown subset {held_out!r}; have {sorted(subsets)}")
    train = [s for name in sorted(subsets) if name != held_out for s in subsets[name]]
    return train, list(subsets[held_out])


def load_subsets(paths, config, keep_every=1, base_step=1):
    """Window each file into scenes, keyed by file stem."""
    out = {}
    for path in sorted(paths):
        name = os.path.splitext(os.path.basename(path))[0]
        tracks = downsample(load_tsv(path), keep_every, base_step)
        out[name] = sliding_windows(tracks, config)
    return out


# -- scene archive -------------------------------------------------------------


def _dump(obj, path):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def archive_dict(scenes, meta=None):
    return {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "meta": meta or {},
        "scenes": [s.to_dict() for s in scenes],
    }


def save_archive(path, scenes, meta=None):
    _dump(archive_dict(scenes, meta), path)


def load_archive(path):
    """Return ``(scenes, meta)``."""
    doc = _read_json(path)
    if not isinstance(doc, dict) or doc.get("format") != ARCHIVE_FORMAT:
        raise ParseError(f"{path} is not a scene archive", 1)
    if doc.get("version") != ARCHIVE_VERSION:
        raise ParseError(f"unsupported archive version {doc.get('version')!r}", 1)
    try:
        scenes = [Scene.from_dict(d) for d in doc["scenes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scene record: {exc}", 1) from None
    return scenes, doc.get("meta", {})


def truth_path(archive_path):
    root, _ = os.path.splitext(archive_path)
    return root + ".truth.json"


def save_truth(path, synth_scenes):
    _dump({"format": ARCHIVE_FORMAT + "-truth", "truth": [s.to_dict() for s in synth_scenes]}, path)


def load_truth(path):
    """Per-scene planted predecessor index arrays."""
    doc = _read_json(path)
    return [np.asarray(r["true_predecessor"], dtype=int) for r in doc["truth"]]


def label_records(scene, idx, dist):
    """Rows of (step, labeled agent id, distance); agent is None where no candidate exists."""
    rows = []
    for t, (a, d) in enumerate(zip(idx, dist), start=1):
        a = int(a)
        rows.append({
            "step": t,
            "agent": scene.agent_ids[a] if a >= 0 else None,
            "distance": float(d) if a >= 0 else None,
        })
    return rows
