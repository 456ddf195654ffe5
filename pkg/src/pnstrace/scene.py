"""Multi-agent scenes on a shared time grid.

Grid steps ``0 .. t_h-1`` are observed (the last one is the current step) and
steps ``t_h .. t_h+t_f-1`` are the future. Absent samples hold the padding
value 0 and are never read: the presence mask is authoritative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGrid, MissingTarget, ParseError

PAD = 0.0
MIN_OBSERVED_STEPS = 2


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Scene:
    agent_ids: tuple
    positions: np.ndarray  # (N, t_h + t_f, 2)
    presence: np.ndarray  # (N, t_h + t_f) bool
    target_index: int
    t_h: int
    t_f: int
    dt: float = 0.4

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        pres = np.asarray(self.presence, dtype=bool)
        n, steps = len(self.agent_ids), self.t_h + self.t_f
        if self.t_h <= 0 or self.t_f <= 0:
            raise EmptyGrid("t_h and t_f must both be positive")
        if pos.shape != (n, steps, 2) or pres.shape != (n, steps):
            raise ValueError(f"positions {pos.shape} / presence {pres.shape} do not match {n} agents x {steps} steps")
        if not 0 <= self.target_index < n:
            raise MissingTarget(f"target index {self.target_index} out of range")
        if not pres[self.target_index].all():
            raise MissingTarget("successor must be present at every step")
        pos = np.where(pres[..., None], pos, PAD)
        object.__setattr__(self, "agent_ids", tuple(int(a) for a in self.agent_ids))
        object.__setattr__(self, "positions", _frozen(pos, np.float64))
        object.__setattr__(self, "presence", _frozen(pres, bool))
        object.__setattr__(self, "target_index", int(self.target_index))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_agents(self):
        return len(self.agent_ids)

    @property
    def observed(self):
        """Observation window: ``(positions, presence)`` over the first t_h steps."""
        return self.positions[:, : self.t_h], self.presence[:, : self.t_h]

    @property
    def future(self):
        """Future window: ``(positions, presence)`` over the last t_f steps."""
        return self.positions[:, self.t_h:], self.presence[:, self.t_h:]

    @property
    def successor_future(self):
        return self.positions[self.target_index, self.t_h:]

    def neighbor_mask(self):
        """Neighbors observed for at least two steps; the successor is excluded."""
        m = self.presence[:, : self.t_h].sum(axis=1) >= MIN_OBSERVED_STEPS
        m[self.target_index] = False
        return m

    def with_positions(self, positions):
        return Scene(self.agent_ids, positions, self.presence, self.target_index, self.t_h, self.t_f, self.dt)

    def equals(self, other):
        return (
            self.agent_ids == other.agent_ids
            and self.target_index == other.target_index
            and (self.t_h, self.t_f, self.dt) == (other.t_h, other.t_f, other.dt)
            and np.array_equal(self.presence, other.presence)
            and np.array_equal(self.positions, other.positions)
        )

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "agent_ids": list(self.agent_ids),
            "target_index": self.target_index,
            "t_h": self.t_h,
            "t_f": self.t_f,
            "dt": self.dt,
            "positions": self.positions.tolist(),
            "presence": self.presence.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            agent_ids=tuple(d["agent_ids"]),
            positions=np.asarray(d["positions"], dtype=np.float64).reshape(len(d["agent_ids"]), d["t_h"] + d["t_f"], 2),
            presence=np.asarray(d["presence"], dtype=bool).reshape(len(d["agent_ids"]), d["t_h"] + d["t_f"]),
            target_index=d["target_index"],
            t_h=d["t_h"],
            t_f=d["t_f"],
            dt=d["dt"],
        )

    def to_text(self):
        """Line-oriented record: a header line, then ``step agent x y`` per present sample."""
        lines = [f"scene t_h={self.t_h} t_f={self.t_f} dt={self.dt!r} target={self.agent_ids[self.target_index]} "
                 f"agents={','.join(str(a) for a in self.agent_ids)}"]
        for a, aid in enumerate(self.agent_ids):
            for t in np.flatnonzero(self.presence[a]):
                x, y = self.positions[a, t]
                lines.append(f"{t} {aid} {float(x)!r} {float(y)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("scene "):
            raise ParseError("missing scene header", 1)
        head = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
        ids = [int(a) for a in head["agents"].split(",")]
        t_h, t_f = int(head["t_h"]), int(head["t_f"])
        tracks = {a: [] for a in ids}
        for no, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", no)
            tracks[int(parts[1])].append((int(parts[0]), float(parts[2]), float(parts[3])))
        return build_scene(tracks, int(head["target"]), t_h, t_f, dt=float(head["dt"]), agent_order=ids)


def build_scene(tracks, target, t_h, t_f, dt=0.4, agent_order=None):
    """Place per-agent ``(step, x, y)`` samples onto a ``t_h + t_f`` grid.

    Samples outside the grid are dropped. ``agent_order`` fixes the agent
    axis; by default agents are sorted by id.
    """
    if t_h <= 0 or t_f <= 0:
        raise EmptyGrid("t_h and t_f must both be positive")
    if target not in tracks:
        raise MissingTarget(f"no track for target agent {target}")
    ids = sorted(tracks) if agent_order is None else list(agent_order)
    steps = t_h + t_f
    pos = np.zeros((len(ids), steps, 2))
    pres = np.zeros((len(ids), steps), dtype=bool)
    for a, aid in enumerate(ids):
        for step, x, y in tracks[aid]:
            step = int(step)
            if 0 <= step < steps:
                pos[a, step] = (x, y)
                pres[a, step] = True
    ti = ids.index(target)
    if not pres[ti].all():
        raise MissingTarget(f"target agent {target} does not cover all {steps} steps")
    return Scene(tuple(ids), pos, pres, ti, t_h, t_f, dt)


@dataclass(frozen=True)
class NormalizationRecord:
    offset: tuple

    def apply(self, xy):
        return np.asarray(xy, dtype=np.float64) - np.asarray(self.offset)

    def invert(self, xy):
        return np.asarray(xy, dtype=np.float64) + np.asarray(self.offset)


def normalize(scene):
    """Translate so the successor's current (last observed) position is the origin."""
    origin = scene.positions[scene.target_index, scene.t_h - 1].copy()
    rec = NormalizationRecord((float(origin[0]), float(origin[1])))
    return scene.with_positions(rec.apply(scene.positions)), rec


def denormalize(scene, record):
    return scene.with_positions(record.invert(scene.positions))


def observed_features(scene):
    """Per-step encoder input ``(x, y, dx, dy)`` over the observation window.

    Displacement is zero at an agent's first present step and after any gap.
    Absent steps are all-zero.
    """
    pos, pres = scene.observed
    prev_ok = np.zeros_like(pres)
    prev_ok[:, 1:] = pres[:, 1:] & pres[:, :-1]
    disp = np.zeros_like(pos)
    disp[:, 1:] = pos[:, 1:] - pos[:, :-1]
    disp = np.where(prev_ok[..., None], disp, 0.0)
    feats = np.concatenate([np.where(pres[..., None], pos, 0.0), disp], axis=-1)
    return feats
