"""Synthetic scenes with a planted predecessor.

A leader walks along a path; the successor walks the same path
``follow_delay`` steps behind it. Distractors walk unrelated straight or
gently curved paths kept outside an exclusion radius around the leader and
successor, so the nearest-trace label is unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scene import Scene

FAMILIES = ("straight", "arc", "s-curve", "branch")
FOLLOW_FAMILIES = ("straight", "arc", "s-curve")
SPEED_RANGE = (0.8, 1.6)
_DS = 0.01


@dataclass(frozen=True)
class SynthParams:
    n_distractors: int = 3
    follow_delay: int = 8
    noise_sigma: float = 0.0
    path_family: str = "arc"
    seed: int = 0
    t_h: int = 8
    t_f: int = 12
    dt: float = 0.4
    exclusion_radius: float | None = None
    partial_prob: float = 0.3

    def __post_init__(self):
        if self.follow_delay < 1:
            raise ValueError("follow_delay must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.path_family not in FAMILIES:
            raise ValueError(f"unknown path family {self.path_family!r}; expected one of {FAMILIES}")
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be >= 0")


@dataclass(frozen=True)
class SynthScene:
    scene: Scene
    true_predecessor: np.ndarray  # (t_f,) agent index, -1 for none
    junction_step: int | None = None  # first future step past a branch junction

    def to_dict(self):
        d = {"true_predecessor": [int(v) for v in self.true_predecessor]}
        if self.junction_step is not None:
            d["junction_step"] = int(self.junction_step)
        return d


class Path:
    """Planar curve parametrised by arc length, straight beyond its sampled range."""

    def __init__(self, origin, heading, curvature, s_min=-30.0, s_max=40.0):
        s = np.arange(s_min, s_max + _DS, _DS)
        theta = heading + np.concatenate([[0.0], np.cumsum(curvature(s[:-1]) * _DS)])
        # anchor the integration so s = 0 maps to origin with the given heading
        theta -= np.interp(0.0, s, theta) - heading
        x = np.concatenate([[0.0], np.cumsum(np.cos(theta[:-1]) * _DS)])
        y = np.concatenate([[0.0], np.cumsum(np.sin(theta[:-1]) * _DS)])
        x += origin[0] - np.interp(0.0, s, x)
        y += origin[1] - np.interp(0.0, s, y)
        self.s, self.x, self.y, self.theta = s, x, y, theta

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        lo, hi = self.s[0], self.s[-1]
        inside = np.clip(s, lo, hi)
        px = np.interp(inside, self.s, self.x)
        py = np.interp(inside, self.s, self.y)
        over = s - inside
        th = np.where(s > hi, self.theta[-1], self.theta[0])
        return np.stack([px + over * np.cos(th), py + over * np.sin(th)], axis=-1)


def _turn_profile(segments):
    """Piecewise-constant curvature from ``(start, length, kappa)`` segments."""

    def kappa(s):
        out = np.zeros_like(s)
        for start, length, k in segments:
            out = np.where((s >= start) & (s < start + length), k, out)
        return out

    return kappa


def _random_turn(rng):
    angle = np.radians(rng.uniform(30.0, 90.0))
    radius = rng.uniform(2.0, 6.0)
    return angle, radius


def _leader_path(rng, family, origin, heading, s_turn):
    if family == "straight":
        return Path(origin, heading, _turn_profile([]))
    if family == "arc":
        angle, radius = _random_turn(rng)
        sign = rng.choice([-1.0, 1.0])
        return Path(origin, heading, _turn_profile([(s_turn, angle * radius, sign / radius)]))
    if family == "s-curve":
        angle, radius = _random_turn(rng)
        sign = rng.choice([-1.0, 1.0])
        length = angle * radius
        segs = [(s_turn, length, sign / radius), (s_turn + length, length, -sign / radius)]
        return Path(origin, heading, _turn_profile(segs))
    raise ValueError(family)


def label_margin(params, step_len):
    """Upper bound on the distance from any future successor position to the leader's observed trace."""
    trace_lo = params.follow_delay - params.t_h + 1
    gap = max(params.t_f - params.follow_delay, trace_lo - 1, 0)
    return gap * step_len


def _exclusion_radius(params, step_len):
    if params.exclusion_radius is not None:
        return params.exclusion_radius
    return label_margin(params, step_len) + 1.0


def _distractor(rng, params, frame, avoid, radius, steps, t_h):
    """A walker at least ``radius`` from every ``avoid`` point.

    Half of the distractors walk roughly alongside the successor and turn on
    their own, so their motion resembles a plausible predecessor.
    """
    origin, heading = frame
    dt = params.dt
    for _ in range(200):
        speed = rng.uniform(*SPEED_RANGE)
        if rng.random() < 0.5:
            h = heading + np.radians(rng.uniform(-25.0, 25.0))
            lateral = rng.choice([-1.0, 1.0]) * rng.uniform(radius, radius + 4.0)
            along = rng.uniform(-4.0, 8.0)
            start = origin + along * np.array([np.cos(heading), np.sin(heading)]) + lateral * np.array([-np.sin(heading), np.cos(heading)])
            fam = FOLLOW_FAMILIES[int(rng.integers(0, 3))]
            path = _leader_path(rng, fam, start, h, rng.uniform(-2.0, 6.0))
        else:
            ang = rng.uniform(0, 2 * np.pi)
            start = origin + rng.uniform(radius, radius + 10.0) * np.array([np.cos(ang), np.sin(ang)])
            h = rng.uniform(0, 2 * np.pi)
            path = Path(start, h, _turn_profile([(-100.0, 200.0, rng.uniform(-0.1, 0.1))]))
        pos = path(speed * dt * (np.arange(steps) - (t_h - 1)))
        gap = np.sqrt(((pos[:, None, :] - avoid[None, :, :]) ** 2).sum(-1)).min()
        if gap >= radius:
            return pos
    # fall back to a parked agent far outside the exclusion zone
    return np.tile(origin + (radius + 20.0) * np.array([np.cos(ang), np.sin(ang)]), (steps, 1))


def _presence(rng, params, steps):
    pres = np.ones(steps, dtype=bool)
    if rng.random() < params.partial_prob:
        # appear late or leave early but stay observed for >= 2 steps
        if rng.random() < 0.5:
            pres[: rng.integers(1, params.t_h - 1)] = False
        else:
            pres[rng.integers(params.t_h, steps):] = False
    return pres


def _assemble(rng, params, tracks, frame, step_len):
    """Add distractors and noise, then wrap everything in a Scene."""
    steps = params.t_h + params.t_f
    radius = _exclusion_radius(params, step_len)
    avoid = np.concatenate(tracks, axis=0)
    presence = [np.ones(steps, dtype=bool) for _ in tracks]
    for _ in range(params.n_distractors):
        tracks.append(_distractor(rng, params, frame, avoid, radius, steps, params.t_h))
        presence.append(_presence(rng, params, steps))
    pos = np.stack(tracks)
    if params.noise_sigma > 0:
        pos = pos + rng.normal(0.0, params.noise_sigma, size=pos.shape)
    ids = tuple(range(len(tracks)))
    return Scene(ids, pos, np.stack(presence), 0, params.t_h, params.t_f, params.dt)


def _frame(rng):
    origin = rng.uniform(-5.0, 5.0, size=2)
    heading = rng.uniform(0.0, 2 * np.pi)
    speed = rng.uniform(*SPEED_RANGE)
    return origin, heading, speed


def gen_follow_scene(params):
    """Successor walks the leader's path ``follow_delay`` steps behind it.

    Agent 0 is the successor and agent 1 the leader; the leader is the true
    predecessor at every future step.
    """
    if params.path_family == "branch":
        return gen_branch_scene(params)
    rng = np.random.default_rng(params.seed)
    origin, heading, speed = _frame(rng)
    step = speed * params.dt
    steps = params.t_h + params.t_f
    # the successor reaches the turn within the first half of its future
    s_turn = rng.uniform(1.0, params.t_f / 2) * step
    path = _leader_path(rng, params.path_family, origin, heading, s_turn)
    k = np.arange(steps) - (params.t_h - 1)
    leader = path((k + params.follow_delay) * step)
    successor = path(k * step)
    scene = _assemble(rng, params, [successor, leader], (successor[params.t_h - 1], heading), step)
    return SynthScene(scene, np.ones(params.t_f, dtype=int))


def gen_branch_scene(params):
    """Two leaders share a path, then diverge at a junction; the successor picks one.

    Agents 1 and 2 are the leaders; which one is followed depends on the seed.
    Before the junction both leaders coincide, so the nearest-trace label
    ties and resolves to agent 1.
    """
    if params.path_family != "branch":
        params = replace(params, path_family="branch")
    rng = np.random.default_rng(params.seed)
    origin, heading, speed = _frame(rng)
    step = speed * params.dt
    steps = params.t_h + params.t_f
    junction = rng.uniform(1.0, params.t_f / 2) * step
    a1, r1 = _random_turn(rng)
    a2, r2 = _random_turn(rng)
    left = Path(origin, heading, _turn_profile([(junction, a1 * r1, 1.0 / r1)]))
    right = Path(origin, heading, _turn_profile([(junction, a2 * r2, -1.0 / r2)]))
    followed = 1 + int(rng.integers(0, 2))
    k = np.arange(steps) - (params.t_h - 1)
    lead_s = (k + params.follow_delay) * step
    leaders = [left(lead_s), right(lead_s)]
    successor = (left if followed == 1 else right)(k * step)
    scene = _assemble(rng, params, [successor] + leaders, (successor[params.t_h - 1], heading), step)
    future_s = np.arange(1, params.t_f + 1) * step
    past = np.flatnonzero(future_s > junction + 1e-9)
    junction_step = int(past[0]) + 1 if past.size else None
    return SynthScene(scene, np.full(params.t_f, followed), junction_step)


def generate(n, seed=0, family="mixed", **kwargs):
    """``n`` scenes from one family.

    ``family`` is a path family, ``follow`` (random non-branching family) or
    ``mixed`` (follow families and branch scenes).
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n)
    out = []
    for s in seeds:
        if family == "follow":
            fam = FOLLOW_FAMILIES[int(s) % len(FOLLOW_FAMILIES)]
        elif family == "mixed":
            fam = FAMILIES[int(s) % len(FAMILIES)]
        else:
            fam = family
        p = SynthParams(path_family=fam, seed=int(s), **kwargs)
        out.append(gen_branch_scene(p) if fam == "branch" else gen_follow_scene(p))
    return out
