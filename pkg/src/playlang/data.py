"""Turning raw play into training examples.

Two kinds of context come out of the same stream. Goal rows are free: every
window of 16..32 observations is an example whose context is the window's
final observation. Language rows are bought: an annotator looks at a bounded
number of windows after the fact and describes what happened in them, either
a task event the window contains or plain hand motion when it contains none.

Windows never cross episode boundaries. A window of width w counts
observations: it spans obs [start, start+w-1] and the w-1 actions between
them; its goal is obs[start+w-1], the last observation inside the window.
An episode of T transitions holds T+1 observations, so each width w
contributes T-w+2 windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ARM_SPEED, OBS_DIM

W_LOW = 16
W_HIGH = 32
MOTION_FRACTION = 0.15    # share of annotation budget spent on eventless windows
MOTION_STILL_EPS = 0.03   # net hand travel below this reads as holding still

MOTION_LABELS = ("motion_left", "motion_right", "motion_up", "motion_down",
                 "do_nothing")


class DataError(ValueError):
    pass


def window_count(t: int, w_low: int = W_LOW, w_high: int = W_HIGH) -> int:
    """Number of windows in a sequence of t observations."""
    hi = min(w_high, t)
    if hi < w_low:
        return 0
    return sum(t - w + 1 for w in range(w_low, hi + 1))


def enumerate_windows(obs_counts, w_low: int = W_LOW, w_high: int = W_HIGH):
    """All (episode, start, width) triples for episodes holding the given
    observation counts, as parallel int32 arrays."""
    eps, starts, widths = [], [], []
    for i, t in enumerate(obs_counts):
        for w in range(w_low, min(w_high, t) + 1):
            n = t - w + 1
            eps.append(np.full(n, i, dtype=np.int32))
            starts.append(np.arange(n, dtype=np.int32))
            widths.append(np.full(n, w, dtype=np.int32))
    if not eps:
        z = np.zeros(0, dtype=np.int32)
        return z, z.copy(), z.copy()
    return np.concatenate(eps), np.concatenate(starts), np.concatenate(widths)


def actions_to_unit(a: np.ndarray) -> np.ndarray:
    """Map raw actions (dx, dy in +-ARM_SPEED, grip in 0..1) into [0,1]^3."""
    u = np.empty_like(a, dtype=np.float32)
    u[..., 0] = (a[..., 0] + ARM_SPEED) / (2 * ARM_SPEED)
    u[..., 1] = (a[..., 1] + ARM_SPEED) / (2 * ARM_SPEED)
    u[..., 2] = a[..., 2]
    return np.clip(u, 0.0, 1.0)


def unit_to_actions(u: np.ndarray) -> np.ndarray:
    a = np.empty_like(u, dtype=np.float32)
    a[..., 0] = u[..., 0] * (2 * ARM_SPEED) - ARM_SPEED
    a[..., 1] = u[..., 1] * (2 * ARM_SPEED) - ARM_SPEED
    a[..., 2] = np.clip(u[..., 2], 0.0, 1.0)
    return a


@dataclass
class ObsStats:
    """Per-dimension observation statistics, for standardizing encoder and
    policy inputs. std is floored so constant dims stay harmless."""
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return ((obs - self.mean) / self.std).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d) -> "ObsStats":
        return ObsStats(np.asarray(d["mean"], np.float32),
                        np.asarray(d["std"], np.float32))

    @staticmethod
    def identity(dim: int = OBS_DIM) -> "ObsStats":
        return ObsStats(np.zeros(dim, np.float32), np.ones(dim, np.float32))


def compute_obs_stats(episodes, floor: float = 1e-3) -> ObsStats:
    obs = np.concatenate([ep.observations for ep in episodes])
    return ObsStats(obs.mean(axis=0).astype(np.float32),
                    np.maximum(obs.std(axis=0), floor).astype(np.float32))


class PlayCorpus:
    """Episode arrays packed flat so window batches gather with one fancy
    index. Padded steps repeat the last valid row and carry mask 0."""

    def __init__(self, episodes):
        if not episodes:
            raise DataError("no episodes")
        self.episodes = episodes
        self.lengths = np.array([ep.length for ep in episodes], dtype=np.int32)
        self.obs_counts = self.lengths + 1
        self.obs_offsets = np.zeros(len(episodes), dtype=np.int64)
        self.act_offsets = np.zeros(len(episodes), dtype=np.int64)
        o, a = 0, 0
        for i, ep in enumerate(episodes):
            self.obs_offsets[i] = o
            self.act_offsets[i] = a
            o += ep.observations.shape[0]
            a += ep.actions.shape[0]
        self.obs = np.concatenate([ep.observations for ep in episodes]).astype(np.float32)
        self.actions = np.concatenate([ep.actions for ep in episodes]).astype(np.float32)

    def window_batch(self, eps, starts, widths, pad_to: int | None = None) -> dict:
        """Gather windows into {obs (B,W,13), actions (B,W-1,3), mask (B,W),
        goal (B,13)}. mask marks valid observations; action t pairs obs t
        with obs t+1, so its validity column is mask[:, 1:]."""
        eps = np.asarray(eps, dtype=np.int64)
        starts = np.asarray(starts, dtype=np.int64)
        widths = np.asarray(widths, dtype=np.int64)
        W = int(pad_to if pad_to is not None else widths.max())
        if widths.max() > W:
            raise DataError(f"width {int(widths.max())} exceeds pad {W}")
        t = np.arange(W, dtype=np.int64)[None, :]
        obs_step = np.minimum(t, (widths - 1)[:, None])
        act_step = np.minimum(t[:, :W - 1], (widths - 2)[:, None])
        obs_idx = self.obs_offsets[eps][:, None] + starts[:, None] + obs_step
        act_idx = self.act_offsets[eps][:, None] + starts[:, None] + act_step
        goal_idx = self.obs_offsets[eps] + starts + widths - 1
        return {
            "obs": self.obs[obs_idx],
            "actions": actions_to_unit(self.actions[act_idx]),
            "mask": (t < widths[:, None]).astype(np.float32),
            "width": widths.astype(np.int32),
            "goal": self.obs[goal_idx],
        }


@dataclass
class LangExample:
    """One annotated window. label is a task id or a motion tag; instruction
    is the sentence the annotator wrote for it."""
    ep: int
    start: int
    width: int
    label: str
    instruction: str


def _event_window(n_obs, tick, w, rng):
    """Pick a start so the window of w observations covers the transition
    that fired at `tick` (obs tick-1 -> tick)."""
    lo = max(0, tick - w + 1)
    hi = min(tick - 1, n_obs - w)
    return int(rng.integers(lo, hi + 1)), w


def _net_motion_label(obs, start, width):
    last = start + width - 1
    dx = float(obs[last, 0] - obs[start, 0])
    dy = float(obs[last, 1] - obs[start, 1])
    if max(abs(dx), abs(dy)) < MOTION_STILL_EPS:
        return "do_nothing"
    if abs(dx) >= abs(dy):
        return "motion_right" if dx > 0 else "motion_left"
    return "motion_down" if dy > 0 else "motion_up"


def pair_with_language(episodes, budget, phrase_fn, seed=0,
                       motion_fraction=MOTION_FRACTION,
                       w_low=W_LOW, w_high=W_HIGH):
    """Spend an annotation budget on hindsight descriptions of play windows.

    Each row is independently a motion row with the given probability, so
    every prefix of the result keeps the same composition; budget sweeps can
    take prefixes of one pool instead of resampling.
    phrase_fn(label, rng) -> str writes the sentence for a label.
    """
    from .seeding import rng_for

    rng = rng_for("annotator", seed)
    events = []
    for i, ep in enumerate(episodes):
        for name, tick in ep.events:
            if ep.length + 1 >= w_low:
                events.append((i, name, tick))
    if not events:
        raise DataError("no events anywhere in the play stream")
    order = rng.permutation(len(events))
    cursor = 0

    rows = []
    while len(rows) < budget:
        if rng.uniform() < motion_fraction:
            row = _sample_motion_row(episodes, rng, phrase_fn, w_low, w_high)
            if row is not None:
                rows.append(row)
                continue
            # fall through to an event row when quiet windows are scarce
        if cursor >= len(order):
            order = rng.permutation(len(events))
            cursor = 0
        ei, name, tick = events[order[cursor]]
        cursor += 1
        n_obs = episodes[ei].length + 1
        w = int(rng.integers(w_low, min(w_high, n_obs) + 1))
        start, width = _event_window(n_obs, tick, w, rng)
        rows.append(LangExample(ei, start, width, name, phrase_fn(name, rng)))
    return rows


def _sample_motion_row(episodes, rng, phrase_fn, w_low, w_high, tries=200):
    long_enough = [i for i, ep in enumerate(episodes) if ep.length + 1 >= w_low]
    if not long_enough:
        return None
    for _ in range(tries):
        ei = long_enough[int(rng.integers(len(long_enough)))]
        ep = episodes[ei]
        n_obs = ep.length + 1
        w = int(rng.integers(w_low, min(w_high, n_obs) + 1))
        start = int(rng.integers(0, n_obs - w + 1))
        if any(start < t <= start + w - 1 for _, t in ep.events):
            continue
        label = _net_motion_label(ep.observations, start, w)
        return LangExample(ei, start, w, label, phrase_fn(label, rng))
    return None
