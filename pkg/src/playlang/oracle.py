"""Scripted teleoperation: long play streams and single-task demos.

Controllers are generators that read the live environment state through a
small mutable reference and yield one Action per tick. They recompute deltas
from the current state every tick, so the per-tick Gaussian jitter the
collectors add self-corrects instead of accumulating.

Variety lives in the paths, decisions live in the state. Travel legs
wander, deflect off course, and recover, so a policy that drifts finds
itself in familiar territory; but every commitment (closing on a target,
letting go over a container) happens at one fixed distance. A commitment
that varied per approach would be invisible in the observations, and an
imitator could only time it by memorizing trajectories, which does not
transfer to its own rollouts.

Path discipline keeps behaviors from interfering. Approach legs travel with
the gripper open (an open hand cannot press, drag, or grasp anything); the
gripper closes only at a block, a handle, or a button. Carries that end in
the shelf area climb above the button row first. Table drops land inside a
margin-shrunk block home box that stays clear of the button and drawer
handle radii.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .env import (
    ARM_SPEED, ARTICULATION_RATE, BUTTONS, BLOCK_INIT_RECT, DOOR_TRAVEL,
    DRAWER_TRAVEL, TASKS, Action, EnvState, PlaygroundEnv, door_handle,
    drawer_handle, observation,
)
from .seeding import rng_for, stable_hash

NOISE_SIGMA = 0.005       # arm jitter added to every collected tick
STEP_BASE = 0.045         # controller speed, leaves headroom for jitter
CLOSE_DIST = 0.022        # the hand always closes at this distance
RELEASE_DIST = 0.02       # container drops always let go at this distance
DEFLECT_P = 0.5           # chance a travel leg takes one wrong-way excursion
DRAG_CATCH = 0.05         # beyond this the hand has lost the handle
PLAY_CHUNK = 1000         # stream is cut into episodes of this many ticks
BEHAVIOR_CAP = 300        # play gives up on a behavior after this long
DEMO_CAP = 200
WANDER_P = 0.35

# table drops stay inside this sub-box of the block home area so a resting
# block is always > 4 sigma clear of the blue button and the drawer handle
TABLE_DROP_RECT = (0.48, 0.60, 0.54, 0.66)
DROP_POINTS = {"drawer": (0.76, 0.635), "trash": (0.92, 0.80), "shelf": (0.18, 0.32)}

PLAY_BEHAVIORS = TASKS + ("place_on_shelf", "place_on_table")


class OracleError(RuntimeError):
    pass


@dataclass
class Episode:
    """One contiguous recorded segment. observations has one more row than
    actions; events carry ticks in 1..T matching the observation index that
    follows the step."""
    observations: np.ndarray
    actions: np.ndarray
    events: list
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.actions.shape[0]


class _StateRef:
    __slots__ = ("s",)

    def __init__(self, s=None):
        self.s = s


def _clip_step(v: float) -> float:
    return min(max(v, -STEP_BASE), STEP_BASE)


def _deflection(rng):
    """Wrong-way burst: a few ticks of one random direction at near-full
    speed. Recovering from these is what teaches a policy that overshooting
    a target is ordinary and correctable, not the start of a retreat."""
    ticks = int(rng.integers(2, 5))
    ang = float(rng.uniform(0.0, 2.0 * np.pi))
    spd = STEP_BASE * float(rng.uniform(0.5, 1.0))
    return ticks, spd * float(np.cos(ang)), spd * float(np.sin(ang))


def _step_toward(ref, tx, ty, grip, tol=0.01, cap=200, rng=None):
    """Straight travel leg. Passing rng arms at most one mid-route
    deflection, fired the first time the hand gets near the target."""
    deflect_at = None
    if rng is not None and rng.uniform() < DEFLECT_P:
        deflect_at = float(rng.uniform(0.06, 0.25))
    deflect_left = 0
    dux = duy = 0.0
    for _ in range(cap):
        s = ref.s
        dx, dy = tx - s.arm_x, ty - s.arm_y
        if abs(dx) <= tol and abs(dy) <= tol:
            return True
        if deflect_left > 0:
            deflect_left -= 1
            yield Action(dux, duy, grip)
            continue
        if deflect_at is not None and (dx * dx + dy * dy) ** 0.5 <= deflect_at:
            deflect_at = None
            deflect_left, dux, duy = _deflection(rng)
            deflect_left -= 1
            yield Action(dux, duy, grip)
            continue
        yield Action(_clip_step(dx), _clip_step(dy), grip)
    return False


def _approach(ref, rng, target, cap=200, clear_block=False):
    """Open-handed travel to within CLOSE_DIST of a possibly moving target,
    braking on the final leg so the stop lands just inside the line instead
    of deep past it. Returns False if the target never came inside the
    closing distance before the tick cap.

    clear_block holds the closure until the resting block is outside grasp
    range, so an engage meant for a handle cannot pick the block up instead;
    every handle sits far enough from the block rest areas that hugging the
    handle always clears it."""
    deflect_at = float(rng.uniform(0.05, 0.16)) if rng.uniform() < DEFLECT_P else None
    deflect_left = 0
    dux = duy = 0.0
    for _ in range(cap):
        tx, ty = target()
        s = ref.s
        dx, dy = tx - s.arm_x, ty - s.arm_y
        d = (dx * dx + dy * dy) ** 0.5
        if d <= CLOSE_DIST:
            if not clear_block:
                return True
            bd = ((s.block_x - s.arm_x) ** 2 + (s.block_y - s.arm_y) ** 2) ** 0.5
            if bd > 0.055:
                return True
        if deflect_left > 0:
            deflect_left -= 1
            yield Action(dux, duy, 0.0)
            continue
        if deflect_at is not None and d <= deflect_at:
            deflect_at = None
            deflect_left, dux, duy = _deflection(rng)
            deflect_left -= 1
            yield Action(dux, duy, 0.0)
            continue
        scale = min(STEP_BASE, max(d - 0.8 * CLOSE_DIST, 0.004)) / max(d, 1e-9)
        yield Action(dx * scale, dy * scale, 0.0)
    return False


def _grasp(ref, rng, strict):
    for _ in range(3):
        yield from _approach(ref, rng, lambda: (ref.s.block_x, ref.s.block_y))
        s = ref.s
        yield Action(_clip_step(s.block_x - s.arm_x), _clip_step(s.block_y - s.arm_y), 1.0)
        if ref.s.block_zone == "held":
            return True
        yield Action(0.0, 0.0, 0.0)  # reopen to get a fresh closing edge
    if strict:
        raise OracleError("could not grasp the block")
    return False


def _carry_to(ref, rng, tx, ty, release_tol=0.012):
    """Move the held block to (tx, ty) and let go. Shelf-bound carries climb
    above the button row before heading left."""
    if tx <= 0.44 and ref.s.arm_y > 0.45:
        yield from _step_toward(ref, ref.s.arm_x, 0.43, 1.0, tol=0.015)
    yield from _step_toward(ref, tx, ty, 1.0, tol=release_tol, rng=rng)
    yield Action(0.0, 0.0, 0.0)


def _drag(ref, rng, which, direction, strict):
    """Pull an articulation to its limit. direction +1 opens, -1 closes.

    The handle only moves while dragged, so it can never outrun the hand;
    the hand pulls at the articulation's own speed cap plus a little
    headroom and lets the handle ride along underneath. That keeps the
    whole pull inside one closed-grip run instead of a pulse train. Jitter
    makes the hand drift slowly ahead; engaging slightly behind the handle
    buys drift room, and if the hand does walk off the handle it reopens
    and re-engages.
    """
    handle = door_handle if which == "door" else drawer_handle
    pos = (lambda: ref.s.door_pos) if which == "door" else (lambda: ref.s.drawer_pos)
    travel = DOOR_TRAVEL if which == "door" else DRAWER_TRAVEL
    pull = direction * (ARTICULATION_RATE * travel + 0.002)

    def engage_point():
        hx, hy = handle(pos())
        if which == "door":
            return (hx - direction * 0.01, hy)
        return (hx, hy - direction * 0.01)

    for _ in range(4):
        ok = yield from _approach(ref, rng, engage_point, clear_block=True)
        if not ok:
            break
        for _ in range(200):
            done = pos() >= 0.97 if direction > 0 else pos() <= 0.03
            if done:
                yield Action(0.0, 0.0, 0.0)
                return True
            s = ref.s
            hx, hy = handle(pos())
            if abs(hx - s.arm_x) > DRAG_CATCH or abs(hy - s.arm_y) > DRAG_CATCH:
                yield Action(0.0, 0.0, 0.0)
                break
            if which == "door":
                yield Action(pull, _clip_step(hy - s.arm_y), 1.0)
            else:
                yield Action(_clip_step(hx - s.arm_x), pull, 1.0)
        else:
            break
    if strict:
        raise OracleError(f"{which} drag stalled")
    return False


def _press(ref, rng, idx, strict):
    bx, by = BUTTONS[idx][1]
    yield from _approach(ref, rng, lambda: (bx, by))
    for _ in range(16):
        if ref.s.button_depress[idx] >= 0.95:
            yield Action(0.0, 0.0, 0.0)
            return
        s = ref.s
        yield Action(_clip_step(bx - s.arm_x), _clip_step(by - s.arm_y), 1.0)
    if strict:
        raise OracleError("button never bottomed out")


def _drop_point(zone, rng):
    if zone == "table":
        x0, y0, x1, y1 = TABLE_DROP_RECT
        return float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))
    return DROP_POINTS[zone]


def _place(ref, rng, zone, strict, allow_open=True):
    if zone == "drawer" and ref.s.drawer_pos < 0.6:
        if not allow_open:
            raise OracleError("drawer is shut; single-purpose demo impossible")
        yield from _drag(ref, rng, "drawer", +1, strict)
    if ref.s.block_zone != "held":
        if not (yield from _grasp(ref, rng, strict)):
            return
    # containers tolerate letting go a little out; table and shelf targets
    # keep the tight tolerance that their clearance margins were sized for
    tol = RELEASE_DIST if zone in ("drawer", "trash") else 0.012
    yield from _carry_to(ref, rng, *_drop_point(zone, rng), release_tol=tol)


def _lift(ref, rng, strict):
    if ref.s.block_zone != "held":
        if not (yield from _grasp(ref, rng, strict)):
            return
    top = ref.s.grasp_y - 0.13
    for _ in range(40):
        if ref.s.grasp_y - ref.s.arm_y >= 0.115:
            break
        yield Action(0.0, _clip_step(top - ref.s.arm_y), 1.0)
    else:
        if strict:
            raise OracleError("lift stalled")
        return
    # park the block back on the table so the hand ends free
    yield from _carry_to(ref, rng, *_drop_point("table", rng))


def _wander(ref, rng, ticks_min=20, ticks_max=60):
    ticks = int(rng.integers(ticks_min, ticks_max + 1))
    tx, ty = (float(v) for v in rng.uniform(0.08, 0.92, 2))
    for _ in range(ticks):
        s = ref.s
        dx, dy = tx - s.arm_x, ty - s.arm_y
        if abs(dx) < 0.02 and abs(dy) < 0.02:
            tx, ty = (float(v) for v in rng.uniform(0.08, 0.92, 2))
            dx, dy = tx - s.arm_x, ty - s.arm_y
        yield Action(_clip_step(dx), _clip_step(dy), 0.0)


def make_script(name, ref, rng, strict=False, allow_open=True):
    """Generator of Actions for one behavior, reading state through ref."""
    if name == "open_door":
        return _drag(ref, rng, "door", +1, strict)
    if name == "close_door":
        return _drag(ref, rng, "door", -1, strict)
    if name == "open_drawer":
        return _drag(ref, rng, "drawer", +1, strict)
    if name == "close_drawer":
        return _drag(ref, rng, "drawer", -1, strict)
    if name in ("press_red", "press_green", "press_blue"):
        idx = ("press_red", "press_green", "press_blue").index(name)
        return _press(ref, rng, idx, strict)
    if name == "lift_block":
        return _lift(ref, rng, strict)
    if name == "block_in_drawer":
        return _place(ref, rng, "drawer", strict, allow_open)
    if name == "block_in_trash":
        return _place(ref, rng, "trash", strict, allow_open)
    if name == "place_on_shelf":
        return _place(ref, rng, "shelf", strict, allow_open)
    if name == "place_on_table":
        return _place(ref, rng, "table", strict, allow_open)
    if name == "wander":
        return _wander(ref, rng)  # play passes bounds directly
    raise OracleError(f"no script for behavior {name!r}")


def play_eligible(name, state: EnvState) -> bool:
    """Whether a behavior makes sense right now during free play."""
    if name == "open_door":
        return state.door_pos <= 0.7
    if name == "close_door":
        return state.door_pos >= 0.3
    if name == "open_drawer":
        return state.drawer_pos <= 0.7
    if name == "close_drawer":
        return state.drawer_pos >= 0.3
    if name == "block_in_drawer":
        return state.block_zone != "drawer"
    if name == "block_in_trash":
        return state.block_zone != "trash"
    if name == "place_on_shelf":
        return state.block_zone != "shelf"
    if name == "place_on_table":
        return state.block_zone != "table"
    return True  # presses, lift, wander


def demo_eligible(task, state: EnvState) -> bool:
    """Stricter gate for single-purpose demos started from a play state."""
    if state.block_zone == "held":
        return False
    if task == "block_in_drawer":
        return state.drawer_pos >= 0.6 and state.block_zone != "drawer"
    return play_eligible(task, state)


def demo_allowed_events(task) -> set:
    """Events a clean demo of this task may contain. Hauling the block up
    out of the trash or a drawer legitimately fires the lift event."""
    if task in ("block_in_drawer", "block_in_trash"):
        return {task, "lift_block"}
    return {task}


def _noisy(action: Action, rng, sigma=NOISE_SIGMA) -> Action:
    jitter = rng.normal(0.0, sigma, 2)
    dx = min(max(action.dx + float(jitter[0]), -ARM_SPEED), ARM_SPEED)
    dy = min(max(action.dy + float(jitter[1]), -ARM_SPEED), ARM_SPEED)
    return Action(dx, dy, action.gripper)


def _run_play(seed, total_ticks, chunk_len=PLAY_CHUNK, on_tick=None,
              noise_sigma=NOISE_SIGMA, wander_ticks=(20, 60)):
    env = PlaygroundEnv()
    obs = env.reset("neutral", seed=seed)
    ref = _StateRef(env.state)
    rng = rng_for("play-behaviors", seed)
    noise = rng_for("play-noise", seed)

    episodes = []
    chunk_init = env.state.copy()
    chunk_obs = [obs]
    chunk_actions = []
    chunk_events = []
    gen = None
    t = 0
    while t < total_ticks:
        if gen is None:
            if rng.uniform() < WANDER_P:
                gen = _wander(ref, rng, *wander_ticks)
            else:
                pool = [b for b in PLAY_BEHAVIORS if play_eligible(b, env.state)]
                name = pool[int(rng.integers(len(pool)))]
                gen = make_script(name, ref, rng, strict=False)
            gen = itertools.islice(gen, BEHAVIOR_CAP)
        ref.s = env.state
        try:
            act = next(gen)
        except StopIteration:
            gen = None
            continue
        act = _noisy(act, noise, noise_sigma)
        obs, events = env.step(act)
        chunk_actions.append(act.as_array())
        chunk_obs.append(obs)
        t += 1
        t_rel = len(chunk_actions)
        chunk_events.extend((e.task, t_rel) for e in events)
        if on_tick is not None:
            on_tick(env, t)
        if len(chunk_actions) == chunk_len:
            episodes.append(Episode(
                observations=np.stack(chunk_obs),
                actions=np.stack(chunk_actions),
                events=chunk_events,
                meta={"kind": "play", "seed": seed,
                      "initial_state": chunk_init.to_dict()},
            ))
            chunk_init = env.state.copy()
            chunk_obs = [obs]
            chunk_actions = []
            chunk_events = []
    if chunk_actions:
        episodes.append(Episode(
            observations=np.stack(chunk_obs),
            actions=np.stack(chunk_actions),
            events=chunk_events,
            meta={"kind": "play", "seed": seed,
                  "initial_state": chunk_init.to_dict()},
        ))
    return episodes


def collect_play(total_ticks, seed, chunk_len=PLAY_CHUNK,
                 noise_sigma=NOISE_SIGMA, wander_ticks=(20, 60)):
    """One long unscripted-looking life, cut into fixed-length episodes.
    Behavior boundaries ignore the cuts; windows never span episodes."""
    return _run_play(seed, total_ticks, chunk_len,
                     noise_sigma=noise_sigma, wander_ticks=wander_ticks)


class _EnoughStates(Exception):
    pass


def sample_reference_states(n, seed, spacing=40):
    """Hand-free snapshots spaced along a play stream, for starting demos
    and correlated evaluation resets from realistic mid-play situations."""
    states = []

    def keep(env, t):
        if t % spacing == 0 and env.state.block_zone != "held":
            states.append(env.state.copy())
            if len(states) >= n:
                raise _EnoughStates

    budget = n * spacing * 3 + 2000
    try:
        _run_play(seed, budget, chunk_len=budget, on_tick=keep)
    except _EnoughStates:
        pass
    if len(states) < n:
        raise OracleError(f"only {len(states)} reference states in {budget} ticks")
    return states


def run_script_on_env(env, task, rng, cap=DEMO_CAP, noise=None, strict=True,
                      allow_open=True):
    """Run one scripted behavior to completion on a reset env. Returns an
    Episode without meta; the caller owns labeling."""
    ref = _StateRef(env.state)
    gen = make_script(task, ref, rng, strict=strict, allow_open=allow_open)
    obs_rows = [observation(env.state)]
    action_rows = []
    events = []
    for _ in range(cap):
        ref.s = env.state
        try:
            act = next(gen)
        except StopIteration:
            break
        if noise is not None:
            act = _noisy(act, noise)
        obs, evs = env.step(act)
        action_rows.append(act.as_array())
        obs_rows.append(obs)
        events.extend((e.task, len(action_rows)) for e in evs)
    else:
        if strict:
            raise OracleError(f"{task} still running after {cap} ticks")
    if not action_rows:
        raise OracleError(f"{task} script produced no actions")
    return Episode(np.stack(obs_rows), np.stack(action_rows), events, {})


def collect_demos(task, n, seed, refs=None):
    """n clean demos of one task, each started from a mid-play state. A demo
    is kept only if the task's event fired and nothing off-script happened."""
    if task not in TASKS:
        raise OracleError(f"unknown task {task!r}")
    if refs is None:
        refs = sample_reference_states(6 * n + 40, stable_hash(f"refs|{task}") ^ seed)
    allowed = demo_allowed_events(task)
    pool = (s for s in refs if demo_eligible(task, s))
    env = PlaygroundEnv()
    demos = []
    for i in range(n):
        last_err = None
        for _ in range(3):
            ref_state = next(pool, None)
            if ref_state is None:
                raise OracleError(f"reference pool exhausted for {task} "
                                  f"({len(demos)}/{n} collected)")
            env.reset("correlated", reference=ref_state)
            rng = rng_for("demo", task, seed, i)
            noise = rng_for("demo-noise", task, seed, i)
            try:
                ep = run_script_on_env(env, task, rng, noise=noise,
                                       strict=True, allow_open=False)
            except OracleError as e:
                last_err = e
                continue
            fired = {name for name, _ in ep.events}
            if task in fired and fired <= allowed:
                start = ref_state.copy()
                start.tick = 0
                ep.meta = {"kind": "demo", "task": task, "seed": seed,
                           "index": i, "initial_state": start.to_dict()}
                demos.append(ep)
                break
            last_err = OracleError(f"impure demo events {sorted(fired)}")
        else:
            raise OracleError(f"demo {i} of {task} failed 3 starts: {last_err}")
    return demos


class ScriptRunner:
    """Tick-at-a-time adapter so the eval harness can use the scripts as a
    reference policy. Deterministic: no jitter."""

    def __init__(self, seed=0):
        self._ref = _StateRef()
        self._rng = rng_for("script-runner", seed)
        self._gen = None

    def set_task(self, task):
        self._ref.s = None
        self._gen = make_script(task, self._ref, self._rng, strict=False)

    def act(self, state: EnvState) -> Action:
        self._ref.s = state
        if self._gen is None:
            return Action(0.0, 0.0, 0.0)
        try:
            return next(self._gen)
        except StopIteration:
            self._gen = None
            return Action(0.0, 0.0, 0.0)
