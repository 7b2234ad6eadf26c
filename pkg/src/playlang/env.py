"""Deterministic 2D desk playground.

A point arm moves in the unit square (y grows downward, so "up" means
smaller y). The desk holds a sliding door over a shelf recess, a pull-out
drawer, three light buttons, a movable block and a trash bin. Kinematics
only: the block moves when held, articulations move when their handle is
dragged, nothing collides.

Interaction rules (all distances Euclidean):
  - handle drag: arm within INTERACTION_R of the handle, gripper closed,
    hand empty. The articulation follows the arm's axis delta.
  - grasp: gripper crosses from open to closed while the arm is within
    GRASP_R of the block. The block tracks the arm until release.
  - button: while the arm overlaps a button with gripper closed, depression
    rises by BUTTON_PRESS_RATE per tick, otherwise decays. A rising cross of
    PRESS_T toggles that light.
  - release: gripper opens; the block's zone comes from where it was let go
    (trash circle, open drawer rect, shelf rect, else table) and is latched
    until the next grasp.

Everything downstream (oracle scripts, relabeling, the eval harness) treats
this module's constants as the world definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

ARM_SPEED = 0.05          # max |delta| per axis per tick
INTERACTION_R = 0.06      # handle engagement radius
GRASP_R = 0.05            # block grasp radius
BUTTON_R = 0.04           # button overlap radius
NEUTRAL_ARM = (0.5, 0.9)

DOOR_HANDLE_X0 = 0.22     # handle x at door_pos 0 (closed, left)
DOOR_TRAVEL = 0.28        # handle x at door_pos 1 is X0 + TRAVEL
ARTICULATION_RATE = 0.03  # per-tick cap on door/drawer travel: heavy, must be pulled
DOOR_HANDLE_Y = 0.26

DRAWER_HANDLE_X = 0.60    # handle sticks out on the drawer's left side
DRAWER_HANDLE_Y0 = 0.52   # handle y at drawer_pos 0 (closed)
DRAWER_TRAVEL = 0.16      # drawer pulls out downward

BUTTONS = (("red", (0.16, 0.62)), ("green", (0.28, 0.62)), ("blue", (0.40, 0.62)))
BUTTON_PRESS_RATE = 0.12   # slow enough that a press takes a deliberate dwell
BUTTON_RELEASE_RATE = 0.25

TRASH_CENTER = (0.92, 0.80)
TRASH_R = 0.07
SHELF_RECT = (0.14, 0.18, 0.56, 0.34)     # x0, y0, x1, y1 behind the door
DRAWER_RECT = (0.66, 0.55, 0.86, 0.72)    # block containment when open
DRAWER_OPEN_MIN = 0.5                     # drawer must be at least this open

OPEN_T = 0.8              # articulation counts as open at/above this
CLOSE_T = 0.2             # and closed at/below this
PRESS_T = 0.9             # momentary press threshold on depression
LIFT_DELTA = 0.1          # required rise of the arm while holding

BLOCK_INIT_RECT = (0.46, 0.58, 0.54, 0.68)  # clear of drawer handle by > GRASP_R
DOOR_INIT = (0.35, 0.65)    # reset draws articulations mid-travel so both
DRAWER_INIT = (0.35, 0.65)  # directions stay achievable from the first tick

OBS_DIM = 13
ACTION_DIM = 3

TASKS = (
    "open_door", "close_door", "open_drawer", "close_drawer",
    "press_red", "press_green", "press_blue",
    "lift_block", "block_in_drawer", "block_in_trash",
)

ZONES = ("table", "shelf", "drawer", "trash", "held")
_ZONE_CODE = {"table": 0.0, "shelf": 0.0, "drawer": 0.5, "trash": 1.0, "held": 0.0}

ACTION_LOW = np.array([-ARM_SPEED, -ARM_SPEED, 0.0], dtype=np.float32)
ACTION_HIGH = np.array([ARM_SPEED, ARM_SPEED, 1.0], dtype=np.float32)


class EnvError(ValueError):
    pass


@dataclass
class Action:
    dx: float
    dy: float
    gripper: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.gripper], dtype=np.float32)

    @staticmethod
    def from_array(a) -> "Action":
        return Action(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class TaskEvent:
    task: str
    tick: int


@dataclass
class EnvState:
    """Full world state. grasp_y and lift_fired are bookkeeping the
    observation hides but replay and predicates need."""
    arm_x: float = NEUTRAL_ARM[0]
    arm_y: float = NEUTRAL_ARM[1]
    gripper: float = 0.0
    door_pos: float = 0.5
    drawer_pos: float = 0.5
    button_depress: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    light_on: list = field(default_factory=lambda: [False, False, False])
    block_x: float = 0.5
    block_y: float = 0.6
    block_zone: str = "table"
    grasp_y: float = 0.0
    lift_fired: bool = False
    tick: int = 0
    # articulation event hysteresis: open/close fire on first entry into a
    # band since last being in the other, so jitter at a threshold cannot
    # chatter out event trains
    door_latch: str = "mid"
    drawer_latch: str = "mid"

    def copy(self) -> "EnvState":
        return EnvState(
            self.arm_x, self.arm_y, self.gripper, self.door_pos, self.drawer_pos,
            list(self.button_depress), list(self.light_on),
            self.block_x, self.block_y, self.block_zone,
            self.grasp_y, self.lift_fired, self.tick,
            self.door_latch, self.drawer_latch,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "EnvState":
        return EnvState(**d)


def door_handle(door_pos: float) -> tuple[float, float]:
    return (DOOR_HANDLE_X0 + door_pos * DOOR_TRAVEL, DOOR_HANDLE_Y)


def drawer_handle(drawer_pos: float) -> tuple[float, float]:
    return (DRAWER_HANDLE_X, DRAWER_HANDLE_Y0 + drawer_pos * DRAWER_TRAVEL)


def _dist(ax, ay, bx, by) -> float:
    return math.hypot(ax - bx, ay - by)


def _in_rect(x, y, rect) -> bool:
    return rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]


def articulation_band(pos: float) -> str:
    if pos >= OPEN_T:
        return "open"
    if pos <= CLOSE_T:
        return "closed"
    return "mid"


def classify_zone(x: float, y: float, drawer_pos: float) -> str:
    if _dist(x, y, *TRASH_CENTER) <= TRASH_R:
        return "trash"
    if drawer_pos >= DRAWER_OPEN_MIN and _in_rect(x, y, DRAWER_RECT):
        return "drawer"
    if _in_rect(x, y, SHELF_RECT):
        return "shelf"
    return "table"


def observation(state: EnvState) -> np.ndarray:
    """13 floats: proprio (arm x, arm y, gripper) then scene (block x/y,
    container code, held flag, shelf flag, door, drawer, 3 depressions)."""
    z = state.block_zone
    return np.array([
        state.arm_x, state.arm_y, state.gripper,
        state.block_x, state.block_y,
        _ZONE_CODE[z],
        1.0 if z == "held" else 0.0,
        1.0 if z == "shelf" else 0.0,
        state.door_pos, state.drawer_pos,
        state.button_depress[0], state.button_depress[1], state.button_depress[2],
    ], dtype=np.float32)


def task_satisfied(task: str, segment_start: EnvState, current: EnvState) -> bool:
    """Crossing predicate on (state at segment start, current state).

    Momentary tasks (buttons) hold only on the tick the threshold is met;
    callers latch. lift_block reads the arm rise since the grasp that is
    still in effect, so a segment that starts mid-hold can already be true;
    chain enumeration excludes such sequences upstream.
    """
    if task == "open_door":
        return segment_start.door_pos < OPEN_T <= current.door_pos
    if task == "close_door":
        return segment_start.door_pos > CLOSE_T >= current.door_pos
    if task == "open_drawer":
        return segment_start.drawer_pos < OPEN_T <= current.drawer_pos
    if task == "close_drawer":
        return segment_start.drawer_pos > CLOSE_T >= current.drawer_pos
    if task in ("press_red", "press_green", "press_blue"):
        i = ("press_red", "press_green", "press_blue").index(task)
        return current.button_depress[i] >= PRESS_T
    if task == "lift_block":
        return (current.block_zone == "held"
                and current.grasp_y - current.arm_y >= LIFT_DELTA)
    if task == "block_in_drawer":
        return segment_start.block_zone != "drawer" and current.block_zone == "drawer"
    if task == "block_in_trash":
        return segment_start.block_zone != "trash" and current.block_zone == "trash"
    raise EnvError(f"unknown task id: {task!r}")


class PlaygroundEnv:
    """Stateful wrapper around EnvState transitions."""

    def __init__(self):
        self._state: EnvState | None = None

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise EnvError("env not reset")
        return self._state

    def set_state(self, state: EnvState) -> None:
        self._state = state.copy()

    def reset(self, mode: str = "neutral", seed: int = 0,
              reference: EnvState | None = None) -> np.ndarray:
        """neutral: arm at the fixed pose, object poses drawn from the seed.
        correlated: restore a reference state exactly (demo starts)."""
        if mode == "correlated":
            if reference is None:
                raise EnvError("correlated reset requires a reference state")
            s = reference.copy()
            s.tick = 0
            s.door_latch = articulation_band(s.door_pos)
            s.drawer_latch = articulation_band(s.drawer_pos)
            self._state = s
            return observation(s)
        if mode != "neutral":
            raise EnvError(f"unknown reset mode: {mode!r}")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x9E11])))
        s = EnvState()
        s.arm_x, s.arm_y = NEUTRAL_ARM
        s.gripper = 0.0
        s.door_pos = float(rng.uniform(*DOOR_INIT))
        s.drawer_pos = float(rng.uniform(*DRAWER_INIT))
        s.block_x = float(rng.uniform(BLOCK_INIT_RECT[0], BLOCK_INIT_RECT[2]))
        s.block_y = float(rng.uniform(BLOCK_INIT_RECT[1], BLOCK_INIT_RECT[3]))
        s.block_zone = "table"
        s.tick = 0
        s.door_latch = articulation_band(s.door_pos)
        s.drawer_latch = articulation_band(s.drawer_pos)
        self._state = s
        return observation(s)

    def step(self, action: Action) -> tuple[np.ndarray, list[TaskEvent]]:
        s = self.state
        dx, dy, grip_cmd = float(action.dx), float(action.dy), float(action.gripper)
        if not (math.isfinite(dx) and math.isfinite(dy) and math.isfinite(grip_cmd)):
            raise EnvError(f"non-finite action at tick {s.tick}: {(dx, dy, grip_cmd)}")

        dx = min(max(dx, -ARM_SPEED), ARM_SPEED)
        dy = min(max(dy, -ARM_SPEED), ARM_SPEED)
        grip = min(max(grip_cmd, 0.0), 1.0)

        prev_grip = s.gripper
        prev_zone = s.block_zone
        prev_depress = list(s.button_depress)
        events: list[TaskEvent] = []

        s.gripper = grip
        closed = grip > 0.5

        # grasp happens at the closing edge, before the arm moves
        if (not (prev_grip > 0.5) and closed and prev_zone != "held"
                and _dist(s.arm_x, s.arm_y, s.block_x, s.block_y) <= GRASP_R):
            s.block_zone = "held"
            s.grasp_y = s.arm_y
            s.lift_fired = False

        holding = s.block_zone == "held"

        # handle engagement is a continuous contact test, checked against the
        # handle position before the arm moves; a full hand cannot grab
        hx, hy = door_handle(s.door_pos)
        drag_door = closed and not holding and _dist(s.arm_x, s.arm_y, hx, hy) <= INTERACTION_R
        gx, gy = drawer_handle(s.drawer_pos)
        drag_drawer = closed and not holding and _dist(s.arm_x, s.arm_y, gx, gy) <= INTERACTION_R

        nx = min(max(s.arm_x + dx, 0.0), 1.0)
        ny = min(max(s.arm_y + dy, 0.0), 1.0)
        applied_dx = nx - s.arm_x
        applied_dy = ny - s.arm_y
        s.arm_x, s.arm_y = nx, ny

        if drag_door:
            d = min(max(applied_dx / DOOR_TRAVEL, -ARTICULATION_RATE), ARTICULATION_RATE)
            s.door_pos = min(max(s.door_pos + d, 0.0), 1.0)
        if drag_drawer:
            d = min(max(applied_dy / DRAWER_TRAVEL, -ARTICULATION_RATE), ARTICULATION_RATE)
            s.drawer_pos = min(max(s.drawer_pos + d, 0.0), 1.0)

        if holding:
            s.block_x, s.block_y = s.arm_x, s.arm_y

        for i, (_, (bx, by)) in enumerate(BUTTONS):
            pressed = closed and _dist(s.arm_x, s.arm_y, bx, by) <= BUTTON_R
            d = s.button_depress[i] + (BUTTON_PRESS_RATE if pressed else -BUTTON_RELEASE_RATE)
            s.button_depress[i] = min(max(d, 0.0), 1.0)

        if holding and not closed:
            # release: zone latched from the drop point until the next grasp
            s.block_zone = classify_zone(s.block_x, s.block_y, s.drawer_pos)
            s.lift_fired = False
            holding = False

        s.tick += 1
        t = s.tick

        # instantaneous transition events; deterministic from the trajectory
        door_band = articulation_band(s.door_pos)
        if door_band != "mid" and door_band != s.door_latch:
            s.door_latch = door_band
            name = "open_door" if door_band == "open" else "close_door"
            events.append(TaskEvent(name, t))
        drawer_band = articulation_band(s.drawer_pos)
        if drawer_band != "mid" and drawer_band != s.drawer_latch:
            s.drawer_latch = drawer_band
            name = "open_drawer" if drawer_band == "open" else "close_drawer"
            events.append(TaskEvent(name, t))
        for i, (name, _) in enumerate(BUTTONS):
            if prev_depress[i] < PRESS_T <= s.button_depress[i]:
                s.light_on[i] = not s.light_on[i]
                events.append(TaskEvent(f"press_{name}", t))
        if (s.block_zone == "held" and not s.lift_fired
                and s.grasp_y - s.arm_y >= LIFT_DELTA):
            s.lift_fired = True
            events.append(TaskEvent("lift_block", t))
        if prev_zone == "held" and s.block_zone == "drawer":
            events.append(TaskEvent("block_in_drawer", t))
        if prev_zone == "held" and s.block_zone == "trash":
            events.append(TaskEvent("block_in_trash", t))

        return observation(s), events


# ---- rendering -------------------------------------------------------------

FRAME_SIZE = 96

_BG = (30, 32, 38)
_DESK = (88, 70, 52)
_SHELF = (46, 38, 32)
_DOOR = (150, 118, 74)
_DRAWER_FACE = (118, 92, 62)
_DRAWER_CAVITY = (58, 46, 38)
_HANDLE = (228, 224, 210)
_BLOCK = (214, 164, 60)
_TRASH = (70, 74, 84)
_ARM = (240, 244, 248)
_BUTTON_DIM = {"red": (96, 34, 30), "green": (30, 92, 36), "blue": (30, 46, 104)}
_BUTTON_LIT = {"red": (235, 64, 52), "green": (62, 222, 80), "blue": (64, 120, 248)}


def _px(v: float) -> int:
    return int(round(v * (FRAME_SIZE - 1)))


def _fill_rect(img, x0, y0, x1, y1, color):
    img[max(_px(y0), 0):_px(y1) + 1, max(_px(x0), 0):_px(x1) + 1] = color


def _fill_circle(img, cx, cy, r, color):
    yy, xx = np.ogrid[:FRAME_SIZE, :FRAME_SIZE]
    mask = (xx - _px(cx)) ** 2 + (yy - _px(cy)) ** 2 <= (r * (FRAME_SIZE - 1)) ** 2
    img[mask] = color


def render(state: EnvState, size: int = FRAME_SIZE) -> np.ndarray:
    """RGB uint8 frame. Pure function of the state."""
    if size != FRAME_SIZE:
        raise EnvError(f"fixed frame size {FRAME_SIZE}, got {size}")
    img = np.empty((FRAME_SIZE, FRAME_SIZE, 3), dtype=np.uint8)
    img[:] = _BG
    _fill_rect(img, 0.04, 0.14, 0.90, 0.74, _DESK)
    _fill_rect(img, *SHELF_RECT, _SHELF)

    # door panel slides over the shelf recess, anchored at its handle
    hx, hy = door_handle(state.door_pos)
    _fill_rect(img, hx - 0.08, SHELF_RECT[1], hx + 0.08, SHELF_RECT[3], _DOOR)
    _fill_circle(img, hx, hy, 0.016, _HANDLE)

    # drawer cavity and the face that slides down as it opens
    gx, gy = drawer_handle(state.drawer_pos)
    _fill_rect(img, DRAWER_RECT[0], DRAWER_RECT[1], DRAWER_RECT[2], DRAWER_RECT[3], _DRAWER_CAVITY)
    _fill_rect(img, DRAWER_RECT[0], gy - 0.035, DRAWER_RECT[2], gy + 0.035, _DRAWER_FACE)
    _fill_circle(img, gx, gy, 0.016, _HANDLE)

    for i, (name, (bx, by)) in enumerate(BUTTONS):
        lit = state.light_on[i]
        color = _BUTTON_LIT[name] if lit else _BUTTON_DIM[name]
        radius = BUTTON_R * (1.0 - 0.35 * state.button_depress[i])
        _fill_circle(img, bx, by, radius, color)

    _fill_circle(img, *TRASH_CENTER, TRASH_R, _TRASH)
    _fill_circle(img, TRASH_CENTER[0], TRASH_CENTER[1], TRASH_R * 0.55, _BG)

    if state.block_zone != "held":
        half = 0.018
        _fill_rect(img, state.block_x - half, state.block_y - half,
                   state.block_x + half, state.block_y + half, _BLOCK)

    ax, ay = state.arm_x, state.arm_y
    px, py = _px(ax), _px(ay)
    img[py, max(px - 3, 0):min(px + 4, FRAME_SIZE)] = _ARM
    img[max(py - 3, 0):min(py + 4, FRAME_SIZE), px] = _ARM
    if state.block_zone == "held":
        _fill_rect(img, ax - 0.018, ay - 0.018, ax + 0.018, ay + 0.018, _BLOCK)
    if state.gripper > 0.5:
        _fill_circle(img, ax, ay, 0.012, _ARM)

    return img
