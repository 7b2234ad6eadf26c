"""Playground environment behavior.

Most tests build EnvState objects directly and drive step() with exact
actions so crossings land on known ticks.
"""

import math

import numpy as np
import pytest

from playlang.env import (
    ARM_SPEED, ARTICULATION_RATE, BLOCK_INIT_RECT, BUTTONS, DOOR_INIT,
    DRAWER_INIT, NEUTRAL_ARM, OBS_DIM, TASKS, Action, EnvError, EnvState,
    PlaygroundEnv, classify_zone, door_handle, drawer_handle, observation,
    render, task_satisfied,
)
from playlang.seeding import rng_for


def make_env(state: EnvState) -> PlaygroundEnv:
    env = PlaygroundEnv()
    env.set_state(state)
    return env


def hold_still(grip: float) -> Action:
    return Action(0.0, 0.0, grip)


# ---- reset ------------------------------------------------------------------


def test_reset_neutral_deterministic():
    a, b = PlaygroundEnv(), PlaygroundEnv()
    oa = a.reset("neutral", seed=7)
    ob = b.reset("neutral", seed=7)
    assert np.array_equal(oa, ob)
    oc = b.reset("neutral", seed=8)
    assert not np.array_equal(oa, oc)


def test_reset_neutral_pose_and_ranges():
    env = PlaygroundEnv()
    for seed in range(25):
        env.reset("neutral", seed=seed)
        s = env.state
        assert (s.arm_x, s.arm_y) == NEUTRAL_ARM
        assert s.gripper == 0.0
        assert s.block_zone == "table"
        assert DOOR_INIT[0] <= s.door_pos <= DOOR_INIT[1]
        assert DRAWER_INIT[0] <= s.drawer_pos <= DRAWER_INIT[1]
        assert BLOCK_INIT_RECT[0] <= s.block_x <= BLOCK_INIT_RECT[2]
        assert BLOCK_INIT_RECT[1] <= s.block_y <= BLOCK_INIT_RECT[3]
        assert s.tick == 0


def test_reset_correlated_restores_reference():
    ref = EnvState(arm_x=0.3, arm_y=0.4, gripper=1.0, door_pos=0.83,
                   drawer_pos=0.11, block_x=0.3, block_y=0.4,
                   block_zone="held", grasp_y=0.55, tick=999)
    env = PlaygroundEnv()
    obs = env.reset("correlated", reference=ref)
    s = env.state
    assert s.tick == 0
    assert s.door_pos == ref.door_pos and s.block_zone == "held"
    assert s.grasp_y == ref.grasp_y
    expect = ref.copy()
    expect.tick = 0
    assert np.array_equal(obs, observation(expect))
    # the env must not alias the caller's state object
    ref.door_pos = 0.0
    assert env.state.door_pos == 0.83


def test_reset_correlated_requires_reference():
    with pytest.raises(EnvError):
        PlaygroundEnv().reset("correlated")


def test_reset_unknown_mode():
    with pytest.raises(EnvError):
        PlaygroundEnv().reset("warmstart")


def test_step_before_reset():
    with pytest.raises(EnvError):
        PlaygroundEnv().step(hold_still(0.0))


# ---- stepping basics --------------------------------------------------------


def test_zero_action_fixed_point():
    env = PlaygroundEnv()
    first = env.reset("neutral", seed=3)
    for _ in range(5):
        obs, events = env.step(hold_still(0.0))
        assert events == []
        assert np.array_equal(obs, first)


def test_nonfinite_action_raises():
    env = PlaygroundEnv()
    env.reset("neutral", seed=0)
    with pytest.raises(EnvError):
        env.step(Action(float("nan"), 0.0, 0.0))
    with pytest.raises(EnvError):
        env.step(Action(0.0, float("inf"), 0.0))


def test_action_clamping():
    env = make_env(EnvState(arm_x=0.5, arm_y=0.5))
    obs, _ = env.step(Action(0.5, -0.5, 1.7))
    assert obs[0] == pytest.approx(0.5 + ARM_SPEED)
    assert obs[1] == pytest.approx(0.5 - ARM_SPEED)
    assert obs[2] == 1.0


def test_workspace_clamp():
    env = make_env(EnvState(arm_x=0.99, arm_y=0.01))
    obs, _ = env.step(Action(ARM_SPEED, -ARM_SPEED, 0.0))
    assert obs[0] == 1.0 and obs[1] == 0.0


def test_observation_layout():
    s = EnvState(arm_x=0.1, arm_y=0.2, gripper=1.0, door_pos=0.4,
                 drawer_pos=0.6, button_depress=[0.1, 0.2, 0.3],
                 block_x=0.7, block_y=0.8, block_zone="drawer")
    obs = observation(s)
    assert obs.shape == (OBS_DIM,) and obs.dtype == np.float32
    expect = [0.1, 0.2, 1.0, 0.7, 0.8, 0.5, 0.0, 0.0, 0.4, 0.6, 0.1, 0.2, 0.3]
    assert np.allclose(obs, expect)


# ---- block ------------------------------------------------------------------


def test_grasp_requires_closing_edge():
    s = EnvState(arm_x=0.5, arm_y=0.6, gripper=1.0, block_x=0.5, block_y=0.6)
    env = make_env(s)
    env.step(hold_still(1.0))  # already closed, no edge
    assert env.state.block_zone == "table"
    env.step(hold_still(0.0))
    env.step(hold_still(1.0))  # open -> closed at the block
    assert env.state.block_zone == "held"


def test_grasp_radius():
    s = EnvState(arm_x=0.5, arm_y=0.6, block_x=0.58, block_y=0.6)
    env = make_env(s)
    env.step(hold_still(1.0))  # 0.08 away, too far
    assert env.state.block_zone == "table"


def test_block_follows_arm_and_release_zones():
    s = EnvState(arm_x=0.5, arm_y=0.6, block_x=0.5, block_y=0.6, drawer_pos=0.9)
    env = make_env(s)
    env.step(hold_still(1.0))
    obs, _ = env.step(Action(0.05, 0.007, 1.0))
    assert obs[3] == obs[0] and obs[4] == obs[1]  # block rides the arm
    assert obs[6] == 1.0  # held flag
    for _ in range(4):
        env.step(Action(0.05, 0.007, 1.0))
    # now inside the drawer rect with the drawer open
    st = env.state
    assert classify_zone(st.block_x, st.block_y, st.drawer_pos) == "drawer"
    obs, events = env.step(hold_still(0.0))
    assert env.state.block_zone == "drawer"
    assert obs[5] == 0.5 and obs[6] == 0.0
    assert [e.task for e in events] == ["block_in_drawer"]


@pytest.mark.parametrize("x,y,drawer_pos,zone", [
    (0.92, 0.80, 0.0, "trash"),
    (0.76, 0.63, 0.9, "drawer"),
    (0.76, 0.63, 0.2, "table"),   # drawer shut, rect does not count
    (0.30, 0.26, 0.0, "shelf"),
    (0.50, 0.63, 0.9, "table"),
])
def test_classify_zone(x, y, drawer_pos, zone):
    assert classify_zone(x, y, drawer_pos) == zone


def test_trash_event_and_latch():
    s = EnvState(arm_x=0.92, arm_y=0.80, block_x=0.92, block_y=0.80)
    env = make_env(s)
    env.step(hold_still(1.0))
    assert env.state.block_zone == "held"
    _, events = env.step(hold_still(0.0))
    assert [e.task for e in events] == ["block_in_trash"]
    # zone is latched until the next grasp even if the drawer moves under it
    assert env.state.block_zone == "trash"
    env.step(hold_still(0.0))
    assert env.state.block_zone == "trash"


# ---- articulations ----------------------------------------------------------


def drag_door(env, steps, direction):
    # chase the moving handle; the articulation advances at most
    # ARTICULATION_RATE per tick no matter how hard the arm yanks
    events = []
    for _ in range(steps):
        hx, _ = door_handle(env.state.door_pos)
        dx = (hx - env.state.arm_x) + direction * ARM_SPEED
        _, ev = env.step(Action(dx, 0.0, 1.0))
        events.extend(ev)
    return events


def test_door_drag_and_crossing_events():
    hx, hy = door_handle(0.5)
    env = make_env(EnvState(arm_x=hx, arm_y=hy, gripper=1.0, door_pos=0.5,
                            block_x=0.9, block_y=0.2))
    events = drag_door(env, 18, +1)
    assert env.state.door_pos == 1.0
    assert [e.task for e in events] == ["open_door"]
    events = drag_door(env, 35, -1)
    assert env.state.door_pos == pytest.approx(0.0, abs=1e-6)
    assert [e.task for e in events] == ["close_door"]


def test_drag_rate_is_capped():
    hx, hy = door_handle(0.5)
    env = make_env(EnvState(arm_x=hx, arm_y=hy, gripper=1.0, door_pos=0.5,
                            block_x=0.9, block_y=0.2))
    env.step(Action(ARM_SPEED, 0.0, 1.0))
    assert env.state.door_pos == pytest.approx(0.5 + ARTICULATION_RATE)


def test_drag_needs_closed_gripper_and_free_hand():
    hx, hy = door_handle(0.5)
    env = make_env(EnvState(arm_x=hx, arm_y=hy, door_pos=0.5,
                            block_x=0.9, block_y=0.2))
    env.step(Action(ARM_SPEED, 0.0, 0.0))  # open hand slides off
    assert env.state.door_pos == 0.5

    held = EnvState(arm_x=hx, arm_y=hy, gripper=1.0, door_pos=0.5,
                    block_x=hx, block_y=hy, block_zone="held", grasp_y=hy)
    env = make_env(held)
    env.step(Action(ARM_SPEED, 0.0, 1.0))  # full hand cannot drag
    assert env.state.door_pos == 0.5


def test_drag_out_of_radius():
    hx, hy = door_handle(0.5)
    env = make_env(EnvState(arm_x=hx, arm_y=hy + 0.07, gripper=1.0,
                            door_pos=0.5, block_x=0.9, block_y=0.8))
    env.step(Action(ARM_SPEED, 0.0, 1.0))
    assert env.state.door_pos == 0.5


def test_drawer_drag_vertical():
    gx, gy = drawer_handle(0.5)
    env = make_env(EnvState(arm_x=gx, arm_y=gy, gripper=1.0, drawer_pos=0.5,
                            block_x=0.2, block_y=0.2))
    _, ev = env.step(Action(0.0, ARM_SPEED, 1.0))
    assert env.state.drawer_pos == pytest.approx(0.5 + ARTICULATION_RATE)
    events = [e.task for e in ev]
    for _ in range(17):
        gx, gy = drawer_handle(env.state.drawer_pos)
        dy = (gy - env.state.arm_y) + ARM_SPEED
        _, ev = env.step(Action(gx - env.state.arm_x, dy, 1.0))
        events += [e.task for e in ev]
    assert env.state.drawer_pos == 1.0
    assert events == ["open_drawer"]


# ---- buttons ----------------------------------------------------------------


def test_button_press_toggles_light_once_per_press():
    bx, by = BUTTONS[0][1]
    env = make_env(EnvState(arm_x=bx, arm_y=by, block_x=0.9, block_y=0.2))
    events = []
    for _ in range(10):  # bottoming out takes ceil(0.9 / 0.12) = 8 ticks
        _, ev = env.step(hold_still(1.0))
        events += ev
    assert [e.task for e in events] == ["press_red"]  # held down, no re-fire
    assert env.state.light_on == [True, False, False]
    for _ in range(5):
        env.step(hold_still(0.0))
    assert env.state.button_depress[0] == 0.0
    events = []
    for _ in range(10):
        _, ev = env.step(hold_still(1.0))
        events += ev
    assert [e.task for e in events] == ["press_red"]
    assert env.state.light_on == [False, False, False]


def test_button_needs_closed_gripper():
    bx, by = BUTTONS[2][1]
    env = make_env(EnvState(arm_x=bx, arm_y=by, block_x=0.9, block_y=0.2))
    for _ in range(4):
        env.step(hold_still(0.0))
    assert env.state.button_depress == [0.0, 0.0, 0.0]


def test_lights_not_in_observation():
    a = EnvState(light_on=[True, True, True])
    b = EnvState(light_on=[False, False, False])
    assert np.array_equal(observation(a), observation(b))


# ---- lift -------------------------------------------------------------------


def test_lift_event_latched_per_grasp():
    s = EnvState(arm_x=0.5, arm_y=0.6, block_x=0.5, block_y=0.6)
    env = make_env(s)
    env.step(hold_still(1.0))
    fired = []
    for _ in range(3):
        _, ev = env.step(Action(0.0, -ARM_SPEED, 1.0))
        fired += [e.task for e in ev]
    assert fired == ["lift_block"]
    # dip and rise inside the same grasp stays quiet
    env.step(Action(0.0, 3 * ARM_SPEED, 1.0))
    _, ev = env.step(Action(0.0, -3 * ARM_SPEED, 1.0))
    assert ev == []
    # a fresh grasp re-arms the event
    env.step(hold_still(0.0))
    env.step(hold_still(1.0))
    fired = []
    for _ in range(3):
        _, ev = env.step(Action(0.0, -ARM_SPEED, 1.0))
        fired += [e.task for e in ev]
    assert fired == ["lift_block"]


# ---- predicates -------------------------------------------------------------


def test_drawer_predicate_crossings():
    lo = EnvState(drawer_pos=0.2)
    hi = EnvState(drawer_pos=0.85)
    assert task_satisfied("open_drawer", lo, hi)
    assert task_satisfied("close_drawer", hi, EnvState(drawer_pos=0.1))
    assert not task_satisfied("open_drawer", hi, EnvState(drawer_pos=0.9))
    assert not task_satisfied("close_drawer", lo, EnvState(drawer_pos=0.15))


def test_door_predicate_crossings():
    assert task_satisfied("open_door", EnvState(door_pos=0.5), EnvState(door_pos=0.8))
    assert not task_satisfied("open_door", EnvState(door_pos=0.5), EnvState(door_pos=0.79))
    assert task_satisfied("close_door", EnvState(door_pos=0.21), EnvState(door_pos=0.2))


def test_button_predicate_momentary():
    cur = EnvState(button_depress=[0.0, 0.95, 0.0])
    assert task_satisfied("press_green", EnvState(), cur)
    assert not task_satisfied("press_green", EnvState(), EnvState(button_depress=[0.0, 0.85, 0.0]))
    assert not task_satisfied("press_red", EnvState(), cur)


def test_block_predicates():
    start = EnvState(block_zone="table")
    assert task_satisfied("block_in_trash", start, EnvState(block_zone="trash"))
    assert not task_satisfied("block_in_trash", EnvState(block_zone="trash"),
                              EnvState(block_zone="trash"))
    held = EnvState(block_zone="held", grasp_y=0.6, arm_y=0.45)
    assert task_satisfied("lift_block", start, held)
    low = EnvState(block_zone="held", grasp_y=0.6, arm_y=0.55)
    assert not task_satisfied("lift_block", start, low)


def test_unknown_task_rejected():
    with pytest.raises(EnvError):
        task_satisfied("juggle", EnvState(), EnvState())
    assert len(TASKS) == 10


# ---- determinism and ranges -------------------------------------------------


def random_actions(n, seed):
    rng = rng_for("env-fuzz", seed)
    out = []
    for _ in range(n):
        out.append(Action(float(rng.uniform(-0.08, 0.08)),
                          float(rng.uniform(-0.08, 0.08)),
                          float(rng.uniform(0.0, 1.0))))
    return out


def test_replay_from_snapshot_is_exact():
    env = PlaygroundEnv()
    env.reset("neutral", seed=11)
    acts = random_actions(400, seed=1)
    for a in acts[:150]:
        env.step(a)
    snap = env.state.copy()
    tail = [env.step(a) for a in acts[150:]]

    env.set_state(snap)
    replay = [env.step(a) for a in acts[150:]]
    for (obs_a, ev_a), (obs_b, ev_b) in zip(tail, replay):
        assert np.array_equal(obs_a, obs_b)
        assert ev_a == ev_b


def test_range_fuzz():
    env = PlaygroundEnv()
    env.reset("neutral", seed=5)
    for a in random_actions(20000, seed=2):
        obs, _ = env.step(a)
        assert np.all(np.isfinite(obs))
        assert np.all(obs >= 0.0) and np.all(obs <= 1.0)
        assert env.state.block_zone in ("table", "shelf", "drawer", "trash", "held")


# ---- rendering --------------------------------------------------------------


def test_render_shape_and_determinism():
    env = PlaygroundEnv()
    env.reset("neutral", seed=4)
    img1 = render(env.state)
    img2 = render(env.state)
    assert img1.shape == (96, 96, 3) and img1.dtype == np.uint8
    assert np.array_equal(img1, img2)


def test_render_reflects_state():
    base = EnvState()
    lit = EnvState(light_on=[True, False, False])
    assert not np.array_equal(render(base), render(lit))
    door_moved = EnvState(door_pos=1.0)
    assert not np.array_equal(render(base), render(door_moved))
