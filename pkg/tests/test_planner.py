import numpy as np
import pytest

from hintrl.environment import TASKS, Action, GridObject, TaskConfig, is_success, reset, step
from hintrl.errors import Unsolvable
from hintrl.hints import Subgoal
from hintrl.planner import optimal_action, optimal_subgoal, plan

from helpers import brute_force_distance, mission_for, room


def test_target_one_cell_ahead():
    s = room(6, 6, agent=(2, 3, 0), objects=[(2, 1, GridObject("ball", "green"))])
    m = mission_for(s, "GoToObj", 2, 1)
    p = plan(s, m)
    assert p.actions == (Action.FORWARD,) and p.length == 1


def test_target_directly_behind_tie_breaks_to_left_turns():
    s = room(6, 6, agent=(2, 2, 0), objects=[(2, 4, GridObject("ball", "green"))])
    m = mission_for(s, "GoToObj", 2, 4)
    p = plan(s, m)
    assert p.actions == (0, 0, 2)


def test_done_when_already_successful():
    s = room(6, 6, agent=(2, 2, 0), objects=[(2, 1, GridObject("ball", "green"))])
    m = mission_for(s, "GoToObj", 2, 1)
    assert optimal_action(s, m) == Action.DONE
    assert optimal_subgoal(s, m) == Subgoal.DONE


def test_pickup_when_facing_target():
    s = room(6, 6, agent=(2, 2, 1), objects=[(3, 2, GridObject("key", "red"))])
    m = mission_for(s, "PickupLoc", 3, 2, "pick up the red key in the top-right corner")
    assert optimal_action(s, m) == Action.PICKUP
    assert optimal_subgoal(s, m) == Subgoal.PICKUP


def test_subgoal_rules():
    s = room(8, 8, agent=(1, 1, 1), objects=[(6, 6, GridObject("key", "red"))])
    for task in ("GoToObj", "PickupLoc"):
        assert optimal_subgoal(s, mission_for(s, task, 6, 6, "x")) == Subgoal.GO_NEXT_TO
    d = room(6, 6, agent=(4, 2, 1), objects=[(5, 2, GridObject("door", "blue", "closed"))])
    assert optimal_subgoal(d, mission_for(d, "OpenDoor", 5, 2, "open the blue door")) == Subgoal.OPEN
    carrying = room(6, 6, agent=(2, 2, 1), objects=[(3, 2, GridObject("ball", "red")), (4, 4, GridObject("key", "red"))])
    m = mission_for(carrying, "PickupLoc", 4, 4, "pick up the red key in the bottom-right corner")
    carrying, _, _ = step(carrying, Action.PICKUP, m)
    assert optimal_subgoal(carrying, m) == Subgoal.DROP


def test_unsolvable_within_budget():
    s = room(8, 8, agent=(1, 1, 2), objects=[(6, 6, GridObject("key", "red"))], max_steps=3)
    with pytest.raises(Unsolvable):
        plan(s, mission_for(s, "GoToObj", 6, 6))


def test_wrong_object_carried_requires_drop():
    s = room(6, 6, agent=(1, 1, 1), objects=[(2, 1, GridObject("ball", "red")), (4, 4, GridObject("key", "blue"))])
    m = mission_for(s, "PickupLoc", 4, 4, "pick up the blue key in the bottom-right corner")
    s, _, _ = step(s, Action.PICKUP, m)
    p = plan(s, m)
    assert Action.DROP in p.actions
    assert p.length == brute_force_distance(s, m)


@pytest.mark.parametrize("task", TASKS)
def test_plan_matches_brute_force_bfs(task):
    for seed in range(40):
        s, m = reset(task, seed, TaskConfig(room_size=6 if seed % 2 else 8))
        p = plan(s, m)
        assert p.length == brute_force_distance(s, m)


@pytest.mark.parametrize("task", TASKS)
def test_monotonicity_and_executability(task):
    for seed in range(15):
        s, m = reset(task, seed)
        p = plan(s, m)
        length = p.length
        while not is_success(s, m):
            a = optimal_action(s, m)
            assert a == plan(s, m).actions[0]
            s, _, _ = step(s, a, m)
            if is_success(s, m):
                assert length == 1
                break
            new = plan(s, m).length
            assert new == length - 1
            length = new


def test_plans_from_random_midepisode_states():
    rng = np.random.default_rng(5)
    checked = 0
    for seed in range(60):
        task = TASKS[seed % 3]
        s, m = reset(task, seed, TaskConfig(room_size=6))
        for _ in range(int(rng.integers(0, 12))):
            nxt, _, done = step(s, int(rng.integers(7)), m)
            if done:
                break
            s = nxt
        try:
            p = plan(s, m)
        except Unsolvable:
            assert brute_force_distance(s, m) is None
            continue
        assert p.length == brute_force_distance(s, m)
        checked += 1
    assert checked > 40
