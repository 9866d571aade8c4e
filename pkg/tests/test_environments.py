import numpy as np
import pytest

from mlmdp.curriculum import learn_mdp
from mlmdp.environments import (
    BASE_MAZE,
    DENSE_TRAFFIC,
    SPARSE_TRAFFIC,
    MazeGeometry,
    MazeParams,
    build_environment,
    describe_environment,
    environment_ids,
    variant_geometry,
)
from mlmdp.environments import mazebase, oracles, traffic
from mlmdp.environments.mazebase import PuzzleState
from mlmdp.errors import InvalidGeometry, UnknownSubject
from mlmdp.mdp import END, ActionSet, StateSpace, TransitionTable, build_mdp
from mlmdp.transfer import SkillsRegistry


@pytest.fixture(scope="module")
def kappa_one():
    geometry, params = traffic.kappa_setup(1)
    return traffic.build_transport(geometry, params)


@pytest.fixture(scope="module")
def key_door():
    return mazebase.build_key_door(BASE_MAZE, MazeParams())


@pytest.fixture(scope="module")
def full_puzzle():
    return mazebase.build_full_puzzle(BASE_MAZE, MazeParams())


def row(mdp, state, action):
    return mdp.row(state, mdp.actions.index[action])


def test_base_geometry_rooms_and_blocks():
    assert len(BASE_MAZE.blocks) == 19
    assert BASE_MAZE.rooms[1] == tuple((x, y) for x in range(1, 10) for y in range(1, 4))
    assert len(BASE_MAZE.open_cells) == 120 - 19
    assert BASE_MAZE.room_of((15, 8)) == 4 and BASE_MAZE.room_of((10, 2)) is None


def test_variant_coordinates():
    primed = variant_geometry("primed")
    assert primed.doors == ((10, 3), (11, 4), (10, 5))
    assert primed.keys == ((1, 1), (15, 1), (15, 8)) and primed.goal == (1, 8)
    assert variant_geometry("double_primed").keys == ((1, 3), (1, 1), (2, 1))
    assert variant_geometry("base").doors == ((10, 2), (9, 4), (10, 5))


@pytest.mark.parametrize("doors, keys, goal", [
    (((10, 2), (11, 4), (10, 5)), ((1, 3), (1, 1), (1, 8)), (15, 8)),  # door 2 right of the column
    (((10, 2), (9, 4), (10, 5)), ((1, 4), (1, 1), (1, 8)), (15, 8)),  # key on a block
    (((10, 2), (9, 4), (10, 5)), ((1, 3), (1, 1), (1, 8)), (16, 8)),  # goal off the grid
])
def test_invalid_geometry(doors, keys, goal):
    with pytest.raises(InvalidGeometry):
        MazeGeometry(doors=doors, keys=keys, goal=goal)


def test_unknown_variant():
    with pytest.raises(InvalidGeometry):
        variant_geometry("tilted")


def test_transport_mdp_shape(kappa_one):
    assert kappa_one.n_states == 14400
    assert kappa_one.actions.n_actions == 15 and kappa_one.actions.n_nonend == 8
    assert kappa_one.discount_table()[: kappa_one.kernel_p.nnz].max() == pytest.approx(0.999)


def test_transport_rewards_follow_the_means(kappa_one):
    grid = traffic.PairGrid(SPARSE_TRAFFIC.cells)
    into_jam = grid.state((4, 1), (15, 8))  # x = 5 is a jam column
    probs, rewards, _ = row(kappa_one, into_jam, ("right", "mc"))
    target = grid.state((5, 1), (15, 8))
    assert probs == {into_jam: pytest.approx(0.1), target: pytest.approx(0.9)}
    assert rewards[target] == pytest.approx(-1010.0)
    assert row(kappa_one, into_jam, ("right", "car"))[1][target] == pytest.approx(-24.0)
    clear = grid.state((1, 1), (15, 8))
    assert row(kappa_one, clear, ("up", "car"))[1][grid.state((1, 2), (15, 8))] == pytest.approx(-10 / 0.6)
    arrive = grid.state((14, 8), (15, 8))
    assert row(kappa_one, arrive, ("right", "mc"))[1][grid.state((15, 8), (15, 8))] == pytest.approx(1e4 - 10)


def test_means_do_not_change_dynamics(kappa_one):
    for direction in ("right", "up", "left", "down"):
        mc = kappa_one.kernel_p[kappa_one.actions.index[(direction, "mc")] * 14400:][:14400]
        car = kappa_one.kernel_p[kappa_one.actions.index[(direction, "car")] * 14400:][:14400]
        assert (mc != car).nnz == 0


def test_moves_off_the_grid_stay_put(kappa_one):
    grid = traffic.PairGrid(SPARSE_TRAFFIC.cells)
    corner = grid.state((1, 1), (3, 3))
    assert row(kappa_one, corner, ("left", "car"))[0] == {corner: 1.0}


def test_first_maze_mdp_is_the_dense_navigation_mdp():
    maze = build_environment("mazebase/1_1@base").mdp
    dense = build_environment("traffic/basic_3").mdp
    assert maze.space.states == dense.space.states
    assert maze.actions.actions == dense.actions.actions
    assert (maze.transition != dense.transition).nnz == 0
    np.testing.assert_array_equal(maze.reward, dense.reward)
    np.testing.assert_array_equal(maze.discount, dense.discount)


def test_navigation_rewards_touching_jams():
    nav = traffic.build_navigation(*traffic.basic_setup(1))
    grid = traffic.PairGrid(SPARSE_TRAFFIC.cells)
    s = grid.state((5, 2), (1, 1))
    assert row(nav, s, ("left",))[1][grid.state((4, 2), (1, 1))] == pytest.approx(-25.0)
    s = grid.state((1, 2), (3, 3))
    assert row(nav, s, ("right",))[1][grid.state((2, 2), (3, 3))] == pytest.approx(-10.0)
    assert DENSE_TRAFFIC.in_jam((13, 5)) and not DENSE_TRAFFIC.in_jam((0, 1))


def test_key_door_state_count_and_dynamics(key_door):
    mdp, puzzle = key_door
    assert mdp.n_states == 27 * 4 == 108
    at_key = puzzle.index[PuzzleState((1, 3), (0,), (0,))]
    picked = puzzle.index[PuzzleState((1, 3), (1,), (0,))]
    probs, rewards, _ = row(mdp, at_key, ("pick",))
    assert probs == {at_key: pytest.approx(0.1), picked: pytest.approx(0.9)}
    near_door = puzzle.index[PuzzleState((9, 2), (0,), (0,))]
    assert row(mdp, near_door, ("open",))[0] == {near_door: 1.0}
    ready = puzzle.index[PuzzleState((9, 2), (1,), (0,))]
    opened = puzzle.index[PuzzleState((9, 2), (1,), (1,))]
    probs, rewards, _ = row(mdp, ready, ("open",))
    assert probs[opened] == pytest.approx(0.9) and rewards[opened] == 1e4
    assert mdp.space.terminal_mask[opened]


def test_full_puzzle_pick_at_goal_finishes(full_puzzle):
    mdp, puzzle = full_puzzle
    state = PuzzleState((15, 8), (1, 1, 1), (0, 1, 1), 0)
    finished = state._replace(done=1)
    s = puzzle.index[state]
    probs, rewards, _ = row(mdp, s, ("pick",))
    assert probs[puzzle.index[finished]] == pytest.approx(0.9)
    assert rewards[puzzle.index[finished]] == 1e4


def test_full_puzzle_closed_doors_block_movement(full_puzzle):
    mdp, puzzle = full_puzzle
    before_door = PuzzleState((9, 2), (1, 0, 0), (0, 0, 0), 0)
    assert row(mdp, puzzle.index[before_door], ("right",))[0] == {puzzle.index[before_door]: 1.0}
    open_door = before_door._replace(opens=(1, 0, 0))
    through = puzzle.index[open_door._replace(cur=(10, 2))]
    assert row(mdp, puzzle.index[open_door], ("right",))[0][through] == pytest.approx(0.9)
    assert all(PuzzleState((10, 2), p, (0, o2, o3), d) not in puzzle.index
               for p in [(0, 0, 0)] for o2 in (0, 1) for o3 in (0, 1) for d in (0, 1))


def test_full_puzzle_opening_needs_the_matching_key(full_puzzle):
    mdp, puzzle = full_puzzle
    wrong_key = PuzzleState((9, 3), (0, 1, 0), (0, 0, 0), 0)  # next to door 1 and door 2
    s = puzzle.index[wrong_key]
    opened = puzzle.index[wrong_key._replace(opens=(0, 1, 0))]
    assert row(mdp, s, ("open",))[0] == {s: pytest.approx(0.1), opened: pytest.approx(0.9)}


def test_full_puzzle_initial_states(full_puzzle):
    mdp, puzzle = full_puzzle
    initial = [puzzle.states[i] for i in mdp.space.initial]
    assert all(s.done == 0 for s in initial)
    assert all(BASE_MAZE.room_of(s.cur) != 2 or s.opens[0] for s in initial)
    assert PuzzleState((1, 1), (0, 0, 0), (0, 0, 0), 0) in initial
    solvable = mazebase.can_reach_terminal(mdp)
    assert solvable[mdp.space.initial].all()


def test_reachability_flags_dead_ends():
    space = StateSpace(("a", "b", "trap", "goal"), initial=[0], terminal=[3])
    actions = ActionSet.single_factor(["go"], n_states=4)
    table = TransitionTable.from_records([(0, 0, 1, 0.5, -1.0, 1.0), (0, 0, 2, 0.5, -1.0, 1.0),
                                          (1, 0, 3, 1.0, -1.0, 1.0), (2, 0, 2, 1.0, -1.0, 1.0),
                                          (3, 0, 3, 1.0, 0.0, 1.0)])
    mdp = build_mdp(space, actions, table, -10.0)
    assert mazebase.can_reach_terminal(mdp).tolist() == [True, True, False, True]


def test_corridor_closed_forms():
    # five straight steps, each succeeding with probability 0.9
    step = oracles.StepOutcome(target=0, success=0.9, move_reward=-10.0, stay_reward=-10.0, discount=1.0)
    path = oracles.SkillPath(start=0, steps=(step,) * 5, ends=True)
    assert path.length == 5
    entry = oracles.negative_binomial_entry(path, end_penalty=-10.0)
    assert entry.reward == pytest.approx(-10 + -10 * (5 + 5 / 9), abs=1e-12)
    assert entry.reward == pytest.approx(oracles.corridor_reward(5, 0.9, -10.0, -10.0), abs=1e-12)
    assert entry.discount == 1.0


def test_discounted_closed_form_matches_geometric_sum():
    g, p = 0.99, 0.9
    step = oracles.StepOutcome(target=0, success=p, move_reward=-1.0, stay_reward=-1.0, discount=g)
    entry = oracles.negative_binomial_entry(oracles.SkillPath(0, (step,), True), end_penalty=0.0)
    attempts = np.arange(1, 2000)
    weights = p * (1 - p) ** (attempts - 1)
    expected_reward = sum(w * -sum(g ** np.arange(k)) for w, k in zip(weights, attempts))
    assert entry.reward == pytest.approx(expected_reward, rel=1e-12)
    assert entry.discount == pytest.approx(float(np.sum(weights * g ** attempts)), rel=1e-12)


def test_paths_of_block_navigation_match_shortest_distance():
    registry = SkillsRegistry()
    learn_mdp(build_environment("mazebase/1_1@base").mdp, mazebase.navigation_dense_hint(), registry)
    mdp = mazebase.build_block_navigation(BASE_MAZE, MazeParams())
    result = learn_mdp(mdp, mazebase.block_navigation_hint(BASE_MAZE, MazeParams()), registry)
    grid = traffic.PairGrid(BASE_MAZE.open_cells)
    policy = result.final.policy
    # across door 1: from (1, 1) to (11, 1) is 10 steps right plus the detour through row 2
    s = grid.state((1, 1), (11, 1))
    assert oracles.skill_path(mdp, policy, s).length == 12
    assert oracles.skill_path(mdp, policy, grid.state((3, 3), (3, 3))).length == 0


def test_traffic_optimum_uses_the_car_exactly_on_jam_moves(kappa_one):
    registry = SkillsRegistry()
    for n in (1, 2):
        env = build_environment(f"traffic/basic_{n}")
        learn_mdp(env.mdp, env.hint, registry)
    env = build_environment("traffic/kappa_1", extract=False)
    result = learn_mdp(env.mdp, env.hint, registry)
    ok = oracles.transport_means_predicate(SPARSE_TRAFFIC, env.mdp, result.final.policy.argmax(),
                                           SPARSE_TRAFFIC.cells)
    assert ok.all()


def test_environment_ids_cover_both_families():
    ids = environment_ids()
    for kind in ("1_1", "2_1", "2_2", "3_1"):
        for variant in ("base", "primed", "double-primed"):
            assert f"mazebase/{kind}@{variant}" in ids
    assert {f"traffic/basic_{n}" for n in (1, 2, 3)} <= set(ids)
    assert {f"traffic/kappa_{n}" for n in range(1, 8)} <= set(ids)


def test_describe_echoes_parameters():
    doc = describe_environment("mazebase/3_1@base")
    assert doc["params"] == {"success": 0.9, "goal_reward": 1e4, "step_reward": -10.0, "end_penalty": -10.0}
    assert doc["geometry"]["doors"] == [[10, 2], [9, 4], [10, 5]] and doc["geometry"]["goal"] == [15, 8]
    kappa = describe_environment("traffic/kappa_7")["params"]
    assert kappa["inverse_kappa"] == 1.1 and kappa["car_speed"] == pytest.approx(1 / 1.05)
    assert [describe_environment(f"traffic/kappa_{n}")["params"]["inverse_kappa"] for n in range(1, 7)] == \
        [2.4, 2.8, 3.2, 3.6, 4.0, 4.4]
    with pytest.raises(UnknownSubject):
        describe_environment("nothing")


def test_geometry_override_from_json():
    env = build_environment("mazebase/2_2@base", geometry={"doors": [[10, 2], [9, 4], [10, 5]],
                                                            "keys": [[2, 2], [1, 1], [1, 8]], "goal": [15, 8]})
    assert env.puzzle.keys[0] == (2, 2)
    with pytest.raises(InvalidGeometry):
        build_environment("mazebase/2_2@base", geometry={"doors": [[10, 2]]})


def test_closed_form_top_choice_on_example_states():
    state = PuzzleState((1, 1), (0, 0, 0), (0, 0, 0), 0)
    assert oracles.full_puzzle_top_choice(BASE_MAZE, state) == "door2"
    assert oracles.full_puzzle_top_choice(BASE_MAZE, state._replace(opens=(0, 1, 0))) == "door3"
    assert oracles.full_puzzle_top_choice(BASE_MAZE, state._replace(opens=(0, 1, 1))) == "goal"
    assert oracles.full_puzzle_top_choice(BASE_MAZE, state._replace(cur=(12, 6))) == "goal"
    assert oracles.full_puzzle_top_choice(BASE_MAZE, state._replace(done=1)) == END
