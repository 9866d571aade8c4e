import numpy as np

from mlmdp.mdp import ActionSet, StateSpace, TransitionTable, build_mdp


def make_chain_mdp(gamma: float = 0.9, reward: float = -1.0, end_penalty: float = -10.0):
    """Two states, s0 moves to the terminal s1 with certainty."""
    space = StateSpace(("s0", "s1"), initial=[0], terminal=[1])
    actions = ActionSet.single_factor(["go"], n_states=2)
    table = TransitionTable.from_records(
        [(0, 0, 1, 1.0, reward, gamma), (1, 0, 1, 1.0, 0.0, 1.0)]
    )
    return build_mdp(space, actions, table, end_penalty)


def make_corridor_mdp(length: int, step_reward: float, bonus: float, success: float = 1.0, discount: float = 1.0):
    """Cells 0..length on a line, moving right succeeds with `success`, else stays."""
    names = tuple(f"c{i}" for i in range(length + 1))
    space = StateSpace(names, initial=[0], terminal=[length])
    actions = ActionSet.single_factor(["right"], n_states=length + 1)
    records = []
    for i in range(length):
        arrive = step_reward + (bonus if i == length - 1 else 0.0)
        records.append((i, 0, i + 1, success, arrive, discount))
        if success < 1.0:
            records.append((i, 0, i, 1.0 - success, step_reward, discount))
    records.append((length, 0, length, 1.0, 0.0, 1.0))
    return build_mdp(space, actions, TransitionTable.from_records(records), -10.0)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma_max: float = 0.95):
    """Dense random MDP with a single terminal state and discounts below one."""
    names = tuple(f"x{i}" for i in range(n_states))
    space = StateSpace(names, initial=list(range(n_states - 1)), terminal=[n_states - 1])
    actions = ActionSet.single_factor([f"a{k}" for k in range(n_actions)], n_states=n_states)
    records = []
    for s in range(n_states):
        for a in range(n_actions):
            probs = rng.dirichlet(np.ones(n_states))
            for t in range(n_states):
                records.append((s, a, t, probs[t], rng.uniform(-5, 1), rng.uniform(0.0, gamma_max)))
    table = TransitionTable.from_records(records)
    # Dirichlet draws sum to one only up to rounding; renormalize exactly.
    return build_mdp(space, actions, table.normalized(), -3.0)


