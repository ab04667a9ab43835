"""
Exact solutions of tiny instances by enumerating every state.

Arrays follow the usual dynamic programming layout: p[s, a, s'] holds
transition probabilities and r[s, a] the immediate rewards, with states
numbered by reading the [|O| x J] fluent matrix as a little-endian bit
string and actions in `legal_actions` order. Terminal states absorb with
reward 0, which matches a rollout that stops early.
"""
import numpy as np

from .errors import UsageError
from .mdp import GroundState, is_terminal, legal_actions

MAX_STATE_VARIABLES = 12


def _variables(instance):
    return instance.size * len(instance.schema.fluents)


def enumerate_states(instance):
    """Return every state of the instance in index order."""
    count = _variables(instance)
    if count > MAX_STATE_VARIABLES:
        raise UsageError(
            f"{count} state variables is too many to enumerate "
            f"(at most {MAX_STATE_VARIABLES})"
        )
    shape = (instance.size, len(instance.schema.fluents))
    bits = (np.arange(1 << count)[:, None] >> np.arange(count)) & 1
    return [GroundState(row.reshape(shape)) for row in bits]


def state_index(state):
    bits = state.fluents.reshape(-1).astype(np.int64)
    return int((bits << np.arange(bits.size)).sum())


def transition_matrix(instance, states=None):
    """Return p[s, a, s'] over all states and ground actions."""
    states = enumerate_states(instance) if states is None else states
    actions = legal_actions(instance)
    bits = np.stack([state.fluents.reshape(-1) for state in states])
    p = np.zeros((len(states), len(actions), len(states)))
    for s, state in enumerate(states):
        if is_terminal(instance, state):
            p[s, :, s] = 1.0
            continue
        for a, action in enumerate(actions):
            probs = instance.params.next_probs(instance, state, action)
            probs = probs.reshape(-1)
            # Next-state variables are independent given (s, a).
            p[s, a] = np.prod(np.where(bits == 1, probs, 1.0 - probs), axis=1)
    return p


def reward_vector(instance, states=None):
    """Return r[s, a]; zero in terminal states."""
    states = enumerate_states(instance) if states is None else states
    actions = legal_actions(instance)
    r = np.zeros((len(states), len(actions)))
    for s, state in enumerate(states):
        if is_terminal(instance, state):
            continue
        for a, action in enumerate(actions):
            r[s, a] = instance.params.reward(instance, state, action)
    return r


def optimal_value(instance, horizon=None):
    """Optimal finite-horizon value of the initial state.

    Returns the value and the first-step optimal action position.
    """
    horizon = instance.horizon if horizon is None else horizon
    states = enumerate_states(instance)
    p = transition_matrix(instance, states)
    r = reward_vector(instance, states)
    v = np.zeros(len(states))
    q = r
    for _ in range(horizon):
        q = r + instance.discount * p @ v
        v = q.max(axis=1)
    start = state_index(instance.initial_state())
    return float(v[start]), int(np.argmax(q[start]))


def policy_matrix(instance, policy, states=None):
    """Tabulate a stationary policy as pi[s, a]."""
    states = enumerate_states(instance) if states is None else states
    return np.stack([policy(state).probs for state in states])


def evaluate_policy(instance, policy, horizon=None):
    """Exact finite-horizon value of a stationary stochastic policy."""
    horizon = instance.horizon if horizon is None else horizon
    states = enumerate_states(instance)
    p = transition_matrix(instance, states)
    r = reward_vector(instance, states)
    pi = policy_matrix(instance, policy, states)
    v = np.zeros(len(states))
    for _ in range(horizon):
        v = (pi * (r + instance.discount * p @ v)).sum(axis=1)
    return float(v[state_index(instance.initial_state())])
