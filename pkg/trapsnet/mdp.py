"""
Domain-agnostic factored MDP abstractions: instances, states, ground actions,
policy distributions, simulation steps and rollouts.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import IllegalAction, SemanticError

# Floor applied to probabilities before taking logarithms.
PROB_FLOOR = 1e-12


class Domain(str, Enum):
    """Identifiers of the supported planning domains."""

    SYSADMIN = "sysadmin"
    GAME_OF_LIFE = "game_of_life"
    ACADEMIC_ADVISING = "academic_advising"


@dataclass(frozen=True)
class DomainSchema:
    """Names of the predicates and action templates of a domain.

    Every fluent, non-fluent and action template is unary, except for the
    single binary non-fluent named by `relation`.
    """

    domain: Domain
    object_type: str
    fluents: Tuple[str, ...]
    nonfluents: Tuple[str, ...]
    relation: str
    templates: Tuple[str, ...]
    directed: bool

    @property
    def feature_count(self):
        return len(self.fluents) + len(self.nonfluents)


def _frozen_array(value, dtype):
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GroundState:
    """Fluent values of every object at one step, shaped [|O| x J]."""

    fluents: np.ndarray

    def __post_init__(self):
        fluents = _frozen_array(self.fluents, np.int8)
        if fluents.ndim != 2:
            raise ValueError("state fluents must be a 2-d matrix")
        if np.any((fluents != 0) & (fluents != 1)):
            raise ValueError("boolean fluents must be 0 or 1")
        object.__setattr__(self, "fluents", fluents)

    @property
    def key(self):
        return self.fluents.shape, self.fluents.tobytes()

    def permuted(self, order):
        """Relabel objects so that new object j is old object order[j]."""
        return GroundState(self.fluents[np.asarray(order)])

    def __eq__(self, other):
        return isinstance(other, GroundState) and self.key == other.key

    def __hash__(self):
        return hash(self.key)


@dataclass(frozen=True)
class GroundAction:
    """Action template `template` applied to object `index`, or Noop."""

    template: Optional[int] = None
    index: Optional[int] = None

    @property
    def is_noop(self):
        return self.template is None

    def __repr__(self):
        if self.is_noop:
            return "Noop"
        return f"Apply({self.template}, {self.index})"


NOOP = GroundAction()


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One ground factored MDP.

    Matrices are indexed by the canonical object order, which is the order
    in which objects are declared in the instance file.
    """

    name: str
    objects: Tuple[str, ...]
    unary_nonfluents: np.ndarray
    adjacency: np.ndarray
    initial_fluents: np.ndarray
    horizon: int
    discount: float
    params: object

    def __post_init__(self):
        objects = tuple(self.objects)
        n = len(objects)
        schema = self.params.schema
        nonfluents = _frozen_array(self.unary_nonfluents, np.float64)
        adjacency = _frozen_array(self.adjacency, np.int8)
        fluents = _frozen_array(self.initial_fluents, np.int8)

        if n < 1:
            raise SemanticError("an instance needs at least one object")
        if len(set(objects)) != n:
            raise SemanticError("object names must be unique")
        if nonfluents.shape != (n, len(schema.nonfluents)):
            raise SemanticError(
                f"unary non-fluents must be shaped ({n}, "
                f"{len(schema.nonfluents)}), got {nonfluents.shape}"
            )
        if adjacency.shape != (n, n):
            raise SemanticError(f"adjacency must be shaped ({n}, {n})")
        if np.any((adjacency != 0) & (adjacency != 1)):
            raise SemanticError("adjacency entries must be 0 or 1")
        if np.any(np.diagonal(adjacency)):
            raise SemanticError("adjacency must have a zero diagonal")
        if fluents.shape != (n, len(schema.fluents)):
            raise SemanticError(
                f"initial fluents must be shaped ({n}, "
                f"{len(schema.fluents)}), got {fluents.shape}"
            )
        if int(self.horizon) < 1:
            raise SemanticError("horizon must be at least 1")
        if not 0 < float(self.discount) <= 1:
            raise SemanticError("discount must be in (0, 1]")

        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "unary_nonfluents", nonfluents)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "initial_fluents", fluents)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def schema(self):
        return self.params.schema

    @property
    def domain(self):
        return self.params.schema.domain

    @property
    def size(self):
        return len(self.objects)

    def initial_state(self):
        return GroundState(self.initial_fluents)

    def permuted(self, order):
        """Relabel objects so that new object j is old object order[j]."""
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(self.size)):
            raise ValueError("order must be a permutation of object indices")
        return ProblemInstance(
            name=self.name,
            objects=tuple(self.objects[i] for i in order),
            unary_nonfluents=self.unary_nonfluents[order],
            adjacency=self.adjacency[np.ix_(order, order)],
            initial_fluents=self.initial_fluents[order],
            horizon=self.horizon,
            discount=self.discount,
            params=self.params,
        )

    def __eq__(self, other):
        return (
            isinstance(other, ProblemInstance)
            and self.name == other.name
            and self.objects == other.objects
            and np.array_equal(self.unary_nonfluents, other.unary_nonfluents)
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.initial_fluents, other.initial_fluents)
            and self.horizon == other.horizon
            and self.discount == other.discount
            and self.params == other.params
        )

    __hash__ = None


class RngStream:
    """Seedable random stream backed by NumPy's PCG64 bit generator.

    PCG64 output is specified bit-for-bit, so identical seeds give identical
    samples on every platform. Child streams are derived from the seed alone
    and never advance the parent.
    """

    def __init__(self, seed):
        self.seed = int(seed) % (1 << 64)
        sequence = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def random(self, size=None):
        return self.generator.random(size)

    def child(self, index):
        """Derive the independent stream number `index`."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(int(index),))
        return RngStream(int(sequence.generate_state(1, np.uint64)[0]))

    def spawn(self):
        """Draw a fresh stream, advancing this one."""
        return RngStream(int(self.generator.integers(0, 1 << 63)))

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


@dataclass(frozen=True, eq=False)
class PolicyDistribution:
    """Probabilities over the ground actions of one instance.

    Entries are aligned with `legal_actions(instance)`.
    """

    actions: Tuple[GroundAction, ...]
    probs: np.ndarray
    log_probs: np.ndarray = field(init=False)

    def __post_init__(self):
        probs = _frozen_array(self.probs, np.float64)
        if probs.shape != (len(self.actions),):
            raise ValueError("one probability per action is required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        log_probs = np.log(np.maximum(probs, PROB_FLOOR))
        log_probs.setflags(write=False)
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "log_probs", log_probs)

    @classmethod
    def uniform(cls, actions):
        actions = tuple(actions)
        return cls(actions, np.full(len(actions), 1.0 / len(actions)))

    @classmethod
    def deterministic(cls, actions, action):
        actions = tuple(actions)
        probs = np.zeros(len(actions))
        probs[actions.index(action)] = 1.0
        return cls(actions, probs)

    def prob(self, action):
        return float(self.probs[self.actions.index(action)])

    def entropy(self):
        return float(-(self.probs * self.log_probs).sum())


@dataclass
class Transition:
    state: GroundState
    action: GroundAction
    reward: float


@dataclass
class Trajectory:
    steps: List[Transition]
    terminal_state: GroundState

    @property
    def rewards(self):
        return [transition.reward for transition in self.steps]

    def __len__(self):
        return len(self.steps)


Policy = Callable[[GroundState], PolicyDistribution]


def legal_actions(instance):
    """List every ground action: template-major, then object, Noop last."""
    actions = [
        GroundAction(k, i)
        for k in range(len(instance.schema.templates))
        for i in range(instance.size)
    ]
    actions.append(NOOP)
    return actions


def action_position(instance, action):
    """Return the position of an action in `legal_actions(instance)`."""
    check_action(instance, action)
    if action.is_noop:
        return len(instance.schema.templates) * instance.size
    return action.template * instance.size + action.index


def check_action(instance, action):
    """Raise IllegalAction unless the action is Noop or names a real object."""
    if action.is_noop:
        return
    templates = len(instance.schema.templates)
    if not (
        action.index is not None
        and 0 <= action.template < templates
        and 0 <= action.index < instance.size
    ):
        raise IllegalAction(
            f"{action!r} is out of range for {templates} template(s) and "
            f"{instance.size} object(s)"
        )


def is_terminal(instance, state):
    return instance.params.is_terminal(instance, state)


def step(instance, state, action, rng):
    """Sample the next state and return it with the reward of (state, action).

    Each object's next fluent value is an independent Bernoulli draw given
    the current state and action.
    """
    check_action(instance, action)
    probs = instance.params.next_probs(instance, state, action)
    reward = float(instance.params.reward(instance, state, action))
    draws = rng.random(probs.shape)
    return GroundState((draws < probs).astype(np.int8)), reward


def sample_action(dist, rng):
    """Sample an action by inverse CDF over the canonical action order."""
    cdf = np.cumsum(dist.probs)
    position = int(np.searchsorted(cdf, rng.random(), side="right"))

    # Rounding can leave the last CDF entry slightly below the draw.
    if position >= len(dist.actions):
        position = int(np.flatnonzero(dist.probs > 0)[-1])
    return dist.actions[position]


def greedy_action(dist):
    """Return the most probable action, ties broken toward the lowest index."""
    return dist.actions[int(np.argmax(dist.probs))]


def rollout(instance, policy, rng, horizon=None):
    """Simulate a policy from the initial state up to the horizon.

    Episodes end early only when the domain declares the state terminal.
    """
    horizon = instance.horizon if horizon is None else horizon
    state = instance.initial_state()
    steps = []
    for _ in range(horizon):
        if is_terminal(instance, state):
            break
        action = sample_action(policy(state), rng)
        next_state, reward = step(instance, state, action, rng)
        steps.append(Transition(state, action, reward))
        state = next_state
    return Trajectory(steps, state)


def discounted_return(trajectory, discount):
    """Sum rewards weighted by discount**t."""
    total = 0.0
    weight = 1.0
    for reward in trajectory.rewards:
        total += weight * reward
        weight *= discount
    return total
