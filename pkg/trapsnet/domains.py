"""
Transition probabilities, rewards and random instance generators for
SysAdmin, Game of Life and Academic Advising.

Every domain factors per object: each object's next fluent is an independent
Bernoulli variable given the current state and action. The `*_next_probs`
functions return those probabilities for all objects at once, shaped
[|O| x 1] to match the single fluent of each domain.
"""
import dataclasses
import math
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from .errors import InvalidTopology, SemanticError
from .mdp import Domain, DomainSchema, ProblemInstance, RngStream

SYSADMIN = DomainSchema(
    domain=Domain.SYSADMIN,
    object_type="computer",
    fluents=("running",),
    nonfluents=(),
    relation="connected",
    templates=("reboot",),
    directed=False,
)

GAME_OF_LIFE = DomainSchema(
    domain=Domain.GAME_OF_LIFE,
    object_type="cell",
    fluents=("alive",),
    nonfluents=(),
    relation="neighbor",
    templates=("set",),
    directed=False,
)

# Prerequisite edges point from the prerequisite to the course requiring it.
ACADEMIC_ADVISING = DomainSchema(
    domain=Domain.ACADEMIC_ADVISING,
    object_type="course",
    fluents=("passed",),
    nonfluents=("program_requirement",),
    relation="prereq",
    templates=("take",),
    directed=True,
)

SCHEMAS = {
    schema.domain: schema
    for schema in (SYSADMIN, GAME_OF_LIFE, ACADEMIC_ADVISING)
}

# Accepted spellings of domain identifiers in files and on the command line.
DOMAIN_ALIASES = {
    "sysadmin": Domain.SYSADMIN,
    "game_of_life": Domain.GAME_OF_LIFE,
    "gameoflife": Domain.GAME_OF_LIFE,
    "gol": Domain.GAME_OF_LIFE,
    "academic_advising": Domain.ACADEMIC_ADVISING,
    "academicadvising": Domain.ACADEMIC_ADVISING,
    "academic": Domain.ACADEMIC_ADVISING,
}


def parse_domain(name):
    """Resolve a domain identifier or one of its aliases."""
    if isinstance(name, Domain):
        return name
    try:
        return DOMAIN_ALIASES[str(name).lower()]
    except KeyError:
        raise SemanticError(f"unknown domain '{name}'") from None


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise SemanticError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class SysAdminParams:
    reboot_success_prob: float = 1.0
    base_running_prob: float = 0.45
    neighbor_bonus: float = 0.5
    spontaneous_recovery_prob: float = 0.04
    reboot_penalty: float = 0.75

    schema: ClassVar[DomainSchema] = SYSADMIN

    def __post_init__(self):
        _check_probability("reboot_success_prob", self.reboot_success_prob)
        _check_probability("base_running_prob", self.base_running_prob)
        _check_probability(
            "spontaneous_recovery_prob", self.spontaneous_recovery_prob
        )

    def next_probs(self, instance, state, action):
        return sysadmin_next_probs(self, instance, state, action)

    def reward(self, instance, state, action):
        return sysadmin_reward(self, state, action)

    def is_terminal(self, instance, state):
        return False


@dataclass(frozen=True)
class GoLParams:
    noise_prob: float = 0.1
    set_action_penalty: float = 0.0

    schema: ClassVar[DomainSchema] = GAME_OF_LIFE

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 0.5:
            raise SemanticError(
                f"noise_prob must be in [0, 0.5], got {self.noise_prob}"
            )

    def next_probs(self, instance, state, action):
        return gol_next_probs(self, instance, state, action)

    def reward(self, instance, state, action):
        return gol_reward(self, state, action)

    def is_terminal(self, instance, state):
        return False


@dataclass(frozen=True)
class AcadParams:
    """Academic Advising dynamics.

    Which courses are program requirements is the `program_requirement`
    unary non-fluent of the instance, not a parameter.
    """

    prior_pass_prob_no_prereq: float = 0.8
    pass_prob_scale: float = 0.9
    course_cost: float = -1.0
    redo_cost: float = -2.0
    incomplete_penalty: float = -5.0

    schema: ClassVar[DomainSchema] = ACADEMIC_ADVISING

    def __post_init__(self):
        _check_probability(
            "prior_pass_prob_no_prereq", self.prior_pass_prob_no_prereq
        )
        _check_probability("pass_prob_scale", self.pass_prob_scale)
        for name in ("course_cost", "redo_cost", "incomplete_penalty"):
            if getattr(self, name) > 0:
                raise SemanticError(f"{name} must not be positive")

    def next_probs(self, instance, state, action):
        return acad_next_probs(self, instance, state, action)

    def reward(self, instance, state, action):
        return acad_reward(self, instance, state, action)

    def is_terminal(self, instance, state):
        return acad_complete(instance, state)


PARAMS = {
    Domain.SYSADMIN: SysAdminParams,
    Domain.GAME_OF_LIFE: GoLParams,
    Domain.ACADEMIC_ADVISING: AcadParams,
}


def params_from_dict(domain, values):
    """Build a parameter block from overrides of its defaults."""
    cls = PARAMS[parse_domain(domain)]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise SemanticError(
            f"unknown {cls.schema.domain.value} parameter(s): "
            f"{', '.join(unknown)}"
        )
    return cls(**{key: float(value) for key, value in values.items()})


def params_to_dict(params):
    return dataclasses.asdict(params)


def sysadmin_next_probs(params, instance, state, action):
    running = state.fluents[:, 0].astype(np.float64)
    adjacency = instance.adjacency.astype(np.float64)
    neighbors = adjacency.sum(axis=1)
    running_neighbors = adjacency @ running
    probs = np.where(
        running > 0,
        params.base_running_prob
        + params.neighbor_bonus * (1 + running_neighbors) / (1 + neighbors),
        params.spontaneous_recovery_prob,
    )
    if not action.is_noop:
        probs[action.index] = params.reboot_success_prob
    return np.clip(probs, 0.0, 1.0)[:, None]


def sysadmin_next_prob(params, instance, state, action, object_index):
    """Return P(running'(o) = 1) for one computer."""
    probs = sysadmin_next_probs(params, instance, state, action)
    return float(probs[object_index, 0])


def sysadmin_reward(params, state, action):
    """Count running computers, minus the penalty for rebooting one."""
    reward = float(state.fluents[:, 0].sum())
    if not action.is_noop:
        reward -= params.reboot_penalty
    return reward


def conway_successor(alive, adjacency):
    """Apply Conway's rule with neighbors given by the adjacency matrix."""
    alive = alive.astype(bool)
    count = adjacency.astype(np.int64) @ alive.astype(np.int64)
    survives = alive & ((count == 2) | (count == 3))
    born = ~alive & (count == 3)
    return survives | born


def gol_next_probs(params, instance, state, action):
    target = conway_successor(state.fluents[:, 0], instance.adjacency)
    if not action.is_noop:
        target[action.index] = True
    probs = np.where(target, 1.0 - params.noise_prob, params.noise_prob)
    return probs[:, None]


def gol_next_prob(params, instance, state, action, cell_index):
    """Return P(alive'(cell) = 1)."""
    probs = gol_next_probs(params, instance, state, action)
    return float(probs[cell_index, 0])


def gol_reward(params, state, action):
    """Count live cells, minus the penalty for setting one."""
    reward = float(state.fluents[:, 0].sum())
    if not action.is_noop:
        reward -= params.set_action_penalty
    return reward


def acad_complete(instance, state):
    """Whether every program requirement has been passed."""
    required = instance.unary_nonfluents[:, 0] > 0
    passed = state.fluents[:, 0] > 0
    return bool(np.all(passed[required]))


def acad_next_probs(params, instance, state, action):
    passed = state.fluents[:, 0].astype(np.float64)
    probs = passed.copy()
    if not action.is_noop and passed[action.index] == 0:
        course = action.index
        prereqs = instance.adjacency[:, course].astype(np.float64)
        total = prereqs.sum()
        if total == 0:
            probs[course] = params.prior_pass_prob_no_prereq
        else:
            done = prereqs @ passed
            probs[course] = params.pass_prob_scale * (1 + done) / (1 + total)
    return probs[:, None]


def acad_next_prob(params, instance, state, action, course_index):
    """Return P(passed'(course) = 1); passed courses stay passed."""
    probs = acad_next_probs(params, instance, state, action)
    return float(probs[course_index, 0])


def acad_reward(params, instance, state, action):
    """Registration cost plus the per-step penalty until the degree is done.

    Taking a course that is already passed costs `redo_cost` instead of
    `course_cost`.
    """
    if acad_complete(instance, state):
        return 0.0
    reward = params.incomplete_penalty
    if not action.is_noop:
        if state.fluents[action.index, 0]:
            reward += params.redo_cost
        else:
            reward += params.course_cost
    return float(reward)


TOPOLOGIES = ("random", "grid", "dag")

DEFAULT_TOPOLOGY = {
    Domain.SYSADMIN: "random",
    Domain.GAME_OF_LIFE: "grid",
    Domain.ACADEMIC_ADVISING: "dag",
}

ALLOWED_TOPOLOGIES = {
    Domain.SYSADMIN: ("random", "grid"),
    Domain.GAME_OF_LIFE: ("grid",),
    Domain.ACADEMIC_ADVISING: ("dag",),
}


@dataclass(frozen=True)
class GeneratorConfig:
    domain: Domain
    size: int
    topology: Optional[str] = None
    edge_prob: float = 0.3
    rows: Optional[int] = None
    cols: Optional[int] = None
    seed: int = 0
    horizon: int = 40
    discount: float = 1.0
    requirement_fraction: float = 0.4
    init_alive_prob: float = 0.5
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "domain", parse_domain(self.domain))
        if self.topology is None:
            object.__setattr__(
                self, "topology", DEFAULT_TOPOLOGY[self.domain]
            )


def grid_shape(size, rows=None, cols=None):
    """Pick grid dimensions, preferring the squarest factorization."""
    if rows is not None or cols is not None:
        if rows is None:
            rows = size // cols if cols else 0
        if cols is None:
            cols = size // rows if rows else 0
        if rows < 1 or cols < 1 or rows * cols != size:
            raise InvalidTopology(
                f"a {rows}x{cols} grid does not have {size} cells"
            )
        return rows, cols
    for rows in range(math.isqrt(size), 1, -1):
        if size % rows == 0:
            return rows, size // rows
    raise InvalidTopology(
        f"{size} cells cannot be arranged in a grid with at least two rows "
        "and two columns; pass rows and cols explicitly"
    )


def grid_adjacency(rows, cols):
    """Connect each cell to its (up to) eight surrounding cells."""
    size = rows * cols
    adjacency = np.zeros((size, size), dtype=np.int8)
    for r in range(rows):
        for c in range(cols):
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < rows and 0 <= cc < cols:
                        adjacency[r * cols + c, rr * cols + cc] = 1
    return adjacency


def random_graph(size, edge_prob, rng):
    upper = np.triu(rng.random((size, size)) < edge_prob, k=1)
    return (upper | upper.T).astype(np.int8)


def random_dag(size, edge_prob, rng):
    """Edges only run from lower to higher index, so no cycle can form."""
    return np.triu(rng.random((size, size)) < edge_prob, k=1).astype(np.int8)


def generate_instance(config):
    """Generate a reproducible random instance."""
    domain = config.domain
    size = int(config.size)
    if size < 1:
        raise InvalidTopology("size must be at least 1")
    if config.topology not in ALLOWED_TOPOLOGIES[domain]:
        raise InvalidTopology(
            f"{domain.value} does not support the '{config.topology}' "
            f"topology; use one of: {', '.join(ALLOWED_TOPOLOGIES[domain])}"
        )
    if not 0.0 <= config.edge_prob <= 1.0:
        raise InvalidTopology("edge_prob must be in [0, 1]")

    rng = RngStream(config.seed)
    schema = SCHEMAS[domain]
    prefix = {
        Domain.SYSADMIN: "c",
        Domain.GAME_OF_LIFE: "x",
        Domain.ACADEMIC_ADVISING: "cs",
    }[domain]

    if config.topology == "grid":
        rows, cols = grid_shape(size, config.rows, config.cols)
        adjacency = grid_adjacency(rows, cols)
    elif config.topology == "dag":
        adjacency = random_dag(size, config.edge_prob, rng)
    else:
        adjacency = random_graph(size, config.edge_prob, rng)

    if domain == Domain.GAME_OF_LIFE:
        objects = [f"x{i // cols + 1}y{i % cols + 1}" for i in range(size)]
    else:
        objects = [f"{prefix}{i + 1}" for i in range(size)]

    nonfluents = np.zeros((size, len(schema.nonfluents)))
    if domain == Domain.SYSADMIN:
        fluents = np.ones((size, 1), dtype=np.int8)
    elif domain == Domain.GAME_OF_LIFE:
        fluents = (rng.random((size, 1)) < config.init_alive_prob).astype(
            np.int8
        )
    else:
        fluents = np.zeros((size, 1), dtype=np.int8)
        count = max(1, round(config.requirement_fraction * size))
        required = rng.generator.choice(size, size=count, replace=False)
        nonfluents[required, 0] = 1.0

    # Reduced the same way as RngStream seeds.
    seed = config.seed % (1 << 64)
    name = config.name or f"{domain.value}_{size}_s{seed}"
    return ProblemInstance(
        name=name,
        objects=tuple(objects),
        unary_nonfluents=nonfluents,
        adjacency=adjacency,
        initial_fluents=fluents,
        horizon=config.horizon,
        discount=config.discount,
        params=PARAMS[domain](),
    )
