"""
Test domain dynamics, rewards and instance generators.
"""
import dataclasses
import itertools

import numpy as np
import pytest

from trapsnet.domains import (
    AcadParams,
    GeneratorConfig,
    GoLParams,
    SysAdminParams,
    acad_next_prob,
    acad_reward,
    generate_instance,
    gol_next_prob,
    gol_reward,
    grid_adjacency,
    grid_shape,
    params_from_dict,
    parse_domain,
    sysadmin_next_prob,
    sysadmin_reward,
)
from trapsnet.errors import InvalidTopology, SemanticError
from trapsnet.mdp import (
    NOOP,
    Domain,
    GroundAction,
    GroundState,
    ProblemInstance,
    RngStream,
    is_terminal,
    step,
)


def line_sysadmin(running):
    """Computers on a line, running flags as given."""
    n = len(running)
    adjacency = np.zeros((n, n), dtype=np.int8)
    for i in range(n - 1):
        adjacency[i, i + 1] = adjacency[i + 1, i] = 1
    return ProblemInstance("line", tuple(f"c{i}" for i in range(n)),
                           np.zeros((n, 0)), adjacency,
                           np.array(running)[:, None], 10, 1.0,
                           SysAdminParams())


def gol_board(alive, noise=0.0):
    adjacency = grid_adjacency(3, 3)
    return ProblemInstance("board", tuple(f"x{i}" for i in range(9)),
                           np.zeros((9, 0)), adjacency,
                           np.array(alive)[:, None], 10, 1.0,
                           GoLParams(noise_prob=noise))


def advising():
    """cs1 and cs2 are prerequisites of cs3, which is required."""
    adjacency = np.zeros((3, 3), dtype=np.int8)
    adjacency[0, 2] = adjacency[1, 2] = 1
    required = np.array([[0.0], [0.0], [1.0]])
    return ProblemInstance("advising", ("cs1", "cs2", "cs3"), required,
                           adjacency, np.zeros((3, 1)), 10, 1.0, AcadParams())


class TestSysAdmin:
    """Test SysAdmin dynamics."""

    def test_running_probability(self):
        """Test the neighbor-weighted survival probability."""
        instance = line_sysadmin([1, 1, 0])
        state = instance.initial_state()
        params = instance.params

        # c1 has neighbors c0 (running) and c2 (down): 0.45 + 0.5 * 2/3.
        prob = sysadmin_next_prob(params, instance, state, NOOP, 1)
        assert prob == pytest.approx(0.45 + 0.5 * 2 / 3)
        assert sysadmin_next_prob(params, instance, state, NOOP, 2) == 0.04

    def test_reboot(self):
        """Test that rebooting a computer brings it up."""
        instance = line_sysadmin([1, 1, 0])
        state = instance.initial_state()
        reboot = GroundAction(0, 2)
        assert sysadmin_next_prob(instance.params, instance, state, reboot,
                                  2) == 1.0

    def test_reward(self):
        """Test running count minus the reboot penalty."""
        instance = line_sysadmin([1, 1, 0])
        state = instance.initial_state()
        assert sysadmin_reward(instance.params, state, NOOP) == 2.0
        assert sysadmin_reward(instance.params, state,
                               GroundAction(0, 2)) == 1.25

    def test_sampling_frequency(self):
        """Test that sampled next states follow the stated probability."""
        instance = line_sysadmin([1, 1, 0])
        state = instance.initial_state()
        prob = sysadmin_next_prob(instance.params, instance, state, NOOP, 1)
        rng = RngStream(4)
        draws = 100000
        hits = sum(int(step(instance, state, NOOP, rng)[0].fluents[1, 0])
                   for _ in range(draws))
        sigma = np.sqrt(draws * prob * (1 - prob))
        assert abs(hits - draws * prob) < 4 * sigma


class TestGameOfLife:
    """Test Game of Life dynamics."""

    def test_conway_rule(self):
        """Test every neighborhood of the center cell without noise."""
        center = 4
        for bits in itertools.product((0, 1), repeat=9):
            instance = gol_board(list(bits))
            state = instance.initial_state()
            live = sum(bits) - bits[center]
            expected = live == 3 or (bits[center] and live == 2)
            prob = gol_next_prob(instance.params, instance, state, NOOP,
                                 center)
            assert prob == float(expected)

    def test_blinker(self):
        """Test that a vertical blinker turns horizontal."""
        vertical = [0, 1, 0, 0, 1, 0, 0, 1, 0]
        instance = gol_board(vertical)
        state, reward = step(instance, instance.initial_state(), NOOP,
                             RngStream(0))
        assert state.fluents[:, 0].tolist() == [0, 0, 0, 1, 1, 1, 0, 0, 0]
        assert reward == 3.0

    def test_set_action(self):
        """Test that setting a cell makes it live with 1 - noise."""
        instance = gol_board([0] * 9, noise=0.1)
        state = instance.initial_state()
        action = GroundAction(0, 0)
        assert gol_next_prob(instance.params, instance, state, action,
                             0) == pytest.approx(0.9)
        assert gol_next_prob(instance.params, instance, state, action,
                             1) == pytest.approx(0.1)

    def test_reward(self):
        """Test live cells counted and the set penalty subtracted."""
        instance = gol_board([1, 1, 0, 0, 0, 0, 0, 0, 0])
        params = GoLParams(set_action_penalty=0.5)
        state = instance.initial_state()
        assert gol_reward(params, state, NOOP) == 2.0
        assert gol_reward(params, state, GroundAction(0, 4)) == 1.5

    def test_noise_range(self):
        """Test that noise above one half is rejected."""
        with pytest.raises(SemanticError):
            GoLParams(noise_prob=0.6)


class TestAcademicAdvising:
    """Test Academic Advising dynamics."""

    def test_pass_probabilities(self):
        """Test the prerequisite-dependent pass probability."""
        instance = advising()
        state = instance.initial_state()
        params = instance.params
        assert acad_next_prob(params, instance, state, GroundAction(0, 0),
                              0) == pytest.approx(0.8)
        # No prerequisite of cs3 passed: 0.9 * 1 / 3.
        assert acad_next_prob(params, instance, state, GroundAction(0, 2),
                              2) == pytest.approx(0.3)
        passed = GroundState(np.array([[1], [1], [0]]))
        assert acad_next_prob(params, instance, passed, GroundAction(0, 2),
                              2) == pytest.approx(0.9)

    def test_passed_persists(self):
        """Test that passed courses stay passed."""
        instance = advising()
        passed = GroundState(np.array([[1], [0], [0]]))
        assert acad_next_prob(instance.params, instance, passed, NOOP,
                              0) == 1.0

    def test_reward(self):
        """Test costs until the requirements are met."""
        instance = advising()
        state = instance.initial_state()
        params = instance.params
        assert acad_reward(params, instance, state, NOOP) == -5.0
        assert acad_reward(params, instance, state,
                           GroundAction(0, 0)) == -6.0
        redo = GroundState(np.array([[1], [0], [0]]))
        assert acad_reward(params, instance, redo,
                           GroundAction(0, 0)) == -7.0
        done = GroundState(np.array([[0], [0], [1]]))
        assert acad_reward(params, instance, done, GroundAction(0, 0)) == 0
        assert is_terminal(instance, done)


NEXT_PROB = {
    "sysadmin": sysadmin_next_prob,
    "gol": gol_next_prob,
    "academic": acad_next_prob,
}


def random_params(domain, rng):
    """A parameter block with every probability drawn at random."""
    if domain == "sysadmin":
        return SysAdminParams(
            reboot_success_prob=rng.random(),
            base_running_prob=rng.random(),
            neighbor_bonus=rng.random(),
            spontaneous_recovery_prob=rng.random(),
        )
    if domain == "gol":
        return GoLParams(noise_prob=0.5 * rng.random())
    return AcadParams(prior_pass_prob_no_prereq=rng.random(),
                      pass_prob_scale=rng.random())


class TestProbabilityRange:
    """Test next-state probabilities over random cases."""

    @pytest.mark.parametrize("domain", ["sysadmin", "gol", "academic"])
    def test_in_range(self, domain):
        """Test that 10^5 per-object probabilities lie in [0, 1]."""
        rng = np.random.default_rng(0)
        next_prob = NEXT_PROB[domain]
        sizes = (4, 6, 8, 9, 12) if domain == "gol" else range(1, 13)
        cases = 0
        while cases < 100000:
            size = int(rng.choice(sizes))
            instance = generate_instance(GeneratorConfig(
                domain, size, seed=int(rng.integers(1 << 31)),
                edge_prob=float(rng.random()),
            ))
            instance = dataclasses.replace(
                instance, params=random_params(domain, rng)
            )
            for _ in range(50):
                state = GroundState(rng.integers(0, 2, (size, 1)))
                action = NOOP
                if rng.random() > 0.2:
                    action = GroundAction(0, int(rng.integers(size)))
                probs = instance.params.next_probs(instance, state, action)
                assert probs.shape == (size, 1)
                assert np.all((probs >= 0) & (probs <= 1))
                index = int(rng.integers(size))
                assert next_prob(instance.params, instance, state, action,
                                 index) == probs[index, 0]
                cases += size


class TestGenerator:
    """Test random instance generation."""

    def test_reproducible(self):
        """Test that equal seeds give equal instances."""
        config = GeneratorConfig("sysadmin", 10, seed=3)
        assert generate_instance(config) == generate_instance(config)

    def test_sizes(self):
        """Test object counts and naming."""
        instance = generate_instance(GeneratorConfig("gol", 9))
        assert instance.size == 9
        assert instance.objects[0] == "x1y1"
        assert instance.objects[-1] == "x3y3"

    def test_grid_shape(self):
        """Test the squarest grid factorization."""
        assert grid_shape(12) == (3, 4)
        assert grid_shape(25) == (5, 5)
        with pytest.raises(InvalidTopology):
            grid_shape(7)

    def test_invalid_topology(self):
        """Test unsupported topologies for a domain."""
        with pytest.raises(InvalidTopology):
            generate_instance(GeneratorConfig("gol", 9, topology="random"))
        with pytest.raises(InvalidTopology):
            generate_instance(GeneratorConfig("gol", 7))

    def test_academic_is_acyclic(self):
        """Test that prerequisite edges only point forward."""
        instance = generate_instance(
            GeneratorConfig("academic", 12, edge_prob=0.5, seed=2)
        )
        assert not np.tril(instance.adjacency).any()
        assert instance.unary_nonfluents.sum() >= 1

    def test_unknown_parameter(self):
        """Test that unknown parameters are rejected."""
        with pytest.raises(SemanticError):
            params_from_dict("sysadmin", {"reboot_cost": 1})

    def test_negative_seed_name(self):
        """Test that names stay identifiers for negative seeds."""
        instance = generate_instance(GeneratorConfig("sysadmin", 3, seed=-1))
        assert instance.name.replace("_", "").isalnum()
        assert instance.name == f"sysadmin_3_s{(1 << 64) - 1}"

    def test_domain_spellings(self):
        """Test that enum-style domain names are accepted."""
        assert parse_domain("SysAdmin") is Domain.SYSADMIN
        assert parse_domain("GameOfLife") is Domain.GAME_OF_LIFE
        assert parse_domain("AcademicAdvising") is Domain.ACADEMIC_ADVISING
        with pytest.raises(SemanticError):
            parse_domain("Elevators")
