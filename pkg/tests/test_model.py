"""
Test the size-independent policy and value networks.
"""
import math

import numpy as np
import pytest
import torch

from trapsnet.checkpoint import (
    Checkpoint,
    CheckpointMeta,
    load_checkpoint,
    save_checkpoint,
)
from trapsnet.domains import SYSADMIN, GeneratorConfig, generate_instance
from trapsnet.errors import FeatureCountMismatch, UsageError
from trapsnet.mdp import GroundState, legal_actions
from trapsnet.model import EncoderConfig, TrapsNet, load_model, param_count


def random_state(instance, rng):
    shape = instance.initial_fluents.shape
    return GroundState(rng.integers(0, 2, shape))


def model_for(instance, seed=0, **options):
    return TrapsNet(EncoderConfig.for_schema(instance.schema, **options),
                    seed=seed)


class TestModel:
    """Test shapes, parameter counts and symmetry properties."""

    def test_param_count(self):
        """Test the closed-form count and that sizes do not change it."""
        config = EncoderConfig.for_schema(SYSADMIN)
        model = TrapsNet(config)
        counted = sum(p.numel() for p in model.parameters())
        assert counted == param_count(config) == 2355

        gcn = EncoderConfig.for_schema(SYSADMIN, encoder="gcn",
                                       shared_encoder=True, noop=False)
        assert sum(p.numel() for p in TrapsNet(gcn).parameters()) == \
            param_count(gcn)

    def test_distribution(self):
        """Test one probability per ground action, summing to 1."""
        for size in (1, 5, 50):
            instance = generate_instance(GeneratorConfig("sysadmin", size))
            dist = model_for(instance).policy_forward(
                instance, instance.initial_state()
            )
            assert dist.actions == tuple(legal_actions(instance))
            assert dist.probs.sum() == pytest.approx(1.0)

    def test_near_uniform_start(self):
        """Test that initial policies are close to uniform."""
        rng = np.random.default_rng(0)
        for seed in range(10):
            instance = generate_instance(
                GeneratorConfig("sysadmin", 8, seed=seed)
            )
            model = model_for(instance, seed=seed)
            dist = model.policy_forward(instance, random_state(instance, rng))
            uniform = math.log(len(dist.actions))
            assert abs(dist.entropy() - uniform) < 0.1 * uniform

    def test_permutation(self):
        """Test value invariance and policy equivariance."""
        rng = np.random.default_rng(1)
        cases = [("sysadmin", 6), ("gol", 8), ("academic", 7)]
        for trial in range(50):
            domain, size = cases[trial % 3]
            instance = generate_instance(
                GeneratorConfig(domain, size, seed=trial, edge_prob=0.4)
            )
            model = model_for(instance, seed=trial)
            state = random_state(instance, rng)
            order = rng.permutation(size)
            moved = instance.permuted(order)
            moved_state = state.permuted(order)

            value = model.value_forward(instance, state)
            assert model.value_forward(moved, moved_state) == \
                pytest.approx(value, abs=1e-9)

            probs = model.policy_forward(instance, state).probs
            moved_probs = model.policy_forward(moved, moved_state).probs
            assert np.allclose(moved_probs[:size], probs[:size][order],
                               atol=1e-9)
            assert moved_probs[-1] == pytest.approx(probs[-1], abs=1e-9)

    def test_noop_disabled(self):
        """Test that Noop gets zero probability when turned off."""
        instance = generate_instance(GeneratorConfig("sysadmin", 4))
        model = model_for(instance, noop=False)
        dist = model.policy_forward(instance, instance.initial_state())
        assert dist.probs[-1] == 0.0

    def test_feature_mismatch(self):
        """Test that a model refuses instances of another feature width."""
        academic = generate_instance(GeneratorConfig("academic", 4))
        model = TrapsNet(EncoderConfig.for_schema(SYSADMIN))
        with pytest.raises(FeatureCountMismatch):
            model.policy_forward(academic, academic.initial_state())

    def test_unknown_encoder(self):
        """Test configuration validation."""
        with pytest.raises(UsageError):
            EncoderConfig(feature_count=1, encoder="mlp")

    def test_every_parameter_used(self):
        """Test that the policy and value losses reach every parameter."""
        rng = np.random.default_rng(3)
        for domain, size in (("sysadmin", 5), ("gol", 9), ("academic", 6)):
            instance = generate_instance(
                GeneratorConfig(domain, size, seed=2, edge_prob=0.5)
            )
            model = model_for(instance)
            for _ in range(3):
                state = random_state(instance, rng)
                probs, log_probs = model.policy_log_probs(instance, state)
                loss = -(probs * log_probs).sum() + model.value_tensor(
                    instance, state
                )
                loss.backward()
            for name, param in model.named_parameters():
                assert param.grad is not None, name
                assert torch.isfinite(param.grad).all(), name
                assert param.grad.abs().sum() > 0, name

    def test_value_additive(self):
        """Test that a constant per-object value c gives V = |O| c."""
        for size in (1, 4, 30):
            instance = generate_instance(GeneratorConfig("sysadmin", size))
            model = model_for(instance)
            with torch.no_grad():
                model.value_decoder.output.weight.zero_()
                model.value_decoder.output.bias.fill_(0.25)
            assert model.value_forward(
                instance, instance.initial_state()
            ) == pytest.approx(0.25 * size)


class TestPooling:
    """Test the pooling choices of the state encoder."""

    @pytest.mark.parametrize("pooling", ["sum", "mean"])
    def test_value_invariance(self, pooling):
        """Test value invariance under object permutations."""
        rng = np.random.default_rng(5)
        for trial in range(20):
            instance = generate_instance(
                GeneratorConfig("sysadmin", 6, seed=trial, edge_prob=0.4)
            )
            model = model_for(instance, seed=trial, pooling=pooling)
            state = random_state(instance, rng)
            order = rng.permutation(6)
            value = model.value_forward(instance, state)
            assert model.value_forward(
                instance.permuted(order), state.permuted(order)
            ) == pytest.approx(value, abs=1e-9)

    def test_parameter_count(self):
        """Test that pooling does not change the parameter count."""
        for pooling in ("max", "sum", "mean"):
            config = EncoderConfig.for_schema(SYSADMIN, pooling=pooling)
            assert param_count(config) == 2355
            assert sum(p.numel() for p in TrapsNet(config).parameters()) \
                == 2355

    def test_checkpoint_keeps_pooling(self):
        """Test that the pooling choice survives a checkpoint."""
        instance = generate_instance(GeneratorConfig("sysadmin", 4))
        model = model_for(instance, pooling="mean")
        meta = CheckpointMeta("sysadmin", model.config.to_dict())
        params, meta = load_checkpoint(save_checkpoint(model.params(), meta))
        restored = load_model(Checkpoint(params, meta))
        assert restored.config.pooling == "mean"
        state = instance.initial_state()
        assert restored.value_forward(instance, state) == \
            model.value_forward(instance, state)

    def test_unknown_pooling(self):
        """Test that unsupported pooling is refused."""
        with pytest.raises(UsageError):
            EncoderConfig(feature_count=1, pooling="median")
