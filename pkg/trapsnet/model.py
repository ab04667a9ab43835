"""
Size-independent policy and value networks over object graphs.
"""
import copy
import dataclasses
from dataclasses import dataclass

import torch
from torch import nn

from . import DTYPE
from .errors import FeatureCountMismatch, UsageError
from .graph import build_graph, node_features
from .mdp import PROB_FLOOR, PolicyDistribution, greedy_action, legal_actions
from .neuralnet import (
    LEAKY_SLOPE,
    POOLS,
    Dense,
    GATLayer,
    GCNLayer,
    check_finite,
    concat,
    param_store,
    softmax,
    sum_rows,
)

ENCODERS = ("gat", "gcn")
POOLINGS = tuple(POOLS)
POLICY_INIT_SCALE = 0.01


@dataclass(frozen=True)
class EncoderConfig:
    """Shapes of every network; none of them depends on the object count."""

    feature_count: int
    template_count: int = 1
    gat_out: int = 3
    embed_dim: int = 20
    hidden_dim: int = 20
    gat_repeats: int = 4
    encoder: str = "gat"
    shared_encoder: bool = False
    noop: bool = True
    pooling: str = "max"
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise UsageError(
                f"unknown encoder '{self.encoder}', use one of: "
                f"{', '.join(ENCODERS)}"
            )
        if self.pooling not in POOLINGS:
            raise UsageError(
                f"unknown pooling '{self.pooling}', use one of: "
                f"{', '.join(POOLINGS)}"
            )
        for name in ("feature_count", "template_count", "gat_out",
                     "embed_dim", "hidden_dim", "gat_repeats"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be at least 1")

    @property
    def contextual_dim(self):
        return 2 * self.embed_dim

    @classmethod
    def for_schema(cls, schema, **overrides):
        return cls(
            feature_count=schema.feature_count,
            template_count=len(schema.templates),
            **overrides,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown model option(s): {', '.join(unknown)}")
        return cls(**values)


class StateEncoder(nn.Module):
    """Graph layer then a dense projection to object embeddings, pooled
    into the state embedding (max by default)."""

    def __init__(self, config, generator=None):
        super().__init__()
        if config.encoder == "gat":
            self.graph_layer = GATLayer(
                config.feature_count,
                config.gat_out,
                config.gat_repeats,
                config.leaky_slope,
                generator,
            )
        else:
            self.graph_layer = GCNLayer(
                config.feature_count,
                config.gat_out,
                config.leaky_slope,
                generator,
            )
        self.project = Dense(
            config.gat_out,
            config.embed_dim,
            slope=config.leaky_slope,
            generator=generator,
        )
        self.pool = POOLS[config.pooling]

    def forward(self, features, graph, mask=None):
        objects = self.project(self.graph_layer(features, graph, mask))
        return objects, self.pool(objects)


class Decoder(nn.Module):
    """Two dense layers, applied with tied parameters to every object."""

    def __init__(self, in_features, hidden, out_features, slope, generator,
                 output_scale=1.0):
        super().__init__()
        self.hidden = Dense(in_features, hidden, slope=slope,
                            generator=generator)
        self.output = Dense(hidden, out_features, activation=False,
                            generator=generator, init_scale=output_scale)

    def forward(self, x):
        return self.output(self.hidden(x))


class TrapsNet(nn.Module):
    """Policy and value networks sharing one parameter set across sizes.

    The policy parameters are the policy encoder, the action decoder and the
    noop head; the value parameters are the value encoder and the value
    decoder. With `shared_encoder` the value network reuses the policy
    encoder.
    """

    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        generator = torch.Generator().manual_seed(int(seed))
        slope = config.leaky_slope
        embed, hidden = config.embed_dim, config.hidden_dim

        self.policy_encoder = StateEncoder(config, generator)
        self.value_encoder = (
            None if config.shared_encoder else StateEncoder(config, generator)
        )
        # Small policy logits give a near-uniform initial policy.
        self.action_decoder = Decoder(
            config.contextual_dim, hidden, config.template_count, slope,
            generator, POLICY_INIT_SCALE,
        )
        self.noop_head = (
            Decoder(embed, hidden, 1, slope, generator, POLICY_INIT_SCALE)
            if config.noop else None
        )
        self.value_decoder = Decoder(
            config.contextual_dim, hidden, 1, slope, generator
        )

    def _inputs(self, instance, state, graph):
        if instance.schema.feature_count != self.config.feature_count:
            raise FeatureCountMismatch(
                f"model expects {self.config.feature_count} features per "
                f"object, {instance.domain.value} has "
                f"{instance.schema.feature_count}"
            )
        graph = build_graph(instance) if graph is None else graph
        return node_features(instance, state).to(DTYPE), graph

    def encode(self, instance, state, graph=None, network="policy"):
        """Return object embeddings [|O| x d] and the state embedding [d]."""
        features, graph = self._inputs(instance, state, graph)
        encoder = self.policy_encoder
        if network == "value" and self.value_encoder is not None:
            encoder = self.value_encoder
        return encoder(features, graph)

    @staticmethod
    def contextual(objects, state_embedding):
        """Concatenate every object embedding with the state embedding."""
        expanded = state_embedding.expand(objects.shape[0], -1)
        return concat([objects, expanded], dim=1)

    def policy_scores(self, instance, state, graph=None):
        """Unnormalized scores aligned with `legal_actions(instance)`."""
        objects, summary = self.encode(instance, state, graph, "policy")
        scores = self.action_decoder(self.contextual(objects, summary))

        # Template-major order: all objects for template 0, then template 1.
        scores = scores.transpose(0, 1).reshape(-1)
        if self.noop_head is None:
            noop = torch.full((1,), float("-inf"), dtype=scores.dtype)
        else:
            noop = self.noop_head(summary)
        return concat([scores, noop], dim=0)

    def policy_log_probs(self, instance, state, graph=None):
        """Differentiable probabilities and floored log-probabilities."""
        probs = softmax(self.policy_scores(instance, state, graph))
        log_probs = torch.log(probs.clamp_min(PROB_FLOOR))
        return probs, log_probs

    def policy_forward(self, instance, state, graph=None):
        """Return the randomized policy for one state."""
        with torch.no_grad():
            probs, _ = self.policy_log_probs(instance, state, graph)
        return PolicyDistribution(legal_actions(instance), probs.numpy())

    def value_tensor(self, instance, state, graph=None):
        """Differentiable V(s), the sum of per-object value scores."""
        objects, summary = self.encode(instance, state, graph, "value")
        values = self.value_decoder(self.contextual(objects, summary))
        return check_finite(sum_rows(values)[0], "value")

    def value_forward(self, instance, state, graph=None):
        """Return V(s) as a float."""
        with torch.no_grad():
            return float(self.value_tensor(instance, state, graph))

    def params(self):
        """Snapshot of all parameters as a name -> tensor map."""
        return param_store(self)

    def snapshot(self):
        """Independent copy for evaluation; training never touches it."""
        return copy.deepcopy(self).eval()


def param_count(config):
    """Count scalar parameters from the configuration alone."""
    f, g, e, h = (config.feature_count, config.gat_out, config.embed_dim,
                  config.hidden_dim)
    if config.encoder == "gat":
        graph_layer = config.gat_repeats * (f * g + 2 * g)
    else:
        graph_layer = f * g
    encoder = graph_layer + g * e + e
    encoders = encoder if config.shared_encoder else 2 * encoder

    def decoder(inputs, outputs):
        return inputs * h + h + h * outputs + outputs

    total = encoders
    total += decoder(2 * e, config.template_count)
    total += decoder(2 * e, 1)
    if config.noop:
        total += decoder(e, 1)
    return total


def load_model(checkpoint):
    """Rebuild a model from a checkpoint."""
    config = EncoderConfig.from_dict(checkpoint.meta.model_config)
    model = TrapsNet(config)
    model.load_state_dict(checkpoint.params)
    return model.eval()


def policy_fn(model, instance, greedy=False):
    """Wrap a model as a state -> distribution callable for one instance."""
    graph = build_graph(instance)
    actions = legal_actions(instance)

    def policy(state):
        dist = model.policy_forward(instance, state, graph)
        if greedy:
            return PolicyDistribution.deterministic(
                actions, greedy_action(dist)
            )
        return dist

    return policy


def value_fn(model, instance):
    """Wrap a model as a state -> value callable for one instance."""
    graph = build_graph(instance)

    def value(state):
        return model.value_forward(instance, state, graph)

    return value
