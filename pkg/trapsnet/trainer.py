"""
Multi-problem advantage actor-critic training.

Every round collects one n-step segment per training instance against the
current parameters, sums the per-problem loss gradients and applies a single
optimizer update, so no one problem dominates the shared parameters.
"""
import copy
import logging
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from . import CHECKPOINT_EVERY, THREADS
from .checkpoint import Checkpoint, CheckpointMeta
from .errors import (
    DomainMismatch,
    FeatureCountMismatch,
    NonFiniteGradient,
    UsageError,
)
from .graph import build_graph
from .mdp import (
    GroundAction,
    GroundState,
    ProblemInstance,
    RngStream,
    action_position,
    is_terminal,
    sample_action,
    step,
)
from .model import EncoderConfig, TrapsNet, load_model, policy_fn, value_fn
from .neuralnet import backward, make_rmsprop, rmsprop_update

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    instances: Tuple[ProblemInstance, ...]
    nstep: int = 20
    gamma: float = 0.99
    entropy_weight: float = 0.01
    value_loss_weight: float = 0.5
    grad_clip_norm: Optional[float] = 40.0
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    wall_clock_budget: Optional[float] = None
    checkpoint_interval: Optional[float] = CHECKPOINT_EVERY
    max_steps: Optional[int] = None
    checkpoint_every_steps: Optional[int] = None
    normalize_rewards: bool = False
    seed: int = 0
    threads: int = THREADS
    max_failures: int = 3

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise UsageError("training needs at least one instance")
        domains = {instance.domain for instance in self.instances}
        if len(domains) > 1:
            raise DomainMismatch(
                "training instances come from different domains: "
                + ", ".join(sorted(domain.value for domain in domains))
            )
        if self.nstep < 1:
            raise UsageError("nstep must be at least 1")
        if not 0 < self.gamma <= 1:
            raise UsageError("gamma must be in (0, 1]")
        if self.wall_clock_budget is None and self.max_steps is None:
            raise UsageError("set a wall-clock budget or a step limit")
        for name in ("wall_clock_budget", "max_steps"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise UsageError(f"{name} must not be negative")
        for name in ("checkpoint_interval", "checkpoint_every_steps",
                     "grad_clip_norm"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise UsageError(f"{name} must be positive")
        if self.threads < 1 or self.max_failures < 1:
            raise UsageError("threads and max_failures must be at least 1")

    @property
    def domain(self):
        return self.instances[0].domain


class Episode:
    """Cursor over one instance that persists across training rounds."""

    def __init__(self, instance, rng):
        self.instance = instance
        self.rng = rng
        self.graph = build_graph(instance)
        self.returns = []
        self.reset()

    def reset(self):
        self.state = self.instance.initial_state()
        self.t = 0
        self.total = 0.0
        self.weight = 1.0

    @property
    def done(self):
        return (self.t >= self.instance.horizon
                or is_terminal(self.instance, self.state))

    def advance(self, state, reward):
        self.total += self.weight * reward
        self.weight *= self.instance.discount
        self.state = state
        self.t += 1
        if self.done:
            self.returns.append(self.total)
            self.reset()
            return True
        return False

    def pop_returns(self):
        returns, self.returns = self.returns, []
        return returns


@dataclass
class Segment:
    problem: int
    seed: int
    instance: ProblemInstance
    graph: object
    states: List[GroundState] = field(default_factory=list)
    actions: List[GroundAction] = field(default_factory=list)
    positions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    entropies: List[float] = field(default_factory=list)
    bootstrap: float = 0.0

    def __len__(self):
        return len(self.states)


@dataclass
class AdvantageBatch:
    returns: np.ndarray
    advantages: np.ndarray


@dataclass
class LossTerms:
    total: torch.Tensor
    policy: float
    value: float
    entropy: float


def collect_segment(episode, model, nstep, problem=0):
    """Run the policy for up to `nstep` steps of an episode.

    The segment draws from its own stream, seeded from the episode stream,
    so it can be replayed from its first state and its seed alone.
    """
    seed = int(episode.rng.generator.integers(0, 1 << 63))
    rng = RngStream(seed)
    instance = episode.instance
    segment = Segment(problem, seed, instance, episode.graph)
    ended = False
    with torch.no_grad():
        for _ in range(nstep):
            state = episode.state
            dist = model.policy_forward(instance, state, episode.graph)
            action = sample_action(dist, rng)
            position = action_position(instance, action)
            next_state, reward = step(instance, state, action, rng)

            segment.states.append(state)
            segment.actions.append(action)
            segment.positions.append(position)
            segment.rewards.append(reward)
            segment.values.append(
                model.value_forward(instance, state, episode.graph)
            )
            segment.log_probs.append(float(dist.log_probs[position]))
            segment.entropies.append(dist.entropy())

            ended = episode.advance(next_state, reward)
            if ended:
                break
        if not ended:
            segment.bootstrap = model.value_forward(
                instance, episode.state, episode.graph
            )
    return segment


def compute_advantages(segment, gamma, scale=1.0):
    """n-step returns R_t = r_t + gamma R_{t+1}, seeded with the bootstrap,
    and advantages R_t - V(s_t)."""
    returns = np.zeros(len(segment))
    running = segment.bootstrap
    for t in reversed(range(len(segment))):
        running = scale * segment.rewards[t] + gamma * running
        returns[t] = running
    advantages = returns - np.asarray(segment.values, dtype=np.float64)
    if not np.all(np.isfinite(advantages)):
        raise NonFiniteGradient(
            f"non-finite advantage in segment seed {segment.seed}"
        )
    return AdvantageBatch(returns, advantages)


def loss(segment, batch, model, config):
    """Actor-critic loss of one segment, differentiable in the parameters.

    The advantage enters the policy term as a constant.
    """
    policy_term = torch.zeros((), dtype=torch.float64)
    value_term = torch.zeros((), dtype=torch.float64)
    entropy_term = torch.zeros((), dtype=torch.float64)
    for t, state in enumerate(segment.states):
        probs, log_probs = model.policy_log_probs(
            segment.instance, state, segment.graph
        )
        value = model.value_tensor(segment.instance, state, segment.graph)
        policy_term = policy_term - log_probs[segment.positions[t]] * float(
            batch.advantages[t]
        )
        value_term = value_term + (float(batch.returns[t]) - value) ** 2
        entropy_term = entropy_term - (probs * log_probs).sum()
    total = (policy_term
             + config.value_loss_weight * value_term
             - config.entropy_weight * entropy_term)
    return LossTerms(total, policy_term.item(), value_term.item(),
                     entropy_term.item())


def reward_scale(instance, config):
    return 1.0 / instance.size if config.normalize_rewards else 1.0


def accumulate_gradients(segments, model, config):
    """Sum the loss gradients of every segment, in problem order."""
    params = OrderedDict(model.named_parameters())
    grads = None
    terms = []
    for segment in segments:
        batch = compute_advantages(
            segment, config.gamma, reward_scale(segment.instance, config)
        )
        term = loss(segment, batch, model, config)
        segment_grads = backward(term.total, params)
        for name, grad in segment_grads.items():
            if not torch.isfinite(grad).all():
                raise NonFiniteGradient(
                    f"non-finite gradient for '{name}' from problem "
                    f"{segment.problem}, segment seed {segment.seed}"
                )
        if grads is None:
            grads = segment_grads
        else:
            for name, grad in segment_grads.items():
                grads[name] = grads[name] + grad
        terms.append(term)
    return grads, terms


def accumulate_and_apply(segments, model, optimizer, config):
    """Apply exactly one optimizer update from the summed gradients."""
    grads, terms = accumulate_gradients(segments, model, config)
    params = OrderedDict(model.named_parameters())
    norm = rmsprop_update(params, grads, optimizer, config.grad_clip_norm)
    return norm, terms


class Trainer:
    """Owns the model, the optimizer and one episode per training problem."""

    def __init__(self, config, model=None, model_options=None, steps=0,
                 elapsed=0.0):
        self.config = config
        if model is None:
            schema = config.instances[0].schema
            model = TrapsNet(
                EncoderConfig.for_schema(schema, **(model_options or {})),
                seed=config.seed,
            )
        for instance in config.instances:
            check_compatible(model.config, instance)
        self.model = model.train()
        rng = RngStream(config.seed)
        self.episodes = [
            Episode(instance, rng.child(i))
            for i, instance in enumerate(config.instances)
        ]
        self.optimizer = make_rmsprop(
            OrderedDict(model.named_parameters()),
            config.learning_rate,
            config.rmsprop_decay,
            config.rmsprop_eps,
        )
        self.steps = steps
        self.elapsed = elapsed
        self.failures = 0
        self.history = []

    @classmethod
    def resume(cls, config, checkpoint):
        """Continue training from a checkpoint's parameters and counters."""
        if checkpoint.meta.domain != config.domain.value:
            raise DomainMismatch(
                f"checkpoint is for {checkpoint.meta.domain}, training "
                f"instances are {config.domain.value}"
            )
        return cls(config, model=load_model(checkpoint),
                   steps=checkpoint.meta.steps,
                   elapsed=checkpoint.meta.elapsed_seconds)

    def collect(self):
        nstep = self.config.nstep
        jobs = list(enumerate(self.episodes))
        if self.config.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.config.threads) as executor:
                return list(executor.map(
                    lambda job: collect_segment(job[1], self.model, nstep,
                                                job[0]),
                    jobs,
                ))
        return [collect_segment(episode, self.model, nstep, problem)
                for problem, episode in jobs]

    def round(self, elapsed):
        """Run one collect and update round; return False if it was skipped."""
        segments = self.collect()
        try:
            _, terms = accumulate_and_apply(
                segments, self.model, self.optimizer, self.config
            )
        except NonFiniteGradient as error:
            self.optimizer.zero_grad(set_to_none=True)
            self.failures += 1
            logger.warning("Skipped update %d/%d: %s", self.failures,
                           self.config.max_failures, error)
            if self.failures >= self.config.max_failures:
                raise
            return False
        self.failures = 0
        self.steps += 1
        self.record(elapsed, terms)
        return True

    def record(self, elapsed, terms):
        row = {
            "wall_seconds": elapsed,
            "step": self.steps,
            "loss": sum(term.total.item() for term in terms),
            "policy_loss": sum(term.policy for term in terms),
            "value_loss": sum(term.value for term in terms),
            "entropy": sum(term.entropy for term in terms),
        }
        for i, episode in enumerate(self.episodes):
            returns = episode.pop_returns()
            row[f"return_{i}"] = float(np.mean(returns)) if returns else None
        self.history.append(row)

    def log_frame(self):
        columns = ["wall_seconds", "step", "loss", "policy_loss",
                   "value_loss", "entropy"]
        columns += [f"return_{i}" for i in range(len(self.episodes))]
        return pd.DataFrame(self.history, columns=columns)

    def checkpoint(self, elapsed):
        meta = CheckpointMeta(
            domain=self.config.domain.value,
            model_config=self.model.config.to_dict(),
            elapsed_seconds=elapsed,
            steps=self.steps,
            seeds=[self.config.seed],
        )
        return Checkpoint(self.model.params(), meta)

    def _exhausted(self, seconds):
        config = self.config
        if (config.wall_clock_budget is not None
                and seconds >= config.wall_clock_budget):
            return True
        return config.max_steps is not None and self.steps >= config.max_steps

    def train(self):
        """Yield checkpoints: one at the start, periodic ones, a final one."""
        config = self.config
        started = time.monotonic()
        yield self._emit(self.elapsed)
        last_seconds, last_steps = 0.0, self.steps

        while True:
            seconds = time.monotonic() - started
            if self._exhausted(seconds):
                break
            if not self.round(self.elapsed + seconds):
                continue
            seconds = time.monotonic() - started
            due = (
                config.checkpoint_every_steps is not None
                and self.steps - last_steps >= config.checkpoint_every_steps
            ) or (
                config.checkpoint_interval is not None
                and config.checkpoint_every_steps is None
                and seconds - last_seconds >= config.checkpoint_interval
            )
            if due:
                yield self._emit(self.elapsed + seconds)
                last_seconds, last_steps = seconds, self.steps

        if self.steps > last_steps:
            yield self._emit(self.elapsed + time.monotonic() - started)

    def _emit(self, elapsed):
        checkpoint = self.checkpoint(elapsed)
        logger.info("Checkpoint at step %d after %.1f s", self.steps, elapsed)
        return checkpoint


def train(config, model_options=None):
    """Train from scratch and yield checkpoints."""
    yield from Trainer(config, model_options=model_options).train()


def check_compatible(model_config, instance):
    schema = instance.schema
    if model_config.feature_count != schema.feature_count:
        raise FeatureCountMismatch(
            f"model expects {model_config.feature_count} features per object,"
            f" {instance.name} has {schema.feature_count}"
        )
    if model_config.template_count != len(schema.templates):
        raise FeatureCountMismatch(
            f"model scores {model_config.template_count} action template(s),"
            f" {instance.name} has {len(schema.templates)}"
        )


class TransferredModel:
    """A checkpoint made ready for an unseen instance of the same domain."""

    def __init__(self, checkpoint, instance):
        self.checkpoint = checkpoint
        self.instance = instance
        self.model = load_model(checkpoint)
        self.policy = policy_fn(self.model, instance)
        self.greedy = policy_fn(self.model, instance, greedy=True)
        self.value = value_fn(self.model, instance)

    def fine_tune(self, **options):
        """Keep training a copy on the target instance alone.

        Elapsed time restarts at zero, so the zero-shot policy sits at t = 0.
        """
        config = TrainConfig(instances=(self.instance,), **options)
        model = copy.deepcopy(self.model)
        yield from Trainer(config, model=model).train()


def transfer_init(checkpoint, instance):
    if checkpoint.meta.domain != instance.domain.value:
        raise DomainMismatch(
            f"checkpoint was trained on {checkpoint.meta.domain}, "
            f"{instance.name} is {instance.domain.value}"
        )
    check_compatible(EncoderConfig.from_dict(checkpoint.meta.model_config),
                     instance)
    return TransferredModel(checkpoint, instance)

