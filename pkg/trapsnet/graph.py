"""
Object graphs and per-node input features.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
import torch

from . import DTYPE


@dataclass(frozen=True, eq=False)
class ObjectGraph:
    """Objects as nodes, edges from the binary non-fluent.

    The raw adjacency has no self-loops; every attention neighborhood starts
    with the node itself, followed by its neighbors in ascending order.
    """

    adjacency: np.ndarray
    neighborhoods: Tuple[Tuple[int, ...], ...]

    @property
    def size(self):
        return len(self.neighborhoods)

    @cached_property
    def mask(self):
        """Boolean [|O| x |O|] mask, true where j is in neighborhood(i)."""
        mask = torch.zeros((self.size, self.size), dtype=torch.bool)
        for i, neighborhood in enumerate(self.neighborhoods):
            mask[i, list(neighborhood)] = True
        return mask


def build_graph(instance):
    """Build the radius-1 object graph of an instance.

    In directed domains a node attends to its in-neighbors, since a course
    depends on its prerequisites.
    """
    adjacency = instance.adjacency
    incoming = adjacency.T if instance.schema.directed else adjacency
    neighborhoods = tuple(
        (i,) + tuple(int(j) for j in np.flatnonzero(incoming[i]))
        for i in range(instance.size)
    )
    return ObjectGraph(adjacency=adjacency, neighborhoods=neighborhoods)


def node_features(instance, state):
    """Concatenate fluents and unary non-fluents into [|O| x F] features."""
    # Instance arrays are read-only, so copy before handing them to torch.
    features = np.concatenate(
        [state.fluents, instance.unary_nonfluents], axis=1
    ).astype(np.float64)
    return torch.from_numpy(features).to(DTYPE)
