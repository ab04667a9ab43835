"""
Test object graphs and node features.
"""
import torch

from trapsnet.graph import build_graph, node_features
from trapsnet.instance import read_instance

DATA = "./tests/data"


class TestGraph:
    """Test neighborhoods and features."""

    def test_neighborhoods(self):
        """Test that each node attends to itself first, then neighbors."""
        instance = read_instance(f"{DATA}/sysadmin_3.rddl").instance
        graph = build_graph(instance)
        assert graph.neighborhoods == ((0, 1), (1, 0, 2), (2, 1))
        assert graph.mask.diagonal().all()
        assert not graph.mask[0, 2]

    def test_directed(self):
        """Test that courses attend to their prerequisites."""
        instance = read_instance(f"{DATA}/academic_4.rddl").instance
        graph = build_graph(instance)
        assert graph.neighborhoods[2] == (2, 0, 1)
        assert graph.neighborhoods[0] == (0,)
        assert graph.neighborhoods[3] == (3, 2)

    def test_features(self):
        """Test fluents followed by unary non-fluents."""
        instance = read_instance(f"{DATA}/academic_4.rddl").instance
        features = node_features(instance, instance.initial_state())
        assert features.dtype == torch.float64
        assert features.tolist() == [[0, 0], [0, 0], [0, 1], [0, 1]]
