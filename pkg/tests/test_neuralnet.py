"""
Test layer operations, their gradients and the optimizer update.
"""
from collections import OrderedDict

import pytest
import torch

from trapsnet.domains import GeneratorConfig, generate_instance
from trapsnet.errors import ShapeMismatch
from trapsnet.graph import build_graph
from trapsnet.neuralnet import (
    backward,
    concat,
    fc_forward,
    gat_layer,
    gcn_layer,
    leaky_relu,
    make_rmsprop,
    max_pool,
    max_pool_rows,
    rmsprop_update,
    softmax,
    sum_rows,
)


def random_graph(size=5, seed=0):
    instance = generate_instance(
        GeneratorConfig("sysadmin", size, edge_prob=0.5, seed=seed)
    )
    return build_graph(instance)


def tensor(*shape, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, dtype=torch.float64, generator=generator,
                       requires_grad=True)


class TestOperations:
    """Test forward values of elementary operations."""

    def test_fc_forward(self):
        """Test x W + b and shape checks."""
        x = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
        w = torch.tensor([[1.0], [3.0]], dtype=torch.float64)
        b = torch.tensor([0.5], dtype=torch.float64)
        assert fc_forward(x, w, b).tolist() == [[7.5]]
        with pytest.raises(ShapeMismatch):
            fc_forward(x, w.T)

    def test_concat_mismatch(self):
        """Test that incompatible shapes raise ShapeMismatch."""
        with pytest.raises(ShapeMismatch):
            concat([torch.zeros(2, 3), torch.zeros(3, 3)], dim=1)

    def test_softmax_stable(self):
        """Test that large scores do not overflow."""
        probs = softmax(torch.tensor([1000.0, 1000.0], dtype=torch.float64))
        assert probs.tolist() == [0.5, 0.5]

    def test_max_pool_ties(self):
        """Test that tied maxima send the gradient to the first entry."""
        x = torch.tensor([[1.0, 2.0], [1.0, 0.0]], dtype=torch.float64,
                         requires_grad=True)
        max_pool_rows(x).sum().backward()
        assert x.grad.tolist() == [[1.0, 1.0], [0.0, 0.0]]

    def test_sum_rows(self):
        """Test the columnwise sum and its shape check."""
        x = torch.arange(6, dtype=torch.float64).reshape(3, 2)
        assert sum_rows(x).tolist() == [6.0, 9.0]
        with pytest.raises(ShapeMismatch):
            sum_rows(torch.zeros(3, dtype=torch.float64))

    def test_gat_dense_oracle(self):
        """Test the GAT layer against an explicit per-node computation."""
        graph = random_graph(5, seed=1)
        x = tensor(5, 2, seed=1).detach()
        weight = tensor(2, 2, 3, seed=2).detach()
        attention = tensor(2, 6, seed=3).detach()
        out = gat_layer(x, graph, weight, attention)

        passes = []
        for k in range(2):
            h = x @ weight[k]
            rows = []
            for i, neighborhood in enumerate(graph.neighborhoods):
                scores = torch.stack([
                    leaky_relu(attention[k] @ torch.cat([h[i], h[j]]))
                    for j in neighborhood
                ])
                coefficients = torch.softmax(scores, dim=0)
                rows.append(sum(c * h[j] for c, j in
                                zip(coefficients, neighborhood)))
            passes.append(torch.stack(rows))
        expected = torch.maximum(passes[0], passes[1])
        assert torch.allclose(out, expected, atol=1e-12)

    def test_gcn_isolated(self):
        """Test that an isolated node only sees itself."""
        graph = random_graph(4, seed=0)
        x = tensor(4, 2, seed=4).detach()
        weight = torch.eye(2, dtype=torch.float64)
        out = gcn_layer(x, graph, weight, slope=1.0)
        for i, neighborhood in enumerate(graph.neighborhoods):
            if len(neighborhood) == 1:
                assert torch.allclose(out[i], x[i])

    def test_gcn_complete_pair(self):
        """Test that two connected nodes both get the averaged features."""
        x = torch.tensor([[1.0, 4.0], [3.0, 0.0]], dtype=torch.float64)
        mask = torch.ones((2, 2), dtype=torch.bool)
        weight = torch.eye(2, dtype=torch.float64)
        out = gcn_layer(x, None, weight, slope=1.0, mask=mask)
        assert torch.allclose(out, torch.tensor([[2.0, 2.0], [2.0, 2.0]],
                                                dtype=torch.float64))

    def test_gcn_permutation(self):
        """Test that permuting the rows permutes the output rows."""
        generator = torch.Generator().manual_seed(0)
        for seed in range(10):
            mask = random_graph(6, seed=seed).mask
            x = tensor(6, 2, seed=seed).detach()
            weight = tensor(2, 3, seed=seed + 50).detach()
            order = torch.randperm(6, generator=generator)
            out = gcn_layer(x, None, weight, mask=mask)
            moved = gcn_layer(x[order], None, weight,
                              mask=mask[order][:, order])
            assert torch.allclose(moved, out[order], atol=1e-12)


class TestGradients:
    """Test gradients against central finite differences."""

    def test_dense(self):
        """Test the gradient of a dense layer with leaky ReLU."""
        for seed in range(20):
            x, w, b = tensor(4, 3, seed=seed), tensor(3, 2, seed=seed + 100), \
                tensor(2, seed=seed + 200)
            assert torch.autograd.gradcheck(
                lambda x, w, b: leaky_relu(fc_forward(x, w, b)),
                (x, w, b), eps=1e-5, atol=1e-6, rtol=1e-6,
            )

    def test_gat(self):
        """Test the gradient of the GAT layer."""
        for seed in range(20):
            graph = random_graph(5, seed=seed)
            x = tensor(5, 2, seed=seed)
            weight = tensor(4, 2, 3, seed=seed + 100)
            attention = tensor(4, 6, seed=seed + 200)
            assert torch.autograd.gradcheck(
                lambda x, w, a: gat_layer(x, graph, w, a),
                (x, weight, attention), eps=1e-5, atol=1e-6, rtol=1e-6,
            )

    def test_gcn(self):
        """Test the gradient of the GCN layer."""
        for seed in range(20):
            graph = random_graph(5, seed=seed)
            x = tensor(5, 2, seed=seed)
            weight = tensor(2, 3, seed=seed + 100)
            assert torch.autograd.gradcheck(
                lambda x, w: gcn_layer(x, graph, w), (x, weight),
                eps=1e-5, atol=1e-6, rtol=1e-6,
            )

    def test_pooling_and_softmax(self):
        """Test max pooling and softmax gradients."""
        for seed in range(20):
            x = tensor(4, 3, seed=seed)
            assert torch.autograd.gradcheck(
                lambda x: softmax(max_pool(x, dim=0)), (x,),
                eps=1e-5, atol=1e-6, rtol=1e-6,
            )


class TestOptimizer:
    """Test gradient plumbing and the RMSProp update."""

    def test_unused_parameters(self):
        """Test that unused parameters get zero gradients."""
        params = OrderedDict(a=tensor(2, seed=1), b=tensor(2, seed=2))
        grads = backward((params["a"] ** 2).sum(), params)
        assert torch.equal(grads["b"], torch.zeros(2, dtype=torch.float64))
        assert torch.allclose(grads["a"], 2 * params["a"].detach())

    def test_rmsprop_step(self):
        """Test one update against the closed form."""
        p = torch.nn.Parameter(torch.tensor([1.0], dtype=torch.float64))
        params = OrderedDict(p=p)
        optimizer = make_rmsprop(params, learning_rate=0.1, decay=0.9,
                                 eps=1e-8)
        grads = OrderedDict(p=torch.tensor([2.0], dtype=torch.float64))
        rmsprop_update(params, grads, optimizer)
        acc = 0.1 * 4.0
        expected = 1.0 - 0.1 * 2.0 / (acc ** 0.5 + 1e-8)
        assert p.item() == pytest.approx(expected, rel=1e-12)

    def test_clipping(self):
        """Test that the global norm is clipped before the step."""
        p = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        params = OrderedDict(p=p)
        optimizer = torch.optim.SGD([p], lr=1.0)
        grads = OrderedDict(p=torch.tensor([30.0, 40.0], dtype=torch.float64))
        norm = rmsprop_update(params, grads, optimizer, clip_norm=5.0)
        assert norm == pytest.approx(50.0)
        assert p.detach().tolist() == pytest.approx([-3.0, -4.0])
