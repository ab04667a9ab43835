"""
Dense layer operations, graph layers and optimizer plumbing.

Tensors are double precision torch tensors and the autograd tape serves as
the computation record, so every operation here is differentiable.
"""
import math
from collections import OrderedDict

import torch
import torch.nn.functional as F
from torch import nn

from . import DEBUG, DTYPE
from .errors import ShapeMismatch

LEAKY_SLOPE = 0.01


def check_finite(tensor, name="tensor"):
    """Raise if a tensor holds NaN or infinity (only in debug mode)."""
    if DEBUG and not torch.isfinite(tensor).all():
        raise FloatingPointError(f"{name} contains non-finite values")
    return tensor


def fc_forward(x, weight, bias=None):
    """Compute x @ weight + bias."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(
            f"input has {x.shape[-1]} features, weight expects "
            f"{weight.shape[0]}"
        )
    out = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatch(
                f"bias shape {tuple(bias.shape)} does not match "
                f"{weight.shape[1]} outputs"
            )
        out = out + bias
    return out


def leaky_relu(x, slope=LEAKY_SLOPE):
    """Identity for positive inputs, `slope` times the input otherwise."""
    return F.leaky_relu(x, negative_slope=slope)


def concat(xs, dim=-1):
    """Concatenate along `dim`; mismatched shapes raise ShapeMismatch."""
    try:
        return torch.cat(list(xs), dim=dim)
    except RuntimeError as error:
        raise ShapeMismatch(str(error)) from None


def softmax(x, dim=-1):
    """Normalized exponentials along `dim`."""
    # torch subtracts the maximum before exponentiating.
    return torch.softmax(x, dim=dim)


def max_pool(x, dim=0):
    """Elementwise maximum along `dim`.

    The gradient flows to a single entry per output, the first maximal one,
    so ties always resolve toward the lowest index.
    """
    index = x.detach().argmax(dim=dim, keepdim=True)
    return x.gather(dim, index).squeeze(dim)


def max_pool_rows(x):
    """Columnwise maximum of an [n x d] matrix."""
    if x.dim() != 2:
        raise ShapeMismatch("max_pool_rows expects a matrix")
    return max_pool(x, dim=0)


def sum_rows(x):
    """Columnwise sum of an [n x d] matrix."""
    if x.dim() != 2:
        raise ShapeMismatch("sum_rows expects a matrix")
    return x.sum(dim=0)


def mean_rows(x):
    """Columnwise mean of an [n x d] matrix."""
    if x.dim() != 2:
        raise ShapeMismatch("mean_rows expects a matrix")
    return x.mean(dim=0)


POOLS = {
    "max": max_pool_rows,
    "sum": sum_rows,
    "mean": mean_rows,
}


def gat_layer(x, graph, weight, attention, slope=LEAKY_SLOPE, mask=None):
    """Attention over each node's neighborhood, repeated and max-pooled.

    `weight` is [K x F_in x F_out] and `attention` is [K x 2 F_out], one
    independent projection and attention vector per pass. Each pass
    computes h = x W, scores e_ij = leaky_relu(a . [h_i || h_j]) for j in
    the neighborhood of i (itself included), normalizes them with a softmax
    over j and sums the attended h_j. The K results are max-pooled.
    """
    if weight.dim() != 3 or x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(
            f"input has {x.shape[-1]} features, GAT weight is "
            f"{tuple(weight.shape)}"
        )
    out_features = weight.shape[2]
    if attention.shape != (weight.shape[0], 2 * out_features):
        raise ShapeMismatch(
            f"attention must be {(weight.shape[0], 2 * out_features)}, got "
            f"{tuple(attention.shape)}"
        )
    if mask is None:
        mask = graph.mask

    h = torch.einsum("nf,kfo->kno", x, weight)
    source = (h * attention[:, None, :out_features]).sum(-1)
    target = (h * attention[:, None, out_features:]).sum(-1)
    scores = leaky_relu(source[:, :, None] + target[:, None, :], slope)
    scores = scores.masked_fill(~mask, float("-inf"))
    coefficients = softmax(scores, dim=-1)
    passes = coefficients @ h
    return check_finite(max_pool(passes, dim=0), "gat_layer")


def gcn_layer(x, graph, weight, slope=LEAKY_SLOPE, mask=None):
    """Symmetrically normalized graph convolution with self-loops."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(
            f"input has {x.shape[-1]} features, GCN weight expects "
            f"{weight.shape[0]}"
        )
    if mask is None:
        mask = graph.mask
    a_hat = mask.to(x.dtype)
    scale = a_hat.sum(dim=1).rsqrt()
    normalized = scale[:, None] * a_hat * scale[None, :]
    out = leaky_relu(normalized @ x @ weight, slope)
    return check_finite(out, "gcn_layer")


def glorot_(tensor, fan_in, fan_out, generator=None):
    """Fill uniformly in +-sqrt(6 / (fan_in + fan_out))."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return tensor.uniform_(-bound, bound, generator=generator)


class Dense(nn.Module):
    """Fully connected layer with an optional leaky ReLU."""

    def __init__(self, in_features, out_features, activation=True,
                 slope=LEAKY_SLOPE, generator=None, init_scale=1.0):
        super().__init__()
        self.weight = nn.Parameter(
            torch.empty(in_features, out_features, dtype=DTYPE)
        )
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=DTYPE))
        self.activation = activation
        self.slope = slope
        glorot_(self.weight, in_features, out_features, generator)
        if init_scale != 1.0:
            with torch.no_grad():
                self.weight.mul_(init_scale)

    def forward(self, x):
        out = fc_forward(x, self.weight, self.bias)
        if self.activation:
            out = leaky_relu(out, self.slope)
        return check_finite(out, "dense")


class GATLayer(nn.Module):
    """Graph attention layer with K projections and attention vectors."""

    def __init__(self, in_features, out_features, repeats=4,
                 slope=LEAKY_SLOPE, generator=None):
        super().__init__()
        if repeats < 1:
            raise ShapeMismatch("a GAT layer needs at least one pass")
        self.weight = nn.Parameter(
            torch.empty(repeats, in_features, out_features, dtype=DTYPE)
        )
        self.attention = nn.Parameter(
            torch.empty(repeats, 2 * out_features, dtype=DTYPE)
        )
        self.slope = slope
        for k in range(repeats):
            glorot_(self.weight[k], in_features, out_features, generator)
            glorot_(self.attention[k], 2 * out_features, 1, generator)

    def forward(self, x, graph, mask=None):
        return gat_layer(x, graph, self.weight, self.attention, self.slope,
                         mask)


class GCNLayer(nn.Module):
    """Graph convolution layer holding one projection."""

    def __init__(self, in_features, out_features, slope=LEAKY_SLOPE,
                 generator=None):
        super().__init__()
        self.weight = nn.Parameter(
            torch.empty(in_features, out_features, dtype=DTYPE)
        )
        self.slope = slope
        glorot_(self.weight, in_features, out_features, generator)

    def forward(self, x, graph, mask=None):
        return gcn_layer(x, graph, self.weight, self.slope, mask)


def param_store(module):
    """Snapshot a module's parameters as an ordered name -> tensor map."""
    return OrderedDict(
        (name, tensor.detach().clone())
        for name, tensor in module.state_dict().items()
    )


def backward(loss, params, retain_graph=False):
    """Reverse-mode gradients of a scalar loss for every named parameter.

    Parameters that do not take part in the loss get zero gradients.
    """
    if loss.dim() != 0:
        raise ShapeMismatch("backward needs a scalar loss")
    names = list(params)
    tensors = [params[name] for name in names]
    grads = torch.autograd.grad(
        loss, tensors, allow_unused=True, retain_graph=retain_graph
    )
    return OrderedDict(
        (name, torch.zeros_like(tensor) if grad is None else grad)
        for name, tensor, grad in zip(names, tensors, grads)
    )


def make_rmsprop(params, learning_rate=1e-3, decay=0.99, eps=1e-8):
    """RMSProp with acc <- decay acc + (1 - decay) g^2 and
    p <- p - lr g / (sqrt(acc) + eps)."""
    return torch.optim.RMSprop(
        list(params.values()), lr=learning_rate, alpha=decay, eps=eps
    )


def global_norm(grads):
    """Euclidean norm of all gradients taken together."""
    return torch.sqrt(sum((g * g).sum() for g in grads.values()))


def rmsprop_update(params, grads, optimizer, clip_norm=None):
    """Apply one optimizer step; return the gradient norm before clipping."""
    for name, param in params.items():
        param.grad = grads[name].detach().clone()
    norm = global_norm(grads)
    if clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(list(params.values()), clip_norm)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return float(norm)
