"""Attention embedding: multi-head self-attention over flattened vector
features and softmax pooling over the five scalar feature blocks."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as F
from .errors import ShapeMismatch
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def init_vector_attention(rng, d_v: int = 16, heads: int = 3, layers: int = 1, prefix: str = "attn") -> dict:
    width = 3 * d_v
    if width % heads:
        raise ShapeMismatch(f"3*d_v={width} is not divisible by {heads} heads")
    dh = width // heads
    params = {}
    for layer in range(layers):
        for kind in ("q", "k", "v"):
            name = f"{prefix}.{layer}.w_{kind}"
            params[name] = uniform_init(rng, (heads, width, dh), width, name)
    return params


def init_scalar_pool(rng, block_widths: Sequence[int], d_e: int = 128, prefix: str = "pool") -> dict:
    params = {}
    for i, w in enumerate(block_widths):
        params[f"{prefix}.score.{i}"] = uniform_init(rng, (w, 1), w, f"{prefix}.score.{i}")
        params[f"{prefix}.proj.{i}"] = uniform_init(rng, (w, d_e), w, f"{prefix}.proj.{i}")
    return params


def vector_self_attention(
    v: Tensor | np.ndarray,
    params: dict,
    layer: int = 0,
    mask: np.ndarray | None = None,
    prefix: str = "attn",
    return_weights: bool = False,
):
    """Global multi-head scaled dot-product attention over nodes.

    ``v`` is (n, d_v, 3); it is flattened to (n, 3*d_v), attended per head,
    and the concatenated head outputs are reshaped back. ``mask`` is an
    optional (n, n) boolean array of allowed key positions per query.
    """
    v = F.as_tensor(v)
    wq = params[f"{prefix}.{layer}.w_q"]
    wk = params[f"{prefix}.{layer}.w_k"]
    wv = params[f"{prefix}.{layer}.w_v"]
    heads, width, dh = wq.shape
    if v.ndim != 3 or v.shape[1] * v.shape[2] != width:
        raise ShapeMismatch(f"vector features {v.shape} do not match attention width {width}")
    n = v.shape[0]
    x = F.reshape(v, (1, n, width))
    q = F.matmul(x, wq)  # (h, n, dh)
    k = F.matmul(x, wk)
    val = F.matmul(x, wv)
    logits = F.mul(F.matmul(q, F.transpose(k)), 1.0 / math.sqrt(dh))
    if mask is not None:
        logits = F.add(logits, np.where(mask, 0.0, -1e9))
    weights = F.softmax(logits, axis=-1)
    out = F.matmul(weights, val)  # (h, n, dh)
    out = F.reshape(F.transpose(out, (1, 0, 2)), v.shape)
    if return_weights:
        return out, weights
    return out


def scalar_attention_pool(blocks: Sequence, params: dict, prefix: str = "pool", return_gamma: bool = False):
    """Per-node softmax over the blocks' scores, weighting their d_e projections."""
    n_blocks = sum(1 for key in params if key.startswith(f"{prefix}.score."))
    if len(blocks) != n_blocks:
        raise ShapeMismatch(f"expected {n_blocks} scalar blocks, got {len(blocks)}")
    scores, projected = [], []
    for i, block in enumerate(blocks):
        block = F.as_tensor(block)
        w = params[f"{prefix}.score.{i}"]
        proj = params[f"{prefix}.proj.{i}"]
        if block.ndim != 2 or block.shape[1] != w.shape[0]:
            raise ShapeMismatch(f"block {i} has shape {block.shape}, expected width {w.shape[0]}")
        scores.append(F.matmul(block, w))  # (n, 1)
        p = F.matmul(block, proj)
        projected.append(F.reshape(p, (p.shape[0], 1, p.shape[1])))
    gamma = F.softmax(F.concat(scores, axis=1), axis=1)  # (n, 5)
    stacked = F.concat(projected, axis=1)  # (n, 5, d_e)
    g3 = F.reshape(gamma, gamma.shape + (1,))
    s_a = F.sum(F.mul(stacked, g3), axis=1)
    if return_gamma:
        return s_a, gamma
    return s_a


def embed_graph(graph, params: dict, attn_layers: int = 1, use_vector_attention: bool = True,
                mask_knn: bool = False, use_scalar_pool: bool = True):
    """Return (s_a, v_a) for a GeometricGraph; adjacency is unchanged.

    With ``use_scalar_pool`` off the raw scalar features pass through
    (they are already d_e wide); with ``use_vector_attention`` off the
    vector features pass through.
    """
    if use_scalar_pool:
        s_a = scalar_attention_pool(graph.scalar_blocks(), params)
    else:
        s_a = Tensor(graph.scalar_features)
    v_a = Tensor(graph.vector_features)
    if use_vector_attention:
        mask = None
        if mask_knn:
            from .featurize import adjacency_matrix

            mask = adjacency_matrix(graph.adjacency).astype(bool) | np.eye(graph.n, dtype=bool)
        for layer in range(attn_layers):
            v_a = vector_self_attention(v_a, params, layer=layer, mask=mask)
    return s_a, v_a
