"""Autoregressive GVP decoder.

Each decoding step t re-runs the full GVP stack over every node. The
already-decoded prefix enters as an additive embedding on the scalar
features of the RNA nodes before position t; all other nodes (later RNA
positions and protein residues) carry a shared mask embedding. The logits
for step t are read out from node t.

Teacher forcing stacks all steps along a leading batch axis, which is the
same computation as running the steps one by one.
"""

from __future__ import annotations

import numpy as np

from . import tensor as F
from .attention import uniform_init
from .errors import LengthMismatch, NonPositiveTemperature, ShapeMismatch, StepOutOfRange
from .hypergraph import vector_norm
from .tensor import Tensor

NUCLEOTIDES = "AGCU"
NUC_INDEX = {c: i for i, c in enumerate(NUCLEOTIDES)}
MASK_TOKEN = 4


def encode_sequence(seq: str) -> np.ndarray:
    try:
        return np.array([NUC_INDEX[c] for c in seq], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"not a nucleotide: {exc.args[0]!r}") from None


def decode_sequence(indices) -> str:
    return "".join(NUCLEOTIDES[int(i)] for i in indices)


def init_gvp(rng, d_e: int = 128, d_v: int = 16, d_h: int = 16, prefix: str = "gvp") -> dict:
    return {
        f"{prefix}.w_h": uniform_init(rng, (d_v, d_h), d_v, f"{prefix}.w_h"),
        f"{prefix}.w_mu": uniform_init(rng, (d_h, d_v), d_h, f"{prefix}.w_mu"),
        f"{prefix}.w_m": uniform_init(rng, (d_e + d_h, d_e), d_e + d_h, f"{prefix}.w_m"),
        f"{prefix}.b_m": Tensor(np.zeros(d_e), requires_grad=True, name=f"{prefix}.b_m"),
    }


def gvp_forward(s, v, params: dict, prefix: str = "gvp"):
    """Geometric vector perceptron.

    s: (..., n, d_e), v: (n, d_v, 3) or with the same leading axes as s.
    Returns (s', v') with s' = relu(W_m [s, |W_h v|] + b) and
    v' = sigmoid(|W_mu W_h v|) * W_mu W_h v, norms per 3-vector channel.
    """
    s, v = F.as_tensor(s), F.as_tensor(v)
    w_h, w_mu = params[f"{prefix}.w_h"], params[f"{prefix}.w_mu"]
    w_m, b_m = params[f"{prefix}.w_m"], params[f"{prefix}.b_m"]
    d_e = s.shape[-1]
    if v.ndim < 3 or v.shape[-1] != 3 or v.shape[-2] != w_h.shape[0]:
        raise ShapeMismatch(f"vector input {v.shape} does not match W_h {w_h.shape}")
    if w_m.shape[0] != d_e + w_h.shape[1]:
        raise ShapeMismatch(f"scalar input width {d_e} does not match W_m {w_m.shape}")
    v_h = F.transpose(F.matmul(F.transpose(v), w_h))  # (..., d_h, 3)
    norms = F.l2_norm_rows(v_h, axis=-1)  # (..., d_h)
    # concat(s, norms) @ W_m, split so that s may carry extra batch axes
    pre = F.add(F.matmul(s, w_m[:d_e]), F.matmul(norms, w_m[d_e:]))
    s_out = F.relu(F.add(pre, b_m))
    v_mu = F.transpose(F.matmul(F.transpose(v_h), w_mu))  # (..., d_v, 3)
    gate = F.sigmoid(F.l2_norm_rows(v_mu, axis=-1, keepdims=True))
    return s_out, F.mul(v_mu, gate)


def init_decoder(rng, layers: int = 3, d_e: int = 128, d_v: int = 16, d_h: int = 16,
                 edge_dim: int = 32, prefix: str = "dec") -> dict:
    params = {}
    for i in range(layers):
        p = f"{prefix}.{i}"
        params.update(init_gvp(rng, d_e, d_v, d_h, prefix=f"{p}.gvp"))
        params[f"{p}.edge_s"] = uniform_init(rng, (edge_dim, d_e), edge_dim, f"{p}.edge_s")
        params[f"{p}.edge_v"] = uniform_init(rng, (d_v, 1), 1, f"{p}.edge_v")
        params[f"{p}.ln_gain"] = Tensor(np.ones(d_e), requires_grad=True, name=f"{p}.ln_gain")
        params[f"{p}.ln_bias"] = Tensor(np.zeros(d_e), requires_grad=True, name=f"{p}.ln_bias")
    params[f"{prefix}.embed"] = Tensor(rng.normal(0.0, 1.0, (5, d_e)), requires_grad=True, name=f"{prefix}.embed")
    params[f"{prefix}.w_out"] = uniform_init(rng, (d_e, 4), d_e, f"{prefix}.w_out")
    params[f"{prefix}.b_out"] = Tensor(np.zeros(4), requires_grad=True, name=f"{prefix}.b_out")
    return params


class DecoderContext:
    """Graph-derived constants shared by every decoding step."""

    def __init__(self, graph):
        n, k = graph.adjacency.shape
        self.n = n
        self.rna_nodes = graph.rna_nodes
        self.neighbor_mean = np.zeros((n, n))
        np.add.at(self.neighbor_mean, (np.repeat(np.arange(n), k), graph.adjacency.reshape(-1)), 1.0 / k)
        self.edge_scalar_mean = graph.edge_scalar.reshape(n, k, -1).mean(axis=1)
        self.edge_vector_mean = graph.edge_vector.reshape(n, k, 3).mean(axis=1)[:, None, :]


def prefix_tokens(rna_nodes: np.ndarray, n: int, tokens: np.ndarray, steps) -> np.ndarray:
    """Token per (step, node): the true/generated base before the step, else mask."""
    steps = np.asarray(steps)
    out = np.full((len(steps), n), MASK_TOKEN, dtype=np.intp)
    rank = np.arange(len(rna_nodes))
    for row, t in enumerate(steps):
        known = rank < t
        out[row, rna_nodes[known]] = tokens[known]
    return out


def decoder_stack(s_p, v_p, ctx: DecoderContext, token_grid: np.ndarray, params: dict, layers: int = 3,
                  dropout: float = 0.0, train: bool = False, rng=None, prefix: str = "dec"):
    """Run the GVP layers for a batch of steps; returns scalar states (T, n, d_e)."""
    onehot = np.eye(5)[token_grid]  # (T, n, 5)
    s = F.add(s_p, F.matmul(onehot, params[f"{prefix}.embed"]))
    v = F.as_tensor(v_p)
    n, d_v = v.shape[0], v.shape[1]
    for i in range(layers):
        p = f"{prefix}.{i}"
        agg_s = F.matmul(ctx.neighbor_mean, s)
        edge_s = F.matmul(ctx.edge_scalar_mean, params[f"{p}.edge_s"])
        s_in = F.add(F.add(s, agg_s), edge_s)
        agg_v = F.reshape(F.matmul(ctx.neighbor_mean, F.reshape(v, (n, d_v * 3))), (n, d_v, 3))
        edge_v = F.mul(ctx.edge_vector_mean, params[f"{p}.edge_v"])  # (n, d_v, 3)
        v_in = F.add(F.add(v, agg_v), edge_v)
        ds, dv = gvp_forward(s_in, v_in, params, prefix=f"{p}.gvp")
        ds = F.dropout(ds, dropout, train, rng)
        s = F.add(F.mul(F.layer_norm(F.add(s, ds)), params[f"{p}.ln_gain"]), params[f"{p}.ln_bias"])
        v = vector_norm(F.add(v, dv))
    return s


def _readout(s_rows, params, prefix="dec"):
    return F.add(F.matmul(s_rows, params[f"{prefix}.w_out"]), params[f"{prefix}.b_out"])


def teacher_forced_logits(sequence: str, s_p, v_p, ctx: DecoderContext, params: dict, layers: int = 3,
                          dropout: float = 0.0, train: bool = False, rng=None) -> Tensor:
    """Per-position logits (L_R, 4) conditioned on the true prefix."""
    L = len(ctx.rna_nodes)
    if len(sequence) != L:
        raise LengthMismatch(f"sequence has {len(sequence)} bases, structure has {L} RNA nodes")
    tokens = encode_sequence(sequence)
    grid = prefix_tokens(ctx.rna_nodes, ctx.n, tokens, np.arange(L))
    s = decoder_stack(s_p, v_p, ctx, grid, params, layers, dropout, train, rng)  # (L, n, d_e)
    select = np.zeros((L, ctx.n, 1))
    select[np.arange(L), ctx.rna_nodes, 0] = 1.0
    rows = F.sum(F.mul(s, select), axis=1)  # (L, d_e)
    return _readout(rows, params)


def softmax_with_temperature(logits, tau: float) -> np.ndarray:
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_step_logits(prefix, s_p, v_p, ctx: DecoderContext, params: dict, layers: int = 3) -> np.ndarray:
    t = len(prefix)
    if t >= len(ctx.rna_nodes):
        raise StepOutOfRange(f"step {t} is past the last RNA node ({len(ctx.rna_nodes)})")
    tokens = np.zeros(len(ctx.rna_nodes), dtype=np.intp)
    tokens[:t] = np.asarray(prefix, dtype=np.intp)
    grid = prefix_tokens(ctx.rna_nodes, ctx.n, tokens, [t])
    s = decoder_stack(s_p, v_p, ctx, grid, params, layers)
    row = s.values[0, ctx.rna_nodes[t]]
    return row @ params["dec.w_out"].values + params["dec.b_out"].values


def decode_step(prefix, s_p, v_p, ctx: DecoderContext, params: dict, tau: float = 1.0, layers: int = 3) -> np.ndarray:
    """Distribution over {A, G, C, U} for the next position."""
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    return softmax_with_temperature(decode_step_logits(prefix, s_p, v_p, ctx, params, layers), tau)


def autoregressive_sample(s_p, v_p, ctx: DecoderContext, params: dict, tau: float = 1.0,
                          rng_seed: int | np.random.Generator = 0, layers: int = 3) -> str:
    """Sample a full sequence 5'->3' (node order)."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    prefix: list[int] = []
    for _ in range(len(ctx.rna_nodes)):
        probs = decode_step(prefix, s_p, v_p, ctx, params, tau, layers)
        cdf = np.cumsum(probs)
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        prefix.append(min(idx, 3))
    return decode_sequence(prefix)
