"""Hypergraph construction from kNN neighbourhoods and the HGNN encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as F
from .attention import uniform_init
from .errors import DegenerateGraph, ShapeMismatch, SingularDegree
from .tensor import Tensor


@dataclass
class Hypergraph:
    incidence: np.ndarray  # H, (n_vertices, n_edges), entries in {0, 1}
    weights: np.ndarray  # w(e)

    @property
    def vertex_degree(self) -> np.ndarray:
        return self.incidence @ self.weights

    @property
    def edge_degree(self) -> np.ndarray:
        return self.incidence.sum(axis=0)

    @property
    def D_v(self) -> np.ndarray:
        return np.diag(self.vertex_degree)

    @property
    def D_e(self) -> np.ndarray:
        return np.diag(self.edge_degree)

    def propagation(self, form: str = "row") -> np.ndarray:
        """Dense vertex->hyperedge->vertex operator.

        ``row``:       D_v^-1 H W D_e^-1 H^T
        ``symmetric``: D_v^-1/2 H W D_e^-1 H^T D_v^-1/2
        """
        dv = self.vertex_degree
        de = self.edge_degree
        if np.any(dv <= 0) or np.any(de <= 0):
            raise SingularDegree("hypergraph has a vertex or hyperedge of zero degree")
        core = (self.incidence * (self.weights / de)) @ self.incidence.T
        if form == "row":
            return core / dv[:, None]
        if form == "symmetric":
            r = 1.0 / np.sqrt(dv)
            return r[:, None] * core * r[None, :]
        raise ValueError(f"unknown convolution form {form!r}")


def build_hypergraph(adjacency: np.ndarray, weights: np.ndarray | None = None) -> Hypergraph:
    """One hyperedge per node j: {j} plus its kNN neighbours."""
    adjacency = np.asarray(adjacency, dtype=np.intp)
    n = len(adjacency)
    if n < 1:
        raise DegenerateGraph("empty adjacency")
    H = np.zeros((n, n))
    H[np.arange(n), np.arange(n)] = 1.0
    H[adjacency.reshape(-1), np.repeat(np.arange(n), adjacency.shape[1])] = 1.0
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeMismatch(f"need {n} hyperedge weights, got shape {w.shape}")
    return Hypergraph(H, w)


def hgnn_conv(X, hg: Hypergraph | np.ndarray, theta, sigma=None, form: str = "row") -> Tensor:
    """Z = sigma(P X Theta) with P from ``Hypergraph.propagation``.

    ``hg`` may also be a precomputed propagation matrix.
    """
    P = hg.propagation(form) if isinstance(hg, Hypergraph) else hg
    X = F.as_tensor(X)
    if X.shape[0] != P.shape[0]:
        raise ShapeMismatch(f"features have {X.shape[0]} rows, hypergraph has {P.shape[0]} vertices")
    Z = F.matmul(F.matmul(P, X), theta)
    return Z if sigma is None else sigma(Z)


def vector_gate(v: Tensor) -> Tensor:
    """Scale each 3-vector by sigmoid of its own norm."""
    norms = F.l2_norm_rows(v, axis=-1, keepdims=True)
    return F.mul(v, F.sigmoid(norms))


def vector_norm(v: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide vectors by the RMS norm over channels, per node."""
    sq = F.sum(F.mul(v, v), axis=-1)  # (..., d_v)
    rms = F.sqrt(F.add(F.mean(sq, axis=-1, keepdims=True), eps))
    return F.div(v, F.reshape(rms, rms.shape + (1,)))


def _per_coordinate(v: Tensor, theta) -> Tensor:
    # (n, d_v, 3) -> (n, 3, d_v) @ theta -> back
    return F.transpose(F.matmul(F.transpose(v), theta))


def init_encoder(rng, layers: int = 3, d_e: int = 128, d_v: int = 16, prefix: str = "enc") -> dict:
    params = {}
    for i in range(layers):
        params[f"{prefix}.{i}.theta_s"] = uniform_init(rng, (d_e, d_e), d_e, f"{prefix}.{i}.theta_s")
        params[f"{prefix}.{i}.theta_v"] = uniform_init(rng, (d_v, d_v), d_v, f"{prefix}.{i}.theta_v")
    params[f"{prefix}.ln_gain"] = Tensor(np.ones(d_e), requires_grad=True, name=f"{prefix}.ln_gain")
    params[f"{prefix}.ln_bias"] = Tensor(np.zeros(d_e), requires_grad=True, name=f"{prefix}.ln_bias")
    return params


def encoder_forward(
    s_a,
    v_a,
    hg: Hypergraph,
    params: dict,
    layers: int = 3,
    form: str = "row",
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    prefix: str = "enc",
):
    """Run the HGNN stack; returns (s_e, v_e, s_p, v_p).

    Each layer adds sigma(P h Theta) to the running state. The encoded
    outputs are the normalised final state; the pooled outputs average the
    normalised states over depth (input state included).
    """
    P = hg.propagation(form)
    gain, bias = params[f"{prefix}.ln_gain"], params[f"{prefix}.ln_bias"]

    def norm_s(h):
        return F.add(F.mul(F.layer_norm(h), gain), bias)

    h_s, h_v = F.as_tensor(s_a), F.as_tensor(v_a)
    n, d_v = h_v.shape[0], h_v.shape[1]
    pooled_s = [norm_s(h_s)]
    pooled_v = [vector_norm(h_v)]
    for i in range(layers):
        u_s = hgnn_conv(h_s, P, params[f"{prefix}.{i}.theta_s"], sigma=F.relu)
        u_s = F.dropout(u_s, dropout, train, rng)
        h_s = F.add(h_s, u_s)
        prop_v = F.reshape(F.matmul(P, F.reshape(h_v, (n, d_v * 3))), (n, d_v, 3))
        u_v = vector_gate(_per_coordinate(prop_v, params[f"{prefix}.{i}.theta_v"]))
        h_v = F.add(h_v, u_v)
        pooled_s.append(norm_s(h_s))
        pooled_v.append(vector_norm(h_v))
    s_e, v_e = pooled_s[-1], pooled_v[-1]
    depth = float(len(pooled_s))
    s_p = F.mul(_sum_all(pooled_s), 1.0 / depth)
    v_p = F.mul(_sum_all(pooled_v), 1.0 / depth)
    return s_e, v_e, s_p, v_p


def _sum_all(items):
    out = items[0]
    for x in items[1:]:
        out = F.add(out, x)
    return out
