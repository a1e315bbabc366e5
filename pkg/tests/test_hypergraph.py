import math

import numpy as np
import pytest

from hyperrna import tensor as F
from hyperrna.errors import SingularDegree
from hyperrna.featurize import knn_graph
from hyperrna.gradcheck import gradcheck
from hyperrna.hypergraph import (
    Hypergraph,
    build_hypergraph,
    encoder_forward,
    hgnn_conv,
    init_encoder,
)
from hyperrna.tensor import Tensor


def random_hypergraph(rng, n=None):
    n = n or int(rng.integers(1, 9))
    m = int(rng.integers(1, 9))
    H = (rng.random((n, m)) < 0.4).astype(float)
    for e in range(m):  # no empty hyperedge
        if not H[:, e].any():
            H[rng.integers(n), e] = 1.0
    for v in range(n):  # no isolated vertex
        if not H[v].any():
            H[v, rng.integers(m)] = 1.0
    return Hypergraph(H, rng.uniform(0.2, 3.0, m))


def message_passing_oracle(X, H, w, theta, form):
    """Gather vertex features into hyperedges, then scatter back, with explicit loops."""
    n, m = H.shape
    dv = [sum(w[e] * H[v, e] for e in range(m)) for v in range(n)]
    de = [sum(H[v, e] for v in range(n)) for e in range(m)]
    pre = [1.0 / math.sqrt(dv[v]) if form == "symmetric" else 1.0 for v in range(n)]
    post = [1.0 / math.sqrt(dv[v]) if form == "symmetric" else 1.0 / dv[v] for v in range(n)]
    msg = np.zeros((m, X.shape[1]))
    for e in range(m):
        for v in range(n):
            if H[v, e]:
                msg[e] += pre[v] * X[v]
        msg[e] *= w[e] / de[e]
    Z = np.zeros_like(X)
    for v in range(n):
        for e in range(m):
            if H[v, e]:
                Z[v] += msg[e]
        Z[v] *= post[v]
    return Z @ theta


def test_pair_incidence():
    hg = build_hypergraph(knn_graph([(0, 0, 0), (1, 0, 0)], 1))
    np.testing.assert_array_equal(hg.incidence, [[1, 1], [1, 1]])
    np.testing.assert_array_equal(hg.D_e, np.diag([2, 2]))
    np.testing.assert_array_equal(hg.D_v, np.diag([2, 2]))


def test_single_global_hyperedge_degrees():
    hg = Hypergraph(np.ones((6, 1)), np.ones(1))
    np.testing.assert_array_equal(hg.vertex_degree, np.ones(6))
    np.testing.assert_array_equal(hg.edge_degree, [6])


def test_chain_incidence_by_hand():
    # 4 points on a line at 0, 1, 3, 6: nearest of 0 is 1, of 1 is 0, of 2 is 1, of 3 is 2
    adj = knn_graph([(0, 0, 0), (1, 0, 0), (3, 0, 0), (6, 0, 0)], 1)
    np.testing.assert_array_equal(adj, [[1], [0], [1], [2]])
    hg = build_hypergraph(adj)
    # column j is hyperedge e_j = {j} + N(j)
    expected = np.array([
        [1, 1, 0, 0],
        [1, 1, 1, 0],
        [0, 0, 1, 1],
        [0, 0, 0, 1],
    ], dtype=float)
    np.testing.assert_array_equal(hg.incidence, expected)


def test_identity_single_node():
    hg = Hypergraph(np.ones((1, 1)), np.ones(1))
    X = np.array([[2.5, -1.0]])
    for form in ("row", "symmetric"):
        np.testing.assert_array_equal(hgnn_conv(X, hg, np.eye(2), form=form).values, X)


def test_two_nodes_shared_edge():
    hg = Hypergraph(np.ones((2, 1)), np.ones(1))
    Z = hgnn_conv(np.array([[1.0], [0.0]]), hg, np.array([[1.0]]), form="symmetric").values
    np.testing.assert_allclose(Z, [[0.5], [0.5]], atol=1e-15)


@pytest.mark.parametrize("form", ["row", "symmetric"])
def test_matches_message_passing_oracle(form):
    rng = np.random.default_rng(11 if form == "row" else 12)
    for _ in range(200):
        hg = random_hypergraph(rng)
        n = hg.incidence.shape[0]
        X = rng.normal(size=(n, 3))
        theta = rng.normal(size=(3, 2))
        got = hgnn_conv(X, hg, theta, form=form).values
        ref = message_passing_oracle(X, hg.incidence, hg.weights, theta, form)
        np.testing.assert_allclose(got, ref, atol=1e-10)


def test_row_form_is_stochastic():
    rng = np.random.default_rng(3)
    for _ in range(20):
        adj = knn_graph(rng.normal(size=(int(rng.integers(2, 12)), 3)), 3)
        hg = build_hypergraph(adj)
        out = hgnn_conv(np.ones((len(adj), 1)), hg, np.eye(1)).values
        np.testing.assert_allclose(out, 1.0, atol=1e-12)


def test_global_edge_weight_scaling_cancels():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(5, 3))
    base = hgnn_conv(X, Hypergraph(np.ones((5, 1)), np.ones(1)), np.eye(3), form="symmetric").values
    for alpha in (0.1, 2.0, 37.0):
        scaled = hgnn_conv(X, Hypergraph(np.ones((5, 1)), np.array([alpha])), np.eye(3), form="symmetric").values
        np.testing.assert_allclose(scaled, base, atol=1e-12)


@pytest.mark.parametrize("form", ["row", "symmetric"])
def test_permutation_equivariance(form):
    rng = np.random.default_rng(5)
    hg = random_hypergraph(rng, n=7)
    X = rng.normal(size=(7, 4))
    theta = rng.normal(size=(4, 4))
    perm = rng.permutation(7)
    z0 = hgnn_conv(X, hg, theta, form=form).values
    z1 = hgnn_conv(X[perm], Hypergraph(hg.incidence[perm], hg.weights), theta, form=form).values
    np.testing.assert_allclose(z1, z0[perm], atol=1e-12)


def test_zero_degree_raises():
    hg = Hypergraph(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones(2))
    with pytest.raises(SingularDegree):
        hg.propagation()


def test_unknown_form():
    with pytest.raises(ValueError):
        Hypergraph(np.ones((2, 1)), np.ones(1)).propagation("diagonal")


# ---------------------------------------------------------------- encoder


def _toy(rng, n=4, d_e=6, d_v=3):
    adj = knn_graph(rng.normal(size=(n, 3)), 2)
    return build_hypergraph(adj), rng.normal(size=(n, d_e)), rng.normal(size=(n, d_v, 3))


def test_zero_layers_is_normalisation_only():
    rng = np.random.default_rng(0)
    hg, s, v = _toy(rng)
    params = init_encoder(rng, layers=0, d_e=6, d_v=3)
    s_e, v_e, s_p, v_p = encoder_forward(s, v, hg, params, layers=0)
    mu = s.mean(axis=1, keepdims=True)
    var = s.var(axis=1, keepdims=True)
    np.testing.assert_allclose(s_p.values, (s - mu) / np.sqrt(var + 1e-5), atol=1e-12)
    np.testing.assert_array_equal(s_p.values, s_e.values)
    rms = np.sqrt(np.mean(np.sum(v * v, axis=-1), axis=-1) + 1e-8)
    np.testing.assert_allclose(v_p.values, v / rms[:, None, None], atol=1e-12)


def test_default_shapes():
    rng = np.random.default_rng(1)
    hg, s, v = _toy(rng, n=10, d_e=128, d_v=16)
    outs = encoder_forward(s, v, hg, init_encoder(rng))
    assert [o.shape for o in outs] == [(10, 128), (10, 16, 3), (10, 128), (10, 16, 3)]


def test_vector_path_rotation_equivariant():
    from hyperrna.synthetic import random_rotation

    rng = np.random.default_rng(2)
    hg, s, v = _toy(rng, n=6, d_e=8, d_v=4)
    params = init_encoder(rng, d_e=8, d_v=4)
    R = random_rotation(rng)
    _, v0, _, p0 = encoder_forward(s, v, hg, params)
    _, v1, _, p1 = encoder_forward(s, v @ R.T, hg, params)
    np.testing.assert_allclose(v1.values, v0.values @ R.T, atol=1e-12)
    np.testing.assert_allclose(p1.values, p0.values @ R.T, atol=1e-12)


@pytest.mark.parametrize("form", ["row", "symmetric"])
def test_encoder_gradcheck(form):
    rng = np.random.default_rng(3)
    hg, s, v = _toy(rng)
    params = init_encoder(rng, d_e=6, d_v=3)
    params["enc.ln_gain"].values[...] = rng.uniform(0.5, 1.5, 6)
    s_in, v_in = Tensor(s, requires_grad=True), Tensor(v, requires_grad=True)
    weights = [rng.normal(size=x) for x in ((4, 6), (4, 3, 3), (4, 6), (4, 3, 3))]

    def loss():
        outs = encoder_forward(s_in, v_in, hg, params, form=form)
        total = F.sum(F.mul(outs[0], weights[0]))
        for o, w in zip(outs[1:], weights[1:]):
            total = F.add(total, F.sum(F.mul(o, w)))
        return total

    assert gradcheck(loss, [s_in, v_in] + list(params.values())) <= 1e-4


def test_dropout_only_in_training():
    rng = np.random.default_rng(4)
    hg, s, v = _toy(rng)
    params = init_encoder(rng, d_e=6, d_v=3)
    a = encoder_forward(s, v, hg, params, dropout=0.5, train=False)[0].values
    b = encoder_forward(s, v, hg, params, dropout=0.0)[0].values
    c = encoder_forward(s, v, hg, params, dropout=0.5, train=True, rng=np.random.default_rng(0))[0].values
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
