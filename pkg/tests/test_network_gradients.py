"""Finite-difference verification of the hand-written backward pass."""

import numpy as np
import pytest

from evomail.encoder import SemanticEncoder
from evomail.errors import NonFiniteGradient
from evomail.graph import compute_structural_stats
from evomail.model import ModelHyper, init_model, param_shapes
from evomail.network import (Gradients, backward, backward_vectors, forward,
                             forward_vectors, input_gradient)

from test_network_forward import make_model, small_random_graph


def bce_loss_and_dscore(scores, targets):
    p = np.clip(scores, 1e-7, 1 - 1e-7)
    loss = float(-(targets * np.log(p) + (1 - targets) * np.log(1 - p)).sum())
    d = -(targets / p) + (1 - targets) / (1 - p)
    return loss, d


@pytest.fixture(scope="module")
def fd_setup():
    g = small_random_graph(6, 2.0, seed=17, d=7)
    stats = compute_structural_stats(g)
    model = make_model(g, seed=8, d_h=6, d_p=16, n_layers=2, top_k=3,
                       attn_hidden=5)
    rng = np.random.default_rng(40)
    for name in ("b_init", "b_layer", "attn_b1", "attn_b2", "b_out"):
        model.params[name] = rng.normal(0, 0.2, size=model.params[name].shape)
    enc = SemanticEncoder(dim=16)
    targets = rng.random(g.email_indices.size)
    return g, stats, model, enc, targets


def graph_loss(g, stats, model, enc, targets):
    scores = forward(g, stats, model, enc).scores
    return bce_loss_and_dscore(scores, targets)[0]


def test_all_parameter_groups_match_finite_differences(fd_setup):
    g, stats, model, enc, targets = fd_setup
    trace = forward(g, stats, model, enc)
    _, dscore = bce_loss_and_dscore(trace.scores, targets)
    grads = backward(trace, g, model, dscore)

    h = 1e-4
    rng = np.random.default_rng(3)
    for name in param_shapes(model.hyper):
        arr = model.params[name]
        if arr.ndim == 0:
            idxs = [()]
        else:
            k = min(5, arr.size)
            flat = rng.choice(arr.size, size=k, replace=False)
            idxs = [np.unravel_index(f, arr.shape) for f in flat]
        for idx in idxs:
            m2 = model.copy()
            m2.params[name][idx] += h
            up = graph_loss(g, stats, m2, enc, targets)
            m2.params[name][idx] -= 2 * h
            dn = graph_loss(g, stats, m2, enc, targets)
            fd = (up - dn) / (2 * h)
            an = float(grads[name][idx]) if arr.ndim else float(grads[name])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            assert rel < 1e-3, f"{name}{idx}: fd={fd} analytic={an}"


def test_salience_logits_gradient_is_zero(fd_setup):
    g, stats, model, enc, targets = fd_setup
    trace = forward(g, stats, model, enc)
    _, dscore = bce_loss_and_dscore(trace.scores, targets)
    grads = backward(trace, g, model, dscore)
    np.testing.assert_array_equal(grads["salience_logits"], np.zeros(3))


def test_input_gradients_match_finite_differences(fd_setup):
    g, stats, model, enc, targets = fd_setup
    trace = forward(g, stats, model, enc)
    _, dscore = bce_loss_and_dscore(trace.scores, targets)
    grads = backward(trace, g, model, dscore)
    h = 1e-5
    rng = np.random.default_rng(5)
    X = g.features
    for _ in range(6):
        i = int(rng.integers(0, X.shape[0]))
        j = int(rng.integers(0, X.shape[1]))
        orig = X[i, j]
        X[i, j] = orig + h
        up = graph_loss(g, stats, model, enc, targets)
        X[i, j] = orig - h
        dn = graph_loss(g, stats, model, enc, targets)
        X[i, j] = orig
        fd = (up - dn) / (2 * h)
        rel = abs(fd - grads.d_features[i, j]) / max(abs(fd), 1e-8)
        assert rel < 1e-3


def test_per_node_input_gradient_one_hot(fd_setup):
    g, stats, model, enc, _ = fd_setup
    trace = forward(g, stats, model, enc)
    v = int(g.email_indices[0])
    grad = input_gradient(trace, g, model, v)
    h = 1e-5
    X = g.features
    j = 2
    orig = X[v, j]
    X[v, j] = orig + h
    up = forward(g, stats, model, enc).score_of(v)
    X[v, j] = orig - h
    dn = forward(g, stats, model, enc).score_of(v)
    X[v, j] = orig
    fd = (up - dn) / (2 * h)
    assert abs(fd - grad[j]) / max(abs(fd), 1e-8) < 1e-3


def test_vector_path_gradients(fd_setup):
    _, _, model, _, _ = fd_setup
    rng = np.random.default_rng(12)
    X = rng.normal(0, 1, size=(4, model.hyper.d))
    targets = rng.random(4)
    trace = forward_vectors(X, model)
    _, dscore = bce_loss_and_dscore(trace.scores, targets)
    grads = backward_vectors(trace, model, dscore, X)
    h = 1e-5

    def loss_of(m):
        return bce_loss_and_dscore(forward_vectors(X, m).scores, targets)[0]

    for name in ("w_init", "w_self", "w_out", "b_layer", "b_out"):
        arr = model.params[name]
        idx = () if arr.ndim == 0 else tuple(0 for _ in arr.shape)
        m2 = model.copy()
        m2.params[name][idx] += h
        up = loss_of(m2)
        m2.params[name][idx] -= 2 * h
        dn = loss_of(m2)
        fd = (up - dn) / (2 * h)
        an = float(grads[name][idx]) if arr.ndim else float(grads[name])
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-3, name

    # input rows are independent: d_features[i] is d(score_i)/dx_i scaled
    i, j = 1, 3
    orig = X[i, j]
    X[i, j] = orig + h
    up = bce_loss_and_dscore(forward_vectors(X, model).scores, targets)[0]
    X[i, j] = orig - h
    dn = bce_loss_and_dscore(forward_vectors(X, model).scores, targets)[0]
    X[i, j] = orig
    fd = (up - dn) / (2 * h)
    assert abs(fd - grads.d_features[i, j]) / max(abs(fd), 1e-8) < 1e-3


def test_self_target_loss_has_zero_gradient(fd_setup):
    """L2 distance to the model's own scores is stationary at zero."""
    g, stats, model, enc, _ = fd_setup
    trace = forward(g, stats, model, enc)
    dscore = 2.0 * (trace.scores - trace.scores)
    grads = backward(trace, g, model, dscore)
    for name, arr in grads.params.items():
        np.testing.assert_array_equal(arr, np.zeros_like(arr))


def test_nonfinite_gradient_detection():
    g = Gradients({"w": np.array([1.0, np.inf])}, np.zeros((1, 1)))
    with pytest.raises(NonFiniteGradient) as err:
        g.check_finite()
    assert err.value.param_path == "w"


def test_dropout_training_backward_consistent(fd_setup):
    """With a fixed dropout mask, the backward matches FD of the same mask."""
    g, stats, model, enc, targets = fd_setup
    m = model.copy()
    m.hyper.dropout_rate = 0.3
    trace = forward(g, stats, m, enc, training=True, rng=np.random.default_rng(7))
    _, dscore = bce_loss_and_dscore(trace.scores, targets)
    grads = backward(trace, g, m, dscore)

    # finite differences re-using the identical mask sequence
    h = 1e-4
    name, idx = "w_out", (0,)

    def loss_with(delta):
        m2 = m.copy()
        m2.params[name][idx] += delta
        t = forward(g, stats, m2, enc, training=True,
                    rng=np.random.default_rng(7))
        return bce_loss_and_dscore(t.scores, targets)[0]

    fd = (loss_with(h) - loss_with(-h)) / (2 * h)
    an = float(grads[name][idx])
    assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-3
