"""MLP head against a per-sample scalar oracle."""

import numpy as np
import pytest

from conftest import assert_grads_close, fd_grad
from specfield.autograd import Tape
from specfield.decoder import HIDDEN_WIDTH, MlpWeights, decode, decode_batch, init_mlp


def mlp_oracle(w: MlpWeights, feat):
    h1 = np.maximum(feat @ w.w1 + w.b1, 0.0)
    h2 = np.maximum(h1 @ w.w2 + w.b2, 0.0)
    return float((h2 @ w.w3 + w.b3)[0])


def test_init_shapes():
    w = init_mlp(24, seed=0)
    assert w.w1.shape == (24, HIDDEN_WIDTH)
    assert w.w3.shape == (HIDDEN_WIDTH, 1)
    assert w.channels == 24
    np.testing.assert_array_equal(w.b1, np.zeros(HIDDEN_WIDTH))


def test_init_deterministic():
    a, b = init_mlp(8, seed=5), init_mlp(8, seed=5)
    np.testing.assert_array_equal(a.w2, b.w2)
    assert not np.array_equal(a.w1, init_mlp(8, seed=6).w1)


def test_shape_validation():
    with pytest.raises(ValueError):
        MlpWeights(
            w1=np.zeros((4, 8)), b1=np.zeros(8),
            w2=np.zeros((8, 8)), b2=np.zeros(8),
            w3=np.zeros((9, 1)), b3=np.zeros(1),
        )


def test_decode_matches_oracle():
    rng = np.random.default_rng(1)
    w = init_mlp(10, seed=2)
    for _ in range(25):
        f = rng.normal(size=10)
        assert decode(w, f) == pytest.approx(mlp_oracle(w, f), abs=1e-12)


def test_batch_equals_independent_decodes():
    rng = np.random.default_rng(3)
    w = init_mlp(6, seed=4)
    x = rng.normal(size=(13, 6))
    tape = Tape()
    nodes = {k: tape.leaf(v) for k, v in w.named().items()}
    out = decode_batch(tape, nodes, tape.leaf(x))
    assert out.shape == (13,)
    for k in range(13):
        assert out.value[k] == pytest.approx(decode(w, x[k]), abs=1e-12)


def test_decode_grads_match_fd():
    rng = np.random.default_rng(5)
    w = init_mlp(5, seed=6)
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=4)
    names = sorted(w.named())
    params = [w.named()[k].copy() for k in names] + [x]

    def build(tape, nodes):
        wn = dict(zip(names, nodes[:-1]))
        pred = decode_batch(tape, wn, nodes[-1])
        return (pred - tape.leaf(y)).square().mean()

    tape = Tape()
    nodes = [tape.leaf(p) for p in params]
    tape.backward(build(tape, nodes))
    analytic = [tape.grad(nd) for nd in nodes]

    def scalar(vals):
        t = Tape()
        return float(build(t, [t.leaf(v) for v in vals]).value)

    assert_grads_close(analytic, fd_grad(scalar, params), rtol=1e-3)
