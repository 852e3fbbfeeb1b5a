"""MLP / GRU kernels against dense numpy oracles, init law, checkpoints."""

import numpy as np
import pytest

import otfsdet.autodiff as ad
from otfsdet.nn import (
    GnnHyper,
    bind_params,
    gru_forward,
    init_gnn_params,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)

from conftest import assert_close
from test_autodiff import fd_grad

HYPER = GnnHyper()


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-x))


def mlp_ref(p, prefix, x, softmax=False):
    h = np.maximum(p[f"{prefix}.W1"] @ x + p[f"{prefix}.b1"], 0.0)
    h = np.maximum(p[f"{prefix}.W2"] @ h + p[f"{prefix}.b2"], 0.0)
    out = p[f"{prefix}.W3"] @ h + p[f"{prefix}.b3"]
    if softmax:
        e = np.exp(out - out.max(axis=0, keepdims=True))
        return e / e.sum(axis=0, keepdims=True)
    return out


def gru_ref(p, x, s):
    r = sigmoid_ref(p["phi.W_xr"] @ x + p["phi.W_hr"] @ s + p["phi.b_r"])
    z = sigmoid_ref(p["phi.W_xz"] @ x + p["phi.W_hz"] @ s + p["phi.b_z"])
    st = np.tanh(p["phi.W_xh"] @ x + p["phi.W_hh"] @ (r * s) + p["phi.b_h"])
    return z * s + (1.0 - z) * st


def random_params(seed):
    # fresh glorot params, perturbed so biases are informative too
    p = init_gnn_params(HYPER, seed)
    rng = np.random.default_rng(seed + 1000)
    for k in p:
        if ".b" in k or k.startswith("b"):
            p[k] = 0.1 * rng.standard_normal(p[k].shape)
    return p


# --------------------------------------------------------------- init law

def test_init_shapes_and_zero_biases():
    p = init_gnn_params(HYPER, 0)
    assert p["W1"].shape == (8, 2)
    assert p["theta.W1"].shape == (16, 17)
    assert p["phi.W_xz"].shape == (12, 10)
    assert p["phi.W_hh"].shape == (12, 12)
    assert p["omega.W3"].shape == (2, 12)
    for k, v in p.items():
        if ".b" in k or k.startswith("b"):
            assert np.count_nonzero(v) == 0 and v.shape[1] == 1


def test_init_uniform_bounds():
    p = init_gnn_params(HYPER, 3)
    for name, (fan_out, fan_in) in {
        "W1": (8, 2),
        "theta.W1": (16, 17),
        "phi.W_hr": (12, 12),
        "omega.W1": (16, 8),
    }.items():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = p[name]
        assert np.max(np.abs(w)) <= bound
        # a genuinely uniform draw fills most of the interval
        assert np.max(np.abs(w)) > 0.8 * bound


def test_init_deterministic_per_seed():
    a = init_gnn_params(HYPER, 5)
    b = init_gnn_params(HYPER, 5)
    c = init_gnn_params(HYPER, 6)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_qam16_readout_width():
    p = init_gnn_params(GnnHyper(qr_size=4), 0)
    assert p["omega.W3"].shape == (4, 12)


# -------------------------------------------------------------------- MLPs

def test_mlp_matches_dense_oracle():
    p = random_params(2)
    x = np.random.default_rng(0).standard_normal((17, 6))
    t = ad.Tape(record=False)
    got = mlp_forward(t, bind_params(t, p), "theta", t.const(x)).value
    assert_close(got, mlp_ref(p, "theta", x), 1e-12, "theta mlp")


def test_mlp_softmax_output():
    p = random_params(4)
    x = np.random.default_rng(1).standard_normal((8, 5))
    t = ad.Tape(record=False)
    got = mlp_forward(t, bind_params(t, p), "omega", t.const(x), output="softmax").value
    assert_close(got, mlp_ref(p, "omega", x, softmax=True), 1e-12, "omega mlp")
    assert_close(got.sum(axis=0), np.ones(5), 1e-12, "softmax columns")


def test_mlp_zero_weights_pass_bias():
    p = random_params(7)
    for k in ("theta.W1", "theta.W2", "theta.W3"):
        p[k] = np.zeros_like(p[k])
    p["theta.b1"] = np.abs(p["theta.b1"])  # keep ReLU transparent
    p["theta.b2"] = np.abs(p["theta.b2"])
    x = np.random.default_rng(2).standard_normal((17, 3))
    t = ad.Tape(record=False)
    got = mlp_forward(t, bind_params(t, p), "theta", t.const(x)).value
    assert_close(got, np.broadcast_to(p["theta.b3"], (8, 3)), 1e-14, "bias-only mlp")


def test_mlp_rejects_unknown_output():
    p = random_params(1)
    t = ad.Tape(record=False)
    with pytest.raises(ValueError):
        mlp_forward(t, bind_params(t, p), "theta", t.const(np.zeros((17, 1))), output="relu")


def test_mlp_gradients_vs_fd():
    p = random_params(3)
    x = np.random.default_rng(4).standard_normal((17, 4))
    k = np.random.default_rng(5).standard_normal((8, 4))
    for name in ("theta.W2", "theta.b3"):
        def f(val, name=name):
            q = dict(p)
            q[name] = val
            t = ad.Tape(record=False)
            out = mlp_forward(t, bind_params(t, q), "theta", t.const(x))
            return float(np.sum(out.value * k))

        t = ad.Tape()
        pv = bind_params(t, p)
        out = mlp_forward(t, pv, "theta", t.const(x))
        t.backward(ad.sum_all(t, ad.mul(t, out, t.const(k))))
        assert_close(t.leaf_grads()[name], fd_grad(f, p[name]), 2e-6, f"mlp grad {name}")


# --------------------------------------------------------------------- GRU

def test_gru_matches_dense_oracle():
    p = random_params(8)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((10, 5))
    s = rng.uniform(-0.9, 0.9, size=(12, 5))
    t = ad.Tape(record=False)
    got = gru_forward(t, bind_params(t, p), t.const(x), t.const(s)).value
    assert_close(got, gru_ref(p, x, s), 1e-12, "gru step")


def test_gru_closed_form_gates():
    # zero weights and biases: R = Z = 1/2, s_tilde = 0, next = s/2
    p = {k: np.zeros_like(v) for k, v in init_gnn_params(HYPER, 0).items()}
    s = np.random.default_rng(7).uniform(-1, 1, size=(12, 3))
    t = ad.Tape(record=False)
    got = gru_forward(t, bind_params(t, p), t.const(np.zeros((10, 3))), t.const(s)).value
    assert_close(got, s / 2.0, 1e-14, "gru zero-weight fixed point")


def test_gru_saturated_update_gate_keeps_state():
    p = random_params(9)
    p["phi.b_z"] = np.full_like(p["phi.b_z"], 60.0)  # Z -> 1 exactly in fp
    rng = np.random.default_rng(8)
    x = rng.standard_normal((10, 4))
    s = rng.uniform(-0.9, 0.9, size=(12, 4))
    t = ad.Tape(record=False)
    got = gru_forward(t, bind_params(t, p), t.const(x), t.const(s)).value
    assert_close(got, s, 1e-12, "gru keep gate")


def test_gru_output_bounded():
    p = random_params(10)
    rng = np.random.default_rng(9)
    x = 5.0 * rng.standard_normal((10, 50))
    s = rng.uniform(-1, 1, size=(12, 50))
    t = ad.Tape(record=False)
    got = gru_forward(t, bind_params(t, p), t.const(x), t.const(s)).value
    assert np.all(np.abs(got) < 1.0)


def test_gru_gradients_vs_fd():
    p = random_params(11)
    rng = np.random.default_rng(10)
    x = rng.standard_normal((10, 3))
    s = rng.uniform(-0.9, 0.9, size=(12, 3))
    k = rng.standard_normal((12, 3))
    for name in ("phi.W_hr", "phi.W_xz", "phi.b_h"):
        def f(val, name=name):
            q = dict(p)
            q[name] = val
            t = ad.Tape(record=False)
            out = gru_forward(t, bind_params(t, q), t.const(x), t.const(s))
            return float(np.sum(out.value * k))

        t = ad.Tape()
        pv = bind_params(t, p)
        out = gru_forward(t, pv, t.const(x), t.const(s))
        t.backward(ad.sum_all(t, ad.mul(t, out, t.const(k))))
        assert_close(t.leaf_grads()[name], fd_grad(f, p[name]), 2e-6, f"gru grad {name}")


# -------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    hyper = GnnHyper(qr_size=4, t_iters=7, l_rounds=3)
    params = init_gnn_params(hyper, 12)
    meta = {"steps": 5, "note": "round-trip"}
    path = tmp_path / "ck.json"
    save_checkpoint(path, hyper, params, meta)
    h2, p2, m2 = load_checkpoint(path)
    assert h2 == hyper
    assert m2 == meta
    assert set(p2) == set(params)
    for k in params:
        assert np.array_equal(p2[k], params[k])


def test_checkpoint_rejects_missing_param(tmp_path):
    hyper = GnnHyper()
    params = init_gnn_params(hyper, 0)
    del params["omega.W3"]
    path = tmp_path / "bad.json"
    save_checkpoint(path, hyper, params)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_shape(tmp_path):
    hyper = GnnHyper()
    params = init_gnn_params(hyper, 0)
    params["W1"] = np.zeros((3, 3))
    path = tmp_path / "bad2.json"
    save_checkpoint(path, hyper, params)
    with pytest.raises(ValueError):
        load_checkpoint(path)
