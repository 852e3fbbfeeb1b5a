"""Learnable kernels: parameter store, MLPs, GRU cell, JSON checkpoints.

All kernels operate on matrices whose columns are graph nodes, so one call
evaluates every node at once.  Three parameter groups exist:

    W1/b1, W2/b2   node-embedding input / update projections,
    theta.*        message MLP (2*N_u+1 -> N_h1 -> N_h2 -> N_u, ReLU hidden),
    phi.*          GRU cell on N_h hidden units with (N_u+2)-dim input,
    omega.*        readout MLP (N_u -> N_h1 -> N_h2 -> |Q_R|, softmax output).

Weights initialize uniform on +/- sqrt(6 / (fan_in + fan_out)); biases start
at zero.  Biases are stored with shape (dim, 1) so they broadcast across
nodes.  Checkpoints are JSON documents {"hyper": ..., "params": ...} with
row-major nested lists, plus a free-form "meta" block recording recipe
choices so trained models are self-describing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class GnnHyper:
    n_u: int = 8
    n_h: int = 12
    n_h1: int = 16
    n_h2: int = 12
    qr_size: int = 2
    t_iters: int = 15
    l_rounds: int = 2


def _glorot(rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_gnn_params(hyper: GnnHyper, seed: int) -> dict[str, np.ndarray]:
    """Fresh parameter dict; creation order is fixed for determinism."""
    rng = np.random.default_rng(seed)
    h = hyper
    msg_dim = 2 * h.n_u + 1
    gru_in = h.n_u + 2
    p: dict[str, np.ndarray] = {}
    p["W1"] = _glorot(rng, h.n_u, 2)
    p["b1"] = np.zeros((h.n_u, 1))
    p["W2"] = _glorot(rng, h.n_u, h.n_h)
    p["b2"] = np.zeros((h.n_u, 1))
    for name, (dout, din) in {
        "theta.W1": (h.n_h1, msg_dim),
        "theta.W2": (h.n_h2, h.n_h1),
        "theta.W3": (h.n_u, h.n_h2),
    }.items():
        p[name] = _glorot(rng, dout, din)
        p[name.replace("W", "b")] = np.zeros((dout, 1))
    for gate in ("r", "z", "h"):
        p[f"phi.W_x{gate}"] = _glorot(rng, h.n_h, gru_in)
        p[f"phi.W_h{gate}"] = _glorot(rng, h.n_h, h.n_h)
        p[f"phi.b_{gate}"] = np.zeros((h.n_h, 1))
    for name, (dout, din) in {
        "omega.W1": (h.n_h1, h.n_u),
        "omega.W2": (h.n_h2, h.n_h1),
        "omega.W3": (h.qr_size, h.n_h2),
    }.items():
        p[name] = _glorot(rng, dout, din)
        p[name.replace("W", "b")] = np.zeros((dout, 1))
    return p


def bind_params(tape: ad.Tape, params: dict[str, np.ndarray]) -> dict[str, ad.Var]:
    return {name: tape.leaf(name, val) for name, val in params.items()}


def affine(t: ad.Tape, w: ad.Var, x, b: ad.Var) -> ad.Var:
    return ad.add(t, ad.matmul(t, w, x), b)


def mlp_forward(t: ad.Tape, pv: dict[str, ad.Var], prefix: str, x, output: str = "linear") -> ad.Var:
    """Three-layer MLP with ReLU hidden activations.

    output: "linear" for the message MLP, "softmax" (over axis 0) for the
    readout.
    """
    h = ad.relu(t, affine(t, pv[f"{prefix}.W1"], x, pv[f"{prefix}.b1"]))
    h = ad.relu(t, affine(t, pv[f"{prefix}.W2"], h, pv[f"{prefix}.b2"]))
    out = affine(t, pv[f"{prefix}.W3"], h, pv[f"{prefix}.b3"])
    if output == "softmax":
        return ad.softmax0(t, out)
    if output != "linear":
        raise ValueError("output must be 'linear' or 'softmax'")
    return out


def gru_forward(t: ad.Tape, pv: dict[str, ad.Var], x_in, s_prev) -> ad.Var:
    """Gated recurrent unit:

        R = sigmoid(W_xr X + W_hr s + b_r)
        Z = sigmoid(W_xz X + W_hz s + b_z)
        s_tilde = tanh(W_xh X + W_hh (R * s) + b_h)
        s_next = Z * s + (1 - Z) * s_tilde
    """
    r = ad.sigmoid(
        t,
        ad.add(
            t,
            ad.add(t, ad.matmul(t, pv["phi.W_xr"], x_in), ad.matmul(t, pv["phi.W_hr"], s_prev)),
            pv["phi.b_r"],
        ),
    )
    z = ad.sigmoid(
        t,
        ad.add(
            t,
            ad.add(t, ad.matmul(t, pv["phi.W_xz"], x_in), ad.matmul(t, pv["phi.W_hz"], s_prev)),
            pv["phi.b_z"],
        ),
    )
    gated = ad.mul(t, r, s_prev)
    s_tilde = ad.tanh(
        t,
        ad.add(
            t,
            ad.add(t, ad.matmul(t, pv["phi.W_xh"], x_in), ad.matmul(t, pv["phi.W_hh"], gated)),
            pv["phi.b_h"],
        ),
    )
    keep = ad.mul(t, z, s_prev)
    blend = ad.mul(t, ad.sub(t, 1.0, z), s_tilde)
    return ad.add(t, keep, blend)


def save_checkpoint(path, hyper: GnnHyper, params: dict[str, np.ndarray], meta: dict | None = None):
    doc = {
        "hyper": {
            "N_u": hyper.n_u,
            "N_h": hyper.n_h,
            "N_h1": hyper.n_h1,
            "N_h2": hyper.n_h2,
            "qr_size": hyper.qr_size,
            "T": hyper.t_iters,
            "L": hyper.l_rounds,
        },
        "params": {k: np.asarray(v).tolist() for k, v in params.items()},
        "meta": dict(meta or {}),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[GnnHyper, dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    h = doc["hyper"]
    hyper = GnnHyper(
        n_u=h["N_u"],
        n_h=h["N_h"],
        n_h1=h["N_h1"],
        n_h2=h["N_h2"],
        qr_size=h["qr_size"],
        t_iters=h["T"],
        l_rounds=h["L"],
    )
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    expected = set(init_gnn_params(hyper, 0))
    if set(params) != expected:
        raise ValueError("checkpoint parameter names do not match the architecture")
    ref = init_gnn_params(hyper, 0)
    for k, v in params.items():
        if v.shape != ref[k].shape:
            raise ValueError(f"checkpoint shape mismatch for {k}: {v.shape} vs {ref[k].shape}")
    return hyper, params, doc.get("meta", {})
