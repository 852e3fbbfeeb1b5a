"""Approximate message passing on the real-lifted sparse channel.

Two interchangeable implementations of one iteration:

`amp_step` is the per-index reference, written directly against the index
sets I(j) / L(i):

    nu_z_j = sum_{i in I(j)} h_ji^2 nu_x_i
    z_j    = sum_{i in I(j)} h_ji x_hat_i
             - nu_z_j (y_j - z_j^prev) / (nu_z_j^prev + sigma_n^2/2)
    nu_r_i = ( sum_{j in L(i)} h_ji^2 / (nu_z_j + sigma_n^2/2) )^-1
    r_i    = x_hat_i + nu_r_i sum_{j in L(i)} h_ji (y_j - z_j) / (nu_z_j + sigma_n^2/2)

`amp_step_vectorized` is the production form used inside the detectors, in
the s-variable formulation:

    nu_z = |H|^o2 nu_x
    nu_s = 1 / (nu_z + sigma_n^2/2)
    z    = H x_hat - nu_z * s_prev          (Onsager correction)
    s    = nu_s * (y - z)
    nu_r = 1 / (|H^T|^o2 nu_s)
    r    = x_hat + nu_r * (H^T s)

Since s_prev = (y - z_prev) / (nu_z_prev + sigma_n^2/2), the two forms are
algebraically identical; tests hold them to 1e-10 of each other.  The
vectorized step runs through the autodiff tape so training can unroll
through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .channel import EffectiveChannel


class AmpDivergence(RuntimeError):
    """Raised when an AMP update produces non-finite values."""


# variance denominators are clamped here; nu_z can collapse to 0 when every
# prior variance does
_EPS_DEN = 1e-12


@dataclass
class AmpState:
    z: np.ndarray
    nu_z: np.ndarray
    s: np.ndarray
    nu_s: np.ndarray
    r: np.ndarray
    nu_r: np.ndarray


def amp_init(channel: EffectiveChannel, y: np.ndarray, noise_var: float) -> AmpState:
    """State before the first iteration: z = y, prior variance 1/2 per real
    dimension, so s = 0."""
    rs = channel.row_sumsq()
    nu_z = 0.5 * rs
    nu_s = 1.0 / np.maximum(nu_z + noise_var / 2.0, _EPS_DEN)
    n = channel.n_real
    return AmpState(
        z=np.array(y, dtype=np.float64, copy=True),
        nu_z=nu_z,
        s=np.zeros(n),
        nu_s=nu_s,
        r=np.zeros(n),
        nu_r=1.0 / np.maximum(channel.h_real_sq_t.dot(nu_s), _EPS_DEN),
    )


def amp_step(
    state: AmpState,
    channel: EffectiveChannel,
    y: np.ndarray,
    noise_var: float,
    x_hat: np.ndarray,
    nu_x: np.ndarray,
) -> AmpState:
    """Reference per-index iteration over I(j) and L(i)."""
    h = channel.h_real
    n = channel.n_real
    half = noise_var / 2.0

    nu_z = np.empty(n)
    z = np.empty(n)
    for j in range(n):
        lo, hi = h.indptr[j], h.indptr[j + 1]
        cols = h.indices[lo:hi]
        hji = h.data[lo:hi]
        nu_z[j] = np.sum(hji * hji * nu_x[cols])
        z[j] = np.sum(hji * x_hat[cols]) - nu_z[j] * (y[j] - state.z[j]) / max(
            state.nu_z[j] + half, _EPS_DEN
        )

    hc = channel._h_real_csc
    nu_r = np.empty(n)
    r = np.empty(n)
    den = np.maximum(nu_z + half, _EPS_DEN)
    for i in range(n):
        lo, hi = hc.indptr[i], hc.indptr[i + 1]
        rows = hc.indices[lo:hi]
        hji = hc.data[lo:hi]
        nu_r[i] = 1.0 / max(np.sum(hji * hji / den[rows]), _EPS_DEN)
        r[i] = x_hat[i] + nu_r[i] * np.sum(hji * (y[rows] - z[rows]) / den[rows])

    nu_s = 1.0 / den
    s = nu_s * (y - z)
    out = AmpState(z=z, nu_z=nu_z, s=s, nu_s=nu_s, r=r, nu_r=nu_r)
    _check_finite(out)
    return out


def amp_step_vectorized_vars(
    t: ad.Tape,
    s_prev: ad.Var,
    channel: EffectiveChannel,
    y: ad.Var,
    noise_var: float,
    x_hat: ad.Var,
    nu_x: ad.Var,
    counter=None,
):
    """Tape form of one iteration; returns (r, nu_r, s, z, nu_z, nu_s) Vars."""
    h = _sp_ops(channel)
    half = noise_var / 2.0
    nu_z = ad.spmv(t, h["sq"], nu_x)
    den = ad.clip_min(t, ad.add(t, nu_z, half), _EPS_DEN)
    nu_s = ad.recip(t, den)
    z = ad.sub(t, ad.spmv(t, h["mat"], x_hat), ad.mul(t, nu_z, s_prev))
    s = ad.mul(t, nu_s, ad.sub(t, y, z))
    nu_r = ad.recip(t, ad.clip_min(t, ad.spmv_t(t, h["sq"], nu_s), _EPS_DEN))
    r = ad.add(t, x_hat, ad.mul(t, nu_r, ad.spmv_t(t, h["mat"], s)))
    if counter is not None:
        counter.add_amp_iteration(channel.config)
    return r, nu_r, s, z, nu_z, nu_s


def amp_step_vectorized(
    state: AmpState,
    channel: EffectiveChannel,
    y: np.ndarray,
    noise_var: float,
    x_hat: np.ndarray,
    nu_x: np.ndarray,
) -> AmpState:
    """Vector-form iteration: same contract as amp_step."""
    t = ad.Tape(record=False)
    r, nu_r, s, z, nu_z, nu_s = amp_step_vectorized_vars(
        t,
        t.const(state.s),
        channel,
        t.const(y),
        noise_var,
        t.const(x_hat),
        t.const(nu_x),
    )
    out = AmpState(
        z=z.value, nu_z=nu_z.value, s=s.value, nu_s=nu_s.value, r=r.value, nu_r=nu_r.value
    )
    _check_finite(out)
    return out


def _check_finite(state: AmpState):
    for arr in (state.z, state.r, state.nu_r, state.nu_z):
        if not np.all(np.isfinite(arr)):
            raise AmpDivergence("non-finite AMP update")


def _sp_ops(channel: EffectiveChannel) -> dict:
    ops = getattr(channel, "_amp_sp_ops", None)
    if ops is None:
        mat = ad.SpOp.__new__(ad.SpOp)
        mat.m = channel.h_real
        mat.mt = channel.h_real_t
        sq = ad.SpOp.__new__(ad.SpOp)
        sq.m = channel.h_real_sq
        sq.mt = channel.h_real_sq_t
        ops = {"mat": mat, "sq": sq}
        channel._amp_sp_ops = ops
    return ops
