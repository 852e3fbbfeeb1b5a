"""Detector orchestration: the T-iteration AMP/GNN loop and baselines.

Variants:

    amp_gnn     AMP step, interference moments over the IDI columns,
                normalization, GNN pass on the IDI-approximated graph.
    amp_gnn_v1  same graph, but the interference statistics are frozen at
                mu = 0, sigma^2 = sigma_n^2/2 (interference treated as noise).
    amp_gnn_v2  no IDI approximation: full truncated graph, constant noise
                normalization.
    amp_only    AMP iterations with a Bayes-optimal scalar denoiser over Q_R.
    gnn_only    a single outer pass of the GNN on the full truncated graph
                with zero node attributes (no AMP); labeled stand-in baseline.
    map_bruteforce  exhaustive residual minimization (tiny instances only).

All soft paths run through the autodiff tape so the same code is unrolled
during training; inference uses a non-recording tape.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .amp import AmpDivergence, amp_step_vectorized_vars
from .channel import EffectiveChannel
from .frames import Constellation, lift, unlift
from .gnn import (
    fixed_stats,
    gnn_pass_vars,
    graph_values_vars,
    idi_stats_vars,
    mrf_pattern,
)

GNN_VARIANTS = ("amp_gnn", "amp_gnn_v1", "amp_gnn_v2", "gnn_only")
ALL_VARIANTS = GNN_VARIANTS + ("amp_only", "map_bruteforce")


@dataclass
class DetectorConfig:
    variant: str
    t_iters: int = 15
    l_rounds: int = 2
    checkpoint: str | None = None
    stop_gradient_amp: bool = False
    damping: float = 0.0  # hook; 0 disables (the update rule itself has none)

    def __post_init__(self):
        if self.variant not in ALL_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.t_iters < 1 or self.l_rounds < 1:
            raise ValueError("T and L must be >= 1")

    @property
    def use_idi_approx(self) -> bool:
        return self.variant in ("amp_gnn", "amp_gnn_v1")


@dataclass
class DetectionResult:
    x_hat_bar: np.ndarray  # complex MN hard decisions
    soft_x: np.ndarray | None
    soft_nu: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)
    failed: bool = False


def decide_symbols(soft_x: np.ndarray, const: Constellation) -> np.ndarray:
    """Recombine real moments into complex symbols and snap to the nearest
    constellation point (lowest index wins exact ties)."""
    mn = soft_x.shape[0] // 2
    xc = soft_x[:mn] + 1j * soft_x[mn:]
    idx = const.hard_index(xc)
    return const.points[idx]


def qr_posterior_vars(t: ad.Tape, r, nu_r, real_alphabet: np.ndarray):
    """Posterior over Q_R for r ~ N(x, nu_r) with a uniform prior:
    p(s) = softmax_s(-(r - s)^2 / (2 nu_r))."""
    n = r.value.shape[0]
    qr = real_alphabet.reshape(-1, 1)
    diff = ad.sub(t, qr, ad.reshape(t, r, (1, n)))
    sq = ad.mul(t, diff, diff)
    denom = ad.mul(t, ad.reshape(t, nu_r, (1, n)), 2.0)
    logits = ad.neg(t, ad.div(t, sq, denom))
    return ad.softmax0(t, logits)


def posterior_moments_vars(t: ad.Tape, p, real_alphabet: np.ndarray):
    n = p.value.shape[1]
    qr = real_alphabet.reshape(-1, 1)
    x_hat = ad.sum_axis(t, ad.mul(t, p, qr), axis=0)
    diff = ad.sub(t, qr, ad.reshape(t, x_hat, (1, n)))
    nu_x = ad.sum_axis(t, ad.mul(t, p, ad.mul(t, diff, diff)), axis=0)
    return x_hat, nu_x


def soft_detect_vars(
    t: ad.Tape,
    channel: EffectiveChannel,
    y_real,
    noise_var: float,
    const: Constellation,
    cfg: DetectorConfig,
    pv: dict | None,
    counter=None,
    trace: list | None = None,
):
    """Unrolled soft detector; returns (x_hat, nu_x) Vars after T iterations."""
    n = channel.n_real
    qr = const.real_alphabet
    variant = cfg.variant
    if variant == "map_bruteforce":
        raise ValueError("map_bruteforce has no soft path")
    needs_gnn = variant in GNN_VARIANTS
    if needs_gnn and pv is None:
        raise ValueError(f"variant {variant} requires parameters")

    pattern = mrf_pattern(channel, cfg.use_idi_approx) if needs_gnn else None
    y = y_real if isinstance(y_real, ad.Var) else t.const(y_real)
    x_hat = t.const(np.zeros(n))
    nu_x = t.const(np.full(n, 0.5))
    s_prev = t.const(np.zeros(n))
    zeros_attr = t.const(np.zeros((2, n))) if variant == "gnn_only" else None
    fixed = None
    if needs_gnn and variant != "amp_gnn":
        st = fixed_stats(channel, noise_var)
        fixed = (t.const(st.mu_zeta), t.const(st.sigma_zeta_sq))

    st = counter.stage if counter is not None else (lambda name: nullcontext())
    t_outer = 1 if variant == "gnn_only" else cfg.t_iters
    for _ in range(t_outer):
        if variant != "gnn_only":
            with st("amp"):
                r, nu_r, s_prev, _, _, _ = amp_step_vectorized_vars(
                    t, s_prev, channel, y, noise_var, x_hat, nu_x, counter=counter
                )
            if not (np.all(np.isfinite(r.value)) and np.all(np.isfinite(nu_r.value))):
                raise AmpDivergence("non-finite AMP update")
            if cfg.stop_gradient_amp:
                r, nu_r = t.const(r.value), t.const(nu_r.value)
        if variant == "amp_only":
            p = qr_posterior_vars(t, r, nu_r, qr)
            x_hat, nu_x = posterior_moments_vars(t, p, qr)
        else:
            with st("initialization"):
                if variant == "amp_gnn":
                    mu, sig = idi_stats_vars(t, channel, x_hat, nu_x, noise_var)
                    if counter is not None:
                        counter.add_idi_stats(channel.h_idi_real.nnz)
                else:
                    mu, sig = fixed
                feats, e_vals = graph_values_vars(t, pattern, y, mu, sig)
            if counter is not None:
                counter.add_graph_init(
                    pattern.value_op.m.nnz, pattern.t_edge.m.nnz, n
                )
            if variant == "gnn_only":
                attrs = zeros_attr
            else:
                attrs = ad.concat0(
                    t, [ad.reshape(t, r, (1, n)), ad.reshape(t, nu_r, (1, n))]
                )
            p, x_new, nu_new = gnn_pass_vars(
                t, pattern, feats, e_vals, attrs, pv, qr, cfg.l_rounds, counter=counter
            )
            if cfg.damping > 0:
                g = cfg.damping
                x_hat = ad.add(t, ad.mul(t, x_new, 1.0 - g), ad.mul(t, x_hat, g))
                nu_x = ad.add(t, ad.mul(t, nu_new, 1.0 - g), ad.mul(t, nu_x, g))
            else:
                x_hat, nu_x = x_new, nu_new
        if counter is not None and needs_gnn:
            counter.add_iteration_pairs(pattern.node_pair_count_with_self)
        if trace is not None:
            trace.append(float(np.mean(nu_x.value)))
        if not np.all(np.isfinite(x_hat.value)):
            raise AmpDivergence("non-finite posterior moments")
    return x_hat, nu_x


def detect(
    y: np.ndarray,
    channel: EffectiveChannel,
    noise_var: float,
    const: Constellation,
    cfg: DetectorConfig,
    params: dict | None = None,
    counter=None,
) -> DetectionResult:
    """Run one frame through the configured detector."""
    if cfg.variant == "map_bruteforce":
        return detect_map_bruteforce(y, channel, noise_var, const)

    from . import nn

    t = ad.Tape(record=False)
    pv = nn.bind_params(t, params) if params is not None else None
    trace: list = []
    diagnostics: dict = {"variant": cfg.variant, "convergence": trace, "failed": 0}
    if cfg.variant in GNN_VARIANTS:
        pattern = mrf_pattern(channel, cfg.use_idi_approx)
        t_outer = 1 if cfg.variant == "gnn_only" else cfg.t_iters
        diagnostics["node_pair_count"] = pattern.node_pair_count
        diagnostics["node_pair_count_with_self"] = pattern.node_pair_count_with_self
        diagnostics["n_g"] = t_outer * pattern.node_pair_count_with_self
    try:
        x_hat, nu_x = soft_detect_vars(
            t, channel, lift(y), noise_var, const, cfg, pv, counter=counter, trace=trace
        )
    except AmpDivergence:
        diagnostics["failed"] = 1
        mn = channel.config.mn
        return DetectionResult(
            x_hat_bar=np.full(mn, const.points[0]),
            soft_x=None,
            soft_nu=None,
            diagnostics=diagnostics,
            failed=True,
        )
    soft_x = x_hat.value
    soft_nu = nu_x.value
    if counter is not None:
        diagnostics["flops"] = counter.as_dict()
    return DetectionResult(
        x_hat_bar=decide_symbols(soft_x, const),
        soft_x=soft_x,
        soft_nu=soft_nu,
        diagnostics=diagnostics,
    )


def detect_amp_only(
    y: np.ndarray,
    channel: EffectiveChannel,
    noise_var: float,
    const: Constellation,
    t_iters: int,
) -> DetectionResult:
    cfg = DetectorConfig(variant="amp_only", t_iters=t_iters, l_rounds=1)
    return detect(y, channel, noise_var, const, cfg)


@lru_cache(maxsize=4)
def _enumeration(order: int, mn: int) -> np.ndarray:
    """All |Q|^MN symbol-index tuples in lexicographic order (first symbol
    most significant)."""
    n_hyp = order**mn
    base = order ** np.arange(mn - 1, -1, -1, dtype=np.int64)
    return (np.arange(n_hyp, dtype=np.int64)[:, None] // base[None, :]) % order


def detect_map_bruteforce(
    y: np.ndarray,
    channel: EffectiveChannel,
    noise_var: float,
    const: Constellation,
) -> DetectionResult:
    """Exhaustive min ||y - H_eff x||^2 over the complex observation; ties
    break to the lexicographically smallest symbol-index tuple."""
    mn = channel.config.mn
    if mn > 10:
        raise ValueError("map_bruteforce supports MN <= 10 only")
    n_hyp = const.order**mn
    if n_hyp > 4**11:
        raise ValueError("enumeration too large; reduce MN or constellation order")
    idx = _enumeration(const.order, mn)
    h = channel.h_eff.toarray()
    cand = const.points[idx]  # (n_hyp, mn)
    # accept the stacked real form too; the residual norms agree exactly
    yc = unlift(y) if y.shape[0] == 2 * mn else y
    resid = yc[None, :] - cand @ h.T
    cost = np.sum(resid.real**2 + resid.imag**2, axis=1)
    best = int(np.argmin(cost))  # first minimum = lexicographic winner
    x_best = cand[best]
    return DetectionResult(
        x_hat_bar=x_best,
        soft_x=lift(x_best),
        soft_nu=np.zeros(2 * mn),
        diagnostics={"variant": "map_bruteforce", "hypotheses": int(n_hyp), "failed": 0},
    )
