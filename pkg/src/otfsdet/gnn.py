"""Pair-wise MRF construction and the per-iteration GNN pass.

The detector works on the normalized model y_tilde = H_tilde x + noise.
Nodes are the 2MN real symbol components; two nodes are neighbors when their
H_tilde columns structurally share a row.  Because every tap of the channel
is a torus shift (column (k', l') feeds row (k' + k_p + q, l' + l_p)), the
set of realized column-index differences is the same at every node, and the
adjacency is built exactly from that difference set instead of scanning
column pairs.

Real-lift subtlety: the two real components of one complex symbol (columns i
and i + MN) overlap structurally in every row, but their unweighted inner
product is identically zero ([Re; Im] vs [-Im; Re]), so they are never
treated as neighbors; each complex-level neighbor contributes two real-level
neighbors instead.  This is what makes the worst-case neighbor counts
2P(P-1) per node (IDI-approximated graph) and 2[P(P-1)(4N_o+1) + 4N_o]
(full truncated graph).

Per outer iteration only VALUES change: with row weights w_j = 1/sigma_zeta_j^2,

    node features   (y~' h~_i, h~_i' h~_i) = (K^T((y - mu) * w), K2^T w)
    edge attributes e_{i,j} = h~_i' h~_j    = (T_e w)_{edge}

where K is the retained-column value matrix, K2 its elementwise square and
T_e a constant (edge x row) matrix with entries H[j,i] * H[j,j'] summed over
shared rows.  All three are linear in w, so gradients flow through the IDI
statistics into the parameters during unrolled training.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .channel import EffectiveChannel, OtfsConfig


@dataclass
class IdiStats:
    """Interference moments per receive row; sigma_zeta_sq >= sigma_n^2/2."""

    mu_zeta: np.ndarray
    sigma_zeta_sq: np.ndarray


class GraphPattern:
    """Per-(channel, variant) constant structure of the MRF."""

    def __init__(self, channel: EffectiveChannel, use_idi_approx: bool):
        cfg = channel.config
        mn = cfg.mn
        n = 2 * mn
        self.n_nodes = n
        self.use_idi_approx = bool(use_idi_approx)
        value_mat = channel.h_keep_real if use_idi_approx else channel.h_real

        shifts = channel.shifts_keep if use_idi_approx else channel.shifts_full
        dd = _difference_keys(shifts, cfg)
        edge_lo, edge_hi = _edges_from_shifts(dd, cfg)
        self.edge_i = edge_lo
        self.edge_j = edge_hi
        self.n_edges = edge_lo.shape[0]

        ones = np.ones(self.n_edges)
        adj = sp.coo_matrix(
            (np.concatenate([ones, ones]),
             (np.concatenate([edge_lo, edge_hi]), np.concatenate([edge_hi, edge_lo]))),
            shape=(n, n),
        ).tocsr()
        adj.sum_duplicates()
        self.adj = ad.SpOp(adj)
        self.deg = np.asarray(adj.sum(axis=1)).ravel()

        eids = np.arange(self.n_edges)
        inc = sp.coo_matrix(
            (np.concatenate([ones, ones]),
             (np.concatenate([edge_lo, edge_hi]), np.concatenate([eids, eids]))),
            shape=(n, self.n_edges),
        ).tocsr()
        self.inc = ad.SpOp(inc)

        self.value_op = ad.SpOp(value_mat)
        sq = value_mat.copy()
        sq.data = sq.data**2
        self.value_sq_op = ad.SpOp(sq)

        self.t_edge = ad.SpOp(_edge_row_matrix(value_mat, edge_lo, edge_hi, self.n_edges, mn))

    @property
    def node_pair_count(self) -> int:
        """N_s = sum_i |neigh(i)|, self excluded."""
        return 2 * self.n_edges

    @property
    def node_pair_count_with_self(self) -> int:
        return self.node_pair_count + self.n_nodes

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adj.m
        return np.sort(a.indices[a.indptr[i] : a.indptr[i + 1]])


def _difference_keys(shifts, cfg: OtfsConfig) -> np.ndarray:
    """Nonzero (dk, dl) differences of the shift set, encoded dk*M + dl."""
    if not shifts:
        return np.empty(0, dtype=np.int64)
    arr = np.array(sorted(shifts), dtype=np.int64)
    dk = (arr[:, 0][:, None] - arr[:, 0][None, :]) % cfg.N
    dl = (arr[:, 1][:, None] - arr[:, 1][None, :]) % cfg.M
    keys = np.unique(dk.ravel() * cfg.M + dl.ravel())
    return keys[keys != 0]


def _edges_from_shifts(dd_keys: np.ndarray, cfg: OtfsConfig):
    """Undirected real-lift edge list from complex index differences."""
    mn = cfg.mn
    if dd_keys.size == 0:
        z = np.empty(0, dtype=np.int64)
        return z, z
    k_idx = np.arange(mn, dtype=np.int64) // cfg.M
    l_idx = np.arange(mn, dtype=np.int64) % cfg.M
    parts_lo, parts_hi = [], []
    ic = np.arange(mn, dtype=np.int64)
    for key in dd_keys:
        dk, dl = divmod(int(key), cfg.M)
        jc = ((k_idx + dk) % cfg.N) * cfg.M + (l_idx + dl) % cfg.M
        for a, b in ((ic, jc), (ic, jc + mn), (ic + mn, jc), (ic + mn, jc + mn)):
            parts_lo.append(np.minimum(a, b))
            parts_hi.append(np.maximum(a, b))
    lo = np.concatenate(parts_lo)
    hi = np.concatenate(parts_hi)
    pair_keys = np.unique(lo * (2 * mn) + hi)
    return pair_keys // (2 * mn), pair_keys % (2 * mn)


def _edge_row_matrix(value_mat: sp.csr_matrix, edge_lo, edge_hi, n_edges: int, mn: int):
    """T_e with T_e[e, j] = H[j, i_e] * H[j, j_e] over shared rows j."""
    n = value_mat.shape[0]
    edge_keys = edge_lo * n + edge_hi
    rows_out, cols_out, data_out = [], [], []
    indptr, indices, data = value_mat.indptr, value_mat.indices, value_mat.data
    for j in range(n):
        lo, hi = indptr[j], indptr[j + 1]
        c = indices[lo:hi]
        v = data[lo:hi]
        if c.size < 2:
            continue
        ia, ib = np.triu_indices(c.size, k=1)
        a, b = c[ia], c[ib]
        keep = (b - a) != mn  # drop Re/Im twin pairs: not graph edges
        if not np.any(keep):
            continue
        a, b = a[keep], b[keep]
        vals = v[ia][keep] * v[ib][keep]
        keys = a * n + b
        eid = np.searchsorted(edge_keys, keys)
        if np.any(eid >= n_edges) or np.any(edge_keys[eid] != keys):
            raise AssertionError("row-sharing column pair missing from edge set")
        rows_out.append(eid)
        cols_out.append(np.full(eid.shape, j))
        data_out.append(vals)
    if not rows_out:
        return sp.csr_matrix((n_edges, n))
    return sp.coo_matrix(
        (np.concatenate(data_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=(n_edges, n),
    ).tocsr()


def mrf_pattern(channel: EffectiveChannel, use_idi_approx: bool) -> GraphPattern:
    key = ("mrf", bool(use_idi_approx))
    pat = channel._pattern_cache.get(key)
    if pat is None:
        pat = GraphPattern(channel, use_idi_approx)
        channel._pattern_cache[key] = pat
    return pat


def node_pair_count_fast(delays, dopplers, config: OtfsConfig, use_idi_approx: bool) -> int:
    """Measured N_s (self excluded) straight from the path taps.

    Exact for the structural graph: adjacency is translation invariant, so
    N_s = 2MN * 2 * |nonzero differences of the shift set|.
    """
    q_trunc = config.q_window_truncated()
    full, nonzero = set(), set()
    for l_p, k_p in zip(delays, dopplers):
        for q in q_trunc:
            s = ((int(k_p) + q) % config.N, int(l_p) % config.M)
            full.add(s)
            if q != 0:
                nonzero.add(s)
    if use_idi_approx:
        shifts = {(int(k_p) % config.N, int(l_p) % config.M) for l_p, k_p in zip(delays, dopplers)}
        shifts -= nonzero
    else:
        shifts = full
    dd = _difference_keys(shifts, config)
    # 2MN real nodes, each with 2 real neighbors per nonzero complex difference
    return 2 * config.mn * 2 * dd.size


# --- per-iteration statistics and values ---


def idi_stats_vars(t: ad.Tape, channel: EffectiveChannel, x_hat, nu_x, noise_var: float):
    """First/second interference moments over the IDI columns (tape form)."""
    ops = _idi_ops(channel)
    mu = ad.spmv(t, ops["mat"], x_hat)
    sig = ad.add(t, ad.spmv(t, ops["sq"], nu_x), noise_var / 2.0)
    return mu, sig


def idi_stats(channel: EffectiveChannel, x_hat: np.ndarray, nu_x: np.ndarray, noise_var: float) -> IdiStats:
    t = ad.Tape(record=False)
    mu, sig = idi_stats_vars(t, channel, t.const(x_hat), t.const(nu_x), noise_var)
    return IdiStats(mu_zeta=mu.value, sigma_zeta_sq=sig.value)


def fixed_stats(channel: EffectiveChannel, noise_var: float) -> IdiStats:
    """The interference-blind statistics: mu = 0, sigma^2 = sigma_n^2/2."""
    n = channel.n_real
    return IdiStats(mu_zeta=np.zeros(n), sigma_zeta_sq=np.full(n, noise_var / 2.0))


def graph_values_vars(t: ad.Tape, pattern: GraphPattern, y, mu, sigma_sq):
    """Node-init features (2 x n) and edge attributes (n_edges,) as Vars."""
    w = ad.recip(t, sigma_sq)
    ym = ad.sub(t, y, mu)
    feat_match = ad.spmv_t(t, pattern.value_op, ad.mul(t, ym, w))
    feat_energy = ad.spmv_t(t, pattern.value_sq_op, w)
    n = pattern.n_nodes
    feats = ad.concat0(
        t,
        [ad.reshape(t, feat_match, (1, n)), ad.reshape(t, feat_energy, (1, n))],
    )
    e_vals = ad.spmv(t, pattern.t_edge, w)
    return feats, e_vals


@dataclass
class MrfGraph:
    """Structure plus the current iteration's values (spec-level view)."""

    pattern: GraphPattern
    edge_attr: np.ndarray  # aligned with pattern.edge_i / edge_j
    node_init_feats: np.ndarray  # (2, n)

    @property
    def node_pair_count(self) -> int:
        return self.pattern.node_pair_count

    def neighbors(self, i: int) -> np.ndarray:
        return self.pattern.neighbors(i)

    def edge_value(self, i: int, j: int) -> float:
        lo, hi = (i, j) if i < j else (j, i)
        n = self.pattern.n_nodes
        key = lo * n + hi
        keys = self.pattern.edge_i * n + self.pattern.edge_j
        idx = np.searchsorted(keys, key)
        if idx >= keys.size or keys[idx] != key:
            return 0.0
        return float(self.edge_attr[idx])


def normalize(
    channel: EffectiveChannel,
    y: np.ndarray,
    stats: IdiStats,
    use_idi_approx: bool,
) -> tuple[np.ndarray, sp.csr_matrix, MrfGraph]:
    """Whitened observation, whitened retained-column matrix, valued graph.

    With the IDI approximation the retained columns are the exclusively-q=0
    taps and the row scale is 1/sigma_zeta_j; without it every truncated tap
    is retained and the row scale is the constant 1/sqrt(sigma_n^2/2)
    (callers pass stats with sigma_zeta_sq = sigma_n^2/2 in that case).
    """
    pattern = mrf_pattern(channel, use_idi_approx)
    t = ad.Tape(record=False)
    mu = t.const(stats.mu_zeta)
    sig = t.const(stats.sigma_zeta_sq)
    feats, e_vals = graph_values_vars(t, pattern, t.const(y), mu, sig)
    sigma = np.sqrt(stats.sigma_zeta_sq)
    y_tilde = (y - stats.mu_zeta) / sigma
    h_tilde = sp.diags(1.0 / sigma).dot(pattern.value_op.m).tocsr()
    graph = MrfGraph(pattern=pattern, edge_attr=e_vals.value, node_init_feats=feats.value)
    return y_tilde, h_tilde, graph


def gnn_pass_vars(
    t: ad.Tape,
    pattern: GraphPattern,
    feats,
    e_vals,
    attrs,
    pv: dict,
    real_alphabet: np.ndarray,
    l_rounds: int,
    counter=None,
):
    """L propagate/update rounds plus readout; returns (p, x_hat, nu_x) Vars.

    attrs is the (2 x n) matrix of AMP outputs [r; nu_r] (zeros for the
    AMP-free variant).  The GRU state starts at zero each outer iteration.
    """
    from . import nn

    n = pattern.n_nodes
    n_u = pv["W1"].value.shape[0]
    n_h = pv["phi.W_hr"].value.shape[0]
    st = counter.stage if counter is not None else (lambda name: nullcontext())
    with st("initialization"):
        u = nn.affine(t, pv["W1"], feats, pv["b1"])
    if counter is not None:
        counter.add_embedding(n, n_u)
    s = t.const(np.zeros((n_h, n)))
    deg_row = pattern.deg.reshape(1, n)
    for _ in range(l_rounds):
        with st("aggregation"):
            nbr_u = ad.col_mix(t, pattern.adj, u)
            self_u = ad.mul(t, u, deg_row)
            edge_sum = ad.reshape(t, ad.spmv(t, pattern.inc, e_vals), (1, n))
            agg = ad.concat0(t, [self_u, nbr_u, edge_sum])
        with st("mlp_theta"):
            m = nn.mlp_forward(t, pv, "theta", agg, output="linear")
        with st("update"):
            x_in = ad.concat0(t, [m, attrs])
            s = nn.gru_forward(t, pv, x_in, s)
            u = nn.affine(t, pv["W2"], s, pv["b2"])
        if counter is not None:
            counter.add_gnn_round(
                n,
                pattern.node_pair_count_with_self,
                n_u,
                n_h,
                pv["theta.W1"].value.shape[0],
                pv["theta.W2"].value.shape[0],
            )
    with st("readout"):
        p = nn.mlp_forward(t, pv, "omega", u, output="softmax")
        qr = real_alphabet.reshape(-1, 1)
        x_hat = ad.sum_axis(t, ad.mul(t, p, qr), axis=0)
        diff = ad.sub(t, qr, ad.reshape(t, x_hat, (1, n)))
        nu_x = ad.sum_axis(t, ad.mul(t, p, ad.mul(t, diff, diff)), axis=0)
    if counter is not None:
        counter.add_readout(
            n,
            n_u,
            real_alphabet.size,
            pv["omega.W1"].value.shape[0],
            pv["omega.W2"].value.shape[0],
        )
    return p, x_hat, nu_x


def gnn_pass(
    graph: MrfGraph,
    y_tilde: np.ndarray,
    h_tilde: sp.csr_matrix,
    node_attrs: np.ndarray,
    params: dict[str, np.ndarray],
    real_alphabet: np.ndarray,
    l_rounds: int,
):
    """Plain-array wrapper around gnn_pass_vars.

    node_attrs: (2, n) matrix [r; nu_r].  y_tilde / h_tilde are accepted for
    interface completeness; the pass consumes the precomputed graph values.
    """
    from . import nn

    t = ad.Tape(record=False)
    pv = nn.bind_params(t, params)
    feats = t.const(graph.node_init_feats)
    e_vals = t.const(graph.edge_attr)
    attrs = t.const(np.asarray(node_attrs, dtype=np.float64))
    p, x_hat, nu_x = gnn_pass_vars(
        t, graph.pattern, feats, e_vals, attrs, pv, real_alphabet, l_rounds
    )
    if not (np.all(np.isfinite(p.value)) and np.all(np.isfinite(x_hat.value))):
        raise FloatingPointError("non-finite GNN activations")
    return p.value, x_hat.value, nu_x.value


def _idi_ops(channel: EffectiveChannel) -> dict:
    ops = getattr(channel, "_idi_sp_ops", None)
    if ops is None:
        mat = ad.SpOp.__new__(ad.SpOp)
        mat.m = channel.h_idi_real
        mat.mt = sp.csr_matrix(channel.h_idi_real.T)
        sq = ad.SpOp.__new__(ad.SpOp)
        sq.m = channel.h_idi_real_sq
        sq.mt = sp.csr_matrix(channel.h_idi_real_sq.T)
        ops = {"mat": mat, "sq": sq}
        channel._idi_sp_ops = ops
    return ops
