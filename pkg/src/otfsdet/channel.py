"""Delay-Doppler channel synthesis and the sparse effective channel.

The physical channel is a sum of P specular paths,

    h(tau, nu) = sum_p  gain_p * delta(tau - tau_p) * delta(nu - nu_p),

with tau_p = l_p / (M * delta_f) and nu_p = (k_p + kappa_p) / (N * delta_T),
where l_p is an integer delay tap, k_p an integer Doppler tap and
kappa_p in [-1/2, 1/2] the fractional Doppler offset.  After DD-domain
matched filtering the received symbol vector obeys y = H_eff x + w with an
MN x MN effective matrix whose (kM+l, k'M+l') entry accumulates

    (1/N) * gain_p * exp(j 2 pi (l - l_p)(k_p + kappa_p) / (MN)) * alpha_p(k, l, q)

at column k' = [k - k_p + q]_N, l' = [l - l_p]_M, summed over paths p and the
Doppler leakage index q.  Fractional Doppler smears each path across all N
values of q; truncating q to [-N_o, N_o] yields the banded working matrix
h_bar whose real-valued block lift

    h_real = [[Re(h_bar), -Im(h_bar)], [Im(h_bar), Re(h_bar)]]

is what the iterative detectors operate on.  This module also derives the
per-row / per-column index sets of h_real:

    I(j)  - columns with a (possibly zero-valued) structural tap in row j,
    L(i)  - rows reached by column i (the duality i in I(j) <=> j in L(i)),
    Itil(j) - the subset of I(j) produced by q != 0 taps (the inter-Doppler
              interference columns).

Entries whose value happens to be numerically zero (e.g. all q != 0 taps when
kappa_p = 0) are kept in the structural pattern: the detectors reason about
where taps CAN be, while values carry how strong they ARE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi

# |denominator| below this uses the analytic limit of the beta(q) ratio.
_BETA_SINGULAR_TOL = 1e-9


@dataclass(frozen=True)
class OtfsConfig:
    """Static grid / channel-model parameters.

    M, N are the delay and Doppler grid sizes, delta_f the subcarrier
    spacing in Hz (delta_T = 1/delta_f), P the path count, l_max / k_max the
    integer delay / Doppler support, N_o the leakage truncation half-width
    and qam_order the constellation size (4 or 16).
    """

    M: int
    N: int
    delta_f: float = 30e3
    P: int = 4
    l_max: int = 8
    k_max: int = 2
    N_o: int = 5
    qam_order: int = 4

    def __post_init__(self):
        if min(self.M, self.N, self.P) <= 0:
            raise ValueError("M, N and P must be strictly positive")
        if not (0 <= self.l_max < self.M):
            raise ValueError("l_max must satisfy 0 <= l_max < M")
        if not (0 <= self.k_max <= self.N // 2):
            raise ValueError("k_max must satisfy 0 <= k_max <= N//2")
        if not (0 <= self.N_o <= self.N // 2):
            raise ValueError("N_o must satisfy 0 <= N_o <= N//2")
        if self.qam_order not in (4, 16):
            raise ValueError("qam_order must be 4 or 16")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")

    @property
    def mn(self) -> int:
        return self.M * self.N

    @property
    def delta_t(self) -> float:
        return 1.0 / self.delta_f

    def q_window_full(self) -> range:
        # The N distinct leakage offsets: floor(-N/2)+1 .. floor(N/2).
        return range(math.floor(-self.N / 2) + 1, self.N // 2 + 1)

    def q_window_truncated(self) -> list[int]:
        full = set(self.q_window_full())
        return [q for q in range(-self.N_o, self.N_o + 1) if q in full]


@dataclass(frozen=True)
class PathSpec:
    gain: complex
    delay_idx: int
    doppler_idx: int
    doppler_frac: float


@dataclass(frozen=True)
class ChannelRealization:
    """The P path triples (gain, integer delay, integer+fractional Doppler)."""

    paths: tuple[PathSpec, ...]

    def __post_init__(self):
        for p in self.paths:
            if not -0.5 <= p.doppler_frac <= 0.5:
                raise ValueError("doppler_frac out of [-1/2, 1/2]")

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay_idx for p in self.paths], dtype=np.int64)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler_idx for p in self.paths], dtype=np.int64)

    @property
    def doppler_fracs(self) -> np.ndarray:
        return np.array([p.doppler_frac for p in self.paths], dtype=np.float64)

    def delay_seconds(self, config: OtfsConfig) -> np.ndarray:
        return self.delays / (config.M * config.delta_f)

    def doppler_hz(self, config: OtfsConfig) -> np.ndarray:
        return (self.dopplers + self.doppler_fracs) / (config.N * config.delta_t)

    def to_json(self) -> str:
        doc = {
            "paths": [
                {
                    "gain_re": float(p.gain.real),
                    "gain_im": float(p.gain.imag),
                    "l": int(p.delay_idx),
                    "k": int(p.doppler_idx),
                    "kappa": float(p.doppler_frac),
                }
                for p in self.paths
            ]
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "ChannelRealization":
        doc = json.loads(text)
        paths = tuple(
            PathSpec(
                gain=complex(rec["gain_re"], rec["gain_im"]),
                delay_idx=int(rec["l"]),
                doppler_idx=int(rec["k"]),
                doppler_frac=float(rec["kappa"]),
            )
            for rec in doc["paths"]
        )
        return ChannelRealization(paths)


def power_delay_profile(delays) -> np.ndarray:
    """Exponential per-path power sigma_p^2 = e^{-0.1 l_p} / sum_i e^{-0.1 l_i},
    normalized over the delays actually drawn."""
    prof = np.exp(-0.1 * np.asarray(delays, dtype=np.float64))
    return prof / prof.sum()


def sample_channel(config: OtfsConfig, seed: int) -> ChannelRealization:
    """Draw a random realization: uniform taps, exponential power-delay profile,
    gain_p ~ CN(0, sigma_p^2).

    Each path occupies its own delay tap (delays drawn uniformly without
    replacement, so every l_p is still marginally uniform); Doppler indices
    are independent.  With per-path delay taps the kept columns of the
    simplified graph are never leakage-contaminated, which keeps the measured
    node-pair counts near the collision-free reference values.
    """
    rng = np.random.default_rng(seed)
    if config.P > config.l_max + 1:
        raise ValueError("need P <= l_max + 1 distinct delay taps")
    delays = rng.choice(config.l_max + 1, size=config.P, replace=False)
    dopplers = rng.integers(-config.k_max, config.k_max + 1, size=config.P)
    fracs = rng.uniform(-0.5, 0.5, size=config.P)
    sigma_sq = power_delay_profile(delays)
    gains = np.sqrt(sigma_sq / 2.0) * (
        rng.standard_normal(config.P) + 1j * rng.standard_normal(config.P)
    )
    paths = tuple(
        PathSpec(complex(gains[p]), int(delays[p]), int(dopplers[p]), float(fracs[p]))
        for p in range(config.P)
    )
    return ChannelRealization(paths)


def perturb_csi(real: ChannelRealization, sigma_e_sq: float, seed: int) -> ChannelRealization:
    """Contaminate each path gain with CN(0, sigma_e_sq / P) estimation noise."""
    if sigma_e_sq < 0:
        raise ValueError("sigma_e_sq must be nonnegative")
    if sigma_e_sq == 0:
        return real
    rng = np.random.default_rng(seed)
    n_paths = len(real.paths)
    std = math.sqrt(sigma_e_sq / n_paths / 2.0)
    noise = std * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    paths = tuple(
        PathSpec(p.gain + complex(noise[i]), p.delay_idx, p.doppler_idx, p.doppler_frac)
        for i, p in enumerate(real.paths)
    )
    return ChannelRealization(paths)


def beta(q: int, kappa: float, N: int) -> complex:
    """Doppler leakage ratio; equals the N-term geometric sum
    sum_{n=0}^{N-1} exp(-j (2 pi / N) n (-q - kappa))."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x = -q - kappa
    # Reduce by the period of each exponential so integer x gives an exact
    # zero numerator and x = 0 (mod N) gives an exact zero denominator.
    x_den = x - N * np.round(x / N)
    den = np.exp(-1j * TWO_PI / N * x_den) - 1.0
    if abs(den) <= _BETA_SINGULAR_TOL:
        # Removable singularity at x = 0 (mod N): limit N * e^{-j 2 pi x (N-1)/N}.
        return complex(N * np.exp(-1j * TWO_PI * x_den * (N - 1) / N))
    x_num = x - np.round(x)
    num = np.exp(-1j * TWO_PI * x_num) - 1.0
    return complex(num / den)


def alpha(path: PathSpec, k: int, l: int, q: int, config: OtfsConfig) -> complex:
    """Per-tap leakage coefficient; the l < l_p branch picks up the cyclic
    delay wrap phase."""
    b = beta(q, path.doppler_frac, config.N)
    if l >= path.delay_idx:
        return b
    wrap = (k - path.doppler_idx + q) % config.N
    return (b - 1.0) * complex(np.exp(-1j * TWO_PI * wrap / config.N))


def lift_complex_matrix(a: sp.spmatrix) -> sp.csr_matrix:
    """Real block lift [[Re, -Im], [Im, Re]] of a complex sparse matrix.

    Keeps the structural pattern: every complex structural entry produces all
    four real cells even when Re or Im is numerically zero.
    """
    coo = a.tocoo()
    re = coo.data.real
    im = coo.data.imag
    mn = a.shape[0]
    rows = np.concatenate([coo.row, coo.row, coo.row + mn, coo.row + mn])
    cols = np.concatenate([coo.col, coo.col + mn, coo.col, coo.col + mn])
    data = np.concatenate([re, -im, im, re])
    out = sp.coo_matrix((data, (rows, cols)), shape=(2 * mn, 2 * mn)).tocsr()
    out.sort_indices()
    return out


def _accumulate_taps(real: ChannelRealization, config: OtfsConfig, q_values):
    """COO triples for the path/window double sum of taps over the whole grid.

    Returns (rows, cols, vals, q_is_nonzero) flat arrays, one block per (p, q).
    """
    M, N = config.M, config.N
    k_grid = np.repeat(np.arange(N), M)  # row-major j = k*M + l
    l_grid = np.tile(np.arange(M), N)
    rows_j = k_grid * M + l_grid

    rows, cols, vals, qflag = [], [], [], []
    for p in real.paths:
        phase_tau = np.exp(
            1j * TWO_PI * (l_grid - p.delay_idx) * (p.doppler_idx + p.doppler_frac) / (M * N)
        )
        col_l = (l_grid - p.delay_idx) % M
        ge_branch = l_grid >= p.delay_idx
        for q in q_values:
            b = beta(q, p.doppler_frac, N)
            wrap = (k_grid - p.doppler_idx + q) % N
            a_vals = np.where(
                ge_branch, b, (b - 1.0) * np.exp(-1j * TWO_PI * wrap / N)
            )
            col = wrap * M + col_l
            rows.append(rows_j)
            cols.append(col)
            vals.append((p.gain / N) * phase_tau * a_vals)
            qflag.append(np.full(rows_j.shape, q != 0, dtype=bool))
    return (
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        np.concatenate(qflag),
    )


class EffectiveChannel:
    """Sparse effective channel, its truncation, real lift, and index sets.

    Construction cost is O(P N M N) for the full matrix; all matrices are
    CSR with sorted indices.  Structural zeros are retained.  Instances are
    immutable after construction and safe to share across threads/processes.
    """

    def __init__(self, real: ChannelRealization, config: OtfsConfig):
        if len(real.paths) != config.P:
            raise ValueError("realization path count does not match config.P")
        for p in real.paths:
            if not 0 <= p.delay_idx <= config.l_max:
                raise ValueError("delay index out of range")
            if not -config.k_max <= p.doppler_idx <= config.k_max:
                raise ValueError("doppler index out of range")
        self.config = config
        self.realization = real
        mn = config.mn

        rows, cols, vals, _ = _accumulate_taps(real, config, config.q_window_full())
        self.h_eff = sp.coo_matrix((vals, (rows, cols)), shape=(mn, mn)).tocsr()
        self.h_eff.sum_duplicates()
        self.h_eff.sort_indices()

        q_trunc = config.q_window_truncated()
        rows, cols, _, qnz = _accumulate_taps(real, config, q_trunc)

        # Structural masks: a cell is IDI if ANY q != 0 tap lands on it; the
        # "kept" cells are those fed exclusively by q = 0 taps.
        ones = np.ones(rows.shape[0])
        pat_idi = sp.coo_matrix((ones * qnz, (rows, cols)), shape=(mn, mn)).tocsr()
        pat_idi.sum_duplicates()
        pat_all = sp.coo_matrix((ones, (rows, cols)), shape=(mn, mn)).tocsr()
        pat_all.sum_duplicates()
        idi_mask = _pattern_bool(pat_idi)
        all_mask = _pattern_bool(pat_all)
        keep_mask = all_mask - idi_mask  # boolean difference on aligned patterns

        # Truncation selects CELLS of the full matrix: the value at a selected
        # cell keeps every contribution (even from out-of-window taps that
        # collide there), so stored h_bar entries match h_eff exactly.
        self.h_bar = _mask_values(self.h_eff, all_mask)

        self.h_idi = _mask_values(self.h_bar, idi_mask)
        self.h_keep = _mask_values(self.h_bar, keep_mask)

        self.h_real = lift_complex_matrix(self.h_bar)
        self.h_idi_real = lift_complex_matrix(self.h_idi)
        self.h_keep_real = lift_complex_matrix(self.h_keep)

        # Companion operators for the detectors: squares and transposes.
        self.h_real_sq = self.h_real.copy()
        self.h_real_sq.data = self.h_real_sq.data**2
        self.h_real_t = sp.csr_matrix(self.h_real.T)
        self.h_real_sq_t = sp.csr_matrix(self.h_real_sq.T)
        self.h_idi_real_sq = self.h_idi_real.copy()
        self.h_idi_real_sq.data = self.h_idi_real_sq.data**2

        # Column-major companion for L(i) scans.
        self._h_real_csc = self.h_real.tocsc()
        self._h_idi_csc = self.h_idi_real.tocsc()

        # Translation-invariant shift sets (delta_k, delta_l): column i feeds
        # row i + shift on the (N, M) torus.  Used for fast MRF adjacency.
        shift_all, shift_keep, shift_idi = _shift_sets(real, config)
        self.shifts_full = shift_all
        self.shifts_keep = shift_keep
        self.shifts_idi = shift_idi

        self._pattern_cache: dict = {}

    # --- index sets (real-lift indexing, j in [0, 2MN)) ---

    def idx_in(self, j: int) -> np.ndarray:
        """I(j): structural column support of h_real row j, sorted."""
        row = self.h_real.indices[self.h_real.indptr[j] : self.h_real.indptr[j + 1]]
        return np.sort(row)

    def idx_out(self, i: int) -> np.ndarray:
        """L(i): structural row support of h_real column i, sorted."""
        col = self._h_real_csc.indices[
            self._h_real_csc.indptr[i] : self._h_real_csc.indptr[i + 1]
        ]
        return np.sort(col)

    def idx_idi(self, j: int) -> np.ndarray:
        """Itil(j): columns of row j that receive any q != 0 tap, sorted."""
        row = self.h_idi_real.indices[
            self.h_idi_real.indptr[j] : self.h_idi_real.indptr[j + 1]
        ]
        return np.sort(row)

    @property
    def n_real(self) -> int:
        return 2 * self.config.mn

    def row_sumsq(self) -> np.ndarray:
        return np.asarray(self.h_real_sq.sum(axis=1)).ravel()


def _pattern_bool(a: sp.csr_matrix) -> sp.csr_matrix:
    out = a.copy()
    out.data = (out.data != 0).astype(np.float64)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _mask_values(values: sp.csr_matrix, mask: sp.csr_matrix) -> sp.csr_matrix:
    """Restrict `values` to the structural cells of `mask` (keeping explicit
    zeros at masked-in positions)."""
    mask = mask.tocsr()
    mask.sort_indices()
    vals = values.tocsr()
    vals.sort_indices()
    out_rows, out_cols, out_data = [], [], []
    mn = values.shape[0]
    for j in range(mn):
        mcols = mask.indices[mask.indptr[j] : mask.indptr[j + 1]]
        mkeep = mask.data[mask.indptr[j] : mask.indptr[j + 1]] > 0
        mcols = mcols[mkeep]
        if mcols.size == 0:
            continue
        vcols = vals.indices[vals.indptr[j] : vals.indptr[j + 1]]
        vdata = vals.data[vals.indptr[j] : vals.indptr[j + 1]]
        sel = np.searchsorted(vcols, mcols)
        out_rows.append(np.full(mcols.shape, j))
        out_cols.append(mcols)
        out_data.append(vdata[sel])
    if not out_rows:
        return sp.csr_matrix((mn, mn), dtype=values.dtype)
    out = sp.coo_matrix(
        (np.concatenate(out_data), (np.concatenate(out_rows), np.concatenate(out_cols))),
        shape=values.shape,
    ).tocsr()
    out.sort_indices()
    return out


def _shift_sets(real: ChannelRealization, config: OtfsConfig):
    """(delta_k, delta_l) shift sets of the truncated pattern.

    Tap (p, q) maps column (k', l') to row ((k' + k_p + q) mod N, l' + l_p mod M)
    independently of (k', l'), so the structural pattern is a union of torus
    shifts.  "keep" shifts are q = 0 shifts not aliased by any q != 0 tap.
    """
    N, M = config.N, config.M
    q_trunc = config.q_window_truncated()
    full, nonzero = set(), set()
    for p in real.paths:
        for q in q_trunc:
            s = ((p.doppler_idx + q) % N, p.delay_idx % M)
            full.add(s)
            if q != 0:
                nonzero.add(s)
    keep = {((p.doppler_idx) % N, p.delay_idx % M) for p in real.paths} - nonzero
    return frozenset(full), frozenset(keep), frozenset(nonzero)


def build_effective_channel(real: ChannelRealization, config: OtfsConfig) -> EffectiveChannel:
    return EffectiveChannel(real, config)


def channel_to_json(real: ChannelRealization) -> str:
    return real.to_json()


def channel_from_json(text: str) -> ChannelRealization:
    return ChannelRealization.from_json(text)
