"""OTFS frame generation: constellations, noise model, real lift, fixtures.

Symbols are drawn uniformly from a unit-average-energy QAM constellation, so
SNR = 1/sigma_n^2 and a noise level quoted in dB converts directly through
`snr_to_noise_var`.  The complex observation is

    y_bar = H_eff x_bar + w_bar,   w_bar ~ CN(0, sigma_n^2 I),

and the detectors see its real lift y = [Re(y_bar); Im(y_bar)], in which each
real dimension carries variance sigma_n^2 / 2.

Bit mapping is per-dimension reflected Gray code (independent Gray-coded PAM
on the real and imaginary rails), the standard square-QAM labeling, so BER is
well defined for both QPSK and 16-QAM.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .channel import EffectiveChannel

# Reflected Gray order of m-bit integers, index -> level rank.
_GRAY_2 = [0, 1, 3, 2]  # 2-bit: 00, 01, 11, 10 map to levels -3,-1,+1,+3


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square QAM with per-rail Gray labeling.

    points: the |Q| complex symbols, ordered row-major over (re_rank, im_rank).
    real_alphabet: the sqrt(|Q|) per-dimension levels Q_R, ascending.
    """

    order: int
    points: np.ndarray
    real_alphabet: np.ndarray
    bits_per_symbol: int

    @property
    def side(self) -> int:
        return int(round(math.sqrt(self.order)))

    def hard_index(self, symbols: np.ndarray) -> np.ndarray:
        """Nearest-point index (lowest index wins ties)."""
        d = np.abs(symbols[..., None] - self.points[None, :])
        return np.argmin(d, axis=-1)

    def index_to_bits(self, idx: np.ndarray) -> np.ndarray:
        return self._bit_table()[idx]

    def _bit_table(self) -> np.ndarray:
        m = self.bits_per_symbol // 2
        table = np.zeros((self.order, self.bits_per_symbol), dtype=np.int8)
        for i in range(self.order):
            re_rank, im_rank = divmod(i, self.side)
            re_bits = _rank_to_gray_bits(re_rank, m)
            im_bits = _rank_to_gray_bits(im_rank, m)
            table[i] = re_bits + im_bits
        return table


def _rank_to_gray_bits(rank: int, m: int) -> list[int]:
    # level rank r (ascending amplitude) -> the bit pattern whose Gray decode is r
    if m == 1:
        return [1 - rank]  # bit 0 -> +, bit 1 -> -: map rank0(-a)->1, rank1(+a)->0
    code = _GRAY_2.index(rank)
    return [(code >> 1) & 1, code & 1]


def make_constellation(order: int) -> Constellation:
    if order not in (4, 16):
        raise ValueError("supported constellation orders: 4, 16")
    side = int(round(math.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    scale = math.sqrt((levels**2).mean() * 2.0)  # unit average symbol energy
    levels = levels / scale
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    bits = int(round(math.log2(order)))
    return Constellation(order=order, points=pts, real_alphabet=levels, bits_per_symbol=bits)


def snr_to_noise_var(snr_db: float) -> float:
    """Complex noise variance sigma_n^2 for unit-energy symbols."""
    return 10.0 ** (-snr_db / 10.0)


def lift(v: np.ndarray) -> np.ndarray:
    """Complex length-n vector -> real length-2n vector [Re; Im]."""
    return np.concatenate([v.real, v.imag])


def unlift(v: np.ndarray) -> np.ndarray:
    n = v.shape[0] // 2
    return v[:n] + 1j * v[n:]


@dataclass(frozen=True)
class Frame:
    """One transmission: symbols, observation and the noise level used."""

    x_bar: np.ndarray  # complex MN
    y_bar: np.ndarray  # complex MN
    noise_var: float  # sigma_n^2 (complex variance)
    sym_idx: np.ndarray  # constellation indices of x_bar

    @property
    def x_real(self) -> np.ndarray:
        return lift(self.x_bar)

    @property
    def y_real(self) -> np.ndarray:
        return lift(self.y_bar)

    def to_bytes(self) -> bytes:
        """Little-endian float64 records: x_re, x_im, y_re, y_im (MN each),
        then noise_var."""
        mn = self.x_bar.shape[0]
        flat = np.concatenate(
            [self.x_bar.real, self.x_bar.imag, self.y_bar.real, self.y_bar.imag]
        ).astype("<f8")
        return flat.tobytes() + struct.pack("<d", self.noise_var)

    @staticmethod
    def from_bytes(buf: bytes, const: Constellation) -> "Frame":
        n_vals = (len(buf) - 8) // 8
        mn = n_vals // 4
        flat = np.frombuffer(buf[: n_vals * 8], dtype="<f8")
        noise_var = struct.unpack("<d", buf[n_vals * 8 :])[0]
        x = flat[:mn] + 1j * flat[mn : 2 * mn]
        y = flat[2 * mn : 3 * mn] + 1j * flat[3 * mn : 4 * mn]
        return Frame(x, y, noise_var, const.hard_index(x))


def generate_frame(
    channel: EffectiveChannel,
    const: Constellation,
    noise_var: float,
    seed,
) -> Frame:
    """Uniform symbols through the FULL (untruncated) effective matrix plus
    CN(0, noise_var) noise.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    mn = channel.config.mn
    idx = rng.integers(0, const.order, size=mn)
    x = const.points[idx]
    w = math.sqrt(noise_var / 2.0) * (
        rng.standard_normal(mn) + 1j * rng.standard_normal(mn)
    )
    y = channel.h_eff.dot(x) + w
    return Frame(x_bar=x, y_bar=y, noise_var=noise_var, sym_idx=idx)


def frame_sidecar(config_doc: dict, seed, count: int) -> str:
    """JSON sidecar describing a binary frame dump (field order documented in
    Frame.to_bytes)."""
    return json.dumps(
        {
            "format": "x_re,x_im,y_re,y_im per frame as little-endian float64, then noise_var",
            "config": config_doc,
            "seed": seed,
            "frames": count,
        },
        indent=2,
        sort_keys=True,
    )
