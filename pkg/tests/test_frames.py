"""Constellations, noise model, real lift, and frame serialization.

Expected constellation geometry and bit labels are worked out by hand below
(per-rail reflected Gray code on unit-average-energy square QAM) so the tests
do not lean on the implementation's own tables.
"""

import json
import math

import numpy as np
import pytest

from otfsdet.channel import ChannelRealization, OtfsConfig, PathSpec, build_effective_channel
from otfsdet.frames import (
    Frame,
    frame_sidecar,
    generate_frame,
    lift,
    make_constellation,
    snr_to_noise_var,
    unlift,
)

from conftest import assert_close


# Hand-derived QPSK layout: levels (-1, +1)/sqrt(2), points row-major over
# (re_rank, im_rank), rank 0 carrying bit 1 on its rail.
QPSK_POINTS = np.array([-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j]) / math.sqrt(2)
QPSK_BITS = np.array([[1, 1], [1, 0], [0, 1], [0, 0]])


def identity_channel(M=4, N=4):
    cfg = OtfsConfig(M=M, N=N, P=1, l_max=2, k_max=1, N_o=1)
    return build_effective_channel(ChannelRealization((PathSpec(1 + 0j, 0, 0, 0.0),)), cfg)


# ----------------------------------------------------------- constellations

def test_qpsk_points_and_bits():
    c = make_constellation(4)
    assert c.bits_per_symbol == 2
    assert_close(c.points, QPSK_POINTS, 1e-15, "qpsk points")
    assert_close(c.real_alphabet, np.array([-1.0, 1.0]) / math.sqrt(2), 1e-15, "qpsk levels")
    assert np.array_equal(c.index_to_bits(np.arange(4)), QPSK_BITS)


def test_qam16_geometry():
    c = make_constellation(16)
    assert c.bits_per_symbol == 4
    assert c.side == 4
    want_levels = np.array([-3.0, -1.0, 1.0, 3.0]) / math.sqrt(10.0)
    assert_close(c.real_alphabet, want_levels, 1e-15, "16qam levels")
    # row-major over (re_rank, im_rank)
    want = (want_levels[:, None] + 1j * want_levels[None, :]).ravel()
    assert_close(c.points, want, 1e-15, "16qam points")


@pytest.mark.parametrize("order", [4, 16])
def test_unit_average_energy(order):
    c = make_constellation(order)
    assert_close(np.mean(np.abs(c.points) ** 2), 1.0, 1e-12, "mean energy")


@pytest.mark.parametrize("order", [4, 16])
def test_gray_property_per_rail(order):
    # adjacent amplitude ranks differ in exactly one bit on their own rail
    c = make_constellation(order)
    m = c.bits_per_symbol // 2
    side = c.side
    bits = c.index_to_bits(np.arange(order))
    for rank in range(side - 1):
        a = bits[rank * side][:m]  # re rail, im fixed at rank 0
        b = bits[(rank + 1) * side][:m]
        assert int(np.sum(a != b)) == 1
        a = bits[rank][m:]  # im rail, re fixed at rank 0
        b = bits[rank + 1][m:]
        assert int(np.sum(a != b)) == 1


def test_bit_labels_unique():
    for order in (4, 16):
        c = make_constellation(order)
        rows = {tuple(r) for r in c.index_to_bits(np.arange(order))}
        assert len(rows) == order


def test_hard_index_recovers_points():
    for order in (4, 16):
        c = make_constellation(order)
        assert np.array_equal(c.hard_index(c.points), np.arange(order))


def test_hard_index_tie_breaks_low():
    c = make_constellation(4)
    # the origin is equidistant from all four points; lowest index wins
    assert c.hard_index(np.array([0.0 + 0.0j]))[0] == 0


def test_constellation_rejects_unknown_order():
    for bad in (2, 8, 64):
        with pytest.raises(ValueError):
            make_constellation(bad)


# ------------------------------------------------------------- noise scale

def test_snr_to_noise_var_exact_points():
    assert snr_to_noise_var(0.0) == 1.0
    assert_close(snr_to_noise_var(10.0), 0.1, 1e-15, "10 dB")
    assert_close(snr_to_noise_var(-15.0), 10.0**1.5, 1e-12, "-15 dB")


# ---------------------------------------------------------------- lifting

def test_lift_unlift_round_trip():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(17) + 1j * rng.standard_normal(17)
    assert np.array_equal(unlift(lift(v)), v)
    assert np.array_equal(lift(v)[:17], v.real)
    assert np.array_equal(lift(v)[17:], v.imag)


def test_lift_is_isometry():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert_close(np.linalg.norm(lift(v)), np.linalg.norm(v), 1e-12, "lift norm")


# ------------------------------------------------------------------ frames

def test_noiseless_identity_frame():
    ch = identity_channel()
    c = make_constellation(4)
    fr = generate_frame(ch, c, 0.0, seed=3)
    assert np.array_equal(fr.y_bar, fr.x_bar)
    assert np.array_equal(c.points[fr.sym_idx], fr.x_bar)


def test_frame_determinism():
    ch = identity_channel()
    c = make_constellation(16)
    a = generate_frame(ch, c, 0.05, seed=11)
    b = generate_frame(ch, c, 0.05, seed=11)
    assert np.array_equal(a.x_bar, b.x_bar) and np.array_equal(a.y_bar, b.y_bar)
    d = generate_frame(ch, c, 0.05, seed=12)
    assert not np.array_equal(a.x_bar, d.x_bar)


def test_frame_noise_variance_mc():
    # y - x on the identity channel isolates the noise draw
    ch = identity_channel()
    c = make_constellation(4)
    nv = 0.2
    w = np.concatenate(
        [generate_frame(ch, c, nv, seed=s).y_bar - generate_frame(ch, c, nv, seed=s).x_bar
         for s in range(500)]
    )
    assert_close(np.mean(np.abs(w) ** 2), nv, 0.05 * nv, "complex noise var")
    assert_close(np.var(w.real), nv / 2, 0.07 * nv, "real rail var")
    assert_close(np.var(w.imag), nv / 2, 0.07 * nv, "imag rail var")
    assert abs(np.mean(w)) < 4 * math.sqrt(nv / len(w))


def test_frame_symbols_uniform():
    ch = identity_channel()
    c = make_constellation(4)
    idx = np.concatenate([generate_frame(ch, c, 0.1, seed=s).sym_idx for s in range(500)])
    freq = np.bincount(idx, minlength=4) / idx.size
    assert np.all(np.abs(freq - 0.25) < 0.02)


def test_frame_real_views():
    ch = identity_channel()
    c = make_constellation(16)
    fr = generate_frame(ch, c, 0.1, seed=5)
    assert np.array_equal(fr.x_real, lift(fr.x_bar))
    assert np.array_equal(fr.y_real, lift(fr.y_bar))


def test_frame_uses_full_matrix():
    # frame observation comes from h_eff, not the truncated copy
    cfg = OtfsConfig(M=8, N=4, P=3, l_max=3, k_max=2, N_o=1)
    from otfsdet.channel import sample_channel

    ch = build_effective_channel(sample_channel(cfg, 21), cfg)
    c = make_constellation(4)
    fr = generate_frame(ch, c, 0.0, seed=2)
    assert_close(fr.y_bar, ch.h_eff.dot(fr.x_bar), 1e-14, "noise-free y")


# ----------------------------------------------------------- serialization

def test_frame_bytes_round_trip():
    ch = identity_channel()
    c = make_constellation(16)
    fr = generate_frame(ch, c, 0.07, seed=9)
    back = Frame.from_bytes(fr.to_bytes(), c)
    assert np.array_equal(back.x_bar, fr.x_bar)
    assert np.array_equal(back.y_bar, fr.y_bar)
    assert back.noise_var == fr.noise_var
    assert np.array_equal(back.sym_idx, fr.sym_idx)


def test_frame_bytes_layout():
    ch = identity_channel(M=4, N=2)
    c = make_constellation(4)
    fr = generate_frame(ch, c, 0.3, seed=1)
    buf = fr.to_bytes()
    assert len(buf) == 8 * (4 * 8 + 1)
    vals = np.frombuffer(buf[:-8], dtype="<f8")
    assert np.array_equal(vals[:8], fr.x_bar.real)
    assert np.array_equal(vals[24:32], fr.y_bar.imag)


def test_frame_sidecar_fields():
    doc = frame_sidecar({"M": 4, "N": 2}, seed=7, count=12)
    parsed = json.loads(doc)
    assert parsed["seed"] == 7 and parsed["frames"] == 12
    assert parsed["config"] == {"M": 4, "N": 2}
    assert "float64" in parsed["format"]
