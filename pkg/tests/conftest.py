"""Shared fixtures: constellations, channel helpers, session-trained weights."""

import os
import time

import numpy as np
import pytest

from otfsdet.channel import OtfsConfig, build_effective_channel, sample_channel
from otfsdet.frames import make_constellation
from otfsdet.sweep import PRESETS
from otfsdet.training import TrainConfig, train


@pytest.fixture(scope="session")
def qpsk():
    return make_constellation(4)


@pytest.fixture(scope="session")
def qam16():
    return make_constellation(16)


@pytest.fixture(scope="session")
def tiny_otfs() -> OtfsConfig:
    return PRESETS["tiny"].otfs


@pytest.fixture(scope="session")
def small_otfs() -> OtfsConfig:
    return PRESETS["small"].otfs


def make_channel(otfs: OtfsConfig, seed: int):
    return build_effective_channel(sample_channel(otfs, seed), otfs)


@pytest.fixture(scope="session")
def tiny_channel(tiny_otfs):
    return make_channel(tiny_otfs, 7)


@pytest.fixture(scope="session")
def small_channel(small_otfs):
    return make_channel(small_otfs, 7)


# Detector weights used by the slower end-to-end tests.  Trained once per
# session at the small preset; set OTFSDET_TEST_CACHE to a directory to keep
# checkpoints across local runs while iterating.
TRAIN_STEPS = int(os.environ.get("OTFSDET_TEST_STEPS", "5000"))
TRAIN_SIGMA_DB = -15.0


class TrainedBundle:
    def __init__(self, cache_dir):
        self.cache_dir = cache_dir
        self._entries: dict = {}
        self.seconds: dict[str, float] = {}

    def get(self, variant: str):
        if variant == "amp_gnn_v1":
            variant = "amp_gnn"  # v1 reuses the amp_gnn weights
        if variant not in self._entries:
            self._entries[variant] = self._train(variant)
        return self._entries[variant]

    def _train(self, variant: str):
        path = os.path.join(self.cache_dir, f"{variant}_{TRAIN_STEPS}.json")
        if os.path.exists(path):
            from otfsdet.nn import load_checkpoint

            hyper, params, meta = load_checkpoint(path)
            self.seconds[variant] = 0.0
            return params, hyper, meta
        preset = PRESETS["small"]
        cfg = TrainConfig(
            variant=variant,
            sigma_train_db=TRAIN_SIGMA_DB,
            batch_size=16,
            steps=TRAIN_STEPS,
            seed=0,
            t_iters=preset.t_iters,
            l_rounds=preset.l_rounds,
        )
        t0 = time.time()
        params, hyper, history = train(cfg, preset.otfs, checkpoint_path=path)
        self.seconds[variant] = time.time() - t0
        return params, hyper, {"history_len": len(history)}


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    cache = os.environ.get("OTFSDET_TEST_CACHE")
    if cache:
        os.makedirs(cache, exist_ok=True)
    else:
        cache = str(tmp_path_factory.mktemp("checkpoints"))
    return TrainedBundle(cache)


def assert_close(a, b, tol: float, label: str = ""):
    a = np.asarray(a)
    b = np.asarray(b)
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    assert err <= tol, f"{label} max abs err {err:.3e} > {tol:.1e}"
