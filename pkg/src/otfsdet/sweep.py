"""BER sweep orchestration: presets, per-trial seeding, worker fan-out.

Per-trial seeds are derived from (master_seed, detector, snr, trial) through
numpy's SeedSequence, so any worker schedule produces the same per-trial
streams and therefore identical aggregate counts.  A trial draws a fresh
channel and frame; with a CSI error configured the detector is handed a
perturbed channel estimate while the frame is produced by the true channel.

Worker count comes from the OTFSDET_WORKERS environment variable (default 1,
serial in-process).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import OtfsConfig, build_effective_channel, perturb_csi, sample_channel
from .detectors import ALL_VARIANTS, GNN_VARIANTS, DetectorConfig, detect
from .frames import generate_frame, make_constellation, snr_to_noise_var

CSV_HEADER = "detector,snr_db,trials,bit_errors,ber,failed_trials"

WORKERS_ENV = "OTFSDET_WORKERS"


@dataclass(frozen=True)
class Preset:
    otfs: OtfsConfig
    t_iters: int
    l_rounds: int


PRESETS: dict[str, Preset] = {
    "tiny": Preset(
        OtfsConfig(M=4, N=2, P=2, l_max=1, k_max=1, N_o=1, qam_order=4),
        t_iters=2,
        l_rounds=1,
    ),
    "small": Preset(
        OtfsConfig(M=16, N=8, P=2, l_max=4, k_max=2, N_o=2, qam_order=4),
        t_iters=5,
        l_rounds=2,
    ),
    "paper": Preset(
        OtfsConfig(M=64, N=16, P=4, l_max=8, k_max=2, N_o=5, qam_order=4),
        t_iters=15,
        l_rounds=2,
    ),
}


@dataclass
class SweepSpec:
    otfs: OtfsConfig
    detectors: list[str]
    snr_grid: list[float]
    trials: int
    master_seed: int
    t_iters: int = 15
    l_rounds: int = 2
    csi_error_db: float | None = None

    def __post_init__(self):
        if not self.detectors or not self.snr_grid:
            raise ValueError("detector list and SNR grid must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for d in self.detectors:
            if d not in ALL_VARIANTS:
                raise ValueError(f"unknown detector {d!r}")

    def to_doc(self) -> dict:
        return {
            "otfs": {
                "M": self.otfs.M,
                "N": self.otfs.N,
                "P": self.otfs.P,
                "l_max": self.otfs.l_max,
                "k_max": self.otfs.k_max,
                "N_o": self.otfs.N_o,
                "qam_order": self.otfs.qam_order,
            },
            "detectors": list(self.detectors),
            "snr_grid": [float(s) for s in self.snr_grid],
            "trials": self.trials,
            "master_seed": self.master_seed,
            "t_iters": self.t_iters,
            "l_rounds": self.l_rounds,
            "csi_error_db": self.csi_error_db,
        }


@dataclass
class PointResult:
    detector: str
    snr_db: float
    trials: int
    bits_per_trial: int = 0
    bit_errors: int = 0
    failed_trials: int = 0
    diagnostics: dict | None = None

    @property
    def total_bits(self) -> int:
        return self.trials * self.bits_per_trial

    @property
    def ber(self) -> float:
        return self.bit_errors / self.total_bits if self.total_bits else 0.0


def trial_seed_sequence(master: int, det_id: int, snr_db: float, trial: int):
    snr_key = int(round(float(snr_db) * 1000.0)) % (2**32)
    return np.random.SeedSequence((master, det_id, snr_key, trial))


def run_trial(
    spec_doc: dict,
    variant: str,
    snr_db: float,
    trial: int,
    params: dict | None,
) -> tuple[int, int]:
    """One (channel, frame, detect) cycle; returns (bit_errors, failed)."""
    otfs = OtfsConfig(**spec_doc["otfs"])
    const = make_constellation(otfs.qam_order)
    det_id = ALL_VARIANTS.index(variant)
    rng = np.random.default_rng(
        trial_seed_sequence(spec_doc["master_seed"], det_id, snr_db, trial)
    )
    real = sample_channel(otfs, rng)
    channel = build_effective_channel(real, otfs)
    frame = generate_frame(channel, const, snr_to_noise_var(snr_db), rng)
    if spec_doc.get("csi_error_db") is not None:
        sigma_e_sq = 10.0 ** (spec_doc["csi_error_db"] / 10.0)
        est = perturb_csi(real, sigma_e_sq, rng)
        det_channel = build_effective_channel(est, otfs)
    else:
        det_channel = channel
    cfg = DetectorConfig(
        variant=variant,
        t_iters=spec_doc["t_iters"],
        l_rounds=spec_doc["l_rounds"],
    )
    result = detect(frame.y_bar, det_channel, frame.noise_var, const, cfg, params)
    frame_bits = otfs.mn * const.bits_per_symbol
    if result.failed:
        return frame_bits, 1
    tx_bits = const.index_to_bits(frame.sym_idx)
    rx_bits = const.index_to_bits(const.hard_index(result.x_hat_bar))
    return int(np.sum(tx_bits != rx_bits)), 0


def _trial_block(args) -> tuple[int, int]:
    spec_doc, variant, snr_db, lo, hi, params = args
    errs = 0
    fails = 0
    for trial in range(lo, hi):
        e, f = run_trial(spec_doc, variant, snr_db, trial, params)
        errs += e
        fails += f
    return errs, fails


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_sweep(
    spec: SweepSpec,
    params_by_variant: dict[str, dict] | None = None,
    dump_diagnostics: bool = False,
    log=None,
) -> list[PointResult]:
    params_by_variant = params_by_variant or {}
    for d in spec.detectors:
        if d in GNN_VARIANTS and resolve_params(params_by_variant, d) is None:
            raise ValueError(f"detector {d} needs a checkpoint")
    const = make_constellation(spec.otfs.qam_order)
    bits_per_trial = spec.otfs.mn * const.bits_per_symbol
    spec_doc = spec.to_doc()
    workers = worker_count()
    results = []
    for variant in spec.detectors:
        params = resolve_params(params_by_variant, variant)
        for snr_db in spec.snr_grid:
            point = PointResult(variant, float(snr_db), spec.trials, bits_per_trial)
            if workers == 1:
                errs, fails = _trial_block(
                    (spec_doc, variant, snr_db, 0, spec.trials, params)
                )
                point.bit_errors, point.failed_trials = errs, fails
            else:
                chunk = max(1, -(-spec.trials // (4 * workers)))
                blocks = [
                    (spec_doc, variant, snr_db, lo, min(lo + chunk, spec.trials), params)
                    for lo in range(0, spec.trials, chunk)
                ]
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    for errs, fails in pool.map(_trial_block, blocks):
                        point.bit_errors += errs
                        point.failed_trials += fails
            if dump_diagnostics:
                point.diagnostics = _point_diagnostics(spec_doc, variant, snr_db, params)
            if log is not None:
                log(
                    f"{variant} @ {snr_db:g} dB: ber {point.ber:.3e} "
                    f"({point.bit_errors}/{point.total_bits} bits, "
                    f"{point.failed_trials} failed)"
                )
            results.append(point)
    return results


def resolve_params(params_by_variant: dict, variant: str) -> dict | None:
    """v1 shares the main checkpoint unless one was trained for it explicitly;
    everything else resolves by its own name."""
    if variant in params_by_variant:
        return params_by_variant[variant]
    if variant == "amp_gnn_v1":
        return params_by_variant.get("amp_gnn")
    return None


def _point_diagnostics(spec_doc, variant, snr_db, params) -> dict:
    otfs = OtfsConfig(**spec_doc["otfs"])
    const = make_constellation(otfs.qam_order)
    det_id = ALL_VARIANTS.index(variant)
    rng = np.random.default_rng(
        trial_seed_sequence(spec_doc["master_seed"], det_id, snr_db, 0)
    )
    real = sample_channel(otfs, rng)
    channel = build_effective_channel(real, otfs)
    frame = generate_frame(channel, const, snr_to_noise_var(snr_db), rng)
    cfg = DetectorConfig(
        variant=variant, t_iters=spec_doc["t_iters"], l_rounds=spec_doc["l_rounds"]
    )
    from .complexity import FlopCounter

    counter = FlopCounter()
    result = detect(frame.y_bar, channel, frame.noise_var, const, cfg, params, counter)
    return result.diagnostics


def results_to_csv(results: list[PointResult]) -> str:
    lines = [CSV_HEADER]
    for r in results:
        lines.append(
            f"{r.detector},{float(r.snr_db):g},{r.trials},{r.bit_errors},"
            f"{r.ber!r},{r.failed_trials}"
        )
    return "\n".join(lines) + "\n"


def write_sweep_outputs(
    results: list[PointResult],
    spec: SweepSpec,
    out_path: str,
    dump_diagnostics: bool = False,
) -> None:
    with open(out_path, "w", newline="") as fh:
        fh.write(results_to_csv(results))
    sidecar = {"resolved_config": spec.to_doc(), "schema": CSV_HEADER}
    with open(out_path + ".config.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if dump_diagnostics:
        diag = {
            f"{r.detector}@{r.snr_db:g}dB": r.diagnostics
            for r in results
            if r.diagnostics is not None
        }
        with open(out_path + ".diagnostics.json", "w") as fh:
            json.dump(diag, fh, indent=2, sort_keys=True)
            fh.write("\n")
