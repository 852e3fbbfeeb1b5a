"""Command-line front end: sweep, train, flops, fixtures.

Config files are JSON documents whose keys mirror the long flag names
(dashes become underscores); explicit flags always win.  Every artifact gets
a sidecar echoing the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import nn
from .channel import build_effective_channel, channel_to_json, sample_channel
from .complexity import ComplexityConfig, FlopReport
from .frames import frame_sidecar, generate_frame, make_constellation, snr_to_noise_var
from .sweep import PRESETS, SweepSpec, run_sweep, write_sweep_outputs

# reference mean n_g values for the two stock path counts (IDI-approximated
# graph, T=15); used when the flops report is asked for without a measurement
REFERENCE_N_G = {4: 753_525, 8: 2_837_310}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    return doc


def _merged(args: argparse.Namespace, file_cfg: dict, key: str, default=None):
    """Flag > config file > default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in file_cfg:
        return file_cfg[key]
    return default


def _resolve_preset(name: str):
    if name not in PRESETS:
        raise SystemExit(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


def _cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config)
    preset = _resolve_preset(_merged(args, file_cfg, "preset", "small"))
    detectors = _merged(args, file_cfg, "detector") or ["amp_only"]
    snr_grid = _merged(args, file_cfg, "snr") or [10.0]
    trials = int(_merged(args, file_cfg, "trials", 100))
    seed = int(_merged(args, file_cfg, "seed", 0))
    csi_error_db = _merged(args, file_cfg, "csi_error_db")
    out_path = _merged(args, file_cfg, "out", "sweep.csv")
    otfs = preset.otfs
    qam = _merged(args, file_cfg, "qam_order")
    if qam is not None:
        otfs = replace(otfs, qam_order=int(qam))
    spec = SweepSpec(
        otfs=otfs,
        detectors=list(detectors),
        snr_grid=[float(s) for s in snr_grid],
        trials=trials,
        master_seed=seed,
        t_iters=int(_merged(args, file_cfg, "t_iters", preset.t_iters)),
        l_rounds=int(_merged(args, file_cfg, "l_rounds", preset.l_rounds)),
        csi_error_db=None if csi_error_db is None else float(csi_error_db),
    )
    params_by_variant = {}
    for item in _merged(args, file_cfg, "checkpoint") or []:
        if "=" not in item:
            raise SystemExit("--checkpoint expects variant=path")
        variant, path = item.split("=", 1)
        _, params, _ = nn.load_checkpoint(path)
        params_by_variant[variant] = params
    results = run_sweep(
        spec,
        params_by_variant,
        dump_diagnostics=args.dump_diagnostics,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    write_sweep_outputs(results, spec, out_path, dump_diagnostics=args.dump_diagnostics)
    print(f"wrote {out_path}")
    return 0


def _cmd_train(args) -> int:
    from .training import TrainConfig, train

    file_cfg = _load_config_file(args.config)
    preset = _resolve_preset(_merged(args, file_cfg, "preset", "small"))
    otfs = preset.otfs
    qam = _merged(args, file_cfg, "qam_order")
    if qam is not None:
        otfs = replace(otfs, qam_order=int(qam))
    train_cfg = TrainConfig(
        variant=_merged(args, file_cfg, "variant", "amp_gnn"),
        sigma_train_db=float(_merged(args, file_cfg, "sigma_train_db", -15.0)),
        batch_size=int(_merged(args, file_cfg, "batch_size", 8)),
        steps=int(_merged(args, file_cfg, "steps", 200)),
        learning_rate=float(_merged(args, file_cfg, "learning_rate", 1e-3)),
        seed=int(_merged(args, file_cfg, "seed", 0)),
        t_iters=int(_merged(args, file_cfg, "t_iters", preset.t_iters)),
        l_rounds=int(_merged(args, file_cfg, "l_rounds", preset.l_rounds)),
    )
    out_path = _merged(args, file_cfg, "out", "checkpoint.json")
    curve_path = _merged(args, file_cfg, "curve")
    train(
        train_cfg,
        otfs,
        checkpoint_path=out_path,
        curve_path=curve_path,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    print(f"wrote {out_path}")
    return 0


def _cmd_flops(args) -> int:
    file_cfg = _load_config_file(args.config)
    p = int(_merged(args, file_cfg, "paths", 4))
    cfg = ComplexityConfig.paper_defaults(p=p)
    n_g = _merged(args, file_cfg, "n_g")
    if n_g is None:
        n_g = REFERENCE_N_G.get(p, 2 * cfg.mn * cfg.t_iters)
    report = FlopReport.from_formulas(cfg, int(n_g))
    out = _merged(args, file_cfg, "out")
    if args.pretty:
        print(report.table_text())
    else:
        sys.stdout.write(report.table_csv())
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(report.table_csv())
    return 0


def _cmd_fixtures(args) -> int:
    file_cfg = _load_config_file(args.config)
    preset = _resolve_preset(_merged(args, file_cfg, "preset", "tiny"))
    seed = int(_merged(args, file_cfg, "seed", 0))
    count = int(_merged(args, file_cfg, "count", 4))
    out_dir = _merged(args, file_cfg, "out", "fixtures")
    snr_db = float(_merged(args, file_cfg, "snr_db", 10.0))
    os.makedirs(out_dir, exist_ok=True)
    otfs = preset.otfs
    const = make_constellation(otfs.qam_order)
    blobs = []
    for i in range(count):
        ss = np.random.SeedSequence((seed, i))
        rng = np.random.default_rng(ss)
        real = sample_channel(otfs, rng)
        channel = build_effective_channel(real, otfs)
        frame = generate_frame(channel, const, snr_to_noise_var(snr_db), rng)
        with open(os.path.join(out_dir, f"channel_{i:03d}.json"), "w") as fh:
            fh.write(channel_to_json(real))
            fh.write("\n")
        blobs.append(frame.to_bytes())
    with open(os.path.join(out_dir, "frames.bin"), "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    doc = {
        "preset": {
            "M": otfs.M,
            "N": otfs.N,
            "P": otfs.P,
            "l_max": otfs.l_max,
            "k_max": otfs.k_max,
            "N_o": otfs.N_o,
            "qam_order": otfs.qam_order,
        },
        "snr_db": snr_db,
    }
    with open(os.path.join(out_dir, "frames.json"), "w") as fh:
        fh.write(frame_sidecar(doc, seed, count))
        fh.write("\n")
    print(f"wrote {count} fixtures to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otfsdet")
    sub = ap.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run a BER sweep and write CSV")
    sweep.add_argument("--config")
    sweep.add_argument("--preset")
    sweep.add_argument("--detector", action="append")
    sweep.add_argument("--snr", action="append", type=float)
    sweep.add_argument("--trials", type=int)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--t-iters", dest="t_iters", type=int)
    sweep.add_argument("--l-rounds", dest="l_rounds", type=int)
    sweep.add_argument("--qam-order", dest="qam_order", type=int)
    sweep.add_argument("--csi-error-db", dest="csi_error_db", type=float)
    sweep.add_argument("--checkpoint", action="append")
    sweep.add_argument("--out")
    sweep.add_argument("--dump-diagnostics", action="store_true")
    sweep.set_defaults(fn=_cmd_sweep)

    train = sub.add_parser("train", help="train a checkpoint")
    train.add_argument("--config")
    train.add_argument("--preset")
    train.add_argument("--variant")
    train.add_argument("--sigma-train-db", dest="sigma_train_db", type=float)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--steps", type=int)
    train.add_argument("--learning-rate", dest="learning_rate", type=float)
    train.add_argument("--seed", type=int)
    train.add_argument("--t-iters", dest="t_iters", type=int)
    train.add_argument("--l-rounds", dest="l_rounds", type=int)
    train.add_argument("--qam-order", dest="qam_order", type=int)
    train.add_argument("--out")
    train.add_argument("--curve")
    train.set_defaults(fn=_cmd_train)

    flops = sub.add_parser("flops", help="print the FLOP decomposition")
    flops.add_argument("--config")
    flops.add_argument("--paths", type=int)
    flops.add_argument("--n-g", dest="n_g", type=int)
    flops.add_argument("--pretty", action="store_true")
    flops.add_argument("--out")
    flops.set_defaults(fn=_cmd_flops)

    fixtures = sub.add_parser("fixtures", help="write deterministic fixtures")
    fixtures.add_argument("--config")
    fixtures.add_argument("--preset")
    fixtures.add_argument("--seed", type=int)
    fixtures.add_argument("--count", type=int)
    fixtures.add_argument("--snr-db", dest="snr_db", type=float)
    fixtures.add_argument("--out")
    fixtures.set_defaults(fn=_cmd_fixtures)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
