"""Delay-Doppler channel synthesis and iterative AMP/GNN data detection."""

from .channel import (
    ChannelRealization,
    EffectiveChannel,
    OtfsConfig,
    PathSpec,
    alpha,
    beta,
    build_effective_channel,
    channel_from_json,
    channel_to_json,
    perturb_csi,
    power_delay_profile,
    sample_channel,
)
from .complexity import (
    ComplexityConfig,
    FlopCounter,
    FlopReport,
    flops_aggregation,
    flops_amp,
    flops_nn,
    instrument,
    worst_case_node_pairs,
)
from .detectors import (
    DetectionResult,
    DetectorConfig,
    decide_symbols,
    detect,
    detect_amp_only,
    detect_map_bruteforce,
)
from .frames import (
    Constellation,
    Frame,
    generate_frame,
    lift,
    make_constellation,
    snr_to_noise_var,
    unlift,
)
from .gnn import mrf_pattern, node_pair_count_fast
from .nn import GnnHyper, init_gnn_params, load_checkpoint, save_checkpoint
from .sweep import PRESETS, SweepSpec, run_sweep
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization",
    "ComplexityConfig",
    "Constellation",
    "DetectionResult",
    "DetectorConfig",
    "EffectiveChannel",
    "FlopCounter",
    "FlopReport",
    "Frame",
    "GnnHyper",
    "OtfsConfig",
    "PRESETS",
    "PathSpec",
    "SweepSpec",
    "TrainConfig",
    "alpha",
    "beta",
    "build_effective_channel",
    "channel_from_json",
    "channel_to_json",
    "decide_symbols",
    "detect",
    "detect_amp_only",
    "detect_map_bruteforce",
    "flops_aggregation",
    "flops_amp",
    "flops_nn",
    "generate_frame",
    "init_gnn_params",
    "instrument",
    "lift",
    "load_checkpoint",
    "make_constellation",
    "mrf_pattern",
    "node_pair_count_fast",
    "perturb_csi",
    "power_delay_profile",
    "run_sweep",
    "sample_channel",
    "save_checkpoint",
    "snr_to_noise_var",
    "train",
    "unlift",
    "worst_case_node_pairs",
]
