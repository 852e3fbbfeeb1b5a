"""End-to-end training of the detector parameters by unrolled backprop.

The loss is the batch-mean squared error between the transmitted complex
frame and the detector's SOFT output after the final iteration (pre-decision
posterior means), and gradients flow through every unrolled stage: the AMP
recursion, interference statistics, graph values, message rounds, GRU and
readout.  Samples are streamed: each draws a fresh channel realization and a
fresh frame, so there is no dataset size to tune.

Optimizer is Adam with the standard decay constants.  Training is
deterministic for a fixed seed (single-threaded, order-fixed reductions),
which the checkpoint format preserves by carrying no timestamps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from . import nn
from .amp import AmpDivergence
from .channel import OtfsConfig, build_effective_channel, sample_channel
from .detectors import DetectorConfig, soft_detect_vars
from .frames import Constellation, Frame, generate_frame, make_constellation


@dataclass
class TrainConfig:
    variant: str = "amp_gnn"
    sigma_train_db: float = -15.0
    batch_size: int = 8
    steps: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    t_iters: int = 5
    l_rounds: int = 2
    desk_scale: tuple[int, int] | None = None  # optional (M, N) override

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("decay constants must lie in [0, 1)")

    @property
    def noise_var(self) -> float:
        return 10.0 ** (self.sigma_train_db / 10.0)


def gen_training_batch(
    otfs_cfg: OtfsConfig,
    train_cfg: TrainConfig,
    rng: np.random.Generator,
    const: Constellation,
):
    """batch_size fresh (frame, channel) pairs; independent path draws."""
    batch = []
    for _ in range(train_cfg.batch_size):
        real = sample_channel(otfs_cfg, rng)
        channel = build_effective_channel(real, otfs_cfg)
        frame = generate_frame(channel, const, train_cfg.noise_var, rng)
        batch.append((frame, channel))
    return batch


def loss_vars(
    t: ad.Tape,
    batch,
    pv: dict,
    det_cfg: DetectorConfig,
    const: Constellation,
    noise_var: float,
) -> ad.Var:
    """(1/|D|) sum_d ||x_d - soft_d||^2, built on the given tape."""
    total = None
    for frame, channel in batch:
        x_hat, _ = soft_detect_vars(
            t, channel, frame.y_real, noise_var, const, det_cfg, pv
        )
        diff = ad.sub(t, t.const(frame.x_real), x_hat)
        sq = ad.sum_all(t, ad.mul(t, diff, diff))
        total = sq if total is None else ad.add(t, total, sq)
    return ad.mul(t, total, 1.0 / len(batch))


def loss(
    batch,
    params: dict[str, np.ndarray],
    det_cfg: DetectorConfig,
    const: Constellation,
    noise_var: float,
) -> float:
    t = ad.Tape(record=False)
    pv = nn.bind_params(t, params)
    out = float(loss_vars(t, batch, pv, det_cfg, const, noise_var).value)
    if not math.isfinite(out):
        raise FloatingPointError("non-finite training loss")
    return out


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    state.step += 1
    k = state.step
    bc1 = 1.0 - cfg.beta1**k
    bc2 = 1.0 - cfg.beta2**k
    for name in sorted(params):
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train(
    train_cfg: TrainConfig,
    otfs_cfg: OtfsConfig,
    checkpoint_path=None,
    curve_path=None,
    init_params: dict[str, np.ndarray] | None = None,
    log=None,
):
    """Streamed-batch Adam loop; returns (params, hyper, history).

    history rows are (step, loss, grad_norm).  Divergent batches (non-finite
    loss or an AMP blow-up) skip the update; five in a row abort the run.
    """
    if train_cfg.desk_scale is not None:
        m, n = train_cfg.desk_scale
        otfs_cfg = replace(otfs_cfg, M=m, N=n)
    const = make_constellation(otfs_cfg.qam_order)
    hyper = nn.GnnHyper(
        qr_size=const.real_alphabet.size,
        t_iters=train_cfg.t_iters,
        l_rounds=train_cfg.l_rounds,
    )
    det_cfg = DetectorConfig(
        variant=train_cfg.variant,
        t_iters=train_cfg.t_iters,
        l_rounds=train_cfg.l_rounds,
    )
    params = (
        {k: p.copy() for k, p in init_params.items()}
        if init_params is not None
        else nn.init_gnn_params(hyper, train_cfg.seed)
    )
    state = AdamState.init(params)
    rng = np.random.default_rng(train_cfg.seed)
    noise_var = train_cfg.noise_var
    history: list[tuple[int, float, float]] = []
    bad_streak = 0
    for step in range(train_cfg.steps):
        batch = gen_training_batch(otfs_cfg, train_cfg, rng, const)
        tape = ad.Tape(record=True)
        pv = nn.bind_params(tape, params)
        try:
            loss_var = loss_vars(tape, batch, pv, det_cfg, const, noise_var)
            loss_val = float(loss_var.value)
            if not math.isfinite(loss_val):
                raise FloatingPointError("non-finite loss")
            tape.backward(loss_var)
        except (AmpDivergence, FloatingPointError):
            bad_streak += 1
            if bad_streak >= 5:
                raise RuntimeError(
                    f"training aborted at step {step}: persistent non-finite loss"
                )
            history.append((step, float("nan"), float("nan")))
            continue
        bad_streak = 0
        grads = {name: pv[name].grad for name in params}
        grad_norm = math.sqrt(
            sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))
        )
        history.append((step, loss_val, grad_norm))
        if log is not None and step % 10 == 0:
            log(f"step {step}: loss {loss_val:.4f} grad_norm {grad_norm:.4f}")
        adam_update(params, grads, state, train_cfg)
    meta = {
        "variant": train_cfg.variant,
        "otfs": {
            "M": otfs_cfg.M,
            "N": otfs_cfg.N,
            "P": otfs_cfg.P,
            "l_max": otfs_cfg.l_max,
            "k_max": otfs_cfg.k_max,
            "N_o": otfs_cfg.N_o,
            "qam_order": otfs_cfg.qam_order,
        },
        "train": {
            k: v
            for k, v in asdict(train_cfg).items()
            if k not in ("desk_scale",)
        },
        "final_loss": history[-1][1] if history else None,
    }
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "grad_norm"])
            for row in history:
                w.writerow([row[0], repr(row[1]), repr(row[2])])
    if checkpoint_path is not None:
        nn.save_checkpoint(checkpoint_path, hyper, params, meta)
    return params, hyper, history
