"""End-to-end pipelines wiring reconstruction, augmentation, and the RMDN.

Three applications share the machinery:

- Dynamic Parameter Prediction (DPP): given a sequence of virtual targets,
  predict per-stroke (dt, theta) in a learned style.
- Stylisation: reconstruct a plan from a raw trace, discard its dynamics,
  and replace them with DPP predictions.
- Virtual Target Prediction (VTP): a generative model over sparse target
  sequences (with pen bits) that, combined with a DPP model, synthesises
  complete traces from scratch.

This module owns feature encoding, normalisation statistics, priming, and
the autoregressive prediction loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import rmdn, slm
from .augment import AugmentConfig, augment_dataset
from .reconstruct import RawTrace, ReconstructionConfig, reconstruct_plan
from .rmdn import LstmState, ModelCheckpoint, NetworkConfig

DT_MIN, DT_MAX = 0.01, 1.0
THETA_LIMIT = math.pi - 1e-6
PEN_STOP_PROB = 0.95
PEN_STOP_STEPS = 3


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-feature normalisation for network inputs and GMM targets.

    ``normalized`` marks which input columns are standardised (pen bits pass
    through raw); zero-variance features keep std = 1 and are flagged.
    """

    mean: np.ndarray
    std: np.ndarray
    normalized: np.ndarray        # bool mask over input columns
    zero_variance: np.ndarray     # bool mask over input columns
    target_mean: np.ndarray
    target_std: np.ndarray
    target_zero_variance: np.ndarray

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).copy()
        m = self.normalized
        x[..., m] = (x[..., m] - self.mean[m]) / self.std[m]
        return x

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.target_std + self.target_mean


def _safe_stats(values: np.ndarray):
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    zero = std < 1e-12
    std = np.where(zero, 1.0, std)
    return mean, std, zero


def _plan_deltas(plan: slm.ActionPlan) -> np.ndarray:
    return np.diff(plan.positions(), axis=0)


def _plan_dynamics(plan: slm.ActionPlan) -> np.ndarray:
    return np.array([(d.dt, d.theta) for d in plan.dynamics], dtype=np.float64)


def compute_dpp_stats(plans: Sequence[slm.ActionPlan]) -> NormStats:
    """Input layout [dvx, dvy, pen, prev_dt, prev_theta]; targets (dt, theta).

    The "previous dynamics" columns share statistics with the targets — they
    are the same quantities shifted by one stroke.
    """
    dv = np.concatenate([_plan_deltas(p) for p in plans])
    dyn = np.concatenate([_plan_dynamics(p) for p in plans])
    dv_mean, dv_std, dv_zero = _safe_stats(dv)
    dyn_mean, dyn_std, dyn_zero = _safe_stats(dyn)
    return NormStats(
        mean=np.concatenate([dv_mean, [0.0], dyn_mean]),
        std=np.concatenate([dv_std, [1.0], dyn_std]),
        normalized=np.array([True, True, False, True, True]),
        zero_variance=np.concatenate([dv_zero, [False], dyn_zero]),
        target_mean=dyn_mean,
        target_std=dyn_std,
        target_zero_variance=dyn_zero,
    )


def compute_vtp_stats(plans: Sequence[slm.ActionPlan]) -> NormStats:
    """Input layout [dvx, dvy, pen]; targets are the next displacement."""
    dv = np.concatenate([_plan_deltas(p) for p in plans])
    dv_mean, dv_std, dv_zero = _safe_stats(dv)
    return NormStats(
        mean=np.concatenate([dv_mean, [0.0]]),
        std=np.concatenate([dv_std, [1.0]]),
        normalized=np.array([True, True, False]),
        zero_variance=np.concatenate([dv_zero, [False]]),
        target_mean=dv_mean,
        target_std=dv_std,
        target_zero_variance=dv_zero,
    )


# ---------------------------------------------------------------------------
# feature encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrimerExample:
    plan: slm.ActionPlan
    label: str = ""


def _pen_bits(plan: slm.ActionPlan) -> np.ndarray:
    # target i+1's pen flag describes the stroke arriving at it
    return np.array([float(t.pen_up) for t in plan.targets[1:]])


def encode_dpp(plan: slm.ActionPlan, stats: NormStats):
    """Per stroke i: input [dv_i, pen_i, dt_{i-1}, theta_{i-1}], target (dt_i, theta_i).

    Stroke 1 has no previous dynamics; its slots are the dataset mean, i.e.
    exactly zero in normalised space.  Returns normalised (inputs, targets).
    """
    dv = _plan_deltas(plan)
    dyn = _plan_dynamics(plan)
    pen = _pen_bits(plan)
    n = len(dv)
    raw = np.zeros((n, 5))
    raw[:, :2] = dv
    raw[:, 2] = pen
    raw[1:, 3:] = dyn[:-1]
    inputs = stats.normalize_inputs(raw)
    inputs[0, 3:] = 0.0  # dataset mean in normalised space
    return inputs, stats.normalize_targets(dyn)


def decode_dpp_targets(targets: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.denormalize_targets(targets)


def encode_vtp(plan: slm.ActionPlan, stats: NormStats):
    """Next-step prediction over sparse targets: m targets give m-2 pairs."""
    dv = _plan_deltas(plan)
    pen = _pen_bits(plan)
    steps = np.column_stack([dv, pen])
    inputs = stats.normalize_inputs(steps[:-1])
    targets = np.column_stack([stats.normalize_targets(dv[1:]), pen[1:]])
    return inputs, targets


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def default_dpp_network(n_styles: int = 1, **overrides) -> NetworkConfig:
    params = dict(
        input_dim=5,
        layers=2,
        hidden_dim=64,
        num_gaussians=5,
        dropout_keep=0.9,
        seq_len=15 if n_styles <= 1 else 64,
    )
    params.update(overrides)
    return NetworkConfig(**params)


def default_vtp_network(n_styles: int = 1, **overrides) -> NetworkConfig:
    params = dict(
        input_dim=3,
        layers=2,
        hidden_dim=64,
        num_gaussians=5,
        dropout_keep=0.9,
        pen_head=True,
        seq_len=15 if n_styles <= 1 else 64,
    )
    params.update(overrides)
    return NetworkConfig(**params)


def train_dpp(
    examples: Sequence[slm.ActionPlan],
    aug: AugmentConfig,
    net: Optional[NetworkConfig] = None,
    seed: int = 0,
    *,
    epochs: int = 20,
    batch_size: int = 32,
) -> ModelCheckpoint:
    """Augment, compute stats, encode, train the dynamic-parameter model."""
    examples = list(examples)
    if not examples:
        raise ValueError("need at least one training example")
    if net is None:
        net = default_dpp_network(len(examples))
    plans = augment_dataset(examples, aug)
    stats = compute_dpp_stats(plans)
    dataset = [encode_dpp(p, stats) for p in plans]
    return rmdn.train(
        net, dataset, seed, epochs=epochs, batch_size=batch_size,
        model_kind="DPP", norm_stats=stats,
    )


def train_vtp(
    examples: Sequence[slm.ActionPlan],
    aug: AugmentConfig,
    net: Optional[NetworkConfig] = None,
    seed: int = 0,
    *,
    epochs: int = 20,
    batch_size: int = 32,
) -> ModelCheckpoint:
    """As train_dpp, with next-target encoding, pen head, position-only noise."""
    examples = list(examples)
    if not examples:
        raise ValueError("need at least one training example")
    if net is None:
        net = default_vtp_network(len(examples))
    if not net.pen_head:
        raise ValueError("VTP networks require pen_head=True")
    aug = replace(aug, dt_sigma=0.0, theta_sigma=0.0)
    plans = augment_dataset(examples, aug)
    stats = compute_vtp_stats(plans)
    dataset = [encode_vtp(p, stats) for p in plans]
    return rmdn.train(
        net, dataset, seed, epochs=epochs, batch_size=batch_size,
        model_kind="VTP", norm_stats=stats,
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _require_kind(ckpt: ModelCheckpoint, kind: str) -> None:
    if ckpt.model_kind != kind:
        raise ValueError(f"expected a {kind} checkpoint, got {ckpt.model_kind}")


def _prime(ckpt: ModelCheckpoint, primer: Optional[PrimerExample], encode) -> LstmState:
    """Teacher-forced pass over a style exemplar; returns the carried state."""
    state = rmdn.zero_state(ckpt.config)
    if primer is not None:
        inputs, _ = encode(primer.plan, ckpt.norm_stats)
        _, state, _ = rmdn.forward(ckpt.config, ckpt.weights, inputs, state)
    return state


def _step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    # per-step streams keep suffix recomputation (prefix-state cache) exact
    return np.random.default_rng((seed, stream, step))


def predict_dynamics_states(
    ckpt: ModelCheckpoint,
    targets: Sequence[slm.VirtualTarget],
    primer: Optional[PrimerExample] = None,
    seed: int = 0,
    *,
    start: int = 0,
    state: Optional[LstmState] = None,
    prev: Optional[slm.DynamicParams] = None,
):
    """Autoregressive DPP sampling; also returns the per-stroke LSTM states.

    ``start``/``state``/``prev`` resume generation mid-sequence from a cached
    state (the stroke at ``start`` onwards is recomputed); per-stroke RNG
    streams make the resumed suffix bit-identical to a full run.
    """
    _require_kind(ckpt, "DPP")
    targets = list(targets)
    if len(targets) < 2:
        raise ValueError("need at least two virtual targets")
    stats: NormStats = ckpt.norm_stats
    if state is None:
        state = _prime(ckpt, primer, encode_dpp)
    dynamics: list[slm.DynamicParams] = []
    states: list[LstmState] = []
    positions = np.array([t.position for t in targets], dtype=np.float64)
    for i in range(start, len(targets) - 1):
        raw = np.zeros(5)
        raw[:2] = positions[i + 1] - positions[i]
        raw[2] = float(targets[i + 1].pen_up)
        if i > 0:
            p = prev if i == start else dynamics[-1]
            raw[3] = p.dt
            raw[4] = p.theta
        x = stats.normalize_inputs(raw[None, :])
        if i == 0:
            x[0, 3:] = 0.0
        params, state, _ = rmdn.forward(ckpt.config, ckpt.weights, x, state)
        y = rmdn.sample_gmm(params[0], _step_rng(seed, 0, i))
        dt, theta = stats.denormalize_targets(y)
        dynamics.append(
            slm.DynamicParams(
                float(np.clip(dt, DT_MIN, DT_MAX)),
                float(np.clip(theta, -THETA_LIMIT, THETA_LIMIT)),
            )
        )
        states.append(state.copy())
    return dynamics, states


def predict_dynamics(
    ckpt: ModelCheckpoint,
    targets: Sequence[slm.VirtualTarget],
    primer: Optional[PrimerExample] = None,
    seed: int = 0,
) -> list[slm.DynamicParams]:
    dynamics, _ = predict_dynamics_states(ckpt, targets, primer, seed)
    return dynamics


def dpp_nll(
    ckpt: ModelCheckpoint,
    plan: slm.ActionPlan,
    primer: Optional[PrimerExample] = None,
) -> float:
    """Teacher-forced per-step NLL of a plan under a DPP model."""
    _require_kind(ckpt, "DPP")
    inputs, targets = encode_dpp(plan, ckpt.norm_stats)
    state = _prime(ckpt, primer, encode_dpp)
    params, _, _ = rmdn.forward(ckpt.config, ckpt.weights, inputs, state)
    return rmdn.nll_loss(params, targets) / len(targets)


def vtp_nll(
    ckpt: ModelCheckpoint,
    plan: slm.ActionPlan,
    primer: Optional[PrimerExample] = None,
) -> float:
    _require_kind(ckpt, "VTP")
    inputs, targets = encode_vtp(plan, ckpt.norm_stats)
    state = _prime(ckpt, primer, encode_vtp)
    params, _, _ = rmdn.forward(ckpt.config, ckpt.weights, inputs, state)
    return rmdn.nll_loss(params, targets) / len(targets)


# ---------------------------------------------------------------------------
# stylisation
# ---------------------------------------------------------------------------


@dataclass
class StylizeResult:
    trajectory: slm.Trajectory
    plan: slm.ActionPlan                 # targets + predicted dynamics
    reconstructed: slm.ActionPlan        # intermediate reconstruction


def stylize(
    ckpt: ModelCheckpoint,
    trace: RawTrace,
    cfg: Optional[ReconstructionConfig] = None,
    primer: Optional[PrimerExample] = None,
    seed: int = 0,
) -> StylizeResult:
    """Reconstruct, discard the recovered dynamics, re-predict in the model's
    style, and synthesise the result with default stroke shapes."""
    if cfg is None:
        cfg = ReconstructionConfig()
    recon, _ = reconstruct_plan(trace, cfg)
    dynamics = predict_dynamics(ckpt, recon.targets, primer, seed)
    styled = slm.ActionPlan(
        recon.targets, tuple(dynamics),
        tuple(slm.StrokeShape() for _ in dynamics),
    )
    return StylizeResult(slm.integrate_trajectory(styled), styled, recon)


# ---------------------------------------------------------------------------
# fully generative traces
# ---------------------------------------------------------------------------


def sample_targets(
    vtp: ModelCheckpoint,
    primer: Optional[PrimerExample] = None,
    seed: int = 0,
    max_targets: int = 64,
) -> list[slm.VirtualTarget]:
    """Sample a sparse virtual-target sequence from a VTP model.

    Starts at the origin; stops at ``max_targets`` or after the pen-up
    probability exceeds 0.95 for 3 consecutive steps.
    """
    _require_kind(vtp, "VTP")
    if max_targets < 2:
        raise ValueError("max_targets must be >= 2")
    stats: NormStats = vtp.norm_stats
    state = _prime(vtp, primer, encode_vtp)
    pos = np.zeros(2)
    targets = [slm.VirtualTarget((0.0, 0.0))]
    x = stats.normalize_inputs(np.zeros((1, 3)))  # start token: mean step
    high_pen = 0
    step = 0
    while len(targets) < max_targets:
        params, state, _ = rmdn.forward(vtp.config, vtp.weights, x, state)
        dv_norm, pen_bit = rmdn.sample_gmm(params[0], _step_rng(seed, 1, step))
        dv = stats.denormalize_targets(dv_norm)
        pos = pos + dv
        targets.append(slm.VirtualTarget((float(pos[0]), float(pos[1])), pen_bit))
        high_pen = high_pen + 1 if params[0].pen > PEN_STOP_PROB else 0
        if high_pen >= PEN_STOP_STEPS and len(targets) >= 2:
            break
        x = stats.normalize_inputs(
            np.array([[dv[0], dv[1], float(pen_bit)]])
        )
        step += 1
    return targets


def generate_tag(
    vtp: ModelCheckpoint,
    dpp: ModelCheckpoint,
    vtp_primer: Optional[PrimerExample] = None,
    dpp_primer: Optional[PrimerExample] = None,
    seed: int = 0,
    max_targets: int = 64,
):
    """Sample targets with the VTP model, dress them with DPP dynamics,
    and integrate the trajectory.  Returns (trajectory, plan)."""
    _require_kind(vtp, "VTP")
    _require_kind(dpp, "DPP")
    targets = sample_targets(vtp, vtp_primer, seed, max_targets)
    dynamics = predict_dynamics(dpp, targets, dpp_primer, seed)
    plan = slm.ActionPlan(
        tuple(targets), tuple(dynamics),
        tuple(slm.StrokeShape() for _ in dynamics),
    )
    return slm.integrate_trajectory(plan), plan
