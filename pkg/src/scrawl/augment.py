"""Dataset expansion by random perturbation of action plans.

Tiny corpora (down to a single example) are blown up into training sets by
jittering virtual-target positions and the per-stroke dynamic parameters.
Position noise scales with the plan extent so the same config works at any
coordinate scale; structure (stroke count, pen states, stroke shapes) is
never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import slm


@dataclass(frozen=True)
class AugmentConfig:
    n_p: int = 0                 # perturbed variations per input sample
    pos_sigma: float = 0.02      # target noise, fraction of plan extent
    dt_sigma: float = 0.05       # additive time-offset noise
    theta_sigma: float = 0.05    # additive bend noise, radians
    seed: int = 0
    dt_min: float = 0.01         # clamp range for perturbed dt
    dt_max: float = 1.0

    def __post_init__(self):
        if self.n_p < 0:
            raise ValueError("n_p must be non-negative")
        if min(self.pos_sigma, self.dt_sigma, self.theta_sigma) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")


def perturb_plan(
    plan: slm.ActionPlan, cfg: AugmentConfig, rng: np.random.Generator
) -> slm.ActionPlan:
    """One random variation of a plan; stroke count and pen states unchanged."""
    positions = plan.positions()
    extent = plan.extent()
    positions = positions + rng.normal(0.0, cfg.pos_sigma * extent, positions.shape)

    theta_limit = math.pi - 1e-9
    dynamics = []
    for d in plan.dynamics:
        dt = float(np.clip(d.dt + rng.normal(0.0, cfg.dt_sigma), cfg.dt_min, cfg.dt_max))
        theta = float(
            np.clip(d.theta + rng.normal(0.0, cfg.theta_sigma), -theta_limit, theta_limit)
        )
        dynamics.append((dt, theta))

    return slm.make_plan(
        positions, dynamics, shapes=plan.shapes, pen_up=[t.pen_up for t in plan.targets]
    )


def augment_dataset(samples, cfg: AugmentConfig) -> list[slm.ActionPlan]:
    """Originals first, then cfg.n_p perturbations per original.

    Each source sample gets its own RNG stream keyed by (seed, index), so the
    output is reproducible even if samples are processed in parallel.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample to augment")
    out = list(samples)
    for idx, plan in enumerate(samples):
        rng = np.random.default_rng((cfg.seed, idx))
        for _ in range(cfg.n_p):
            out.append(perturb_plan(plan, cfg, rng))
    return out
