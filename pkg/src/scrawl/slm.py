"""Sigma-Lognormal trajectory model.

A pen trajectory is represented as a sparse sequence of virtual targets
joined by ballistic strokes. Each stroke has a lognormal speed profile and
bends along a circular arc; overlapping strokes in time produce the smooth
curves characteristic of fluent handwriting.

The heavy lifting happens in :func:`integrate_trajectory`, which uses the
closed-form antiderivative of the lognormal-weighted arc rotation, so sampled
positions are exact up to floating point regardless of the sampling step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

DEFAULT_SKEW = 0.1
DEFAULT_DURATION = 0.3
DEFAULT_SAMPLE_STEP = 1.0 / 240.0


@dataclass(frozen=True)
class VirtualTarget:
    """Aiming point of one ballistic sub-movement."""

    position: tuple[float, float]
    pen_up: bool = False  # the stroke *arriving* here is not drawn

    def __post_init__(self):
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("virtual target position must be finite")


@dataclass(frozen=True)
class DynamicParams:
    """Per-stroke style pair: time-offset fraction and arc half-angle."""

    dt: float
    theta: float

    def __post_init__(self):
        if not abs(self.theta) < math.pi:
            raise ValueError("arc half-angle must satisfy |theta| < pi")


@dataclass(frozen=True)
class StrokeShape:
    """Lognormal profile shape: total duration and skewness."""

    duration: float = DEFAULT_DURATION
    skew: float = DEFAULT_SKEW

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("stroke duration must be positive")
        if not 0 < self.skew < 1:
            raise ValueError("stroke skew must lie in (0, 1)")


@dataclass(frozen=True)
class StrokeLognormal:
    """Low-level lognormal stroke parameters.

    ``t0`` is the activation time, ``t1 = t0 + exp(mu - 3 sigma)`` the onset
    (start of the effective support), ``theta`` the arc half-angle.
    """

    t0: float
    mu: float
    sigma: float
    theta: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def t1(self) -> float:
        return self.t0 + math.exp(self.mu - 3.0 * self.sigma)

    @property
    def support_end(self) -> float:
        # mass beyond exp(mu + 6 sigma) is below 1e-9
        return self.t0 + math.exp(self.mu + 6.0 * self.sigma)

    @property
    def duration(self) -> float:
        return math.exp(self.mu + 3.0 * self.sigma) - math.exp(self.mu - 3.0 * self.sigma)

    def shifted(self, offset: float) -> "StrokeLognormal":
        return replace(self, t0=self.t0 + offset)


@dataclass(frozen=True)
class ActionPlan:
    """Bi-level trace representation: targets plus per-stroke dynamics."""

    targets: tuple[VirtualTarget, ...]
    dynamics: tuple[DynamicParams, ...]
    shapes: tuple[StrokeShape, ...]

    def __post_init__(self):
        m = len(self.targets)
        if m < 2:
            raise ValueError("an action plan needs at least two targets")
        if len(self.dynamics) != m - 1 or len(self.shapes) != m - 1:
            raise ValueError("dynamics and shapes must have one entry per stroke (m - 1)")

    @property
    def num_strokes(self) -> int:
        return len(self.targets) - 1

    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets], dtype=float)

    def extent(self) -> float:
        pos = self.positions()
        span = pos.max(axis=0) - pos.min(axis=0)
        return float(span.max())


def make_plan(positions, dynamics, shapes=None, pen_up=None) -> ActionPlan:
    """Convenience constructor from plain sequences."""
    targets = tuple(
        VirtualTarget(tuple(map(float, p)), bool(pen_up[i]) if pen_up is not None else False)
        for i, p in enumerate(positions)
    )
    dyn = tuple(DynamicParams(float(d), float(th)) for d, th in dynamics)
    if shapes is None:
        shapes = tuple(StrokeShape() for _ in dyn)
    else:
        shapes = tuple(shapes)
    return ActionPlan(targets, dyn, shapes)


@dataclass(frozen=True)
class Trajectory:
    """Densely sampled timed trace."""

    t: np.ndarray          # (n,) strictly increasing, uniform step
    points: np.ndarray     # (n, 2)
    speed: np.ndarray      # (n,) instantaneous speed
    drawn: np.ndarray      # (n,) bool, False inside pen-up spans
    dt: float

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def extent(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(span.max())

    def position_at(self, time: float) -> np.ndarray:
        """Linear interpolation of the sampled positions."""
        x = np.interp(time, self.t, self.points[:, 0])
        y = np.interp(time, self.t, self.points[:, 1])
        return np.array([x, y])


def lognormal_profile(t, s: StrokeLognormal):
    """Lognormal speed magnitude of one stroke; 0 at or before activation."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = t > s.t0
    if np.any(m):
        dt = t[m] - s.t0
        z = (np.log(dt) - s.mu) / s.sigma
        out[m] = np.exp(-0.5 * z * z) / (s.sigma * math.sqrt(2.0 * math.pi) * dt)
    return out if out.shape else float(out)


def lognormal_cdf(t, s: StrokeLognormal):
    """Cumulative mass of the stroke profile up to time t."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = t > s.t0
    if np.any(m):
        z = (np.log(t[m] - s.t0) - s.mu) / (s.sigma * math.sqrt(2.0))
        out[m] = 0.5 * (1.0 + erf(z))
    return out if out.shape else float(out)


def params_from_explicit(
    shape: StrokeShape,
    dt: float,
    prev_onset: float = 0.0,
    prev_duration: float = 0.0,
    theta: float = 0.0,
) -> StrokeLognormal:
    """Build lognormal parameters from duration/skew and the time offset.

    The onset chains from the previous stroke: t1 = prev_onset +
    prev_duration * dt (0 for the first stroke).
    """
    if prev_duration < 0:
        raise ValueError("previous duration cannot be negative")
    sigma = math.sqrt(-math.log(1.0 - shape.skew))
    mu = 3.0 * sigma - math.log((math.exp(6.0 * sigma) - 1.0) / shape.duration)
    t1 = prev_onset + prev_duration * dt
    t0 = t1 - math.exp(mu - 3.0 * sigma)
    return StrokeLognormal(t0=t0, mu=mu, sigma=sigma, theta=theta)


def plan_strokes(plan: ActionPlan) -> list[StrokeLognormal]:
    """Chain the explicit parameterisation over all strokes of a plan."""
    strokes: list[StrokeLognormal] = []
    prev_onset = 0.0
    prev_duration = 0.0
    for dyn, shape in zip(plan.dynamics, plan.shapes):
        s = params_from_explicit(shape, dyn.dt, prev_onset, prev_duration, theta=dyn.theta)
        strokes.append(s)
        prev_onset = s.t1
        prev_duration = shape.duration
    return strokes


def stroke_angle(t, s: StrokeLognormal):
    """Running deviation angle from the chord, ramping from -theta to +theta."""
    return s.theta * (2.0 * lognormal_cdf(t, s) - 1.0)


def arc_scale(theta: float) -> float:
    """Perimeter/chord ratio of a circular arc with half-angle theta."""
    if abs(math.sin(theta)) > 0.0:
        return theta / math.sin(theta)
    return 1.0


def _stroke_displacement(w, theta: float):
    """Exact integral of the rotated lognormal weight as a complex factor.

    ``w`` is the cumulative lognormal mass in [0, 1]. The factor multiplies
    the (complex) chord vector; it reaches exactly 1 at w = 1.
    """
    w = np.asarray(w, dtype=float)
    if theta == 0.0:
        return w.astype(complex)
    return arc_scale(theta) * (np.exp(1j * theta * (2.0 * w - 1.0)) - np.exp(-1j * theta)) / (2j * theta)


def integrate_strokes(
    start: np.ndarray,
    strokes: list[StrokeLognormal],
    deltas: np.ndarray,
    dt: float = DEFAULT_SAMPLE_STEP,
    pen_up: np.ndarray | None = None,
    tail_margin: float = 0.0,
) -> Trajectory:
    """Sample the superimposed-stroke trajectory on a uniform time grid.

    ``deltas[i]`` is the chord vector of stroke i (next target minus
    previous). Positions come from the closed-form antiderivative, so the
    result is independent of ``dt`` up to floating point.
    """
    if dt <= 0:
        raise ValueError("sampling step must be positive")
    if len(strokes) == 0:
        raise ValueError("at least one stroke required")
    t_start = min(s.t0 for s in strokes)
    t_end = max(s.support_end for s in strokes) + tail_margin
    n = int(math.ceil((t_end - t_start) / dt)) + 1
    t = t_start + dt * np.arange(n)

    dz = deltas[:, 0] + 1j * deltas[:, 1]
    pos = np.full(n, complex(start[0], start[1]))
    vel = np.zeros(n, dtype=complex)
    weight = np.zeros((len(strokes), n))
    for i, s in enumerate(strokes):
        w = lognormal_cdf(t, s)
        weight[i] = lognormal_profile(t, s)
        pos += dz[i] * _stroke_displacement(w, s.theta)
        phi = s.theta * (2.0 * w - 1.0)
        vel += dz[i] * arc_scale(s.theta) * weight[i] * np.exp(1j * phi)

    if pen_up is None:
        drawn = np.ones(n, dtype=bool)
    else:
        active = weight.argmax(axis=0)
        active[weight.max(axis=0) <= 0.0] = 0
        drawn = ~np.asarray(pen_up, dtype=bool)[active]

    return Trajectory(
        t=t,
        points=np.column_stack([pos.real, pos.imag]),
        speed=np.abs(vel),
        drawn=drawn,
        dt=dt,
    )


def integrate_trajectory(plan: ActionPlan, dt: float = DEFAULT_SAMPLE_STEP, tail_margin: float = 0.0) -> Trajectory:
    """Synthesise the full trajectory of an action plan."""
    pos = plan.positions()
    deltas = np.diff(pos, axis=0)
    strokes = plan_strokes(plan)
    pen_up = np.array([t.pen_up for t in plan.targets[1:]], dtype=bool)
    return integrate_strokes(pos[0], strokes, deltas, dt=dt, pen_up=pen_up, tail_margin=tail_margin)


def speed_profile(traj: Trajectory) -> np.ndarray:
    """Finite-difference speed magnitudes; one entry per sample interval."""
    if len(traj) < 2:
        raise ValueError("need at least two samples")
    steps = np.diff(traj.points, axis=0)
    return np.hypot(steps[:, 0], steps[:, 1]) / traj.dt


def lognormal_intersection(a: StrokeLognormal, b: StrokeLognormal, tol: float = 1e-12) -> float:
    """Earliest time at which stroke b's profile overtakes stroke a's.

    Falls back to the midpoint of the support gap when the strokes do not
    overlap in time.
    """
    lo = max(a.t0, b.t0)
    hi = min(a.support_end, b.support_end)
    if hi <= lo:
        # sequential strokes: hand over in the dead zone between them
        return 0.5 * (a.support_end + b.t0)
    grid = np.linspace(lo, hi, 512)
    diff = lognormal_profile(grid, b) - lognormal_profile(grid, a)
    pos = lognormal_profile(grid, a) > 0.0
    sign = (diff >= 0.0) & pos
    idx = np.argmax(sign)
    if not sign[idx]:
        return 0.5 * (a.support_end + b.t0)
    if idx == 0:
        return float(grid[0])
    lo_t, hi_t = float(grid[idx - 1]), float(grid[idx])
    for _ in range(200):
        mid = 0.5 * (lo_t + hi_t)
        if lognormal_profile(mid, b) - lognormal_profile(mid, a) >= 0.0:
            hi_t = mid
        else:
            lo_t = mid
        if hi_t - lo_t < tol:
            break
    return 0.5 * (lo_t + hi_t)
