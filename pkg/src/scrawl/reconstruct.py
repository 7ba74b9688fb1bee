"""Reconstruction of action plans from digitised traces.

The input timing is deliberately discarded: everything below works on the
geometry only, so the result is independent of the device sampling rate.
The pipeline is: uniform arc-length resampling, key-point detection on the
smoothed turning-angle signal, circle-arc fits for the per-stroke bend,
EM-based corner-sharpness estimation for the time-overlap parameters, and an
iterative adjustment of the virtual targets against the synthesised trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import slm


@dataclass(frozen=True)
class ReconstructionConfig:
    resample_divisor: float = 200.0
    hanning_window: int = 40
    dt_min: float = 0.01
    dt_max: float = 1.0
    mse_rel_threshold: float = 0.002
    max_iters: int = 32
    sigma_ref: float = 20.0   # sample spread mapped to sharpness 0
    sigma_min: float = 2.0    # sample spread mapped to sharpness 1
    first_stroke_dt: float = 1.0
    sample_step: float = slm.DEFAULT_SAMPLE_STEP
    # key-point detection: candidate corners are local maxima of the lightly
    # smoothed curvature; a changepoint fit on the heading profile then keeps
    # the subset worth a per-corner penalty
    peak_prominence: float = 1e-4
    detect_smooth_window: int = 5    # curvature smoothing for candidate peaks
    corner_merge_dist: int = 8       # candidates closer than this collapse into one
    corner_guard: int = 12           # samples excluded around a corner in line fits
    corner_penalty: float = 0.25     # heading-fit cost (rad^2 * samples) per corner
    # dynamic-parameter refinement: coordinate descent over the interior dt
    # and all theta values against the trace deviation of the re-adjusted plan
    refine_sweeps: int = 1
    refine_iters: int = 8            # adjustment iterations per candidate
    refine_step: float = 2.0 / 240.0  # coarser synthesis step while refining

    def __post_init__(self):
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")
        if self.sigma_min <= 0 or self.sigma_ref <= self.sigma_min:
            raise ValueError("need sigma_ref > sigma_min > 0")


@dataclass(frozen=True)
class RawTrace:
    """Ordered planar points, optionally split by pen lifts."""

    points: np.ndarray
    pen_up_breaks: frozenset[int] = frozenset()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a trace needs at least two planar points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trace coordinates must be finite")

    def extent(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(span.max())

    def segments(self) -> list[np.ndarray]:
        """Split into drawn spans at pen-up breaks."""
        if not self.pen_up_breaks:
            return [self.points]
        cuts = sorted(i for i in self.pen_up_breaks if 0 < i < len(self.points))
        out, start = [], 0
        for c in cuts:
            if c - start >= 2:
                out.append(self.points[start:c])
            start = c
        if len(self.points) - start >= 2:
            out.append(self.points[start:])
        return out or [self.points]


@dataclass
class KeyPointSet:
    indices: np.ndarray          # into the resampled trace, first=0, last=n-1
    positions: np.ndarray
    sharpness: np.ndarray | None = None   # per interior key point, in [0, 1]
    em_converged: bool = True

    @property
    def m(self) -> int:
        return len(self.indices)


@dataclass
class AdjustReport:
    iterations: int
    mse: float
    converged: bool
    diverged: bool = False


def resample_uniform(trace: RawTrace, cfg: ReconstructionConfig = ReconstructionConfig()) -> RawTrace:
    """Arc-length resampling at extent/divisor spacing, endpoints preserved."""
    extent = trace.extent()
    if extent <= 0:
        raise ValueError("zero extent: all trace points coincide")
    spacing = extent / cfg.resample_divisor
    pts = trace.points
    seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seglen)])
    total = arclen[-1]
    if total <= 0:
        raise ValueError("zero extent: degenerate trace")
    s_new = np.arange(0.0, total, spacing)
    if total - s_new[-1] > 1e-9 * total:
        s_new = np.append(s_new, total)
    else:
        s_new[-1] = total
    x = np.interp(s_new, arclen, pts[:, 0])
    y = np.interp(s_new, arclen, pts[:, 1])
    breaks = frozenset(
        int(np.argmin(np.abs(s_new - arclen[min(b, len(arclen) - 1)])))
        for b in trace.pen_up_breaks
    )
    return RawTrace(np.column_stack([x, y]), breaks)


def _hanning_smooth(s: np.ndarray, width: int) -> np.ndarray:
    if width < 3 or len(s) < 3:
        return s
    width = min(width, 2 * len(s) - 1)
    win = np.hanning(width)
    win /= win.sum()
    pad = width // 2
    padded = np.pad(s, pad, mode="reflect")
    sm = np.convolve(padded, win, mode="same")
    return sm[pad : pad + len(s)]


def turning_angle_signal(
    trace: RawTrace, cfg: ReconstructionConfig = ReconstructionConfig(), smooth: bool = True
) -> np.ndarray:
    """1 - cos of the turning angle at each interior sample.

    With ``smooth`` the raw signal is convolved with a normalised Hanning
    window (reflective padding). Entry k corresponds to trace sample k + 1.
    """
    pts = trace.points
    if len(pts) < 3:
        return np.zeros(max(len(pts) - 2, 0))
    d = np.diff(pts, axis=0)
    a = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(a)
    turn = np.mod(turn + math.pi, 2 * math.pi) - math.pi
    s = 1.0 - np.cos(turn)
    if smooth:
        s = _hanning_smooth(s, cfg.hanning_window)
    return s


def turning_direction(trace: RawTrace) -> np.ndarray:
    """Signed turning angle per interior sample (for arc orientation)."""
    d = np.diff(trace.points, axis=0)
    a = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(a)
    return np.mod(turn + math.pi, 2 * math.pi) - math.pi


def fit_circle(segment: np.ndarray) -> tuple[float, float, float] | None:
    """Kasa algebraic circle fit: minimise |p - c|^2 - r^2 linearly in (c, r).

    Returns (cx, cy, r), or None when the system is degenerate.
    """
    seg = np.asarray(segment, dtype=float)
    if len(seg) < 3:
        return None
    A = np.column_stack([2.0 * seg[:, 0], 2.0 * seg[:, 1], np.ones(len(seg))])
    b = (seg**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy, c = sol
    r2 = c + cx * cx + cy * cy
    if not np.isfinite(r2) or r2 <= 0:
        return None
    return float(cx), float(cy), math.sqrt(r2)


def _circle_residuals(segment: np.ndarray) -> np.ndarray:
    """Absolute radial deviation of each point from the fitted circle.

    Falls back to point-line distances when the fit degenerates (collinear
    input has an infinite best radius).
    """
    seg = np.asarray(segment, dtype=float)
    fit = fit_circle(seg)
    if fit is None:
        d = seg[-1] - seg[0]
        n = np.array([-d[1], d[0]])
        nn = np.linalg.norm(n)
        if nn == 0:
            return np.zeros(len(seg))
        return np.abs((seg - seg[0]) @ (n / nn))
    cx, cy, r = fit
    return np.abs(np.hypot(seg[:, 0] - cx, seg[:, 1] - cy) - r)


def _densify_polyline(pts: np.ndarray, factor: int = 8) -> np.ndarray:
    """Linear upsampling along arc length, so nearest-neighbour distances to
    the polyline are not quantised by its sample spacing."""
    seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    if s[-1] <= 0:
        return pts
    s_new = np.linspace(0.0, s[-1], factor * len(pts))
    return np.column_stack([np.interp(s_new, s, pts[:, 0]), np.interp(s_new, s, pts[:, 1])])


def _plan_deviation(points: np.ndarray, plan: slm.ActionPlan, cfg: ReconstructionConfig) -> float:
    """Mean distance from trace samples to the plan's synthesised polyline."""
    from scipy.spatial import cKDTree

    traj = slm.integrate_trajectory(plan, dt=cfg.sample_step)
    dists, _ = cKDTree(_densify_polyline(traj.points)).query(points)
    return float(dists.mean())


def _line_fit_sse(phi: np.ndarray, a: int, b: int) -> float:
    """Residual sum of squares of a least-squares line through phi[a..b]."""
    n = b - a + 1
    if n < 3:
        return 0.0
    x = np.arange(n, dtype=float)
    y = phi[a : b + 1]
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    sxy = ((x - xm) * (y - ym)).sum()
    syy = ((y - ym) ** 2).sum()
    if sxx <= 0:
        return float(syy)
    return float(syy - sxy * sxy / sxx)


def _select_corners(
    phi: np.ndarray, candidates: list[int], cfg: ReconstructionConfig
) -> list[int]:
    """Changepoint selection of corners on the unwrapped heading profile.

    Between consecutive corners a stroke has constant curvature, so the
    heading is linear in arc length; a corner is a (rounded) jump.  Dynamic
    programming picks the candidate subset minimising total line-fit residual
    plus a fixed penalty per kept corner, with a guard band around each
    corner excluded from the fits to ignore the rounding.
    """
    g = cfg.corner_guard
    lam = cfg.corner_penalty
    nodes = [0, *candidates, len(phi) - 1]
    k = len(nodes)
    cost = np.full(k, np.inf)
    prev = np.zeros(k, dtype=int)
    cost[0] = 0.0
    for j in range(1, k):
        penalty = lam if j < k - 1 else 0.0
        for i in range(j):
            a = nodes[i] + (g if i > 0 else 0)
            b = nodes[j] - (g if j < k - 1 else 0)
            fit = _line_fit_sse(phi, a, b) if b - a >= 2 else 0.0
            c = cost[i] + fit + penalty
            if c < cost[j]:
                cost[j] = c
                prev[j] = i
    kept = []
    j = k - 1
    while j > 0:
        i = prev[j]
        if 0 < i < k - 1:
            kept.append(nodes[i])
        j = i
    return sorted(kept)


def detect_key_points(
    s: np.ndarray, trace: RawTrace, cfg: ReconstructionConfig = ReconstructionConfig()
) -> KeyPointSet:
    """Endpoints plus the interior corners of the trace.

    Candidate corners are local maxima of the lightly smoothed curvature
    magnitude (near-duplicates collapse to the stronger peak).  The final
    subset is chosen by :func:`_select_corners`, which keeps a candidate only
    when a heading discontinuity there pays for itself; this rejects the
    curvature ripple that stroke blending produces along wide arcs, which
    plain thresholding cannot separate from genuine shallow corners.
    """
    from scipy.signal import find_peaks

    n = len(trace.points)
    if n < 5 or len(s) < 3:
        indices = np.array([0, n - 1])
        return KeyPointSet(indices=indices, positions=trace.points[indices])
    turn = turning_direction(trace)
    smooth = np.abs(_hanning_smooth(turn, cfg.detect_smooth_window))
    peaks, _ = find_peaks(smooth, prominence=cfg.peak_prominence)
    merged: list[int] = []
    for q in peaks:
        if merged and q - merged[-1] <= cfg.corner_merge_dist:
            if smooth[q] > smooth[merged[-1]]:
                merged[-1] = int(q)
        else:
            merged.append(int(q))

    d = np.diff(trace.points, axis=0)
    phi = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    corners = _select_corners(phi, [q + 1 for q in merged], cfg)
    indices = np.unique(np.array([0, *corners, n - 1], dtype=int))
    return KeyPointSet(indices=indices, positions=trace.points[indices])


def fit_circle_arc(segment: np.ndarray, degenerate_ratio: float = 1e4) -> float:
    """Signed arc half-angle of a trace segment.

    Half the angle swept around the least-squares circle centre, signed by
    turning direction. Near-collinear segments (huge fit radius) and segments
    with fewer than three points give 0.
    """
    seg = np.asarray(segment, dtype=float)
    if len(seg) < 3:
        return 0.0
    span = seg.max(axis=0) - seg.min(axis=0)
    extent = float(span.max())
    if extent <= 0:
        return 0.0
    # exactly/near collinear input makes the algebraic fit meaningless
    centred = seg - seg.mean(axis=0)
    _, sv, _ = np.linalg.svd(centred, full_matrices=False)
    if sv[-1] < 1e-7 * extent:
        return 0.0
    fit = fit_circle(seg)
    if fit is None:
        return 0.0
    cx, cy, r = fit
    if r > degenerate_ratio * extent:
        return 0.0
    ang = np.unwrap(np.arctan2(seg[:, 1] - cy, seg[:, 0] - cx))
    sweep = ang[-1] - ang[0]
    theta = 0.5 * sweep
    limit = math.pi - 1e-6
    return float(np.clip(theta, -limit, limit))


def estimate_sharpness(
    s: np.ndarray,
    kps: KeyPointSet,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    max_em_iters: int = 100,
) -> KeyPointSet:
    """Per-corner sharpness via a weighted 1-D Gaussian mixture fit.

    The turning signal is treated as a density over sample index; one
    component is pinned near each interior key point and its fitted spread
    maps to sharpness through a clamped log ratio.
    """
    interior = kps.indices[1:-1]
    if len(interior) == 0:
        kps.sharpness = np.zeros(0)
        return kps
    x = np.arange(len(s), dtype=float)
    w = np.clip(np.asarray(s, dtype=float), 0.0, None)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()

    k = len(interior)
    init_means = interior.astype(float) - 1.0  # trace index -> signal index
    means = init_means.copy()
    sigmas = np.full(k, cfg.hanning_window / 4.0)
    alphas = np.full(k, 1.0 / k)
    window = float(cfg.hanning_window)
    # each component only sees the signal mass near its own key point, so a
    # neighbouring corner or a long arc plateau cannot inflate its spread
    local = np.abs(x[None, :] - init_means[:, None]) <= window

    converged = False
    for _ in range(max_em_iters):
        # E step
        z = (x[None, :] - means[:, None]) / sigmas[:, None]
        log_pdf = -0.5 * z * z - np.log(sigmas[:, None]) + np.log(alphas[:, None])
        log_pdf -= log_pdf.max(axis=0, keepdims=True)
        resp = np.exp(log_pdf) * local
        resp /= np.maximum(resp.sum(axis=0, keepdims=True), 1e-300)
        # M step (weighted by the signal mass)
        gamma = resp * w[None, :]
        mass = gamma.sum(axis=1)
        mass = np.maximum(mass, 1e-300)
        new_alphas = mass / mass.sum()
        new_means = (gamma @ x) / mass
        new_means = np.clip(new_means, init_means - window, init_means + window)
        var = (gamma * (x[None, :] - new_means[:, None]) ** 2).sum(axis=1) / mass
        new_sigmas = np.sqrt(np.maximum(var, 1e-4))
        shift = max(
            np.abs(new_means - means).max(),
            np.abs(new_sigmas - sigmas).max(),
            np.abs(new_alphas - alphas).max(),
        )
        means, sigmas, alphas = new_means, new_sigmas, new_alphas
        if shift < 1e-8:
            converged = True
            break

    # the Hanning smoothing adds its own spread to every peak; remove it so
    # the sigma_ref/sigma_min scales describe the underlying corner
    win = np.hanning(cfg.hanning_window)
    win = win / win.sum()
    wx = np.arange(cfg.hanning_window)
    wmu = float(win @ wx)
    win_var = float(win @ (wx - wmu) ** 2)
    spread = np.sqrt(np.maximum(sigmas**2 - win_var, 0.01))

    denom = math.log(cfg.sigma_ref / cfg.sigma_min)
    lam = np.log(cfg.sigma_ref / spread) / denom
    kps.sharpness = np.clip(lam, 0.0, 1.0)
    kps.em_converged = converged
    return kps


def map_sharpness_to_dt(lam: float, cfg: ReconstructionConfig = ReconstructionConfig()) -> float:
    """Linear map from corner sharpness to the stroke time-offset fraction."""
    return cfg.dt_min + (cfg.dt_max - cfg.dt_min) * float(lam)


def output_key_times(plan: slm.ActionPlan) -> np.ndarray:
    """Times at which stroke handovers happen in the synthesised trajectory.

    First and last entries are the trajectory start and end; interior entries
    are the lognormal intersection times of consecutive strokes.
    """
    strokes = slm.plan_strokes(plan)
    times = [min(s.t0 for s in strokes)]
    for a, b in zip(strokes[:-1], strokes[1:]):
        times.append(slm.lognormal_intersection(a, b))
    times.append(max(s.support_end for s in strokes))
    return np.array(times)


def adjust_targets(
    trace: RawTrace,
    kps: KeyPointSet,
    plan: slm.ActionPlan,
    cfg: ReconstructionConfig = ReconstructionConfig(),
) -> tuple[slm.ActionPlan, AdjustReport]:
    """Iteratively nudge virtual targets until the synthesised key points
    land on the input key points."""
    anchors = trace.points[kps.indices]
    extent = trace.extent()
    threshold = (cfg.mse_rel_threshold * extent) ** 2

    targets = plan.positions().copy()
    pen_up = [t.pen_up for t in plan.targets]
    best_targets = targets.copy()
    best_mse = math.inf
    grow_streak = 0
    prev_mse = math.inf
    iterations = 0
    converged = False
    diverged = False

    for it in range(1, cfg.max_iters + 1):
        iterations = it
        cur = slm.make_plan(targets, [(d.dt, d.theta) for d in plan.dynamics], plan.shapes, pen_up)
        traj = slm.integrate_trajectory(cur, dt=cfg.sample_step)
        times = output_key_times(cur)
        synth = np.array([traj.position_at(t) for t in times])
        err = anchors - synth
        mse = float(np.mean(np.sum(err**2, axis=1)))
        if mse < best_mse:
            best_mse = mse
            best_targets = targets.copy()
        if mse < threshold:
            converged = True
            break
        if mse > prev_mse:
            grow_streak += 1
            if grow_streak >= 3:
                diverged = True
                break
        else:
            grow_streak = 0
        prev_mse = mse
        targets = targets + err

    final = best_targets if diverged else targets
    out = slm.make_plan(final, [(d.dt, d.theta) for d in plan.dynamics], plan.shapes, pen_up)
    return out, AdjustReport(iterations=iterations, mse=best_mse, converged=converged, diverged=diverged)


def _segment_dynamics(
    trace: RawTrace, sig: np.ndarray, kps: KeyPointSet, cfg: ReconstructionConfig
) -> list[tuple[float, float]]:
    """Per-stroke (dt, theta) from arc fits and corner sharpness.

    The circle fit for each stroke trims the corner-adjacent fifths of the
    segment (corner rounding blends neighbouring arcs into them) and rescales
    the fitted sweep back to the full segment length.
    """
    kps = estimate_sharpness(sig, kps, cfg)

    def arclen(seg):
        return float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())

    last = kps.indices[-1]
    thetas = []
    for a, b in zip(kps.indices[:-1], kps.indices[1:]):
        trim = (b - a) // 5
        ta = a + (trim if a != 0 else 0)
        tb = b - (trim if b != last else 0)
        if tb - ta >= 3:
            inner = trace.points[ta : tb + 1]
            scale = arclen(trace.points[a : b + 1]) / max(arclen(inner), 1e-300)
            theta = float(np.clip(fit_circle_arc(inner) * scale, -math.pi + 1e-6, math.pi - 1e-6))
        else:
            theta = fit_circle_arc(trace.points[a : b + 1])
        thetas.append(theta)
    dts = [cfg.first_stroke_dt]
    for lam in kps.sharpness:
        dts.append(map_sharpness_to_dt(lam, cfg))
    return list(zip(dts, thetas))


def refine_dynamics(
    trace: RawTrace,
    kps: KeyPointSet,
    dynamics: list[tuple[float, float]],
    cfg: ReconstructionConfig = ReconstructionConfig(),
) -> tuple[list[tuple[float, float]], slm.ActionPlan]:
    """Polish the interior time offsets by coordinate descent.

    The sharpness estimate gives a coarse dt and the circle fits a coarse
    theta; here each parameter in turn is swept over candidates, the targets
    are re-adjusted (warm-started from the current best), and the candidate
    with the smallest trace deviation wins. The first stroke's dt does not
    influence the geometry and is left alone.
    """
    import dataclasses

    dynamics = [tuple(d) for d in dynamics]
    fast = dataclasses.replace(cfg, max_iters=cfg.refine_iters, sample_step=cfg.refine_step)

    def evaluate(targets, dyn):
        plan = slm.make_plan(targets, dyn)
        plan, _ = adjust_targets(trace, kps, plan, fast)
        return _plan_deviation(trace.points, plan, fast), plan

    def try_candidates(k, cands):
        nonlocal best_dev, best_plan, dynamics
        for cand in cands:
            trial = list(dynamics)
            trial[k] = (float(cand), trial[k][1])
            dev, plan = evaluate(best_plan.positions(), trial)
            if dev < best_dev:
                best_dev, best_plan, dynamics = dev, plan, trial

    best_dev, best_plan = evaluate(kps.positions, dynamics)
    coarse = np.linspace(0.05, 1.0, 7)
    half = (coarse[1] - coarse[0]) / 2.0
    for _ in range(cfg.refine_sweeps):
        for k in range(1, len(dynamics)):
            try_candidates(k, coarse)
            local = [dynamics[k][0] - half, dynamics[k][0] + half]
            try_candidates(k, [c for c in local if cfg.dt_min <= c <= cfg.dt_max])
    return dynamics, best_plan


def _reconstruct_segment(
    points: np.ndarray, cfg: ReconstructionConfig
) -> tuple[np.ndarray, list[tuple[float, float]], AdjustReport]:
    """Reconstruct one drawn span: returns (targets, dynamics, report)."""
    trace = resample_uniform(RawTrace(points), cfg)
    sig = turning_angle_signal(trace, cfg)
    kps = detect_key_points(sig, trace, cfg)
    dynamics = _segment_dynamics(trace, sig, kps, cfg)
    if cfg.refine_sweeps > 0 and kps.m > 2:
        dynamics, plan = refine_dynamics(trace, kps, dynamics, cfg)
        plan, report = adjust_targets(trace, kps, plan, cfg)
    else:
        plan = slm.make_plan(kps.positions, dynamics)
        plan, report = adjust_targets(trace, kps, plan, cfg)
    return plan.positions(), dynamics, report


def reconstruct_plan(
    trace: RawTrace, cfg: ReconstructionConfig = ReconstructionConfig()
) -> tuple[slm.ActionPlan, AdjustReport]:
    """Full trace-to-plan reconstruction.

    Pen-up breaks split the trace; each drawn span is reconstructed
    independently and the spans are joined by undrawn connector strokes.
    """
    positions: list[np.ndarray] = []
    pen_flags: list[bool] = []
    dynamics: list[tuple[float, float]] = []
    worst = AdjustReport(iterations=0, mse=0.0, converged=True)

    for si, seg in enumerate(trace.segments()):
        tgt, dyn, report = _reconstruct_segment(seg, cfg)
        if report.mse > worst.mse or not report.converged:
            worst = report
        if si > 0:
            # undrawn connector stroke into this span's first target
            dynamics.append((cfg.dt_max, 0.0))
            pen_flags.append(True)
        else:
            pen_flags.append(False)
        positions.append(tgt[0])
        for p in tgt[1:]:
            positions.append(p)
            pen_flags.append(False)
        dynamics.extend(dyn)

    plan = slm.make_plan(np.array(positions), dynamics, pen_up=pen_flags)
    return plan, worst
