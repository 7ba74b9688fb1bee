"""Data ingestion and persistence.

Parsers for GML (Graffiti Markup Language) drawings and plain point lists,
JSON serialisation of action plans, SVG/CSV trajectory export, dataset
manifests, and bit-exact checkpoint files.  Parsers reject rather than
silently coerce, and every parse error carries location information.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import os
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import slm
from .pipelines import NormStats
from .reconstruct import RawTrace
from .rmdn import (
    CHECKPOINT_FORMAT_VERSION,
    AdamConfig,
    ModelCheckpoint,
    NetworkConfig,
    flatten_weights,
    unflatten_weights,
    weight_manifest,
)


class TraceParseError(ValueError):
    """Base class for ingestion failures; message carries location info."""


class MalformedXmlError(TraceParseError):
    pass


class NoPointsError(TraceParseError):
    pass


class BadCoordinateError(TraceParseError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _normalise(points: np.ndarray, normalize: bool):
    """Rescale so the max extent is 1; returns (points, raw_scale)."""
    span = points.max(axis=0) - points.min(axis=0)
    scale = float(span.max())
    if normalize and scale > 0:
        return points / scale, scale
    return points, scale


def parse_gml(data: bytes, *, normalize: bool = True, with_metadata: bool = False):
    """Parse a GML drawing into a RawTrace.

    Stroke point lists become drawn spans separated by pen-up breaks;
    timestamps are ignored (dynamics are deliberately dropped).  The y axis
    is flipped to the y-down canvas convention when the document declares
    screen bounds; coordinates are rescaled to max extent 1 unless
    ``normalize`` is false.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXmlError(f"malformed XML: {exc}") from exc

    points: list[tuple[float, float]] = []
    breaks: set[int] = set()
    times: list[float] = []
    for si, stroke in enumerate(root.iter("stroke")):
        if points:
            breaks.add(len(points))
        for pi, pt in enumerate(stroke.iter("pt")):
            values = {}
            for axis in ("x", "y", "t"):
                node = pt.find(axis)
                if node is None:
                    if axis == "t":
                        continue
                    raise BadCoordinateError(
                        f"stroke {si}, point {pi}: missing <{axis}>"
                    )
                try:
                    values[axis] = float(node.text)
                except (TypeError, ValueError) as exc:
                    raise BadCoordinateError(
                        f"stroke {si}, point {pi}: non-numeric <{axis}> "
                        f"value {node.text!r}"
                    ) from exc
            if not (math.isfinite(values["x"]) and math.isfinite(values["y"])):
                raise BadCoordinateError(
                    f"stroke {si}, point {pi}: non-finite coordinate"
                )
            points.append((values["x"], values["y"]))
            times.append(values.get("t", math.nan))
    if not points:
        raise NoPointsError("no points in document")
    if len(points) < 2:
        raise NoPointsError("a trace needs at least two points")

    pts = np.array(points, dtype=float)
    y_flipped = root.find(".//environment/screenBounds") is not None
    if y_flipped:
        pts[:, 1] = pts[:, 1].max() - pts[:, 1]
    pts, raw_scale = _normalise(pts, normalize)
    trace = RawTrace(pts, frozenset(breaks))
    if not with_metadata:
        return trace
    return trace, {
        "raw_scale": raw_scale,
        "y_flipped": y_flipped,
        "timestamps": times,
    }


def _point_rows_to_trace(rows, normalize: bool) -> RawTrace:
    points = []
    breaks = set()
    for i, row in enumerate(rows):
        if len(row) not in (2, 3):
            raise TraceParseError(f"row {i}: expected 2 or 3 columns, got {len(row)}")
        try:
            x, y = float(row[0]), float(row[1])
        except (TypeError, ValueError) as exc:
            raise BadCoordinateError(f"row {i}: non-numeric coordinate") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise BadCoordinateError(f"row {i}: non-finite coordinate")
        if len(row) == 3:
            pen = row[2]
            if isinstance(pen, str):
                pen = pen.strip().lower() in ("1", "true", "yes")
            if pen and i > 0:
                breaks.add(i)
        points.append((x, y))
    if len(points) < 2:
        raise NoPointsError("a trace needs at least two points")
    pts, _ = _normalise(np.array(points, dtype=float), normalize)
    return RawTrace(pts, frozenset(breaks))


def parse_points(data: bytes, format: str = "json", *, normalize: bool = True) -> RawTrace:
    """Parse a JSON array of [x, y, pen_up?] rows or a CSV with that header."""
    if format == "json":
        try:
            rows = json.loads(data)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON: {exc}") from exc
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise TraceParseError("expected a JSON array of point rows")
        return _point_rows_to_trace(rows, normalize)
    if format == "csv":
        lines = [ln for ln in data.decode("utf-8").splitlines() if ln.strip()]
        if not lines:
            raise NoPointsError("empty CSV")
        header = [h.strip().lower() for h in lines[0].split(",")]
        if header[:2] != ["x", "y"]:
            raise TraceParseError(f"CSV header must start with x,y (got {lines[0]!r})")
        rows = [ln.split(",") for ln in lines[1:]]
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise TraceParseError(f"row {i}: ragged row")
        return _point_rows_to_trace(rows, normalize)
    raise ValueError(f"unknown point format {format!r}")


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    format: str                 # gml | points-json | points-csv
    style_label: str = ""
    pen_up_policy: str = "breaks"


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    version: int = 1


def load_manifest(data: bytes) -> DatasetManifest:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid manifest JSON: {exc}") from exc
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list) or not raw_entries:
        raise TraceParseError("manifest needs a non-empty 'entries' list")
    entries = []
    for i, e in enumerate(raw_entries):
        if "path" not in e or "format" not in e:
            raise TraceParseError(f"entry {i}: needs 'path' and 'format'")
        if e["format"] not in ("gml", "points-json", "points-csv"):
            raise TraceParseError(f"entry {i}: unknown format {e['format']!r}")
        entries.append(
            ManifestEntry(
                e["path"], e["format"], e.get("style_label", ""),
                e.get("pen_up_policy", "breaks"),
            )
        )
    paths = [e.path for e in entries]
    if len(set(paths)) != len(paths):
        raise TraceParseError("manifest paths must be unique")
    labels = {e.style_label for e in entries}
    if len(labels) > 1 and "" in labels:
        raise TraceParseError("labels must be non-empty in a multi-style manifest")
    return DatasetManifest(tuple(entries), int(doc.get("version", 1)))


def load_trace(entry: ManifestEntry, base_dir: str = ".") -> RawTrace:
    with open(os.path.join(base_dir, entry.path), "rb") as fh:
        data = fh.read()
    if entry.format == "gml":
        return parse_gml(data)
    return parse_points(data, entry.format.removeprefix("points-"), normalize=True)


# ---------------------------------------------------------------------------
# action-plan JSON
# ---------------------------------------------------------------------------


def plan_to_json(plan: slm.ActionPlan) -> bytes:
    doc = {
        "targets": [
            {"position": list(t.position), "pen_up": t.pen_up} for t in plan.targets
        ],
        "dynamics": [{"dt": d.dt, "theta": d.theta} for d in plan.dynamics],
        "shapes": [{"duration": s.duration, "skew": s.skew} for s in plan.shapes],
    }
    return json.dumps(doc, indent=2).encode("utf-8")


def plan_from_json(data: bytes) -> slm.ActionPlan:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid plan JSON: {exc}") from exc
    try:
        targets = tuple(
            slm.VirtualTarget(tuple(map(float, t["position"])), bool(t.get("pen_up", False)))
            for t in doc["targets"]
        )
        dynamics = tuple(
            slm.DynamicParams(float(d["dt"]), float(d["theta"])) for d in doc["dynamics"]
        )
        shapes = doc.get("shapes")
        if shapes:
            shapes = tuple(
                slm.StrokeShape(float(s["duration"]), float(s["skew"])) for s in shapes
            )
        else:
            shapes = tuple(slm.StrokeShape() for _ in dynamics)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"invalid plan document: {exc}") from exc
    return slm.ActionPlan(targets, dynamics, shapes)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".6f").rstrip("0").rstrip(".")


def _drawn_spans(traj: slm.Trajectory) -> list[np.ndarray]:
    spans = []
    start = None
    for i, d in enumerate(traj.drawn):
        if d and start is None:
            start = i
        elif not d and start is not None:
            if i - start >= 2:
                spans.append(traj.points[start:i])
            start = None
    if start is not None and len(traj.points) - start >= 2:
        spans.append(traj.points[start:])
    return spans


def export_svg(traj: slm.Trajectory, plan: Optional[slm.ActionPlan] = None) -> bytes:
    """Deterministic SVG: one path per drawn span, optional target markers."""
    if len(traj) < 2:
        raise ValueError("need at least two trajectory samples")
    pts = traj.points
    if plan is not None:
        pts = np.vstack([pts, plan.positions()])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.05 * span.max()
    vb = (lo[0] - margin, lo[1] - margin, span[0] + 2 * margin, span[1] + 2 * margin)

    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{_fmt(vb[0])} {_fmt(vb[1])} {_fmt(vb[2])} {_fmt(vb[3])}">\n'
    )
    stroke_width = _fmt(0.004 * span.max())
    for seg in _drawn_spans(traj):
        coords = " L ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in seg)
        out.write(
            f'  <path d="M {coords}" fill="none" stroke="black" '
            f'stroke-width="{stroke_width}" stroke-linecap="round"/>\n'
        )
    if plan is not None:
        r = _fmt(0.012 * span.max())
        for t in plan.targets:
            out.write(
                f'  <circle cx="{_fmt(t.position[0])}" cy="{_fmt(t.position[1])}" '
                f'r="{r}" fill="red"/>\n'
            )
    out.write("</svg>\n")
    return out.getvalue().encode("utf-8")


def export_trajectory_csv(traj: slm.Trajectory) -> bytes:
    """Columns t,x,y,speed,drawn with round-trippable decimal formatting."""
    lines = ["t,x,y,speed,drawn"]
    for t, (x, y), v, d in zip(traj.t, traj.points, traj.speed, traj.drawn):
        lines.append(f"{float(t)!r},{float(x)!r},{float(y)!r},{float(v)!r},{int(d)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

_MAGIC = b"SCRAWLCK"


def _stats_to_doc(stats):
    if stats is None:
        return None
    return {f.name: np.asarray(getattr(stats, f.name)).tolist()
            for f in dataclasses.fields(stats)}


def _stats_from_doc(doc):
    if doc is None:
        return None
    kw = {}
    for f in dataclasses.fields(NormStats):
        arr = np.array(doc[f.name])
        if f.name in ("normalized", "zero_variance", "target_zero_variance"):
            arr = arr.astype(bool)
        kw[f.name] = arr
    return NormStats(**kw)


def save_checkpoint(ckpt: ModelCheckpoint, path: str) -> None:
    """Versioned container, little-endian float64 payload, atomic write."""
    cfg_doc = dataclasses.asdict(ckpt.config)
    header = json.dumps(
        {
            "model_kind": ckpt.model_kind,
            "config": cfg_doc,
            "manifest": [[n, list(s)] for n, s in weight_manifest(ckpt.config)],
            "norm_stats": _stats_to_doc(ckpt.norm_stats),
            "training_meta": ckpt.training_meta,
        }
    ).encode("utf-8")
    payload = flatten_weights(ckpt.config, ckpt.weights).astype("<f8").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", ckpt.format_version))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(_MAGIC) + 12 or not data.startswith(_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    offset = len(_MAGIC)
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    if offset + header_len > len(data):
        raise CheckpointError("corrupt payload: truncated header")
    try:
        header = json.loads(data[offset : offset + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt payload: bad header JSON ({exc})") from exc
    offset += header_len
    if offset + 8 > len(data):
        raise CheckpointError("corrupt payload: missing weight block")
    (payload_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    if offset + payload_len != len(data):
        raise CheckpointError("corrupt payload: weight block size mismatch")

    cfg_doc = dict(header["config"])
    cfg_doc["adam"] = AdamConfig(**cfg_doc["adam"])
    cfg = NetworkConfig(**cfg_doc)
    expected = [[n, list(s)] for n, s in weight_manifest(cfg)]
    if header["manifest"] != expected:
        raise CheckpointError("corrupt payload: manifest does not match config")
    flat = np.frombuffer(data[offset:], dtype="<f8").astype(np.float64)
    try:
        weights = unflatten_weights(cfg, flat)
    except ValueError as exc:
        raise CheckpointError(f"corrupt payload: {exc}") from exc
    return ModelCheckpoint(
        format_version=version,
        model_kind=header["model_kind"],
        config=cfg,
        weights=weights,
        norm_stats=_stats_from_doc(header["norm_stats"]),
        training_meta=header["training_meta"],
    )
