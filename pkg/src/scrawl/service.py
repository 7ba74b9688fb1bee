"""Low-latency HTTP + WebSocket API for interactive trajectory editing.

Endpoints
---------
- ``GET /models`` — catalog of loaded checkpoints ``{id, kind, styles}``.
- ``POST /reconstruct`` — raw points to action plan.
- ``POST /predict`` — seeded dynamic-parameter prediction + trajectory.
- ``POST /stylize`` — reconstruct a trace and re-dress it in a model's style.
- ``WS /session`` — stateful target editing with incremental recomputation:
  the recurrent state is cached per stroke, so dragging target ``i`` only
  re-runs the network from stroke ``i - 1`` while remaining bit-identical to
  a full recompute (per-stroke RNG streams).

Error codes: 400 schema violation, 404 unknown model, 422 invalid plan,
500 internal (with incident id).  Models are loaded once at startup and
shared read-only; every session owns its own state and seed.

Checkpoints are discovered as ``<dir>/<id>.ckpt``; an optional
``<dir>/<id>.primers.json`` file maps style names to primer plans.
"""

from __future__ import annotations

import glob
import json
import os
import uuid
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import pipelines, slm
from .io_formats import export_svg, load_checkpoint, plan_from_json
from .pipelines import PrimerExample, predict_dynamics_states
from .reconstruct import RawTrace, ReconstructionConfig, reconstruct_plan
from .rmdn import LstmState, ModelCheckpoint

SERVICE_SAMPLE_STEP = 1.0 / 240.0


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


# ---------------------------------------------------------------------------
# model registry
# ---------------------------------------------------------------------------


@dataclass
class LoadedModel:
    id: str
    checkpoint: ModelCheckpoint
    primers: dict[str, PrimerExample] = field(default_factory=dict)


class ModelRegistry:
    def __init__(self):
        self.models: dict[str, LoadedModel] = {}

    def load_dir(self, path: str) -> None:
        for ckpt_path in sorted(glob.glob(os.path.join(path, "*.ckpt"))):
            model_id = os.path.splitext(os.path.basename(ckpt_path))[0]
            self.add(model_id, load_checkpoint(ckpt_path), ckpt_path)

    def add(self, model_id: str, ckpt: ModelCheckpoint, ckpt_path: str = "") -> None:
        primers = {}
        primer_path = os.path.splitext(ckpt_path)[0] + ".primers.json" if ckpt_path else ""
        if primer_path and os.path.exists(primer_path):
            with open(primer_path, "rb") as fh:
                doc = json.loads(fh.read())
            for name, plan_doc in doc.items():
                plan = plan_from_json(json.dumps(plan_doc).encode())
                primers[name] = PrimerExample(plan, name)
        self.models[model_id] = LoadedModel(model_id, ckpt, primers)

    def get(self, model_id: str) -> LoadedModel:
        if model_id not in self.models:
            raise KeyError(model_id)
        return self.models[model_id]

    def get_or_api(self, model_id) -> LoadedModel:
        if not isinstance(model_id, str):
            raise ApiError(400, "'model' must be a string")
        try:
            return self.get(model_id)
        except KeyError:
            raise ApiError(404, f"unknown model {model_id!r}") from None


# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------


class TargetIn(BaseModel):
    position: tuple[float, float]
    pen_up: bool = False


class ReconstructRequest(BaseModel):
    points: list[tuple[float, float]]
    pen_up_breaks: list[int] = Field(default_factory=list)


class PredictRequest(BaseModel):
    model: str
    targets: list[TargetIn]
    primer: Optional[str] = None
    seed: int = 0
    svg: bool = False


class StylizeRequest(BaseModel):
    model: str
    points: list[tuple[float, float]]
    pen_up_breaks: list[int] = Field(default_factory=list)
    primer: Optional[str] = None
    seed: int = 0


# ---------------------------------------------------------------------------
# serialisation helpers
# ---------------------------------------------------------------------------


def plan_doc(plan: slm.ActionPlan) -> dict:
    return {
        "targets": [
            {"position": list(t.position), "pen_up": t.pen_up} for t in plan.targets
        ],
        "dynamics": [{"dt": d.dt, "theta": d.theta} for d in plan.dynamics],
        "shapes": [{"duration": s.duration, "skew": s.skew} for s in plan.shapes],
    }


def trajectory_doc(traj: slm.Trajectory) -> dict:
    return {
        "t": traj.t.tolist(),
        "points": traj.points.tolist(),
        "speed": traj.speed.tolist(),
        "drawn": traj.drawn.astype(bool).tolist(),
    }


def _resolve_primer(model: LoadedModel, primer: Optional[str]) -> Optional[PrimerExample]:
    if primer is None:
        return None
    if primer not in model.primers:
        raise ApiError(404, f"unknown primer style {primer!r} for model {model.id!r}")
    return model.primers[primer]


def _targets_from_request(targets: list[TargetIn]) -> tuple[slm.VirtualTarget, ...]:
    if len(targets) < 2:
        raise ApiError(422, "a plan needs at least two targets")
    return tuple(slm.VirtualTarget(tuple(t.position), t.pen_up) for t in targets)


def _predict_plan(
    model: LoadedModel, targets, primer: Optional[str], seed: int
) -> slm.ActionPlan:
    if model.checkpoint.model_kind != "DPP":
        raise ApiError(422, f"model {model.id!r} is not a DPP model")
    dynamics = pipelines.predict_dynamics(
        model.checkpoint, targets, _resolve_primer(model, primer), seed
    )
    return slm.ActionPlan(
        tuple(targets), tuple(dynamics), tuple(slm.StrokeShape() for _ in dynamics)
    )


# ---------------------------------------------------------------------------
# websocket session
# ---------------------------------------------------------------------------


class Session:
    """Per-connection editing state with a per-stroke recurrent-state cache."""

    def __init__(self, registry: ModelRegistry):
        self.registry = registry
        self.model: Optional[LoadedModel] = None
        self.primer: Optional[str] = None
        self.seed = 0
        self.targets: list[slm.VirtualTarget] = []
        self.version = 0
        # cache from the last computation
        self._dynamics: list[slm.DynamicParams] = []
        self._states: list[LstmState] = []

    def invalidate(self) -> None:
        self._dynamics = []
        self._states = []

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        version = msg.get("version")
        if not isinstance(version, int):
            raise ApiError(400, "message needs an integer 'version'")
        if version <= self.version:
            raise ApiError(400, f"stale version {version} (current {self.version})")
        recompute_from = 0
        if kind == "set_model":
            self.model = self.registry.get_or_api(msg.get("model"))
            self.invalidate()
        elif kind == "set_primer":
            self.primer = msg.get("primer")
            self.invalidate()
        elif kind == "set_seed":
            seed = msg.get("seed")
            if not isinstance(seed, int):
                raise ApiError(400, "'seed' must be an integer")
            self.seed = seed
            self.invalidate()
        elif kind == "upsert_target":
            index = msg.get("index")
            pos = msg.get("position")
            if not isinstance(index, int) or not 0 <= index <= len(self.targets):
                raise ApiError(400, "invalid target index")
            if (
                not isinstance(pos, (list, tuple)) or len(pos) != 2
                or not all(isinstance(v, (int, float)) for v in pos)
            ):
                raise ApiError(400, "'position' must be [x, y]")
            target = slm.VirtualTarget(
                (float(pos[0]), float(pos[1])), bool(msg.get("pen_up", False))
            )
            if index == len(self.targets):
                self.targets.append(target)
            else:
                self.targets[index] = target
            recompute_from = max(index - 1, 0)
        elif kind == "delete_target":
            index = msg.get("index")
            if not isinstance(index, int) or not 0 <= index < len(self.targets):
                raise ApiError(400, "invalid target index")
            del self.targets[index]
            recompute_from = max(index - 1, 0)
        elif kind == "request_resample":
            self.invalidate()
        else:
            raise ApiError(400, f"unknown message type {kind!r}")

        self.version = version
        return self.compute(recompute_from)

    def compute(self, recompute_from: int) -> dict:
        if self.model is None:
            raise ApiError(422, "no model selected")
        if len(self.targets) < 2:
            return {"plan_version": self.version, "dynamics": [], "trajectory": None}
        if self.model.checkpoint.model_kind != "DPP":
            raise ApiError(422, f"model {self.model.id!r} is not a DPP model")
        primer = _resolve_primer(self.model, self.primer)

        start = min(recompute_from, len(self._dynamics))
        if start > 0:
            tail, tail_states = predict_dynamics_states(
                self.model.checkpoint, self.targets, primer, self.seed,
                start=start,
                state=self._states[start - 1],
                prev=self._dynamics[start - 1],
            )
            self._dynamics = self._dynamics[:start] + tail
            self._states = self._states[:start] + tail_states
        else:
            self._dynamics, self._states = predict_dynamics_states(
                self.model.checkpoint, self.targets, primer, self.seed
            )

        plan = slm.ActionPlan(
            tuple(self.targets), tuple(self._dynamics),
            tuple(slm.StrokeShape() for _ in self._dynamics),
        )
        traj = slm.integrate_trajectory(plan, SERVICE_SAMPLE_STEP)
        return {
            "plan_version": self.version,
            "seed": self.seed,
            "dynamics": [{"dt": d.dt, "theta": d.theta} for d in self._dynamics],
            "trajectory": trajectory_doc(traj),
        }


# ---------------------------------------------------------------------------
# app factory
# ---------------------------------------------------------------------------


def create_app(models_dir: Optional[str] = None, registry: Optional[ModelRegistry] = None) -> FastAPI:
    app = FastAPI(title="scrawl service")
    if registry is None:
        registry = ModelRegistry()
        if models_dir:
            registry.load_dir(models_dir)
    app.state.registry = registry

    @app.exception_handler(RequestValidationError)
    async def schema_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(ApiError)
    async def api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.message})

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        incident = uuid.uuid4().hex
        return JSONResponse(
            status_code=500,
            content={"detail": "internal error", "incident_id": incident},
        )

    @app.get("/models")
    def models():
        return {
            "models": [
                {
                    "id": m.id,
                    "kind": m.checkpoint.model_kind,
                    "styles": sorted(m.primers),
                }
                for m in registry.models.values()
            ]
        }

    @app.post("/reconstruct")
    def reconstruct(req: ReconstructRequest):
        if len(req.points) < 2:
            raise ApiError(422, "need at least two points")
        trace = RawTrace(np.array(req.points), frozenset(req.pen_up_breaks))
        plan, report = reconstruct_plan(trace, ReconstructionConfig())
        return {
            "plan": plan_doc(plan),
            "report": {
                "iterations": report.iterations,
                "mse": report.mse,
                "converged": report.converged,
            },
        }

    @app.post("/predict")
    def predict(req: PredictRequest):
        model = registry.get_or_api(req.model)
        targets = _targets_from_request(req.targets)
        plan = _predict_plan(model, targets, req.primer, req.seed)
        traj = slm.integrate_trajectory(plan, SERVICE_SAMPLE_STEP)
        out = {
            "seed": req.seed,
            "dynamics": [{"dt": d.dt, "theta": d.theta} for d in plan.dynamics],
            "trajectory": trajectory_doc(traj),
        }
        if req.svg:
            out["svg"] = export_svg(traj, plan).decode("utf-8")
        return out

    @app.post("/stylize")
    def stylize(req: StylizeRequest):
        model = registry.get_or_api(req.model)
        if len(req.points) < 2:
            raise ApiError(422, "need at least two points")
        if model.checkpoint.model_kind != "DPP":
            raise ApiError(422, f"model {model.id!r} is not a DPP model")
        trace = RawTrace(np.array(req.points), frozenset(req.pen_up_breaks))
        result = pipelines.stylize(
            model.checkpoint, trace,
            primer=_resolve_primer(model, req.primer), seed=req.seed,
        )
        return {
            "seed": req.seed,
            "plan": plan_doc(result.plan),
            "trajectory": trajectory_doc(result.trajectory),
        }

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        state = Session(registry)
        try:
            while True:
                try:
                    msg = await ws.receive_json()
                except (ValueError, json.JSONDecodeError):
                    await ws.send_json(
                        {"type": "error", "code": 400, "message": "malformed frame"}
                    )
                    continue
                try:
                    reply = state.handle(msg)
                except ApiError as exc:
                    await ws.send_json(
                        {"type": "error", "code": exc.status, "message": exc.message}
                    )
                    continue
                await ws.send_json(reply)
        except WebSocketDisconnect:
            pass

    return app
