import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from scrawl import slm
from scrawl.augment import AugmentConfig
from scrawl.pipelines import default_dpp_network, train_dpp
from scrawl.service import ModelRegistry, create_app


def zigzag_plan(m=8, seed=0):
    rng = np.random.default_rng(seed)
    heading = 0.0
    pos = [np.zeros(2)]
    for i in range(m - 1):
        heading += (1 if i % 2 == 0 else -1) * rng.uniform(0.6, 1.2)
        pos.append(pos[-1] + np.array([math.cos(heading), math.sin(heading)]))
    return slm.make_plan(pos, [(0.8, 0.4 * (-1) ** i) for i in range(m - 1)])


@pytest.fixture(scope="module")
def client():
    net = default_dpp_network(hidden_dim=16, layers=1, num_gaussians=2)
    ckpt = train_dpp([zigzag_plan()], AugmentConfig(n_p=20), net, epochs=3)
    registry = ModelRegistry()
    registry.add("desk", ckpt)
    app = create_app(registry=registry)
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def targets_doc(m=4, seed=1):
    plan = zigzag_plan(m, seed)
    return [
        {"position": list(t.position), "pen_up": t.pen_up} for t in plan.targets
    ]


class TestHttp:
    def test_models_catalog(self, client):
        doc = client.get("/models").json()
        assert doc["models"] == [{"id": "desk", "kind": "DPP", "styles": []}]

    def test_predict_minimal_deterministic(self, client):
        req = {"model": "desk", "targets": targets_doc(2), "seed": 9}
        a = client.post("/predict", json=req)
        b = client.post("/predict", json=req)
        assert a.status_code == 200
        assert len(a.json()["dynamics"]) == 1
        assert a.json()["seed"] == 9
        assert a.content == b.content

    def test_predict_unknown_model(self, client):
        r = client.post(
            "/predict", json={"model": "nope", "targets": targets_doc(3)}
        )
        assert r.status_code == 404

    def test_predict_too_few_targets(self, client):
        r = client.post(
            "/predict", json={"model": "desk", "targets": targets_doc(3)[:1]}
        )
        assert r.status_code == 422

    def test_unknown_primer(self, client):
        r = client.post(
            "/predict",
            json={"model": "desk", "targets": targets_doc(3), "primer": "ghost"},
        )
        assert r.status_code == 404

    def test_schema_violation_is_400(self, client):
        r = client.post("/predict", json={"targets": "not-a-list"})
        assert r.status_code == 400

    def test_reconstruct_single_point_422(self, client):
        r = client.post("/reconstruct", json={"points": [[0, 0]]})
        assert r.status_code == 422

    def test_reconstruct_round(self, client):
        traj = slm.integrate_trajectory(zigzag_plan(4, seed=3))
        pts = traj.points[traj.drawn].tolist()
        r = client.post("/reconstruct", json={"points": pts})
        assert r.status_code == 200
        assert len(r.json()["plan"]["targets"]) >= 2

    def test_stylize(self, client):
        traj = slm.integrate_trajectory(zigzag_plan(4, seed=3))
        pts = traj.points[traj.drawn].tolist()
        r = client.post("/stylize", json={"model": "desk", "points": pts, "seed": 2})
        assert r.status_code == 200
        body = r.json()
        assert len(body["plan"]["dynamics"]) == len(body["plan"]["targets"]) - 1

    def test_predict_latency_p50(self, client):
        import time

        req = {"model": "desk", "targets": targets_doc(32, seed=5), "seed": 0}
        times = []
        for _ in range(11):
            t0 = time.perf_counter()
            assert client.post("/predict", json=req).status_code == 200
            times.append(time.perf_counter() - t0)
        assert sorted(times)[len(times) // 2] < 0.050


class TestWebSocket:
    def open_session(self, client):
        return client.websocket_connect("/session")

    def test_edit_flow_matches_full_predict(self, client):
        tds = targets_doc(5, seed=7)
        with self.open_session(client) as ws:
            ws.send_json({"type": "set_model", "version": 1, "model": "desk"})
            ws.receive_json()
            ws.send_json({"type": "set_seed", "version": 2, "seed": 42})
            ws.receive_json()
            reply = None
            for i, t in enumerate(tds):
                ws.send_json(
                    {
                        "type": "upsert_target",
                        "version": 3 + i,
                        "index": i,
                        "position": t["position"],
                        "pen_up": t["pen_up"],
                    }
                )
                reply = ws.receive_json()
            # move the last target: incremental path
            moved = [tds[-1]["position"][0] + 0.3, tds[-1]["position"][1]]
            ws.send_json(
                {
                    "type": "upsert_target",
                    "version": 100,
                    "index": len(tds) - 1,
                    "position": moved,
                }
            )
            incremental = ws.receive_json()

        full_targets = tds[:-1] + [{"position": moved, "pen_up": False}]
        full = client.post(
            "/predict", json={"model": "desk", "targets": full_targets, "seed": 42}
        ).json()
        assert incremental["dynamics"] == full["dynamics"]
        assert incremental["trajectory"]["points"] == full["trajectory"]["points"]
        assert incremental["plan_version"] == 100

    def test_stale_version_rejected(self, client):
        with self.open_session(client) as ws:
            ws.send_json({"type": "set_model", "version": 5, "model": "desk"})
            ws.receive_json()
            ws.send_json({"type": "set_seed", "version": 5, "seed": 1})
            err = ws.receive_json()
            assert err["type"] == "error" and err["code"] == 400

    def test_seed_change_resamples(self, client):
        tds = targets_doc(4, seed=9)
        with self.open_session(client) as ws:
            ws.send_json({"type": "set_model", "version": 1, "model": "desk"})
            ws.receive_json()
            for i, t in enumerate(tds):
                ws.send_json(
                    {
                        "type": "upsert_target",
                        "version": 2 + i,
                        "index": i,
                        "position": t["position"],
                    }
                )
                first = ws.receive_json()
            ws.send_json({"type": "set_seed", "version": 50, "seed": 777})
            second = ws.receive_json()
        assert first["dynamics"] != second["dynamics"]

    def test_malformed_frame_keeps_session(self, client):
        with self.open_session(client) as ws:
            ws.send_json({"no_type": True})
            err = ws.receive_json()
            assert err["type"] == "error"
            ws.send_json({"type": "set_model", "version": 1, "model": "desk"})
            ok = ws.receive_json()
            assert "plan_version" in ok

    def test_unknown_model_error_frame(self, client):
        with self.open_session(client) as ws:
            ws.send_json({"type": "set_model", "version": 1, "model": "nope"})
            err = ws.receive_json()
            assert err["code"] == 404
