import json
import math
import os

import numpy as np
import pytest

from scrawl import cli, slm
from scrawl import io_formats as iof


def zigzag_plan(m=6, seed=0):
    rng = np.random.default_rng(seed)
    heading = 0.0
    pos = [np.zeros(2)]
    for i in range(m - 1):
        heading += (1 if i % 2 == 0 else -1) * rng.uniform(0.6, 1.2)
        pos.append(pos[-1] + np.array([math.cos(heading), math.sin(heading)]))
    return slm.make_plan(pos, [(0.8, 0.4 * (-1) ** i) for i in range(m - 1)])


@pytest.fixture()
def workspace(tmp_path):
    plan = zigzag_plan()
    traj = slm.integrate_trajectory(plan)
    trace_path = tmp_path / "trace.json"
    trace_path.write_text(json.dumps(traj.points[traj.drawn].tolist()))
    (tmp_path / "two_point.json").write_text("[[0,0],[1,0]]")
    (tmp_path / "plan.json").write_bytes(iof.plan_to_json(plan))
    (tmp_path / "manifest.json").write_text(
        json.dumps({"entries": [{"path": "trace.json", "format": "points-json"}]})
    )
    return tmp_path


TRAIN_FLAGS = ["--np", "8", "--epochs", "1", "--hidden", "8", "--layers", "1",
               "--gaussians", "2"]


def train(workspace, kind="train-dpp", name="model.ckpt"):
    out = str(workspace / name)
    code = cli.run([kind, str(workspace / "manifest.json"), "--out", out] + TRAIN_FLAGS)
    assert code == 0
    return out


class TestBasics:
    def test_reconstruct_two_points(self, workspace, capsys):
        out = str(workspace / "out.json")
        code = cli.run(["reconstruct", str(workspace / "two_point.json"), "--plan", out])
        assert code == 0
        plan = iof.plan_from_json(open(out, "rb").read())
        assert len(plan.targets) == 2

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli.run(["reconstruct", "x.json", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self, capsys):
        assert cli.run([]) == 1

    def test_missing_file_is_data_error(self, capsys):
        assert cli.run(["reconstruct", "does_not_exist.json"]) == 2

    def test_effective_config_printed(self, workspace, capsys):
        cli.run(["reconstruct", str(workspace / "two_point.json")])
        assert "config:" in capsys.readouterr().err


class TestAugment:
    def test_augment_writes_expected_count(self, workspace):
        out = str(workspace / "aug.json")
        code = cli.run(
            ["augment", str(workspace / "plan.json"), "--np", "3", "--seed", "1",
             "--out", out]
        )
        assert code == 0
        assert len(json.loads(open(out).read())) == 4

    def test_augment_deterministic(self, workspace):
        a, b = str(workspace / "a.json"), str(workspace / "b.json")
        for out in (a, b):
            assert cli.run(
                ["augment", str(workspace / "plan.json"), "--np", "2", "--seed", "7",
                 "--out", out]
            ) == 0
        assert open(a).read() == open(b).read()


class TestTrainAndSample:
    def test_train_sample_stylize_generate(self, workspace):
        dpp = train(workspace, "train-dpp", "dpp.ckpt")
        vtp = train(workspace, "train-vtp", "vtp.ckpt")

        svg = str(workspace / "out.svg")
        assert cli.run(
            ["sample", dpp, "--targets", str(workspace / "plan.json"),
             "--seed", "3", "--svg", svg]
        ) == 0
        assert open(svg, "rb").read().startswith(b"<?xml")

        plan_out = str(workspace / "styled.json")
        assert cli.run(
            ["stylize", dpp, str(workspace / "trace.json"), "--seed", "2",
             "--plan", plan_out]
        ) == 0
        assert len(iof.plan_from_json(open(plan_out, "rb").read()).targets) >= 2

        gen_out = str(workspace / "gen.json")
        assert cli.run(
            ["generate", vtp, dpp, "--seed", "5", "--max-targets", "10",
             "--plan", gen_out]
        ) == 0
        assert len(iof.plan_from_json(open(gen_out, "rb").read()).targets) <= 10

    def test_stylize_with_vtp_checkpoint_is_data_error(self, workspace, capsys):
        vtp = train(workspace, "train-vtp", "vtp.ckpt")
        code = cli.run(["stylize", vtp, str(workspace / "trace.json")])
        assert code == 2
        assert "DPP" in capsys.readouterr().err

    def test_identical_command_identical_outputs(self, workspace):
        dpp = train(workspace, "train-dpp", "dpp.ckpt")
        outs = []
        for name in ("s1.json", "s2.json"):
            out = str(workspace / name)
            assert cli.run(
                ["sample", dpp, "--targets", str(workspace / "plan.json"),
                 "--seed", "11", "--plan", out]
            ) == 0
            outs.append(open(out).read())
        assert outs[0] == outs[1]
