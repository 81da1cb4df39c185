import json

import numpy as np
import pytest
from click.testing import CliRunner

from gridtouch.cli import main
from gridtouch.conditioning import build_conditions, load_manifest
from gridtouch.diffusion import GridTouchModel, ModelConfig, init_parameters
from gridtouch.imagecore import Image, save_image
from gridtouch.training import save_checkpoint

TOY = ModelConfig(
    latent_size=8,
    hidden_channels=4,
    time_dim=8,
    aux_channels=2,
    grid_height=4,
    grid_width=4,
    grid_depth=2,
    grid_hidden=4,
    timesteps=50,
)


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "model.bin"
    model = GridTouchModel(TOY)
    init_parameters(model, np.random.default_rng(0), identity_grid_bias=True)
    save_checkpoint(model, path)
    return path


def write_gray(tmp_path, v=0.5, name="img.png"):
    p = tmp_path / name
    save_image(Image.from_array(np.full((8, 8, 3), v)), p)
    return p


class TestScoreCommand:
    def test_gray_zero_colorfulness(self, runner, tmp_path):
        p = write_gray(tmp_path)
        res = runner.invoke(main, ["score", str(p)])
        assert res.exit_code == 0
        doc = json.loads(res.output)
        assert doc["colorfulness"] == 0.0
        assert set(doc) == {"colorfulness", "contrast", "cct_kelvin", "brightness"}

    def test_missing_file_usage_error(self, runner, tmp_path):
        res = runner.invoke(main, ["score", str(tmp_path / "none.png")])
        assert res.exit_code == 2  # click path existence check

    def test_cct_as_printed_flag(self, runner, tmp_path):
        p = write_gray(tmp_path, 1.0, "white.png")
        normal = json.loads(runner.invoke(main, ["score", str(p)]).output)
        printed = json.loads(
            runner.invoke(main, ["--cct-as-printed", "score", str(p)]).output
        )
        assert abs(normal["cct_kelvin"] - 6504) < 50
        assert printed["cct_kelvin"] >= 70000

    def test_runtime_error_exit_1(self, runner, tmp_path):
        p = tmp_path / "black.png"
        save_image(Image.from_array(np.zeros((4, 4, 3))), p)
        res = runner.invoke(main, ["score", str(p)])
        assert res.exit_code == 1  # cct domain error


class TestSynthAndPair:
    def test_synth_then_pair_matches_oracle(self, runner, tmp_path):
        res = runner.invoke(
            main, ["synth", "--seed", "3", "--groups", "2", "--out", str(tmp_path / "d"),
                   "--size", "16"]
        )
        assert res.exit_code == 0, res.output
        manifest = tmp_path / "d" / "manifest.json"
        out = tmp_path / "pairs.jsonl"
        res = runner.invoke(main, ["pair", str(manifest), "--out", str(out)])
        assert res.exit_code == 0, res.output
        recs = [json.loads(l) for l in out.read_text().strip().splitlines()]
        assert len(recs) == 6
        groups = load_manifest(manifest)
        for g in groups:
            cond = build_conditions(g)
            for rec in recs:
                if rec["gt"] in {str(t.path) for t in g.gts}:
                    assert rec["c"] == [float(x) for x in cond[rec["expert"]]]


class TestRetouchCommand:
    def test_deterministic_outputs(self, runner, tmp_path, checkpoint):
        rng = np.random.default_rng(1)
        src = tmp_path / "in.png"
        save_image(Image.from_array(rng.random((8, 8, 3))), src)
        outs = []
        for name in ("a.png", "b.png"):
            res = runner.invoke(
                main,
                ["retouch", str(src), "--c", "0.5,0,-0.5,0", "--steps", "3",
                 "--seed", "9", "--checkpoint", str(checkpoint),
                 "--out", str(tmp_path / name)],
            )
            assert res.exit_code == 0, res.output
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_zero_condition_identity(self, runner, tmp_path, checkpoint):
        rng = np.random.default_rng(2)
        src = tmp_path / "in2.png"
        save_image(Image.from_array(rng.random((8, 8, 3))), src)
        res = runner.invoke(
            main,
            ["retouch", str(src), "--c", "0,0,0,0", "--steps", "2", "--seed", "1",
             "--checkpoint", str(checkpoint), "--out", str(tmp_path / "out.png")],
        )
        assert res.exit_code == 0, res.output
        assert (tmp_path / "out.png").read_bytes() == src.read_bytes()

    def test_invalid_condition_exit(self, runner, tmp_path, checkpoint):
        src = write_gray(tmp_path)
        res = runner.invoke(
            main,
            ["retouch", str(src), "--c", "2,0,0,0", "--checkpoint", str(checkpoint)],
        )
        assert res.exit_code == 1

    def test_usage_error_exit_2(self, runner):
        res = runner.invoke(main, ["retouch"])  # missing IMAGE
        assert res.exit_code == 2

    def test_env_var_checkpoint(self, runner, tmp_path, checkpoint, monkeypatch):
        monkeypatch.setenv("GRIDTOUCH_CHECKPOINT", str(checkpoint))
        src = write_gray(tmp_path)
        res = runner.invoke(
            main,
            ["retouch", str(src), "--c", "0,0,0,0", "--steps", "2", "--seed", "3",
             "--out", str(tmp_path / "env.png")],
        )
        assert res.exit_code == 0, res.output


class TestSweepTrace:
    def test_sweep(self, runner, tmp_path, checkpoint):
        src = write_gray(tmp_path)
        res = runner.invoke(
            main,
            ["sweep", str(src), "--checkpoint", str(checkpoint), "--steps", "2,4",
             "--seed", "0", "--out", str(tmp_path / "sw")],
        )
        assert res.exit_code == 0, res.output
        assert (tmp_path / "sw" / "sweep.json").exists()

    def test_trace(self, runner, tmp_path, checkpoint):
        src = write_gray(tmp_path)
        res = runner.invoke(
            main,
            ["trace", str(src), "--checkpoint", str(checkpoint), "--steps", "3",
             "--seed", "0", "--out", str(tmp_path / "tr")],
        )
        assert res.exit_code == 0, res.output
        doc = json.loads((tmp_path / "tr" / "trace.json").read_text())
        assert len(doc["steps"]) == 3
