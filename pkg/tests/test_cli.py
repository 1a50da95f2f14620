"""End-to-end command-line checks, run in-process through cli.main."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from scene4d.cli import main
from scene4d.tensorio import read_tensor, write_tensor

SCENE = {
    "resolution": [48, 48],
    "n_frames": 5,
    "seed": 11,
    "n_queries": 128,
    "camera": {"q": [1, 0, 0, 0], "t": [0, 0, 0],
               "fov": [math.pi / 2, math.pi / 2]},
    "background": {"type": "plane", "center": [0, 2.5, 8],
                   "u_axis": [8, 0, 0], "v_axis": [0, 0, 8]},
    "objects": [
        {"shape": {"type": "box", "center": [0.8, 0, 5], "size": [1.2, 1.2, 1.2]},
         "motion": {"kind": "spin", "axis": [0, 1, 0], "pivot": [0.8, 0, 5],
                    "radians_per_frame": 0.45}},
        {"shape": {"type": "box", "center": [-1.4, 0, 6], "size": [1, 1, 1]},
         "motion": {"kind": "translate", "velocity": [0.3, 0, 0]}},
    ],
}


@pytest.fixture()
def scene_file(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(SCENE))
    return p


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_gen_and_aggregate_and_eval_recon_self(tmp_path, scene_file, capsys):
    code, out = _run(capsys, "gen", "--spec", str(scene_file), "--out", str(tmp_path / "d"))
    assert code == 0
    info = json.loads(out)
    assert info["frames"] == 5 and info["tracks"] == 128

    code, out = _run(capsys, "aggregate-oracle", "--data", str(tmp_path / "d"),
                     "--target", "2", "--out", str(tmp_path / "agg"),
                     "--tracks-out", str(tmp_path / "tracks.csv"))
    assert code == 0
    agg = json.loads(out)
    assert agg["points_complete"] > agg["points_target_frame"]
    assert (tmp_path / "agg" / "complete_cloud.ply").exists()
    assert (tmp_path / "agg" / "aggregated_0004.ct4").exists()

    ply = str(tmp_path / "agg" / "complete_cloud.ply")
    code, out = _run(capsys, "eval-recon", "--pred", ply, "--gt", ply,
                     "--nmax", "5000", "--seed", "1", "--k", "16")
    assert code == 0
    m = json.loads(out)
    assert m["acc_mean"] == 0.0 and m["comp_median"] == 0.0
    assert m["nc_mean"] > 0.99


def test_eval_track_self_and_oracle_tracks(tmp_path, scene_file, capsys):
    _run(capsys, "gen", "--spec", str(scene_file), "--out", str(tmp_path / "d"))
    _run(capsys, "aggregate-oracle", "--data", str(tmp_path / "d"), "--target", "0",
         "--out", str(tmp_path / "agg"), "--tracks-out", str(tmp_path / "tracks.csv"))
    gt = str(tmp_path / "d" / "trajectories.csv")
    code, out = _run(capsys, "eval-track", "--pred", str(tmp_path / "tracks.csv"),
                     "--gt", gt, "--align", "median")
    assert code == 0
    m = json.loads(out)
    assert m["apd"] == 100.0
    assert m["epe"] < 1e-9


def test_eval_track_median_on_scaled_copies(tmp_path, capsys):
    from scene4d.synth import TrajectorySet
    from scene4d.tensorio import write_trajectories
    rng = np.random.default_rng(5)
    pos = rng.random((10, 4, 3)) + [0, 0, 4]
    gt = TrajectorySet(positions=pos, visible=np.ones((10, 4), bool),
                       dynamic=np.ones(10, bool))
    pred = TrajectorySet(positions=3.0 * pos, visible=gt.visible, dynamic=gt.dynamic)
    write_trajectories(tmp_path / "gt.csv", gt)
    write_trajectories(tmp_path / "pred.csv", pred)
    code, out = _run(capsys, "eval-track", "--pred", str(tmp_path / "pred.csv"),
                     "--gt", str(tmp_path / "gt.csv"), "--align", "median")
    assert code == 0
    m = json.loads(out)
    assert m["epe"] < 1e-12
    assert m["apd"] == 100.0


def test_split_command_lines(tmp_path, capsys):
    d = tmp_path / "depths"
    d.mkdir()
    for t in range(10):
        v = 1.0 if t < 5 else 5.0
        write_tensor(d / f"depth_{t:04d}.ct4", np.full((8, 8), v))
    code, out = _run(capsys, "split", "--depth-dir", str(d), "--tau", "0.7")
    assert code == 0
    assert out == "5\n"


def test_eval_depth_self_and_scaled(tmp_path, scene_file, capsys):
    _run(capsys, "gen", "--spec", str(scene_file), "--out", str(tmp_path / "d"))
    code, out = _run(capsys, "eval-depth", "--pred", str(tmp_path / "d"),
                     "--gt", str(tmp_path / "d"))
    assert code == 0
    m = json.loads(out)
    assert m["abs_rel"] == 0.0 and m["delta_125"] == 100.0
    code, out = _run(capsys, "eval-depth", "--pred", str(tmp_path / "d"),
                     "--gt", str(tmp_path / "d"), "--no-scale")
    assert code == 0
    m = json.loads(out)
    assert m["scaled"] is False and m["abs_rel"] == 0.0


def test_eval_pose_self(tmp_path, scene_file, capsys):
    _run(capsys, "gen", "--spec", str(scene_file), "--out", str(tmp_path / "d"))
    cams = str(tmp_path / "d" / "cameras.json")
    code, out = _run(capsys, "eval-pose", "--pred", cams, "--gt", cams,
                     "--pose-align", "none")
    assert code == 0
    m = json.loads(out)
    assert m["ate"] == 0.0 and m["rpe_rot"] == 0.0


def test_lift_writes_trajectories(tmp_path, scene_file, capsys):
    out_csv = tmp_path / "traj.csv"
    code, out = _run(capsys, "lift", "--scene", str(scene_file), "--out", str(out_csv))
    assert code == 0
    assert out_csv.exists()
    assert json.loads(out)["tracks"] == 128


def test_loss_check_command(capsys):
    code, out = _run(capsys, "loss-check", "--seed", "3", "--trials", "2")
    assert code == 0
    errs = json.loads(out)["max_relative_error"]
    assert set(errs) == {"point_focal", "point_dynamic", "point_offset", "depth", "camera"}
    assert all(v < 1e-4 for v in errs.values())


def test_forward_command(tmp_path, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    rng = np.random.default_rng(3)
    for t in range(3):
        write_tensor(frames / f"frame_{t:04d}.ct4", rng.random((32, 32, 3)))
    cfgp = tmp_path / "model.json"
    cfgp.write_text(json.dumps({"dim": 32, "n_heads": 4, "patch": 8}))
    dump = tmp_path / "features.ct4"
    code, out = _run(capsys, "forward", "--frames", str(frames), "--target", "1",
                     "--config", str(cfgp), "--seed", "7", "--dump", str(dump))
    assert code == 0
    info = json.loads(out)
    assert info["K"] == 16 and len(info["cameras"]) == 3
    feats = read_tensor(dump)
    assert feats.shape == (3, 16, 32)


def test_exit_codes(tmp_path, scene_file, capsys):
    # missing input file -> 2
    code, _ = _run(capsys, "gen", "--spec", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "d"))
    assert code == 2
    # bad target -> 2 (validated before compute)
    _run(capsys, "gen", "--spec", str(scene_file), "--out", str(tmp_path / "d"))
    code, out = _run(capsys, "aggregate-oracle", "--data", str(tmp_path / "d"),
                     "--target", "99", "--out", str(tmp_path / "agg"))
    assert code == 2
    assert "error" in json.loads(out)
    # corrupt tensor payload -> 1 (runtime)
    bad = tmp_path / "bad"
    bad.mkdir()
    write_tensor(bad / "depth_0000.ct4", np.ones((4, 4)))
    raw = (bad / "depth_0000.ct4").read_bytes()
    (bad / "depth_0000.ct4").write_bytes(raw[:-4])
    code, out = _run(capsys, "split", "--depth-dir", str(bad))
    assert code == 1


def test_unknown_flag_exits_two():
    proc = subprocess.run([sys.executable, "-m", "scene4d.cli", "gen", "--bogus", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_repeated_invocations_byte_identical(tmp_path, scene_file, capsys):
    outs = []
    for run in ("r1", "r2"):
        chunks = []
        code, out = _run(capsys, "gen", "--spec", str(scene_file),
                         "--out", str(tmp_path / run), "--seed", "4")
        # normalize the differing --out path out of the comparison
        chunks.append(out.replace(str(tmp_path / run), "OUT"))
        code, out = _run(capsys, "aggregate-oracle", "--data", str(tmp_path / run),
                         "--target", "1", "--out", str(tmp_path / (run + "agg")))
        chunks.append(out.replace(str(tmp_path / (run + "agg")), "AGG")
                      .replace(str(tmp_path / run), "OUT"))
        ply = str(tmp_path / (run + "agg") / "complete_cloud.ply")
        code, out = _run(capsys, "eval-recon", "--pred", ply, "--gt", ply, "--seed", "5")
        chunks.append(out)
        outs.append("".join(chunks))
    assert outs[0] == outs[1]
