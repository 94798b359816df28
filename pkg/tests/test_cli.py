import json
import os
import subprocess
import sys

import numpy as np
import pytest

from kinelift import io
from kinelift.cli import main
from kinelift.training import synth_dataset


def _run(*argv, env=None):
    """Run the CLI in a subprocess; returns (code, stdout, stderr)."""
    proc = subprocess.run(
        [sys.executable, "-m", "kinelift.cli", *map(str, argv)],
        capture_output=True,
        text=True,
        env={**os.environ, **(env or {})},
        timeout=600,
    )
    return proc.returncode, proc.stdout, proc.stderr


def _summary(text):
    return json.loads(text.strip().splitlines()[-1])


def test_unknown_flag_exits_2():
    code, out, err = _run("fk", "--bogus")
    assert code == 2
    assert "usage" in err


def test_no_subcommand_exits_2(capsys):
    assert main([]) == 2


def test_fk_to_stdout(tmp_path, body):
    (tmp_path / "a.json").write_text(json.dumps({"angles": [0.0] * body.total_dof}))
    code, out, err = _run("fk", "--skeleton", "body_sign19.json", "--angles", tmp_path / "a.json")
    assert code == 0
    rec = json.loads(out.splitlines()[0])
    assert len(rec["positions_cm"]) == 19
    assert _summary(err)["frames"] == 1


def test_fk_wrong_angle_count_exits_2(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"angles": [0.0, 1.0]}))
    assert main(["fk", "--skeleton", "body_sign19", "--angles", str(tmp_path / "a.json")]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["fk", "--skeleton", "body_sign19", "--angles", str(tmp_path / "none.json")]) == 2


def test_gradcheck_hand(capsys):
    assert main(["gradcheck", "--skeleton", "hand26.json", "--seed", "7"]) == 0
    rep = _summary(capsys.readouterr().out)
    assert rep["passed"] and rep["max_abs_error"] < 1e-5


def test_threads_flag(capsys):
    assert main(["--threads", "1", "gradcheck", "--skeleton", "hand26", "--n", "3"]) == 0
    assert main(["--threads", "0", "gradcheck", "--skeleton", "hand26", "--n", "3"]) == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> split -> train both nets -> predict, on a small dataset."""
    d = tmp_path_factory.mktemp("pipe")
    steps = {}
    steps["synth"] = main(["synth", "--skeleton", "body_sign19", "--frames", "500", "--seed", "2",
                           "--out", str(d / "ds")])
    steps["split"] = main(["split", "--dataset", str(d / "ds"), "--out", str(d / "split.json")])
    common = ["--dataset", str(d / "ds"), "--split", str(d / "split.json"), "--epochs", "2",
              "--hidden", "32,32"]
    steps["angles"] = main(["train-angles", *common, "--out", str(d / "angles.json"),
                            "--log", str(d / "log.csv"), "--loss", "3d=1,angular=10"])
    steps["bones"] = main(["train-bones", *common, "--out", str(d / "bones.json")])
    ds = io.load_dataset(d / "ds")
    io.save_keypoints(d / "body.jsonl", ds.keypoints[0][:10])
    steps["predict"] = main(["predict", "--skeleton", "body_sign19", "--body-angles", str(d / "angles.json"),
                             "--body-bones", str(d / "bones.json"), "--body", str(d / "body.jsonl"),
                             "--out", str(d / "pred.jsonl")])
    return d, steps


def test_pipeline_exit_codes(pipeline):
    _, steps = pipeline
    assert steps == {k: 0 for k in steps}


def test_pipeline_outputs(pipeline):
    d, _ = pipeline
    split = json.loads((d / "split.json").read_text())
    assert len(split["train"]) == 400 and len(split["val"]) == 50 and len(split["test"]) == 50
    assert (d / "log.csv").read_text().startswith("epoch,train_loss,val_loss,lr,wall_ms")
    poses = io.load_poses(d / "pred.jsonl")
    assert len(poses) == 10 and poses[0].frame == "camera"
    assert np.all(np.isfinite(poses[0].positions))


def test_eval_and_align(pipeline, capsys):
    d, _ = pipeline
    assert main(["eval", "--pred", str(d / "pred.jsonl"), "--gt", str(d / "pred.jsonl"), "--align", "Rt",
                 "--csv", str(d / "err.csv")]) == 0
    rep = _summary(capsys.readouterr().out)
    assert rep["median"] == 0.0 and rep["std_convention"] == "population"
    assert len((d / "err.csv").read_text().splitlines()) == 1 + 10 * 19
    assert main(["align", "--source", str(d / "pred.jsonl"), "--target", str(d / "pred.jsonl"),
                 "--mode", "t", "--out", str(d / "al.jsonl")]) == 0
    rep = _summary(capsys.readouterr().out)
    assert rep["frames"][0]["residual"] == 0.0


def test_eval_length_mismatch_exits_2(pipeline, tmp_path):
    d, _ = pipeline
    io.save_poses(tmp_path / "one.jsonl", io.load_poses(d / "pred.jsonl")[:1])
    assert main(["eval", "--pred", str(d / "pred.jsonl"), "--gt", str(tmp_path / "one.jsonl")]) == 2


def test_export(pipeline, tmp_path):
    d, _ = pipeline
    assert main(["export", "--poses", str(d / "pred.jsonl"), "--format", "obj", "--skeleton", "body_sign19",
                 "--out", str(tmp_path / "p.obj")]) == 0
    text = (tmp_path / "p.obj").read_text()
    assert text.count("\nl ") == 10 * 18
    assert main(["export", "--poses", str(d / "pred.jsonl"), "--format", "fbx", "--out",
                 str(tmp_path / "p.fbx")]) == 2


def test_ik_fit(tmp_path, body):
    ds = io.save_dataset(synth_dataset(body, 2, 2, 0.0, seed=3), tmp_path / "ds")
    data = io.load_dataset(ds)
    io.save_cameras(tmp_path / "cams.json", [data.cameras[i] for i in data.camera_index[:, 0]])
    code = main(["ik-fit", "--skeleton", "body_sign19", "--cameras", str(tmp_path / "cams.json"),
                 "--observations", str(ds / "view0.jsonl"), str(ds / "view1.jsonl"),
                 "--out", str(tmp_path / "ik.jsonl"), "--iters", "200"])
    assert code == 0
    poses = io.load_poses(tmp_path / "ik.jsonl")
    err = np.linalg.norm(np.stack([p.positions for p in poses]) - data.positions, axis=-1)
    assert err.mean() < 0.5
    assert main(["ik-fit", "--skeleton", "body_sign19", "--cameras", str(tmp_path / "cams.json"),
                 "--observations", str(ds / "view0.jsonl"), "--out", str(tmp_path / "x.jsonl")]) == 2


def test_seed_env_override(tmp_path, monkeypatch):
    a = main(["synth", "--skeleton", "hand26", "--frames", "5", "--seed", "1", "--out", str(tmp_path / "a")])
    monkeypatch.setenv("KINELIFT_SEED", "1")
    b = main(["synth", "--skeleton", "hand26", "--frames", "5", "--seed", "99", "--out", str(tmp_path / "b")])
    assert a == b == 0
    assert (tmp_path / "a" / "view0.jsonl").read_text() == (tmp_path / "b" / "view0.jsonl").read_text()


def test_identical_runs_identical_files(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--skeleton", "body_sign19", "--frames", "60", "--seed", "4",
                     "--out", str(tmp_path / name)]) == 0
    for f in ("meta.json", "view0.jsonl", "poses.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
