import json
import os

import pytest

from app.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run

SMALL = ["--shape", "3,4,8,8"]


def _effective(out: str) -> dict:
    # gen-data echoes its own line first when a test prepares data in the same capture
    line = [l for l in out.splitlines() if l.startswith("effective-config: ")][-1]
    return json.loads(line[len("effective-config: "):])


def _gen(path, count=6, seed=7):
    return run(["gen-data", "--out", str(path), "--count", str(count), "--seed", str(seed), *SMALL])


def test_gen_data_is_reproducible(tmp_path, capsys):
    assert _gen(tmp_path / "a") == EXIT_OK
    assert _gen(tmp_path / "b") == EXIT_OK
    names = sorted(os.listdir(tmp_path / "a"))
    assert "manifest.csv" in names and len(names) == 7
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _effective(capsys.readouterr().out)["seed"] == 7


def test_train_without_data_is_usage_error(tmp_path, capsys):
    code = run(["train", "--out", str(tmp_path / "m.gmlc")])
    assert code == EXIT_USAGE
    assert os.listdir(tmp_path) == []
    assert "usage:" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert run(["gradcheck", "--bogus"]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE


def test_bad_shape_is_usage_error(tmp_path):
    assert run(["gen-data", "--out", str(tmp_path), "--shape", "3,8,32"]) == EXIT_USAGE
    assert run(["gen-data", "--out", str(tmp_path), "--shape", "3,8,32,32", "--region-fraction", "2"]) == EXIT_USAGE


def test_config_file_with_flag_override(tmp_path, capsys):
    data = tmp_path / "data"
    _gen(data)
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"# toy run\ndata = {data}\nsteps = 2\nlr = 0.05\nbatch = 3\nmode = stm\n")
    out = tmp_path / "m.gmlc"
    code = run(["train", "--config", str(cfg), "--out", str(out), "--lr", "0.01"])
    assert code == EXIT_OK
    resolved = _effective(capsys.readouterr().out)
    assert resolved["lr"] == 0.01 and resolved["steps"] == 2 and resolved["mode"] == "stm"
    assert out.exists()


def test_grad_clip_flag_can_disable_clipping(tmp_path, capsys):
    data = tmp_path / "data"
    _gen(data)
    code = run(["train", "--data", str(data), "--out", str(tmp_path / "m.gmlc"), "--steps", "1", "--batch", "3",
                "--grad-clip", "0"])
    assert code == EXIT_OK
    assert _effective(capsys.readouterr().out)["grad_clip"] == 0.0


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    assert run(["train", "--config", str(cfg), "--data", "d", "--out", str(tmp_path / "m")]) == EXIT_USAGE


def test_train_eval_heatmap_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    assert _gen(data, count=8) == EXIT_OK
    ckpt, log, report = tmp_path / "m.gmlc", tmp_path / "log.csv", tmp_path / "report.csv"
    code = run(["train", "--data", str(data), "--out", str(ckpt), "--steps", "3", "--batch", "4",
                "--seed", "1", "--log", str(log), "--ad-losses", "no-cls"])
    assert code == EXIT_OK
    assert log.read_text().startswith("step,l_cls1,l_l1,l_cls2,total\n")

    assert run(["eval", "--data", str(data), "--ckpt", str(ckpt), "--report", str(report)]) == EXIT_OK
    rows = report.read_text().splitlines()
    assert rows[0] == "metric,value" and [r.split(",")[0] for r in rows[1:]] == ["acc", "auc"]

    prefix = tmp_path / "hm" / "seq"
    prefix.parent.mkdir()
    code = run(["heatmap", "--ckpt", str(ckpt), "--input", str(data / "sample_00000.gmlt"), "--out", str(prefix)])
    assert code == EXIT_OK
    assert sorted(os.listdir(prefix.parent)) == [f"seq_t{t}.pgm" for t in range(4)]


def test_resume_from_cli(tmp_path):
    data = tmp_path / "data"
    _gen(data)
    first, second, straight = tmp_path / "a.gmlc", tmp_path / "b.gmlc", tmp_path / "c.gmlc"
    common = ["--data", str(data), "--batch", "4", "--seed", "2"]
    assert run(["train", *common, "--out", str(first), "--steps", "1"]) == EXIT_OK
    assert run(["train", *common, "--out", str(second), "--steps", "3", "--resume", str(first)]) == EXIT_OK
    assert run(["train", *common, "--out", str(straight), "--steps", "3"]) == EXIT_OK
    assert second.read_bytes() == straight.read_bytes()


def test_missing_checkpoint_is_runtime_error(tmp_path):
    data = tmp_path / "data"
    _gen(data)
    assert run(["eval", "--data", str(data), "--ckpt", str(tmp_path / "absent.gmlc")]) == EXIT_RUNTIME


def test_gradcheck_single_op(capsys):
    assert run(["gradcheck", "--seed", "1", "--op", "relu"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "relu" in out and "ok" in out


@pytest.mark.slow
def test_gradcheck_all_ops():
    assert run(["gradcheck", "--seed", "1"]) == EXIT_OK
