import json

import numpy as np
import pytest

from symface.cli import main
from symface.masking import organ_mask, save_mask_png
from symface.scs import MirrorFill, scs
from symface.toyfaces import generate_face, load_image_png, read_dataset, save_image_png

TINY_CONFIG = """\
# tiny model for fast command tests
embed_dim = 8
depths = 2,2
heads = 1,2
window_size = 2
patch_size = 2
disc_channels = 4
batch_size = 2
max_steps = 2
checkpoint_interval = 1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-dataset", "--out", str(root / "data"), "--count", "4", "--size", "32"]) == 0
    (root / "tiny.cfg").write_text(TINY_CONFIG)
    assert main(["train", "--data", str(root / "data"), "--config", str(root / "tiny.cfg"),
                 "--out", str(root / "run")]) == 0
    return root


def test_make_dataset(workspace):
    samples = read_dataset(workspace / "data")
    assert [s.seed for s in samples] == [0, 1, 2, 3]
    assert np.array_equal(samples[2].parts.labels, generate_face(2, 32).parts.labels)
    manifest = json.loads((workspace / "data" / "run_manifest.json").read_text())
    assert manifest["command"] == "make-dataset" and "torch" in manifest["versions"]


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "train_log.csv").read_text().count("\n") == 3
    names = sorted(p.name for p in (run / "checkpoints").iterdir())
    assert names == ["last.npz", "step_000001.npz", "step_000002.npz"]
    assert (run / "run_manifest.json").is_file()


def test_train_resume(workspace, tmp_path):
    out = tmp_path / "resumed"
    code = main(["train", "--data", str(workspace / "data"), "--config", str(workspace / "tiny.cfg"),
                 "--out", str(out), "--resume", str(workspace / "run" / "checkpoints" / "step_000001.npz")])
    assert code == 0
    assert (out / "checkpoints" / "last.npz").is_file()


def test_train_bad_key(workspace, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(TINY_CONFIG + "learning_rate = 0.1\n")
    code = main(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_inputs_exit_3(tmp_path, workspace):
    assert main(["train", "--data", str(tmp_path / "none"), "--config", str(workspace / "tiny.cfg"),
                 "--out", str(tmp_path / "o")]) == 3
    assert main(["scs", "--inpainter", "mirror", "--data", str(tmp_path / "none"),
                 "--target", "eye", "--out", str(tmp_path / "s")]) == 3


def test_usage_error_exit_2(tmp_path):
    assert main(["scs", "--inpainter", "mirror"]) == 2
    assert main(["scs", "--inpainter", "bogus", "--data", str(tmp_path), "--target", "eye",
                 "--out", str(tmp_path / "s")]) == 2


def test_inpaint_composite(workspace, tmp_path):
    sample = generate_face(5, 32)
    save_image_png(sample.image, tmp_path / "face.png")
    hole = organ_mask(sample, "eye", "right").grid
    save_mask_png(hole, tmp_path / "mask.png")
    ckpt = str(workspace / "run" / "checkpoints" / "last.npz")
    common = ["inpaint", "--ckpt", ckpt, "--image", str(tmp_path / "face.png"), "--mask", str(tmp_path / "mask.png")]
    assert main(common + ["--out", str(tmp_path / "a.png")]) == 0
    assert main(common + ["--out", str(tmp_path / "b.png"), "--no-composite"]) == 0
    a, b = load_image_png(tmp_path / "a.png"), load_image_png(tmp_path / "b.png")
    known = hole == 0
    assert np.array_equal(a[known], load_image_png(tmp_path / "face.png")[known])
    assert np.array_equal(a[~known], b[~known])
    assert not np.array_equal(a[known], b[known])
    assert (tmp_path / "a.png.run_manifest.json").is_file()


def test_scs_matches_library(tmp_path):
    assert main(["make-dataset", "--out", str(tmp_path / "d"), "--count", "1", "--size", "128", "--seed", "7"]) == 0
    out = tmp_path / "scs"
    assert main(["scs", "--inpainter", "mirror", "--data", str(tmp_path / "d"), "--target", "eye",
                 "--out", str(out)]) == 0
    expected = scs(MirrorFill(), read_dataset(tmp_path / "d")[0], "eye")  # PNG-quantized pixels
    assert float((out / "scs.txt").read_text()) == pytest.approx(expected, abs=1e-12)
    for K in (16, 32, 64):
        assert (out / f"heatmap_K{K}.png").is_file()
    assert (out / "heatmap.csv").is_file() and (out / "scs_per_sample.csv").is_file()


def test_heatmap_command(workspace, tmp_path):
    assert main(["heatmap", "--inpainter", "local:3", "--data", str(workspace / "data"),
                 "--K", "8", "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h" / "heatmap_K8.png").is_file()
    assert main(["heatmap", "--inpainter", "local:3", "--data", str(workspace / "data"),
                 "--K", "12", "--out", str(tmp_path / "h")]) == 2


def test_eval(workspace, tmp_path):
    out = tmp_path / "report.json"
    code = main(["eval", "--ckpt", str(workspace / "run" / "checkpoints" / "last.npz"),
                 "--data", str(workspace / "data"), "--out", str(out), "--metrics", "fid,pixel,symmetry"])
    assert code == 0
    report = out.read_text()
    for name in ("fid", "pixel", "symmetry"):
        assert name in report
    assert (tmp_path / "report.json.run_manifest.json").is_file()
