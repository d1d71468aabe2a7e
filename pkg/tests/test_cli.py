import csv
import json

import numpy as np
import pytest

from polarlrp import synthetic as syn
from polarlrp.augment import ZeroPad, augment_image
from polarlrp.cli import main
from polarlrp.imageio import load_image, save_image
from polarlrp.modelio import ModelBuilder, save_model


@pytest.fixture
def dense_fixture(tmp_path):
    """dense(2->1) with w=[2,-1]; a white 1x2 image scores sigmoid(1) ~ 0.73."""
    model = ModelBuilder((1, 1, 2)).flatten().dense([[2.0, -1.0]], [0.0]).sigmoid().build()
    save_model(model, tmp_path / "model.json", tmp_path / "weights.bin")
    save_image(np.ones((1, 1, 2)), tmp_path / "white.png")
    return tmp_path


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def explain_args(d, *extra):
    return ["explain", "--model", d / "model.json", "--weights", d / "weights.bin",
            "--image", d / "white.png", "--size", "4x8", *extra]


def test_explain_auto_polarity(dense_fixture, capsys):
    d = dense_fixture
    code, _, err = run(capsys, *explain_args(d, "--out", d / "heat.png", "--raw-out", d / "rel.json"))
    assert code == 0, err
    side = json.loads((d / "heat.json").read_text())
    assert side["polarity"] == "positive"
    assert side["score"] == pytest.approx(0.7310585786300049, abs=1e-12)
    assert side["initialRelevance"] == side["score"]
    assert side["leakedRelevance"] == 0.0
    assert len(side["perLayerSums"]) == 3
    heat = load_image(d / "heat.png")
    assert heat.shape == (1, 4, 8)
    assert heat.array[0, 0].tolist() == [1.0] * 4 + [0.0] * 4
    assert (d / "rel.bin").stat().st_size == 8


def test_explain_forced_negative(dense_fixture, capsys):
    d = dense_fixture
    code, _, _ = run(capsys, *explain_args(d, "--polarity", "negative", "--init-relevance", "one",
                                           "--out", d / "neg.png"))
    assert code == 0
    side = json.loads((d / "neg.json").read_text())
    assert side["polarity"] == "negative" and side["initialRelevance"] == 1.0
    assert load_image(d / "neg.png").array[0, 0].tolist() == [0.0] * 4 + [1.0] * 4


def test_missing_weights_writes_nothing(dense_fixture, capsys):
    d = dense_fixture
    (d / "weights.bin").unlink()
    code, out, err = run(capsys, *explain_args(d, "--out", d / "heat.png", "--raw-out", d / "rel.json"))
    assert code == 2
    assert not (d / "heat.png").exists() and not (d / "heat.json").exists() and not (d / "rel.json").exists()
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["exitCode"] == 2


def test_shape_mismatch_is_data_error(dense_fixture, capsys):
    d = dense_fixture
    save_image(np.ones((1, 3, 3)), d / "white.png")
    code, _, err = run(capsys, *explain_args(d, "--out", d / "heat.png"))
    assert code == 2
    assert json.loads(err)["error"] == "ShapeError"


@pytest.mark.parametrize("args", [[], ["explain"], ["bogus"], ["augment", "--image", "x.png", "--op", "spin",
                                                                 "--out", "y.png"]])
def test_usage_errors_exit_1(capsys, args):
    code, _, err = run(capsys, *args)
    assert code == 1
    assert json.loads(err)["error"] == "usage"


def make_checkpoints(root, probs):
    base = syn.galaxy_disk_discriminator()
    image = syn.ring_perturbed_image()
    for it, p in probs:
        d = root / "ckpt" / str(it)
        d.mkdir(parents=True)
        save_model(syn.with_output_bias(base, image, p), d / "model.json", d / "weights.bin")
    save_image(image.array, root / "ring.png")


def test_trajectory(tmp_path, capsys):
    make_checkpoints(tmp_path, [(1000, 0.001), (200, 0.001), (3000, 0.003)])
    (tmp_path / "ckpt" / "notes").mkdir()
    code, _, err = run(capsys, "trajectory", tmp_path / "ckpt", "--image", tmp_path / "ring.png",
                       "--out", tmp_path / "out", "--size", "64x64")
    assert code == 0, err
    assert "notes" in err and "warning" in err
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["heatmap_1000.png", "heatmap_200.png", "heatmap_3000.png", "panel.png", "trajectory.csv"]
    rows = list(csv.reader((tmp_path / "out" / "trajectory.csv").open()))
    assert [r[0] for r in rows[1:]] == ["200", "1000", "3000"]
    assert rows[1][1:] == rows[2][1:]
    assert float(rows[3][1]) == pytest.approx(0.003, rel=1e-4)
    panel = load_image(tmp_path / "out" / "panel.png")
    assert panel.shape[1:] == (64 + 14, 3 * 64 + 2)


def test_trajectory_needs_two_checkpoints(tmp_path, capsys):
    make_checkpoints(tmp_path, [(1, 0.01)])
    code, _, _ = run(capsys, "trajectory", tmp_path / "ckpt", "--image", tmp_path / "ring.png",
                     "--out", tmp_path / "out")
    assert code == 2
    assert not (tmp_path / "out").exists()


def test_diagnose_background(tmp_path, capsys):
    img = augment_image(np.full((1, 40, 40), 0.5), [syn.aug.Translate(20, 0)], ZeroPad())
    save_image(img.array, tmp_path / "a.png")
    code, out, _ = run(capsys, "diagnose-background", "--image", tmp_path / "a.png",
                       "--region", "0,0,20,20", "--region", "20,20,20,20", "--out", tmp_path / "r.json")
    assert code == 0
    report = json.loads(out)
    assert report == json.loads((tmp_path / "r.json").read_text())
    assert report["histograms"][0]["bins"][0] == 400
    assert report["comparisons"][0]["chiSquare"] == 800.0
    code, _, _ = run(capsys, "diagnose-background", "--image", tmp_path / "a.png", "--region", "0,0,50,50",
                     "--region", "0,0,50,50")
    assert code == 2


def boundary_fixture(root, padding, n=3):
    save_model(syn.padding_edge_discriminator(64), root / "edge.json", root / "edge.bin")
    rng = np.random.default_rng(5)
    paths = []
    for i in range(n):
        img = syn.galaxy_image(64, rng, sky_sigma=syn.PRE_AUGMENT_SKY_SIGMA)
        out = augment_image(img, syn.random_augmentation(rng), padding)
        paths.append(root / f"img{i}.png")
        save_image(out.array, paths[-1])
    return paths


def test_detect_boundary_check_mode(tmp_path, capsys):
    images = boundary_fixture(tmp_path, ZeroPad())
    args = ["detect-boundary", "--model", tmp_path / "edge.json", "--weights", tmp_path / "edge.bin"]
    for p in images:
        args += ["--image", p]
    code, out, _ = run(capsys, *args, "--polarity", "positive", "--check")
    assert code == 3
    assert json.loads(out)["detected_rect"] is not None
    code, _, _ = run(capsys, *args, "--polarity", "positive")
    assert code == 0
    code, _, _ = run(capsys, *args, "--polarity", "positive", "--threshold", "1000", "--check")
    assert code == 0


def test_detect_boundary_from_raw_maps(tmp_path, capsys):
    images = boundary_fixture(tmp_path, ZeroPad(), n=2)
    maps = []
    for i, p in enumerate(images):
        code, _, err = run(capsys, "explain", "--model", tmp_path / "edge.json", "--weights",
                           tmp_path / "edge.bin", "--image", p, "--out", tmp_path / f"h{i}.png",
                           "--raw-out", tmp_path / f"r{i}.json")
        assert code == 0, err
        maps += ["--map", tmp_path / f"r{i}.json"]
    code, _, _ = run(capsys, "detect-boundary", *maps, "--check", "--json")
    assert code == 3


def test_augment_noise(tmp_path, capsys):
    save_image(np.full((1, 16, 16), 0.5), tmp_path / "in.png")
    code, _, _ = run(capsys, "augment", "--image", tmp_path / "in.png", "--op", "translate=4,0",
                     "--pad", "noise", "--noise-mu", "0.5", "--noise-sigma", "0.2", "--out", tmp_path / "o.png")
    assert code == 0
    out = load_image(tmp_path / "o.png").array
    assert out[0, :, :4].std() > 0.05
    assert (out[0, :, 4:] == 128 / 255).all()


def test_metrics_same_image(tmp_path, capsys):
    save_image(np.random.default_rng(0).uniform(size=(1, 16, 16)), tmp_path / "a.png")
    code, out, _ = run(capsys, "metrics", tmp_path / "a.png", tmp_path / "a.png")
    assert code == 0
    report = json.loads(out)
    assert report["ssim"] == 1.0 and report["psnr"] == "inf" and report["mse"] == 0.0


def test_verify_bias_free_fixture(tmp_path, capsys):
    # relu-only, bias-free, real verdict: relevance can only reach units with a positive contribution
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 2, 3, 3))
    w[0] = np.abs(w[0])
    model = (ModelBuilder((2, 8, 8)).conv2d(w, padding=1).relu().max_pool(2).conv2d(rng.normal(size=(2, 3, 3, 3)))
             .relu().flatten().dense(rng.uniform(0.1, 1.0, size=(4, 8))).relu()
             .dense([[1.0, 0.5, 0.2, 0.7]]).sigmoid().build())
    save_model(model, tmp_path / "m.json", tmp_path / "m.bin")
    code, out, _ = run(capsys, "verify", "--model", tmp_path / "m.json", "--weights", tmp_path / "m.bin",
                       "-n", "100", "--json")
    assert code == 0
    report = json.loads(out)
    assert report["samples"] == 100
    assert report["worstResidual"] <= 1e-9
    assert report["worstUnaccounted"] <= 1e-9
    assert report["totalLeakedRelevance"] == 0.0
