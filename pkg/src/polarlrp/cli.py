"""``polarlrp`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or model error, 3 a phantom
boundary was detected by ``detect-boundary --check``.  Failures print one
JSON line to standard error and leave no partial outputs behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .diagnostics import (DEFAULT_BOUNDARY_THRESHOLD, compare_trajectory, detect_phantom_boundary,
                          histogram_divergence, ks_statistic, region_histogram, trajectory_csv)
from .imageio import ImageFormatError, load_image, save_image
from .inference import forward
from .lrp import PropagationError, conservation_report, explain, worst_residual
from .metrics import mse, psnr, ssim
from .modelio import ModelFormatError, load_model, load_tensors, save_tensors
from .render import HeatmapConfig, render_heatmap, render_side_by_side, write_image
from .tensor import NonFiniteError, ShapeError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DETECTED = 3
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- argument helpers --------------------------------------------------------

def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _region(text: str) -> tuple[int, int, int, int]:
    try:
        x, y, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,w,h, got {text!r}") from None
    return x, y, w, h


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return value


def _op(text: str):
    try:
        return aug.parse_op(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_model_args(p, required=True):
    p.add_argument("--model", required=required, help="model manifest (JSON)")
    p.add_argument("--weights", required=required, help="model weight blob")


def _add_explain_args(p):
    p.add_argument("--polarity", choices=["auto", "positive", "negative"], default="auto")
    p.add_argument("--init-relevance", choices=["prob", "one", "logit"], default="prob")


def _add_render_args(p):
    p.add_argument("--colormap", choices=["grayscale", "heat"], default="grayscale")
    p.add_argument("--clip", type=float, default=99.0, help="clip percentile in (50, 100]")
    p.add_argument("--size", type=_size, default=(256, 256), help="heatmap size HxW")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polarlrp", description="Polarized relevance maps and data-preparation diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("explain", help="relevance heatmap for one image")
    _add_model_args(p)
    p.add_argument("--image", required=True)
    _add_explain_args(p)
    _add_render_args(p)
    p.add_argument("--out", required=True, help="heatmap image (.png/.pgm/.ppm); sidecar goes next to it as .json")
    p.add_argument("--raw-out", help="raw relevance manifest; the blob is written with a .bin suffix")

    p = sub.add_parser("trajectory", help="explain one image under a series of checkpoints")
    p.add_argument("checkpoints", help="directory of numerically named checkpoint subdirectories")
    p.add_argument("--image", required=True)
    _add_explain_args(p)
    _add_render_args(p)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("diagnose-background", help="compare intensity histograms of image regions")
    p.add_argument("--image", required=True)
    p.add_argument("--region", type=_region, action="append", required=True, help="x,y,w,h (repeatable)")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--json", action="store_true", help="accepted for symmetry; reports are always JSON")

    p = sub.add_parser("detect-boundary", help="look for a rectangular phantom boundary in relevance maps")
    p.add_argument("--map", action="append", default=[], help="raw relevance manifest from explain --raw-out (repeatable)")
    _add_model_args(p, required=False)
    p.add_argument("--image", action="append", default=[], help="image to explain (repeatable)")
    _add_explain_args(p)
    p.add_argument("--threshold", type=float, default=DEFAULT_BOUNDARY_THRESHOLD)
    p.add_argument("--check", action="store_true", help="exit 3 when a boundary is detected")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("augment", help="flip/rotate/shift/scale an image with controlled padding")
    p.add_argument("--image", required=True)
    p.add_argument("--op", type=_op, action="append", default=[],
                   help="flipH, flipV, rotate=DEG, translate=DX,DY or scale=F (repeatable, applied in order)")
    p.add_argument("--pad", choices=["zero", "noise"], default="zero")
    p.add_argument("--noise-mu", type=float, default=aug.NoisePad.mu)
    p.add_argument("--noise-sigma", type=float, default=aug.NoisePad.sigma)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("verify", help="check relevance conservation on seeded random inputs")
    _add_model_args(p)
    _add_explain_args(p)
    p.add_argument("-n", "--samples", type=int, default=100)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    return parser


# -- output helpers ----------------------------------------------------------

def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def _dumps(doc) -> str:
    return json.dumps(_json_value(doc), indent=2, sort_keys=False) + "\n"


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _report(doc, out) -> None:
    text = _dumps(doc)
    if out:
        _write_text(out, text)
    sys.stdout.write(text)


def _config(args) -> HeatmapConfig:
    try:
        return HeatmapConfig(args.colormap, args.clip, args.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_suffix(path) -> None:
    if Path(path).suffix.lower() not in (".png", ".pgm", ".ppm"):
        raise UsageError(f"output image must end in .png, .pgm or .ppm: {path}")


def _blob_path(manifest) -> Path:
    return Path(manifest).with_suffix(".bin")


def _sidecar(rmap) -> dict:
    return {
        "score": rmap.score,
        "polarity": rmap.polarity.value,
        "initialRelevance": rmap.initial_relevance,
        "leakedRelevance": rmap.leaked_relevance,
        "perLayerSums": list(rmap.per_layer_sums),
    }


# -- commands ----------------------------------------------------------------

def cmd_explain(args) -> int:
    config = _config(args)
    _check_suffix(args.out)
    model = load_model(args.model, args.weights)
    image = load_image(args.image)
    rmap = explain(model, image, args.polarity, init=args.init_relevance)
    heat = render_heatmap(rmap, config)
    out = Path(args.out)
    write_image(heat, out)
    _write_text(out.with_suffix(".json"), _dumps(_sidecar(rmap)))
    if args.raw_out:
        save_tensors({"relevance": rmap.array}, args.raw_out, _blob_path(args.raw_out),
                     {"polarity": rmap.polarity.value})
    return EXIT_OK


def _checkpoint_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise DataError(f"checkpoint directory not found: {root}")
    found = []
    for child in sorted(root.iterdir()):
        if not child.is_dir():
            continue
        if not child.name.isdigit():
            print(f"warning: skipping non-numeric checkpoint directory {child.name!r}", file=sys.stderr)
            continue
        found.append(child)
    found.sort(key=lambda p: (int(p.name), p.name))
    return found


def cmd_trajectory(args) -> int:
    config = _config(args)
    dirs = _checkpoint_dirs(Path(args.checkpoints))
    if len(dirs) < 2:
        raise DataError(f"need at least two numeric checkpoint directories, found {len(dirs)}")
    models = []
    for d in dirs:
        m = load_model(d / "model.json", d / "weights.bin")
        models.append(dataclasses.replace(m, metadata={**m.metadata, "iteration": d.name}))
    image = load_image(args.image)
    entries = compare_trajectory(models, image, args.polarity, bin_width=args.bin_width,
                                 init=args.init_relevance)
    heatmaps = [render_heatmap(e.relevance, config) for e in entries]
    labels = [f"it {e.iteration} p={e.score:.3f}" for e in entries]
    panel = render_side_by_side(heatmaps, labels)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for e, heat in zip(entries, heatmaps):
        write_image(heat, out / f"heatmap_{e.iteration}.png")
    write_image(panel, out / "panel.png")
    _write_text(out / "trajectory.csv", trajectory_csv(entries))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    if len(args.region) < 2:
        raise UsageError("diagnose-background needs at least two --region values")
    image = load_image(args.image)
    try:
        hists = [region_histogram(image, r) for r in args.region]
    except ValueError as exc:
        raise DataError(str(exc)) from None
    ref = hists[0]
    comparisons = []
    for i, h in enumerate(hists[1:], start=1):
        if h.count != ref.count:
            raise DataError(f"region {i} covers {h.count} pixels, region 0 covers {ref.count}")
        chi, gap = histogram_divergence(ref, h)
        comparisons.append({"against": i, "chiSquare": chi, "maxBinGap": gap, "ks": ks_statistic(ref, h)})
    _report({"histograms": [h.to_dict() for h in hists], "comparisons": comparisons}, args.out)
    return EXIT_OK


def cmd_detect_boundary(args) -> int:
    maps = []
    for manifest in args.map:
        tensors, _ = load_tensors(manifest, _blob_path(manifest))
        if "relevance" not in tensors:
            raise DataError(f"{manifest}: no 'relevance' tensor")
        maps.append(tensors["relevance"])
    if args.image:
        if not (args.model and args.weights):
            raise UsageError("--image requires --model and --weights")
        model = load_model(args.model, args.weights)
        for path in args.image:
            maps.append(explain(model, load_image(path), args.polarity, init=args.init_relevance))
    if not maps:
        raise UsageError("give relevance maps with --map or a model plus --image")
    report = detect_phantom_boundary(maps, args.threshold)
    _report(report.to_dict(), args.out)
    return EXIT_DETECTED if args.check and report.detected else EXIT_OK


def cmd_augment(args) -> int:
    _check_suffix(args.out)
    image = load_image(args.image)
    if args.pad == "noise":
        padding = aug.NoisePad(args.noise_mu, args.noise_sigma, args.seed)
    else:
        padding = aug.ZeroPad()
    try:
        result = aug.augment_image(image, args.op, padding)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    save_image(result.array, args.out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = load_image(args.a).array
    b = load_image(args.b).array
    _report({"mse": mse(a, b), "psnr": psnr(a, b), "ssim": ssim(a, b)}, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    model = load_model(args.model, args.weights)
    rng = np.random.default_rng(args.seed)
    worst, worst_unaccounted, total_leak, max_leak = 0.0, 0.0, 0.0, 0.0
    counts = {"positive": 0, "negative": 0}
    for _ in range(args.samples):
        image = rng.uniform(0.0, 1.0, size=model.input_shape)
        rmap = explain(model, image, args.polarity, init=args.init_relevance, trace=forward(model, image))
        worst = max(worst, worst_residual(rmap))
        for row in conservation_report(rmap):
            gap = abs(row.rel_sum_before - row.rel_sum_after - row.leaked_here)
            worst_unaccounted = max(worst_unaccounted, gap / max(abs(row.rel_sum_before), 1e-300))
        total_leak += rmap.leaked_relevance
        max_leak = max(max_leak, rmap.leaked_relevance)
        counts[rmap.polarity.value] += 1
    _report({"samples": args.samples, "seed": args.seed, "worstResidual": worst,
             "worstUnaccounted": worst_unaccounted, "totalLeakedRelevance": total_leak,
             "maxLeakedRelevance": max_leak, "polarityCounts": counts}, args.out)
    return EXIT_OK


COMMANDS = {
    "explain": cmd_explain,
    "trajectory": cmd_trajectory,
    "diagnose-background": cmd_diagnose,
    "detect-boundary": cmd_detect_boundary,
    "augment": cmd_augment,
    "metrics": cmd_metrics,
    "verify": cmd_verify,
}

DATA_ERRORS = (DataError, ModelFormatError, ImageFormatError, ShapeError, NonFiniteError,
               PropagationError, OSError)


def _fail(code: int, kind: str, message: str) -> int:
    line = json.dumps({"error": kind, "exitCode": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
