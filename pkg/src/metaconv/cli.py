"""Command-line entry point: ``metaconv <command> ...``.

Exit codes: 0 success, 1 runtime failure (including divergence), 2 usage or
configuration error. ``MCF_SEED`` overrides every seed taken from a config file
or flag default.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import formats
from .errors import DivergenceError, InvalidInputError, ParseError
from .fourier import phase_to_orientation, psf_from_phase
from .layout import build_target_psf, extract_feature_map
from .optical import optical_forward
from .phaseopt import OptimizerConfig, optimize_phase
from .sensor import NoiseModel
from .spectral import crosstalk_matrix, ideal_crosstalk, sample_curves
from .suffix import SuffixNetwork, conv2d_same
from .trainer import (TEST_ID_OFFSET, evaluate, load_config, load_data, make_optics, read_report,
                      run_directory, train_three_step)

log = logging.getLogger("metaconv")

DESIGN_KEYS = {"kernels", "pad", "mask_resolution", "target_efficiency"}
RUN_FILES = ("config.txt", "report.txt", "kernels.mck", "layout.txt", "phase_step2.mcf",
             "phase_final.mcf", "phase_trace.csv", "net_step1.mcn", "net_final.mcn", "crosstalk.mcf")


class UsageError(Exception):
    pass


def _seed(default):
    env = os.environ.get("MCF_SEED")
    return int(env) if env is not None else default


def _require(path, what="file"):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_scene(path):
    if path.endswith(".mcf"):
        return formats.read_mcf(path)
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float).transpose(2, 0, 1) / 255.0


def _write_channels_pgm(prefix, planes):
    paths = []
    for c, plane in enumerate(np.asarray(planes)):
        path = f"{prefix}_c{c}.pgm"
        formats.write_pgm16(path, plane)
        paths.append(path)
    return paths


def _tile_maps(maps, cols=None):
    """Arrange ``(K, S, S)`` maps in a grid image with one-pixel gutters."""
    k, s, _ = maps.shape
    cols = cols or int(np.ceil(np.sqrt(k)))
    rows = int(np.ceil(k / cols))
    out = np.full((rows * (s + 1) - 1, cols * (s + 1) - 1), np.nan)
    for j in range(k):
        r, c = divmod(j, cols)
        out[r * (s + 1):r * (s + 1) + s, c * (s + 1):c * (s + 1) + s] = maps[j]
    return np.where(np.isnan(out), np.nanmin(out), out)


# --- commands -----------------------------------------------------------------

def cmd_design(args):
    kv = formats.read_kv(_require(args.config, "config"))
    unknown = set(kv) - DESIGN_KEYS
    if unknown:
        raise UsageError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    if "kernels" not in kv:
        raise UsageError("config field 'kernels' is required")
    base = os.path.dirname(os.path.abspath(args.config))
    kpath = os.path.join(base, kv["kernels"])
    kernels = formats.read_mck(_require(kpath, "kernel file"))
    try:
        pad = int(kv.get("pad", 20))
        n = int(kv.get("mask_resolution", 512))
        eff = float(kv.get("target_efficiency", 0.8))
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from None
    target = build_target_psf(kernels, pad, n, eff)
    os.makedirs(args.out, exist_ok=True)
    formats.write_mcf(os.path.join(args.out, "target.mcf"), target.values)
    formats.write_layout(os.path.join(args.out, "layout.txt"), target.layout)
    _write_channels_pgm(os.path.join(args.out, "target"), target.values)
    lay = target.layout
    print(f"{len(lay.tile_centers)} tiles ({lay.grid_rows}x{lay.grid_cols}, tile size {lay.tile_size}) "
          f"in a {n}x{n} target, {target.values.shape[0]} channels -> {args.out}")


def cmd_optimize_phase(args):
    target = formats.read_mcf(_require(args.target, "target"))
    cfg = OptimizerConfig(iterations=args.iterations, step_rule=args.rule,
                          learning_rate=args.lr, seed=_seed(args.seed), log_every=args.log_every,
                          precision=args.precision)
    os.makedirs(args.out, exist_ok=True)

    def checkpoint(it, phase):
        formats.write_mcf(os.path.join(args.out, f"phase_{it:06d}.mcf"), phase)

    try:
        phase, trace = optimize_phase(target, cfg, checkpoint=checkpoint if args.log_every else None)
    except DivergenceError as exc:
        formats.write_trace_csv(os.path.join(args.out, "trace.csv"), exc.trace.losses)
        raise
    formats.write_mcf(os.path.join(args.out, "phase.mcf"), phase)
    formats.write_trace_csv(os.path.join(args.out, "trace.csv"), trace.losses)
    print(f"loss {trace.initial_loss:.6g} -> {trace.best_loss:.6g} "
          f"({trace.reduction:.1f}x) in {cfg.iterations} iterations")


def cmd_simulate(args):
    phase = formats.read_mcf(_require(args.phase, "phase"))
    scene = _load_scene(_require(args.scene, "scene"))
    c = len(phase)
    if args.crosstalk == "ideal":
        xt = ideal_crosstalk(c)
    else:
        xt = crosstalk_matrix(*sample_curves()).normalized()
    gains = None
    layout = None
    if args.layout:
        layout = formats.read_layout(_require(args.layout, "layout"))
        gains = layout.channel_gains()
    noise = NoiseModel(args.noise_mean, args.noise_k, _seed(args.seed))
    sensor = optical_forward(scene, phase, xt, noise, gains)
    os.makedirs(args.out, exist_ok=True)
    formats.write_mcf(os.path.join(args.out, "sensor.mcf"), sensor.values)
    formats.write_pgm16(os.path.join(args.out, "sensor.pgm"), sensor.values)
    if layout is not None:
        feats = extract_feature_map(sensor, layout, scene.shape[-1])
        formats.write_mcf(os.path.join(args.out, "features.mcf"), feats)
    print(f"sensor image written to {args.out}")


def cmd_train(args):
    config = _config(args.config)
    run_dir = run_directory(args.runs, config)
    report = train_three_step(config, run_dir)
    print(f"run directory: {run_dir}")
    print(report.summary(), end="")


def _config(path):
    try:
        return load_config(_require(path, "config"))
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _check_run(run_dir):
    missing = [f for f in RUN_FILES if not os.path.exists(os.path.join(run_dir, f))]
    if missing:
        raise UsageError(f"run directory {run_dir} is missing: {', '.join(missing)}")


def _load_run(run_dir):
    _check_run(run_dir)
    j = lambda f: os.path.join(run_dir, f)  # noqa: E731
    config = _config(j("config.txt"))
    return {
        "config": config,
        "kernels": formats.read_mck(j("kernels.mck")),
        "layout": formats.read_layout(j("layout.txt")),
        "phase_step2": formats.read_mcf(j("phase_step2.mcf")),
        "phase_final": formats.read_mcf(j("phase_final.mcf")),
        "net_step1": SuffixNetwork(formats.read_tensors(j("net_step1.mcn"))),
        "net_final": SuffixNetwork(formats.read_tensors(j("net_final.mcn"))),
        "crosstalk": formats.read_mcf(j("crosstalk.mcf"))[0],
        "report": read_report(run_dir),
    }


def cmd_evaluate(args):
    run = _load_run(args.run)
    _, _, test_x, test_y = load_data(run["config"])
    ev = evaluate(run["config"], run["phase_final"], run["net_final"], test_x, test_y,
                  run["crosstalk"], run["layout"])
    print(f"accuracy {ev.accuracy:.4f}  log loss {ev.loss:.4f}")
    print("confusion (rows: true, cols: predicted)")
    for row in ev.confusion:
        print(" ".join(f"{v:5d}" for v in row))


def cmd_export_orientations(args):
    try:
        phase = formats.read_mcf(_require(args.phase, "phase"))
    except ParseError as exc:
        raise UsageError(str(exc)) from None
    formats.write_orientation_csv(args.out, phase_to_orientation(phase))
    print(f"{phase.size} orientations written to {args.out}")


def cmd_report(args):
    run = _load_run(args.run)
    config, report = run["config"], run["report"]
    _, _, test_x, _ = load_data(config)
    scene = test_x[:1]
    digital = conv2d_same(scene, run["kernels"])[0]
    optics = make_optics(config, run["layout"], run["crosstalk"])
    optical, _ = optics.forward(scene, psf_from_phase(run["phase_step2"]), [TEST_ID_OFFSET])
    optical = optical[0]
    rel = float(np.linalg.norm(optical - digital) / np.linalg.norm(digital))
    lo, hi = min(digital.min(), optical.min()), max(digital.max(), optical.max())
    formats.write_pgm16(os.path.join(args.run, "features_digital.pgm"), _tile_maps(digital), lo, hi)
    formats.write_pgm16(os.path.join(args.run, "features_optical.pgm"), _tile_maps(optical), lo, hi)
    losses = formats.read_trace_csv(os.path.join(args.run, "phase_trace.csv"))
    with open(os.path.join(args.run, "loss_curves.csv"), "w", newline="\n") as fh:
        fh.write("stage,index,loss\n")
        for stage, values in (("phase", losses), ("step1", report.step1_losses),
                              ("step3", report.step3_losses)):
            fh.write("".join(f"{stage},{i},{float(v)!r}\n" for i, v in enumerate(values)))
    _plot_losses(os.path.join(args.run, "loss_curves.png"), losses, report)
    formats.write_kv(os.path.join(args.run, "feature_comparison.txt"),
                     {"feature_rel_l2": rel, "test_sample": 0})
    print(report.summary(), end="")
    print(f"digital vs optical feature maps (test sample 0): relative L2 {rel * 100:.2f}%")


def _plot_losses(path, phase_losses, report):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].semilogy(phase_losses)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("PSF loss")
    axes[1].plot(report.step1_losses, label="step 1 (digital)")
    axes[1].plot(np.arange(len(report.step3_losses)), report.step3_losses, label="step 3 (fine-tune)")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("log loss")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# --- parser ---------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="metaconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("design", help="tile kernels into a target PSF")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="design")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("optimize-phase", help="optimise a phase mask for a target PSF")
    s.add_argument("--target", required=True)
    s.add_argument("--out", default="phase")
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--rule", choices=("adaptive-moment", "fixed"), default="adaptive-moment")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-every", type=int, default=0, help="checkpoint interval (0: none)")
    s.add_argument("--precision", choices=("double", "single"), default="double")
    s.set_defaults(func=cmd_optimize_phase)

    s = sub.add_parser("simulate", help="simulate sensor capture of a scene")
    s.add_argument("--phase", required=True)
    s.add_argument("--scene", required=True, help="PPM/PNG image or MCF1 array (C, S, S)")
    s.add_argument("--layout", help="layout sidecar; also writes the extracted feature map")
    s.add_argument("--crosstalk", choices=("ideal", "bundled"), default="ideal")
    s.add_argument("--noise-k", type=float, default=0.01)
    s.add_argument("--noise-mean", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="simulation")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="run the three-step training protocol")
    s.add_argument("--config", required=True)
    s.add_argument("--runs", default="runs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a finished run on its test split")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export-orientations", help="write meta-element angles as CSV")
    s.add_argument("--phase", required=True)
    s.add_argument("--out", default="orientations.csv")
    s.set_defaults(func=cmd_export_orientations)

    s = sub.add_parser("report", help="feature-map comparison and loss plots for a run")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (UsageError, InvalidInputError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
