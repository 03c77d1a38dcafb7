"""Three-step hybrid training: digital pre-training, phase design, joint fine-tuning.

1. Train the first-layer kernels and the suffix network fully digitally.
2. Tile the trained kernels into a target PSF and optimise the phase mask.
3. Fine-tune phase and suffix together through the simulated optics, with the
   cross-talk matrix and noise model held fixed.
"""
import hashlib
import logging
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import formats
from .errors import InvalidInputError
from .fourier import psf_from_phase
from .layout import build_target_psf
from .optical import TiledOptics
from .optim import Adam
from .phaseopt import OptimizerConfig, optimize_phase
from .sensor import NoiseModel
from .spectral import (crosstalk_matrix, ideal_crosstalk, load_curve,
                       sample_curves, synth_pce)
from .suffix import (SuffixNetwork, conv2d_same, conv2d_same_kernel_grad, log_loss,
                     suffix_backward, suffix_forward)

log = logging.getLogger(__name__)

TEST_ID_OFFSET = 1_000_000
EPOCH_ID_STRIDE = 10_000_000


# --- synthetic data --------------------------------------------------------

def _shape_mask(shape, size, cy, cx, s):
    yy, xx = np.mgrid[:size, :size]
    dy, dx = yy - cy, xx - cx
    w = max(1, s // 3)
    if shape == 0:  # horizontal bar
        return (np.abs(dy) <= w) & (np.abs(dx) <= s)
    if shape == 1:  # vertical bar
        return (np.abs(dx) <= w) & (np.abs(dy) <= s)
    return dy ** 2 + dx ** 2 <= (s + 0.5) ** 2  # filled disk


def make_synthetic_dataset(num_classes=3, samples_per_class=200, size=32, seed=0):
    """RGB scenes of coloured shapes; the class depends on shape *and* colour.

    Shape ``s`` drawn in dominant channel ``c`` has label ``(s + c) % num_classes``,
    so neither shape nor colour alone determines the class. Returns
    ``(scenes (B, 3, size, size), labels)`` with classes interleaved.
    """
    if size < 8:
        raise InvalidInputError(f"size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    n = num_classes * samples_per_class
    labels = np.arange(n) % num_classes
    scenes = np.empty((n, 3, size, size))
    for i, label in enumerate(labels):
        shape = rng.integers(3)
        color = (label - shape) % num_classes % 3
        s = int(rng.integers(size // 8 + 1, size // 4 + 1))
        jitter = max(1, size // 10)
        cy, cx = size // 2 + rng.integers(-jitter, jitter + 1, size=2)
        mask = _shape_mask(shape, size, cy, cx, s)
        img = rng.uniform(0.0, 0.1, size=(3, size, size))
        levels = rng.uniform(0.0, 0.2, size=3)
        levels[color] = rng.uniform(0.6, 1.0)
        img[:, mask] += levels[:, None]
        scenes[i] = img
    return scenes, labels


def grayscale(scenes):
    """Channel-summed single-channel copy of a batch of scenes."""
    return np.asarray(scenes).sum(axis=1, keepdims=True)


# --- configuration ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Every scalar of a run. Serialised as ``key=value`` lines."""

    seed: int = 0
    dataset_dir: str = ""
    num_classes: int = 3
    train_per_class: int = 200
    test_per_class: int = 50
    image_size: int = 32
    num_kernels: int = 8
    kernel_size: int = 3
    channels: int = 3
    pad: int = 16
    mask_resolution: int = 256
    target_efficiency: float = 0.8
    crosstalk: str = "ideal"  # ideal | bundled | synthetic | files
    pce_files: str = ""
    spd_files: str = ""
    ssf_file: str = ""
    pce_width: float = 120.0
    spd_width: float = 60.0
    noise_mean: float = 0.0
    noise_k: float = 0.01
    noise_clamp: bool = False
    hidden: int = 64
    batch_size: int = 32
    step1_epochs: int = 20
    step1_lr: float = 1e-3
    phase_iterations: int = 2000
    phase_lr: float = 0.05
    phase_precision: str = "single"
    step3_epochs: int = 10
    step3_lr: float = 1e-4
    step3_phase_lr: float = 0.005

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is int and not isinstance(value, (int, np.integer)):
                raise InvalidInputError(f"{f.name} must be an integer, got {value!r}")
        positive = ("num_classes", "train_per_class", "test_per_class", "image_size", "num_kernels",
                    "kernel_size", "channels", "mask_resolution", "hidden", "batch_size",
                    "phase_iterations")
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.crosstalk not in ("ideal", "bundled", "synthetic", "files"):
            raise InvalidInputError(f"crosstalk must be ideal, bundled, synthetic or files, got {self.crosstalk!r}")
        if self.phase_precision not in ("single", "double"):
            raise InvalidInputError(f"phase_precision must be single or double, got {self.phase_precision!r}")
        if self.crosstalk == "files":
            paths = self.pce_files.split(",") + self.spd_files.split(",") + [self.ssf_file]
            for path in paths:
                if not path or not os.path.exists(path):
                    raise InvalidInputError(f"spectral curve file not found: {path!r}")
        if self.dataset_dir and not os.path.isdir(self.dataset_dir):
            raise InvalidInputError(f"dataset_dir not found: {self.dataset_dir!r}")

    def to_kv(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            if key not in known:
                raise InvalidInputError(f"unknown config field {key!r}")
            kind = known[key].type
            try:
                if kind is int:
                    kwargs[key] = int(raw)
                elif kind is float:
                    kwargs[key] = float(raw)
                elif kind is bool:
                    if raw.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(raw)
                    kwargs[key] = raw.lower() in ("true", "1")
                else:
                    kwargs[key] = raw
            except ValueError:
                raise InvalidInputError(f"config field {key!r}: cannot parse {raw!r} as {kind.__name__}") from None
        return cls(**kwargs)

    def replace(self, **changes):
        kv = self.to_kv()
        kv.update(changes)
        return ExperimentConfig(**kv)

    def digest(self):
        text = "\n".join(f"{k}={formats.format_value(v)}" for k, v in self.to_kv().items())
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def load_config(path):
    kv = formats.read_kv(path)
    seed = os.environ.get("MCF_SEED")
    if seed is not None:
        kv["seed"] = seed
    return ExperimentConfig.from_kv(kv)


def save_config(path, config):
    formats.write_kv(path, config.to_kv(), header="metaconv experiment config")


def build_crosstalk(config):
    """Cross-talk matrix for the configured spectra, scaled to unit mean diagonal."""
    if config.crosstalk == "ideal":
        return ideal_crosstalk(config.channels)
    if config.crosstalk == "bundled":
        pce, spd, ssf = sample_curves()
    elif config.crosstalk == "synthetic":
        centers = (480.0, 560.0, 640.0)
        grid = np.linspace(300.0, 850.0, 1101)
        pce = [synth_pce(c, config.pce_width, 0.9, grid) for c in centers]
        spd = [synth_pce(c, config.spd_width, 1.0, grid, kind="SPD") for c in centers]
        ssf = synth_pce(560.0, 400.0, 1.0, grid, kind="SSF")
    else:
        pce = [load_curve(p, "PCE") for p in config.pce_files.split(",")]
        spd = [load_curve(p, "SPD") for p in config.spd_files.split(",")]
        ssf = load_curve(config.ssf_file, "SSF")
    return crosstalk_matrix(pce, spd, ssf).normalized()


def load_data(config):
    """``(train_x, train_y, test_x, test_y)`` from ``dataset_dir`` or the synthetic generator."""
    if config.dataset_dir:
        x, y = formats.load_ppm_dataset(config.dataset_dir)
        n_test = config.test_per_class * config.num_classes
        return x[:-n_test], y[:-n_test], x[-n_test:], y[-n_test:]
    per = config.train_per_class + config.test_per_class
    x, y = make_synthetic_dataset(config.num_classes, per, config.image_size, config.seed)
    n_train = config.train_per_class * config.num_classes
    return x[:n_train], y[:n_train], x[n_train:], y[n_train:]


# --- evaluation -------------------------------------------------------------

@dataclass
class Evaluation:
    accuracy: float
    loss: float
    confusion: np.ndarray


def evaluate_features(net, features, labels):
    probs = suffix_forward(net, features)
    if probs.ndim == 1:
        probs = probs[None]
    pred = probs.argmax(axis=1)
    k = net.num_classes
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (labels, pred), 1)
    return Evaluation(float(np.mean(pred == labels)), float(np.mean(log_loss(probs, labels))), confusion)


def optical_features(optics, scenes, psfs, sample_ids, batch=64):
    out = []
    for i in range(0, len(scenes), batch):
        f, _ = optics.forward(scenes[i:i + batch], psfs, sample_ids[i:i + batch])
        out.append(f)
    return np.concatenate(out)


def evaluate(config, phase, net, scenes, labels, xtalk=None, layout=None, kernels=None,
             sample_ids=None):
    """Accuracy, mean log loss and confusion counts on a data split.

    With ``phase=None`` the all-digital path with ``kernels`` is evaluated.
    Noise seeds are keyed by ``sample_ids`` (default: position offset into the
    test range), so results do not depend on sample order when ids are given.
    """
    if phase is None:
        return evaluate_features(net, conv2d_same(scenes, kernels), labels)
    if sample_ids is None:
        sample_ids = TEST_ID_OFFSET + np.arange(len(scenes))
    optics = make_optics(config, layout, xtalk)
    feats = optical_features(optics, scenes, psf_from_phase(phase), sample_ids)
    return evaluate_features(net, feats, labels)


def make_optics(config, layout, xtalk):
    noise = NoiseModel(config.noise_mean, config.noise_k, config.seed, config.noise_clamp)
    return TiledOptics(layout, config.image_size, np.asarray(xtalk), layout.channel_gains(), noise)


# --- the three steps ---------------------------------------------------------

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train_digital(config, train_x, train_y):
    """Step 1: jointly train first-layer kernels and suffix on the digital path."""
    rng = np.random.default_rng([config.seed, 1])
    c, k = train_x.shape[1], config.kernel_size
    kernels = rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), size=(config.num_kernels, c, k, k))
    net = SuffixNetwork.init((config.num_kernels, config.image_size, config.image_size),
                             config.num_classes, config.hidden, seed=config.seed)
    params = dict(net.params, kernels=kernels)
    opt = Adam(config.step1_lr)
    losses = []
    for epoch in range(config.step1_epochs):
        total = 0.0
        for idx in _batches(len(train_x), config.batch_size, rng):
            x = train_x[idx]
            feats = conv2d_same(x, params["kernels"])
            grads, dfeat, probs = suffix_backward(net, feats, train_y[idx])
            grads["kernels"] = conv2d_same_kernel_grad(x, dfeat, k)
            total += float(np.sum(log_loss(probs, train_y[idx])))
            opt.step(params, {n: g / len(idx) for n, g in grads.items()})
        losses.append(total / len(train_x))
        log.info("step 1 epoch %d loss %.4f", epoch, losses[-1])
    return params["kernels"], net, losses


def design_phase(config, kernels, checkpoint=None):
    """Step 2: tile the kernels into a target PSF and optimise the phase."""
    target = build_target_psf(kernels, config.pad, config.mask_resolution, config.target_efficiency)
    opt_cfg = OptimizerConfig(iterations=config.phase_iterations, learning_rate=config.phase_lr,
                              seed=config.seed, log_every=max(1, config.phase_iterations // 10),
                              precision=config.phase_precision)
    phase, trace = optimize_phase(target, opt_cfg, checkpoint=checkpoint)
    return target, phase, trace


def fine_tune(config, train_x, train_y, layout, phase, net, xtalk):
    """Step 3: update phase and suffix together through the simulated optics."""
    net = net.copy()
    phase = np.array(phase, dtype=float)
    optics = make_optics(config, layout, xtalk)
    rng = np.random.default_rng([config.seed, 3])
    params = dict(net.params)
    opt_net = Adam(config.step3_lr)
    opt_phase = Adam(config.step3_phase_lr)
    holder = {"phase": phase}
    losses = []
    n = len(train_x)
    for epoch in range(config.step3_epochs):
        total = 0.0
        psfs = psf_from_phase(holder["phase"])
        for idx in _batches(n, config.batch_size, rng):
            ids = EPOCH_ID_STRIDE * (epoch + 1) + idx
            feats, cache = optics.forward(train_x[idx], psfs, ids)
            grads, dfeat, probs = suffix_backward(net, feats, train_y[idx])
            total += float(np.sum(log_loss(probs, train_y[idx])))
            scale = 1.0 / len(idx)
            grad_psf = optics.backward(dfeat * scale, cache)
            grad_phase = optics.phase_gradient(holder["phase"], grad_psf)
            opt_net.step(params, {k: g * scale for k, g in grads.items()})
            opt_phase.step(holder, {"phase": grad_phase})
            psfs = psf_from_phase(holder["phase"])
        losses.append(total / n)
        log.info("step 3 epoch %d loss %.4f", epoch, losses[-1])
    return holder["phase"], SuffixNetwork(params), losses


# --- orchestration -----------------------------------------------------------

@dataclass
class RunReport:
    step1_losses: list = field(default_factory=list)
    step3_losses: list = field(default_factory=list)
    phase_losses: list = field(default_factory=list)
    digital_train_accuracy: float = 0.0
    digital_accuracy: float = 0.0
    step2_accuracy: float = 0.0
    step3_accuracy: float = 0.0
    crosstalk: np.ndarray = field(default_factory=lambda: np.eye(3))
    batch_size: int = 32
    step1_lr: float = 0.0
    step3_lr: float = 0.0
    step3_phase_lr: float = 0.0
    artifacts: dict = field(default_factory=dict)

    @property
    def final_gap(self):
        return self.digital_accuracy - self.step3_accuracy

    @property
    def phase_reduction(self):
        return self.phase_losses[0] / min(self.phase_losses) if self.phase_losses else float("nan")

    def to_kv(self):
        kv = {
            "digital_train_accuracy": self.digital_train_accuracy,
            "digital_accuracy": self.digital_accuracy,
            "step2_accuracy": self.step2_accuracy,
            "step3_accuracy": self.step3_accuracy,
            "final_gap": self.final_gap,
            "phase_initial_loss": self.phase_losses[0] if self.phase_losses else float("nan"),
            "phase_best_loss": min(self.phase_losses) if self.phase_losses else float("nan"),
            "crosstalk": np.asarray(self.crosstalk).ravel(),
            "batch_size": self.batch_size,
            "step1_lr": self.step1_lr,
            "step3_lr": self.step3_lr,
            "step3_phase_lr": self.step3_phase_lr,
            "step1_losses": self.step1_losses,
            "step3_losses": self.step3_losses,
            "phase_losses": self.phase_losses,
        }
        kv.update({f"artifact_{k}": v for k, v in sorted(self.artifacts.items())})
        return kv

    @classmethod
    def from_kv(cls, kv):
        def floats(key):
            return [float(v) for v in kv[key].split(",")] if kv.get(key) else []

        xt = np.array(floats("crosstalk"))
        c = int(round(np.sqrt(len(xt))))
        return cls(
            step1_losses=floats("step1_losses"),
            step3_losses=floats("step3_losses"),
            phase_losses=floats("phase_losses"),
            digital_train_accuracy=float(kv["digital_train_accuracy"]),
            digital_accuracy=float(kv["digital_accuracy"]),
            step2_accuracy=float(kv["step2_accuracy"]),
            step3_accuracy=float(kv["step3_accuracy"]),
            crosstalk=xt.reshape(c, c),
            batch_size=int(kv["batch_size"]),
            step1_lr=float(kv["step1_lr"]),
            step3_lr=float(kv["step3_lr"]),
            step3_phase_lr=float(kv["step3_phase_lr"]),
            artifacts={k[len("artifact_"):]: v for k, v in kv.items() if k.startswith("artifact_")},
        )

    def summary(self):
        rows = [
            ("step 1 (digital)", self.digital_accuracy),
            ("step 2 (optical, no fine-tune)", self.step2_accuracy),
            ("step 3 (optical, fine-tuned)", self.step3_accuracy),
        ]
        lines = ["step                              test accuracy"]
        lines += [f"{name:<34}{acc * 100:6.2f}%" for name, acc in rows]
        lines.append(f"accuracy loss vs digital          {self.final_gap * 100:6.2f} points")
        return "\n".join(lines) + "\n"


def train_three_step(config, run_dir=None, pretrained=None):
    """Run the full protocol and return a :class:`RunReport`.

    ``pretrained`` may pass ``(kernels, net, step1_losses, target, phase, trace)``
    from an earlier run with identical step 1/2 settings to skip those steps.
    With ``run_dir`` every artifact and the report are written there.
    """
    train_x, train_y, test_x, test_y = load_data(config)
    xtalk = build_crosstalk(config)
    if pretrained is None:
        kernels, net, step1_losses = train_digital(config, train_x, train_y)
        target, phase, trace = design_phase(config, kernels)
    else:
        kernels, net, step1_losses, target, phase, trace = pretrained
    layout = target.layout
    report = RunReport(step1_losses=list(step1_losses), phase_losses=list(trace.losses),
                       crosstalk=np.asarray(xtalk.entries), batch_size=config.batch_size,
                       step1_lr=config.step1_lr, step3_lr=config.step3_lr,
                       step3_phase_lr=config.step3_phase_lr)
    report.digital_train_accuracy = evaluate(config, None, net, train_x, train_y, kernels=kernels).accuracy
    report.digital_accuracy = evaluate(config, None, net, test_x, test_y, kernels=kernels).accuracy
    report.step2_accuracy = evaluate(config, phase, net, test_x, test_y, xtalk, layout).accuracy
    phase3, net3, step3_losses = fine_tune(config, train_x, train_y, layout, phase, net, xtalk)
    report.step3_losses = step3_losses
    report.step3_accuracy = evaluate(config, phase3, net3, test_x, test_y, xtalk, layout).accuracy
    if run_dir is not None:
        write_run(run_dir, config, report, kernels, net, target, phase, trace, phase3, net3)
    return report


def run_directory(base, config):
    return os.path.join(base, f"run-{config.digest()}")


def write_run(run_dir, config, report, kernels, net, target, phase, trace, phase3, net3):
    os.makedirs(run_dir, exist_ok=True)
    paths = {
        "config": "config.txt",
        "kernels": "kernels.mck",
        "target": "target.mcf",
        "layout": "layout.txt",
        "phase_step2": "phase_step2.mcf",
        "phase_final": "phase_final.mcf",
        "phase_trace": "phase_trace.csv",
        "net_step1": "net_step1.mcn",
        "net_final": "net_final.mcn",
        "crosstalk": "crosstalk.mcf",
    }
    report.artifacts = dict(paths)
    join = lambda name: os.path.join(run_dir, paths[name])  # noqa: E731
    save_config(join("config"), config)
    formats.write_mck(join("kernels"), kernels)
    formats.write_mcf(join("target"), target.values)
    formats.write_layout(join("layout"), target.layout)
    formats.write_mcf(join("phase_step2"), phase)
    formats.write_mcf(join("phase_final"), phase3)
    formats.write_trace_csv(join("phase_trace"), trace.losses)
    formats.write_tensors(join("net_step1"), net.params)
    formats.write_tensors(join("net_final"), net3.params)
    formats.write_mcf(join("crosstalk"), np.asarray(report.crosstalk)[None])
    formats.write_kv(os.path.join(run_dir, "report.txt"), report.to_kv(), header="metaconv run report")
    with open(os.path.join(run_dir, "summary.txt"), "w") as fh:
        fh.write(report.summary())


def read_report(run_dir):
    return RunReport.from_kv(formats.read_kv(os.path.join(run_dir, "report.txt")))

