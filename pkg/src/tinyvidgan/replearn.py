"""Transfer experiments on the trained critic.

The adversarial critic doubles as a video feature extractor. This
module finetunes it into a K-way action classifier, fits linear probes
on its frozen penultimate features, sweeps accuracy against the amount
of labeled data, and visualizes what individual convolutional units
respond to.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import ModelCheckpoint, load_checkpoint
from .datasets import minibatch_indices
from .engine import (
    Adam,
    SplitMix64,
    Tensor,
    dropout,
    no_grad,
    softmax_cross_entropy,
)
from .nets import Discriminator, NetConfig, _SCALES, _check_clip_batch

DEFAULT_DROPOUT = 0.5
INIT_PRETRAINED = "pretrained"
INIT_RANDOM = "random"
SWEEP_CSV_HEADER = ("fraction", "init", "seed", "accuracy")


@dataclass
class LabeledClipSet:
    """Clips with integer class labels for one split."""

    clips: np.ndarray
    labels: np.ndarray
    split: str = "train"
    ids: np.ndarray = None

    def __post_init__(self):
        self.clips = np.asarray(self.clips, np.float32)
        self.labels = np.asarray(self.labels, np.int64)
        if self.clips.ndim != 5 or self.clips.shape[1] != 3:
            raise ValueError(
                f"clips must be (n, 3, T, S, S), got {self.clips.shape}")
        if self.labels.shape != (len(self.clips),):
            raise ValueError("one label per clip required")
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if self.ids is None:
            self.ids = np.arange(len(self.clips))
        self.ids = np.asarray(self.ids)

    def __len__(self):
        return len(self.clips)

    def subset(self, indices) -> "LabeledClipSet":
        return LabeledClipSet(self.clips[indices], self.labels[indices],
                              self.split, self.ids[indices])


def check_disjoint(train: LabeledClipSet, test: LabeledClipSet) -> None:
    shared = set(train.ids.tolist()) & set(test.ids.tolist())
    if shared:
        raise ValueError(f"splits share clip ids: {sorted(shared)[:5]}")


def _config_for_clips(clips: np.ndarray) -> NetConfig:
    frames = clips.shape[2]
    for scale in _SCALES:
        cfg = NetConfig(scale_factor=scale)
        if (cfg.clip_frames, cfg.clip_size) == (frames, clips.shape[3]):
            return cfg
    raise ValueError(f"no architecture scale matches clip shape {clips.shape[1:]}")


def load_pretrained_discriminator(source) -> Discriminator:
    """Accepts a checkpoint path, a loaded checkpoint, or a network."""
    if isinstance(source, Discriminator):
        return source
    ckpt = source if isinstance(source, ModelCheckpoint) else load_checkpoint(source)
    prefix = "discriminator/"
    arrays = {k[len(prefix):]: v for k, v in ckpt.arrays.items()
              if k.startswith(prefix)}
    if not arrays:
        raise ValueError("checkpoint holds no discriminator arrays")
    disc = Discriminator(ckpt.config)
    disc.load_state(arrays)
    return disc


class ClipClassifier(Discriminator):
    """Critic trunk with a fresh K-way head and penultimate dropout."""

    def __init__(self, cfg: NetConfig, k: int, seed: int = 0,
                 dropout_rate: float = DEFAULT_DROPOUT):
        if k < 2:
            raise ValueError(f"need at least 2 classes, got {k}")
        super().__init__(cfg, seed=seed, out_dim=k)
        self.k = k
        self.dropout_rate = dropout_rate
        self._drop_rng = SplitMix64(seed).split(17)

    def load_backbone(self, disc: Discriminator) -> None:
        """Copy every layer but the head from a trained critic."""
        if disc.cfg.scale_factor != self.cfg.scale_factor:
            raise ValueError("pretrained critic was built at a different scale")
        for mine, theirs in zip(self.layers[:-1], disc.layers[:-1]):
            mine.w.data = theirs.w.data.copy()
            mine.b.data = theirs.b.data.copy()
            if mine.gamma is not None:
                mine.gamma.data = theirs.gamma.data.copy()
                mine.beta.data = theirs.beta.data.copy()
                mine.stats.mean = theirs.stats.mean.copy()
                mine.stats.var = theirs.stats.var.copy()

    def features(self, x, mode: str = "eval") -> Tensor:
        """Penultimate activation volume (input to the classifier head)."""
        h = _check_clip_batch(x, self.cfg)
        for layer in self.layers[:-1]:
            h = layer(h, mode)
        return h

    def forward(self, x, mode: str = "train") -> Tensor:
        h = self.features(x, mode)
        h = dropout(h, self.dropout_rate, self._drop_rng, mode)
        h = self.layers[-1](h, mode)
        return h.reshape(h.shape[0], self.k)

    def predict(self, clips: np.ndarray) -> np.ndarray:
        out = []
        with no_grad():
            for lo in range(0, len(clips), 32):
                logits = self.forward(Tensor(clips[lo:lo + 32]), "eval")
                out.append(np.argmax(logits.data, axis=1))
        return np.concatenate(out) if out else np.zeros(0, np.int64)


def accuracy(classifier: ClipClassifier, data: LabeledClipSet) -> float:
    if len(data) == 0:
        raise ValueError(f"empty {data.split} split")
    return float((classifier.predict(data.clips) == data.labels).mean())


@dataclass
class FinetuneConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 2:
            raise ValueError("steps must be >= 1 and batch_size >= 2")
        if not (self.lr > 0 and 0 < self.beta1 < 1):
            raise ValueError("lr must be positive and beta1 in (0, 1)")


@dataclass
class FinetuneResult:
    classifier: ClipClassifier
    accuracy: float
    losses: list = field(default_factory=list)


def _check_labels(data: LabeledClipSet, k: int) -> None:
    if len(data) == 0:
        raise ValueError(f"empty {data.split} split")
    if data.labels.max() >= k:
        raise ValueError(
            f"label {int(data.labels.max())} out of range for {k} classes")


def finetune(pretrained, train: LabeledClipSet, test: LabeledClipSet, k: int,
             dropout_rate: float = DEFAULT_DROPOUT,
             config: FinetuneConfig = None) -> FinetuneResult:
    """Train a K-way classifier; ``pretrained=None`` is the random-init
    baseline, anything else warm-starts the trunk from that critic."""
    config = config or FinetuneConfig()
    _check_labels(train, k)
    _check_labels(test, k)
    check_disjoint(train, test)
    cfg = _config_for_clips(train.clips)
    clf = ClipClassifier(cfg, k, seed=config.seed, dropout_rate=dropout_rate)
    if pretrained is not None:
        clf.load_backbone(load_pretrained_discriminator(pretrained))
    opt = Adam(clf.param_tensors(), lr=config.lr, beta1=config.beta1)
    batch_rng = SplitMix64(config.seed).split(3)
    batches = minibatch_indices(batch_rng, len(train),
                                min(config.batch_size, max(2, len(train))))
    losses = []
    for _ in range(config.steps):
        idx = next(batches)
        logits = clf.forward(Tensor(train.clips[idx]), "train")
        loss = softmax_cross_entropy(logits, train.labels[idx])
        loss.backward()
        opt.step()
        losses.append(float(loss.item()))
    return FinetuneResult(clf, accuracy(clf, test), losses)


def penultimate_features(network, clips: np.ndarray) -> np.ndarray:
    """Frozen eval-mode features, one flat row per clip."""
    feats = []
    with no_grad():
        for lo in range(0, len(clips), 32):
            x = Tensor(np.asarray(clips[lo:lo + 32], np.float32))
            if isinstance(network, ClipClassifier):
                h = network.features(x, "eval")
            else:
                h = x
                for layer in network.layers[:-1]:
                    h = layer(h, "eval")
            feats.append(h.data.reshape(h.shape[0], -1))
    return np.concatenate(feats, axis=0)


def fit_logistic(features: np.ndarray, labels: np.ndarray, k: int,
                 steps: int = 400, lr: float = 0.05, seed: int = 0):
    """Full-batch multinomial logistic regression; returns (w, b, losses)."""
    features = np.asarray(features, np.float32)
    labels = np.asarray(labels, np.int64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got {features.shape}")
    rng = SplitMix64(seed)
    w = Tensor(rng.normal((features.shape[1], k), std=0.01).astype(np.float32),
               requires_grad=True)
    b = Tensor(np.zeros(k, np.float32), requires_grad=True)
    opt = Adam([w, b], lr=lr)
    x = Tensor(features)
    losses = []
    for _ in range(steps):
        loss = softmax_cross_entropy((x @ w) + b, labels)
        loss.backward()
        opt.step()
        losses.append(float(loss.item()))
    return w.data.copy(), b.data.copy(), losses


def predict_logistic(w: np.ndarray, b: np.ndarray,
                     features: np.ndarray) -> np.ndarray:
    return np.argmax(features @ w + b, axis=1)


@dataclass
class ProbeResult:
    accuracy: float
    weights: np.ndarray
    bias: np.ndarray


def linear_probe(pretrained, train: LabeledClipSet, test: LabeledClipSet,
                 k: int, steps: int = 400, seed: int = 0) -> ProbeResult:
    """Logistic regression on frozen penultimate critic features."""
    _check_labels(train, k)
    _check_labels(test, k)
    check_disjoint(train, test)
    cfg = _config_for_clips(train.clips)
    if pretrained is None:
        backbone = Discriminator(cfg, seed=seed)
    else:
        backbone = load_pretrained_discriminator(pretrained)
    w, b, _ = fit_logistic(penultimate_features(backbone, train.clips),
                           train.labels, k, steps=steps, seed=seed)
    pred = predict_logistic(w, b, penultimate_features(backbone, test.clips))
    return ProbeResult(float((pred == test.labels).mean()), w, b)


def stratified_indices(labels: np.ndarray, fraction: float,
                       rng: SplitMix64) -> np.ndarray:
    """Per-class subsample of round(fraction * class size), at least 1."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    picked = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        m = int(round(fraction * len(idx)))
        if m < 1:
            raise ValueError(
                f"fraction {fraction} leaves class {int(c)} empty")
        order = rng.permutation(len(idx))
        picked.append(idx[order[:m]])
    return np.sort(np.concatenate(picked))


@dataclass
class SweepCell:
    fraction: float
    init: str
    seed: int
    accuracy: float


@dataclass
class SweepResult:
    cells: list

    def mean_accuracy(self, fraction: float, init: str) -> float:
        vals = [c.accuracy for c in self.cells
                if c.fraction == fraction and c.init == init]
        if not vals:
            raise KeyError(f"no cells for fraction={fraction}, init={init}")
        return float(np.mean(vals))

    def relative_gain(self, fraction: float) -> float:
        """Finetuned-over-random accuracy ratio at one label fraction."""
        random = self.mean_accuracy(fraction, INIT_RANDOM)
        return self.mean_accuracy(fraction, INIT_PRETRAINED) / max(random, 1e-12)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_CSV_HEADER)
            for c in self.cells:
                writer.writerow([repr(c.fraction), c.init, c.seed,
                                 repr(c.accuracy)])


def data_fraction_sweep(pretrained, train: LabeledClipSet,
                        test: LabeledClipSet, k: int,
                        fractions=(0.125, 0.25, 0.5, 1.0),
                        seeds=(0, 1, 2),
                        dropout_rate: float = DEFAULT_DROPOUT,
                        config: FinetuneConfig = None) -> SweepResult:
    """Accuracy of pretrained vs random init across label budgets.

    Every (fraction, seed) cell trains both variants on the same
    stratified subsample so the comparison is paired.
    """
    config = config or FinetuneConfig()
    base = load_pretrained_discriminator(pretrained)
    cells = []
    for fraction in fractions:
        for seed in seeds:
            sub_rng = SplitMix64(seed).split(29)
            subset = train.subset(stratified_indices(train.labels, fraction,
                                                     sub_rng))
            for init, warm in ((INIT_PRETRAINED, base), (INIT_RANDOM, None)):
                cell_cfg = FinetuneConfig(
                    steps=config.steps, batch_size=config.batch_size,
                    lr=config.lr, beta1=config.beta1, seed=seed)
                res = finetune(warm, subset, test, k,
                               dropout_rate=dropout_rate, config=cell_cfg)
                cells.append(SweepCell(fraction, init, seed, res.accuracy))
    return SweepResult(cells)


def load_labeled_clips(root, split: str = "train", id_base: int = 0):
    """Read <root>/<class-name>/*.tvclip; classes are sorted dir names."""
    from .videoio import read_clip
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class directories under {root}")
    clips, labels = [], []
    for label, d in enumerate(class_dirs):
        files = sorted(d.glob("*.tvclip"))
        if not files:
            raise FileNotFoundError(f"no .tvclip files in {d}")
        for f in files:
            clip = read_clip(f)
            data = clip.to_float().data if clip.dtype == np.uint8 else clip.data
            clips.append(data)
            labels.append(label)
    ids = np.arange(id_base, id_base + len(clips))
    dataset = LabeledClipSet(np.stack(clips), np.array(labels), split, ids)
    return dataset, [d.name for d in class_dirs]


def load_labeled_split(root):
    """Load <root>/train and <root>/test class trees with disjoint ids."""
    root = Path(root)
    train, names = load_labeled_clips(root / "train", "train")
    test, test_names = load_labeled_clips(root / "test", "test",
                                          id_base=len(train))
    if names != test_names:
        raise ValueError(
            f"train classes {names} do not match test classes {test_names}")
    return train, test, names


def receptive_field_box(specs, box):
    """Map an inclusive (t, y, x) index box at a layer's output back to
    input coordinates through a stack of strided convolutions."""
    lo = [int(b[0]) for b in box]
    hi = [int(b[1]) for b in box]
    for spec in reversed(list(specs)):
        for ax in range(3):
            lo[ax] = lo[ax] * spec.stride[ax] - spec.padding[ax]
            hi[ax] = (hi[ax] * spec.stride[ax] - spec.padding[ax]
                      + spec.kernel[ax] - 1)
    return tuple((lo[ax], hi[ax]) for ax in range(3))


@dataclass
class UnitActivation:
    clip_id: int
    activation: float
    box: tuple


@dataclass
class UnitActivationReport:
    layer: str
    unit: int
    entries: list
    degenerate_tie: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "layer": self.layer, "unit": self.unit,
            "degenerate_tie": self.degenerate_tie,
            "entries": [{"clip_id": int(e.clip_id),
                         "activation": e.activation,
                         "box": [list(axis) for axis in e.box]}
                        for e in self.entries]}, indent=2)


def _resolve_layer(network, layer) -> int:
    names = [lyr.name for lyr in network.layers]
    if isinstance(layer, str):
        if layer not in names:
            raise ValueError(f"unknown layer {layer!r}, have {names}")
        return names.index(layer)
    idx = int(layer)
    if not 0 <= idx < len(names):
        raise ValueError(f"layer index {idx} out of range for {names}")
    return idx


def visualize_unit(network, layer, unit: int, clips: np.ndarray,
                   k: int = 5) -> UnitActivationReport:
    """Rank clips by one unit's peak response and localize the response.

    The activation map of each top clip is thresholded at half its own
    maximum and the surviving region is mapped to input coordinates
    through the receptive field of the layer stack.
    """
    idx = _resolve_layer(network, layer)
    layers = network.layers[:idx + 1]
    n_units = layers[-1].spec.out_channels
    if not 0 <= unit < n_units:
        raise ValueError(f"unit {unit} out of range, layer has {n_units}")
    clips = np.asarray(clips, np.float32)
    maps = []
    with no_grad():
        for lo in range(0, len(clips), 16):
            h = Tensor(clips[lo:lo + 16])
            for lyr in layers:
                h = lyr(h, "eval")
            maps.append(h.data[:, unit])
    amap = np.concatenate(maps, axis=0)
    peaks = amap.reshape(len(clips), -1).max(axis=1)
    degenerate = bool(peaks.max() - peaks.min() <= 1e-12)
    order = np.argsort(-peaks, kind="stable")[:min(k, len(clips))]

    specs = [lyr.spec for lyr in layers]
    t_max, y_max, x_max = clips.shape[2:]
    entries = []
    for cid in order:
        m = amap[cid]
        peak = peaks[cid]
        mask = m >= 0.5 * peak if peak > 0 else m == peak
        axes_box = []
        for ax in range(3):
            hit = np.nonzero(mask.any(axis=tuple(a for a in range(3)
                                                 if a != ax)))[0]
            axes_box.append((int(hit[0]), int(hit[-1])))
        raw = receptive_field_box(specs, axes_box)
        bounds = (t_max, y_max, x_max)
        box = tuple((max(0, lo), min(b - 1, hi))
                    for (lo, hi), b in zip(raw, bounds))
        entries.append(UnitActivation(int(cid), float(peak), box))
    name = network.layers[idx].name
    return UnitActivationReport(name, unit, entries, degenerate)


def save_unit_report(report: UnitActivationReport, clips: np.ndarray,
                     out_dir) -> Path:
    """Write report.json plus a center-frame crop per entry."""
    from .videoio import write_ppm
    out_dir = Path(out_dir) / f"{report.layer}-unit{report.unit:03d}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    for rank, e in enumerate(report.entries):
        (t0, t1), (y0, y1), (x0, x1) = e.box
        mid = (t0 + t1) // 2
        crop = clips[e.clip_id][:, mid, y0:y1 + 1, x0:x1 + 1]
        img = np.clip((crop.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255)
        write_ppm(out_dir / f"rank{rank:02d}-clip{e.clip_id:04d}.ppm",
                  np.rint(img).astype(np.uint8))
    return out_dir
