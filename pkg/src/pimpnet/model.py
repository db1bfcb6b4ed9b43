"""PIMPNet: image part-prototypes plus age prototypes feeding a non-negative scoring sheet.

Prototype order in the concatenated presence vector is fixed: the M image
prototypes come first, then the N age prototypes.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .autodiff import Tensor, ops


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    stride: int = 2
    kernel: int = 3
    padding: int = 1
    relu: bool = True


def default_backbone(M=16):
    return (ConvBlock(8), ConvBlock(16), ConvBlock(M, relu=False))


@dataclass(frozen=True)
class ModelConfig:
    ch: int = 1
    S: int = 32
    R: int = 32
    C: int = 32
    M: int = 16
    N: int = 5
    K: int = 2
    t_bar: float = 4.0
    s: int = 8
    backbone: Tuple[ConvBlock, ...] = field(default_factory=default_backbone)
    age_sim_kind: str = "butterworth"
    age_grid: Tuple[float, float] = (40.0, 90.0)

    def __post_init__(self):
        # N == 0 is the image-only ablation; it is not a PIMPNet proper.
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.N < 0:
            raise ValueError("N must be >= 0")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not self.t_bar > 0:
            raise ValueError("t_bar must be > 0")
        if self.s < 1 or int(self.s) != self.s:
            raise ValueError("s must be a positive integer")
        if self.age_sim_kind not in ("butterworth", "exponential"):
            raise ValueError(f"age_sim_kind must be butterworth or exponential, got {self.age_sim_kind!r}")
        if not self.backbone:
            raise ValueError("backbone needs at least one block")
        if self.backbone[-1].out_channels != self.M:
            raise ValueError(f"last backbone block must have out_channels == M ({self.M})")
        for blk in self.backbone:
            if blk.out_channels < 1 or blk.stride < 1 or blk.kernel < 1 or blk.padding < 0:
                raise ValueError(f"invalid conv block {blk}")
        if min(self.ch, self.S, self.R, self.C) < 1:
            raise ValueError("input extents must be positive")
        self.feature_shape()  # raises if the backbone shrinks the volume to nothing

    @property
    def L(self):
        return self.M + self.N

    def feature_shape(self):
        dims = [self.S, self.R, self.C]
        for blk in self.backbone:
            nxt = []
            for n in dims:
                if n + 2 * blk.padding < blk.kernel:
                    raise ValueError(f"backbone reduces input {self.S}x{self.R}x{self.C} below kernel size")
                nxt.append((n + 2 * blk.padding - blk.kernel) // blk.stride + 1)
            dims = nxt
        return tuple(dims)


def receptive_field(config: ModelConfig):
    """(first-cell center, jump, size) of one feature cell along any axis, in input voxels."""
    start, jump, size = 0.0, 1, 1
    for blk in config.backbone:
        start += ((blk.kernel - 1) / 2.0 - blk.padding) * jump
        size += (blk.kernel - 1) * jump
        jump *= blk.stride
    return start, jump, size


def receptive_box(config: ModelConfig, cell):
    """Input-voxel box [lo, hi) per axis seen by feature cell ``cell`` (clipped)."""
    start, jump, size = receptive_field(config)
    half = (size - 1) / 2.0
    box = []
    for i, n in zip(cell, (config.S, config.R, config.C)):
        c = start + i * jump
        lo = int(max(0, np.floor(c - half)))
        hi = int(min(n, np.floor(c + half) + 1))
        box.append((lo, hi))
    return box


def patch_center(config: ModelConfig, cell):
    """Receptive-field center of a feature cell, clipped to the volume."""
    return tuple((lo + hi - 1) / 2.0 for lo, hi in receptive_box(config, cell))


@dataclass
class PimpnetModel:
    config: ModelConfig
    w_f: List[Tuple[Tensor, Tensor]]
    t_age: Tensor
    w_c: Tensor

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        w_f = []
        cin = config.ch
        for i, blk in enumerate(config.backbone):
            fan_in = cin * blk.kernel**3
            k = rng.standard_normal((blk.out_channels, cin, blk.kernel, blk.kernel, blk.kernel)) * np.sqrt(2.0 / fan_in)
            w_f.append(
                (
                    Tensor(k, requires_grad=True, name=f"w_f.{i}.kernel"),
                    Tensor(np.zeros(blk.out_channels), requires_grad=True, name=f"w_f.{i}.bias"),
                )
            )
            cin = blk.out_channels
        lo, hi = config.age_grid
        t_age = Tensor(np.linspace(lo, hi, config.N), requires_grad=True, name="t_age")
        w_c = Tensor(np.maximum(rng.normal(1.0, 0.1, size=(config.L, config.K)), 0.0), requires_grad=True, name="w_c")
        return cls(config, w_f, t_age, w_c)

    def backbone_params(self):
        return [t for pair in self.w_f for t in pair]

    def named_tensors(self):
        out = []
        for i, (k, b) in enumerate(self.w_f):
            out.append((f"w_f.{i}.kernel", k))
            out.append((f"w_f.{i}.bias", b))
        out.append(("t_age", self.t_age))
        out.append(("w_c", self.w_c))
        return out

    def project_head(self):
        """Clamp classification weights at zero."""
        np.maximum(self.w_c.data, 0, out=self.w_c.data)


@dataclass
class PresenceScores:
    p_img: np.ndarray
    p_age: np.ndarray
    p: np.ndarray
    img_locations: np.ndarray


@dataclass
class Inference:
    label: int
    o: np.ndarray
    presence: PresenceScores


# ---------------------------------------------------------------- forward ops


def backbone_forward(model: PimpnetModel, x_img):
    """Conv blocks (ReLU where the block asks for it), then softmax over prototype channels."""
    x = x_img if isinstance(x_img, Tensor) else Tensor(x_img)
    cfg = model.config
    expected = (cfg.ch, cfg.S, cfg.R, cfg.C)
    if tuple(x.shape[-4:]) != expected or x.data.ndim not in (4, 5):
        raise ValueError(f"input shape {x.shape} does not match config {expected}")
    h = x
    for blk, (k, b) in zip(cfg.backbone, model.w_f):
        h = ops.conv3d(h, k, b, stride=blk.stride, padding=blk.padding)
        if blk.relu:
            h = ops.relu(h)
    return ops.softmax_over_channels(h)


def image_presence(z):
    return ops.global_maxpool3d(z)


def age_similarity(x_age, t_age, t_bar, s, kind="butterworth"):
    """Similarity of each age to each age prototype, in (0, 1].

    ``x_age`` may be a scalar or a length-B array; the result has shape N or B x N.
    Butterworth: 1 / sqrt(1 + ((x - t) / t_bar)^(2s)); exponential: exp(-|x - t|).
    """
    if not t_bar > 0:
        raise ValueError("t_bar must be > 0")
    t = t_age if isinstance(t_age, Tensor) else Tensor(t_age)
    xa = np.asarray(x_age.data if isinstance(x_age, Tensor) else x_age, dtype=t.data.dtype)
    if xa.ndim == 1:
        xa = xa[:, None]
    diff = ops.sub(Tensor(xa, dtype=t.data.dtype), t)
    if kind == "butterworth":
        ratio = ops.square(ops.mul(diff, 1.0 / t_bar))
        return ops.div(1.0, ops.sqrt(ops.add(ops.power(ratio, int(s)), 1.0)))
    if kind == "exponential":
        return ops.exp(ops.neg(ops.absolute(diff)))
    raise ValueError(f"unknown similarity kind {kind!r}")


def concat_presence(p_img, p_age):
    if p_age is None:
        return p_img
    return ops.concat([p_img, p_age], axis=-1)


def class_scores_train(p, w_c):
    """Training-time scores log((p w_c)^2 + 1)."""
    return ops.log(ops.add(ops.square(ops.matmul(p, w_c)), 1.0))


def mask_top_age(p_age):
    """Keep only the largest entry (first on ties) of each age-presence row."""
    a = np.asarray(p_age)
    if a.shape[-1] == 0:
        return a.copy()
    out = np.zeros_like(a)
    idx = a.argmax(axis=-1)
    np.put_along_axis(out, idx[..., None], np.take_along_axis(a, idx[..., None], axis=-1), axis=-1)
    return out


def forward_train(model: PimpnetModel, x_img, x_age):
    """Differentiable forward on a batch. Returns (z, p_img, p, o_train)."""
    z = backbone_forward(model, x_img)
    p_img, _ = image_presence(z)
    cfg = model.config
    p_age = None
    if cfg.N > 0:
        p_age = age_similarity(x_age, model.t_age, cfg.t_bar, cfg.s, cfg.age_sim_kind)
    p = concat_presence(p_img, p_age)
    return z, p_img, p, class_scores_train(p, model.w_c)


def presence(model: PimpnetModel, volumes, ages):
    """Unmasked presence scores for a batch, without recording gradients."""
    vols = np.asarray(volumes, dtype=model.w_c.data.dtype)
    single = vols.ndim == 4
    if single:
        vols = vols[None]
    z = backbone_forward(model, Tensor._wrap(vols))
    p_img, locs = image_presence(z)
    cfg = model.config
    if cfg.N > 0:
        ages_arr = np.atleast_1d(np.asarray(ages, dtype=vols.dtype))
        p_age = age_similarity(ages_arr, model.t_age.data, cfg.t_bar, cfg.s, cfg.age_sim_kind).data
    else:
        p_age = np.zeros((vols.shape[0], 0), dtype=vols.dtype)
    return z.data, p_img.data, p_age, locs


def infer_batch(model: PimpnetModel, volumes, ages):
    """Inference on a batch: (labels, o, p_img, masked p_age, locations)."""
    _, p_img, p_age, locs = presence(model, volumes, ages)
    p_age_m = mask_top_age(p_age)
    p = np.concatenate([p_img, p_age_m], axis=1)
    o = (p.astype(np.float64) @ model.w_c.data.astype(np.float64)).astype(p.dtype)
    labels = o.argmax(axis=1)
    return labels, o, p_img, p_age_m, locs


def infer(model: PimpnetModel, x_img, x_age) -> Inference:
    """Scoring-sheet prediction using only the most activated age prototype."""
    labels, o, p_img, p_age_m, locs = infer_batch(model, np.asarray(x_img)[None], [x_age])
    p = np.concatenate([p_img[0], p_age_m[0]])
    return Inference(int(labels[0]), o[0], PresenceScores(p_img[0], p_age_m[0], p, locs[0]))
