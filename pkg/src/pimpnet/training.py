"""Positive-pair augmentation, the three losses and the two-stage schedule."""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, ops, zero_grad
from .model import PimpnetModel, forward_train

log = logging.getLogger(__name__)

EPS_LOG = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda_A: float = 1.0
    lambda_T: float = 2.0
    lambda_C: float = 2.0
    # scale lambda_A by epoch / epochs (used in pretraining so diversity comes first)
    ramp_align: bool = False

    def __post_init__(self):
        for name in ("lambda_A", "lambda_T", "lambda_C"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    # mirroring moves target structures onto other anatomy, so flips are off by default
    flip_prob: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    max_translate_voxels: int = 2
    intensity_noise_sigma: float = 0.02

    def __post_init__(self):
        if len(self.flip_prob) != 3 or any(not 0 <= p <= 1 for p in self.flip_prob):
            raise ValueError("flip_prob needs three probabilities in [0, 1]")
        if self.max_translate_voxels < 0:
            raise ValueError("max_translate_voxels must be >= 0")
        if self.intensity_noise_sigma < 0:
            raise ValueError("intensity_noise_sigma must be >= 0")

    @classmethod
    def identity(cls):
        return cls((0.0, 0.0, 0.0), 0, 0.0)


@dataclass(frozen=True)
class TrainSchedule:
    pretrain_epochs: int = 10
    train_epochs: int = 30
    batch_size: int = 12
    lr_backbone: float = 0.002
    lr_age: float = 0.1
    lr_head: float = 0.05
    eps_tanh: float = 1e-8
    sparsity_clamp_threshold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the tanh loss needs a batch)")
        for name in ("lr_backbone", "lr_age", "lr_head", "eps_tanh"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.sparsity_clamp_threshold < 0:
            raise ValueError("sparsity_clamp_threshold must be >= 0")


@dataclass
class OptimizerStates:
    backbone: AdamState = field(default_factory=AdamState)
    age: AdamState = field(default_factory=AdamState)
    head: AdamState = field(default_factory=AdamState)

    def items(self):
        return (("backbone", self.backbone), ("age", self.age), ("head", self.head))


PRETRAIN_WEIGHTS = LossWeights(lambda_A=1.0, lambda_T=5.0, lambda_C=0.0, ramp_align=True)


# ---------------------------------------------------------------- augmentation


def _flip(x, axes):
    return np.flip(x, axis=axes).copy() if axes else x


def _translate(x, shift):
    """Shift the spatial axes of a C x D x H x W volume, filling with zeros."""
    out = np.zeros_like(x)
    src, dst = [slice(None)], [slice(None)]
    for s, n in zip(shift, x.shape[1:]):
        if s >= 0:
            src.append(slice(0, n - s))
            dst.append(slice(s, n))
        else:
            src.append(slice(-s, n))
            dst.append(slice(0, n + s))
    out[tuple(dst)] = x[tuple(src)]
    return out


def make_positive_pair(x_img, rng, cfg: AugmentConfig = AugmentConfig()):
    """Two augmented views of one volume.

    Flips are drawn once and shared by both views so that patch (d, h, w)
    refers to the same anatomy in each; translation and intensity noise are
    drawn independently per view.
    """
    x = np.asarray(x_img)
    axes = tuple(a + 1 for a in range(3) if rng.random() < cfg.flip_prob[a])
    base = _flip(x, axes)
    views = []
    for _ in range(2):
        v = base
        t = cfg.max_translate_voxels
        if t > 0:
            v = _translate(v, rng.integers(-t, t + 1, size=3))
        if cfg.intensity_noise_sigma > 0:
            v = np.clip(v + cfg.intensity_noise_sigma * rng.standard_normal(v.shape), 0.0, 1.0)
        views.append(v.astype(x.dtype))
    return views[0], views[1]


# ---------------------------------------------------------------------- losses


def alignment_loss(z1, z2, eps_log=EPS_LOG):
    """-mean over patches of log(z1[:, d, h, w] . z2[:, d, h, w] + eps).

    The dot product is symmetric, so averaging both directions gives the same
    value; a leading batch axis is averaged too.
    """
    if z1.shape != z2.shape:
        raise ValueError(f"alignment_loss shape mismatch: {z1.shape} vs {z2.shape}")
    ch_axis = 0 if len(z1.shape) == 4 else 1
    dots = ops.sum(ops.mul(z1, z2), axis=ch_axis)
    return ops.neg(ops.mean(ops.log(ops.add(dots, eps_log))))


def tanh_loss(p_img_batch, eps=1e-8):
    """-(1/M) sum_m log(tanh(sum_b p[b, m]) + eps), log argument clamped to <= 1."""
    p = p_img_batch if len(p_img_batch.shape) == 2 else ops.reshape(p_img_batch, (1, -1))
    act = ops.add(ops.tanh(ops.sum(p, axis=0)), eps)
    return ops.neg(ops.mean(ops.log(ops.clamp(act, hi=1.0))))


def classification_loss(o_train, labels):
    """Mean negative log-likelihood of the true class under softmax(o)."""
    labels = np.asarray(labels, dtype=np.int64)
    K = o_train.shape[-1]
    if labels.shape != (o_train.shape[0],):
        raise ValueError("one label per row of scores is required")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return ops.neg(ops.mean(ops.take_rows(ops.log_softmax(o_train, axis=1), labels)))


# -------------------------------------------------------------------- training


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _pair_batch(samples, idx, rng, augment):
    v1, v2 = [], []
    for i in idx:
        a, b = make_positive_pair(samples[i].volume, rng, augment)
        v1.append(a)
        v2.append(b)
    return np.stack(v1 + v2)


def _log_header(model):
    cols = ["stage", "epoch", "L_A", "L_T", "L_C", "total"] + [f"t_age_{i}" for i in range(model.config.N)]
    return "\t".join(cols)


def _log_line(stage, epoch, terms, model):
    vals = [stage, str(epoch)] + [repr(float(v)) for v in terms] + [repr(float(t)) for t in model.t_age.data]
    return "\t".join(vals)


def _run_stage(samples, model, schedule, weights, augment, states, stage, epochs, logfile):
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng([schedule.seed, stage])
    backbone = model.backbone_params()
    dtype = model.w_c.data.dtype
    if logfile is not None and logfile.tell() == 0:
        logfile.write(_log_header(model) + "\n")
    for epoch in range(epochs):
        lam_a = weights.lambda_A * (epoch / epochs if weights.ramp_align else 1.0)
        sums = np.zeros(4)
        nb = 0
        for idx in _batches(len(samples), schedule.batch_size, rng):
            B = len(idx)
            x = Tensor._wrap(_pair_batch(samples, idx, rng, augment).astype(dtype))
            ages = np.array([samples[i].age for i in idx] * 2, dtype=dtype)
            labels = np.array([samples[i].label for i in idx] * 2)
            params = backbone + [model.t_age, model.w_c]
            zero_grad(params)
            with Tape() as tape:
                z, p_img, p, o = forward_train(model, x, ages)
                la = alignment_loss(*_split_views(z, B))
                p1, p2 = _split_views(p_img, B)
                lt = ops.mul(ops.add(tanh_loss(p1, schedule.eps_tanh), tanh_loss(p2, schedule.eps_tanh)), 0.5)
                total = ops.add(ops.mul(la, lam_a), ops.mul(lt, weights.lambda_T))
                lc_val = 0.0
                if stage == 2:
                    lc = classification_loss(o, labels)
                    total = ops.add(total, ops.mul(lc, weights.lambda_C))
                    lc_val = lc.item()
            backward(tape, total)
            adam_step(backbone, states.backbone, schedule.lr_backbone)
            if stage == 2:
                if model.config.N > 0:
                    adam_step([model.t_age], states.age, schedule.lr_age)
                adam_step([model.w_c], states.head, schedule.lr_head)
                model.project_head()
            zero_grad(params)
            sums += (la.item(), lt.item(), lc_val, total.item())
            nb += 1
        means = sums / max(nb, 1)
        log.debug("stage %d epoch %d L_A=%.4f L_T=%.4f L_C=%.4f total=%.4f", stage, epoch, *means)
        if logfile is not None:
            logfile.write(_log_line(str(stage), epoch, means, model) + "\n")
    return model


def _split_views(t, B):
    return ops.slice_rows(t, 0, B), ops.slice_rows(t, B, 2 * B)


def pretrain(samples, model: PimpnetModel, schedule: TrainSchedule, weights: LossWeights = PRETRAIN_WEIGHTS,
             augment: AugmentConfig = AugmentConfig(), states: Optional[OptimizerStates] = None, logfile=None):
    """Stage 1: self-supervised alignment + tanh losses, updating the backbone only."""
    states = states or OptimizerStates()
    _run_stage(samples, model, schedule, weights, augment, states, 1, schedule.pretrain_epochs, logfile)
    return model, states


def train_full(samples, model: PimpnetModel, schedule: TrainSchedule, weights: LossWeights = LossWeights(),
               augment: AugmentConfig = AugmentConfig(), states: Optional[OptimizerStates] = None, logfile=None):
    """Stage 2: all losses, updating backbone, age prototypes and the non-negative head.

    Ends by zeroing head weights below ``schedule.sparsity_clamp_threshold``.
    """
    states = states or OptimizerStates()
    _run_stage(samples, model, schedule, weights, augment, states, 2, schedule.train_epochs, logfile)
    sparsify(model, schedule.sparsity_clamp_threshold)
    return model, states


def sparsify(model: PimpnetModel, threshold):
    w = model.w_c.data
    w[w < threshold] = 0.0
