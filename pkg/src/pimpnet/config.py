"""Flat ``key = value`` configuration covering model, data, training and metrics."""
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .evaluation import DETECT_THRESHOLD
from .model import ConvBlock, ModelConfig
from .synthdata import PhantomSpec
from .training import PRETRAIN_WEIGHTS, AugmentConfig, LossWeights, TrainSchedule


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    pretrain_weights: LossWeights = PRETRAIN_WEIGHTS
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    n_samples: int = 200
    detect_threshold: float = DETECT_THRESHOLD
    seed: int = 0
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None

    def with_seed(self, seed):
        return replace(self, seed=seed, schedule=replace(self.schedule, seed=seed))


# key -> (owning group, value parser)
def _ints(n):
    def parse(v):
        parts = [int(p) for p in v.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated integers")
        return tuple(parts)

    return parse


def _floats(n):
    def parse(v):
        parts = [float(p) for p in v.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers")
        return tuple(parts)

    return parse


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _backbone(v):
    """``8:2,16:2,16:2`` -> conv blocks (out_channels:stride); the last block has no ReLU."""
    blocks = []
    items = [p.strip() for p in v.split(",") if p.strip()]
    if not items:
        raise ValueError("backbone needs at least one block")
    for i, item in enumerate(items):
        out, _, stride = item.partition(":")
        blocks.append(ConvBlock(int(out), int(stride or 2), relu=i < len(items) - 1))
    return tuple(blocks)


def _fmt_backbone(blocks):
    return ",".join(f"{b.out_channels}:{b.stride}" for b in blocks)


def _age_grid(v):
    parts = [p.strip() for p in v.split(",")]
    if len(parts) not in (2, 3):
        raise ValueError("expected lo,hi or lo,hi,count")
    lo, hi = float(parts[0]), float(parts[1])
    count = int(parts[2]) if len(parts) == 3 else None
    if count is not None and count < 1:
        raise ValueError("age grid count must be >= 1")
    return lo, hi, count


def _num(x):
    return repr(float(x))


def _tuple(xs):
    return ",".join(_num(x) if isinstance(x, float) else str(x) for x in xs)


_KEYS = {
    # model
    "ch": ("model", int),
    "M": ("model", int),
    "N": ("model", int),
    "K": ("model", int),
    "t_bar": ("model", float),
    "s": ("model", int),
    "backbone": ("model", _backbone),
    "age_sim_kind": ("model", str),
    "age_grid": ("model", _age_grid),
    # synthetic data
    "volume": ("phantom", _ints(3)),
    "region_count": ("phantom", int),
    "age_range": ("phantom", _floats(2)),
    "normal_atrophy_rate": ("phantom", float),
    "ad_extra_atrophy": ("phantom", float),
    "noise_sigma": ("phantom", float),
    "task_kind": ("phantom", str),
    "target_radius": ("phantom", float),
    "other_radius": ("phantom", float),
    "radius_jitter": ("phantom", float),
    "age_modes": ("phantom", _floats(2)),
    "age_mode_halfwidth": ("phantom", float),
    "confound_age_modes": ("phantom", _floats(2)),
    "confound_mode_halfwidths": ("phantom", _floats(2)),
    "n_samples": ("top", int),
    # schedule
    "pretrain_epochs": ("schedule", int),
    "train_epochs": ("schedule", int),
    "batch_size": ("schedule", int),
    "lr_backbone": ("schedule", float),
    "lr_age": ("schedule", float),
    "lr_head": ("schedule", float),
    "eps_tanh": ("schedule", float),
    "sparsity_clamp_threshold": ("schedule", float),
    # losses
    "lambda_A": ("weights", float),
    "lambda_T": ("weights", float),
    "lambda_C": ("weights", float),
    "pretrain_lambda_A": ("pretrain_weights", float),
    "pretrain_lambda_T": ("pretrain_weights", float),
    "pretrain_ramp_align": ("pretrain_weights", _bool),
    # augmentation
    "flip_prob": ("augment", _floats(3)),
    "max_translate_voxels": ("augment", int),
    "intensity_noise_sigma": ("augment", float),
    # metrics, seed, paths
    "detect_threshold": ("top", float),
    "seed": ("top", int),
    "data": ("top", str),
    "checkpoint": ("top", str),
    "out": ("top", str),
}


def parse_config_text(text: str) -> Config:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", line=lineno)
        if key not in _KEYS:
            raise ConfigError("unknown key", key, lineno)
        if key in raw:
            raise ConfigError("duplicate key", key, lineno)
        try:
            raw[key] = (_KEYS[key][1](value), lineno)
        except ValueError as exc:
            raise ConfigError(f"malformed value {value!r} ({exc})", key, lineno) from None
    return _build(raw)


def parse_config(path) -> Config:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _build(raw) -> Config:
    groups = {"model": {}, "phantom": {}, "schedule": {}, "weights": {}, "pretrain_weights": {}, "augment": {}, "top": {}}
    lines = {}
    for key, (val, lineno) in raw.items():
        groups[_KEYS[key][0]][key] = val
        lines[key] = lineno

    def build(owner, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            msg = str(exc)
            named = [k for k in _KEYS if re.search(rf"\b{re.escape(k)}\b", msg)]
            key = max(named, key=len) if named else None
            raise ConfigError(str(exc), key, lines.get(key)) from None

    top = groups["top"]
    seed = top.get("seed", 0)

    ph = dict(groups["phantom"])
    task = ph.pop("task_kind", "image_separable")
    if "volume" in ph:
        ph["volume_extents"] = ph.pop("volume")
    phantom = build("phantom", lambda: PhantomSpec.preset(task, **ph))

    mk = dict(groups["model"])
    grid = mk.pop("age_grid", None)
    if grid is not None:
        lo, hi, count = grid
        if count is not None:
            if "N" in mk and mk["N"] != count:
                raise ConfigError(f"age_grid count {count} disagrees with N = {mk['N']}", "age_grid", lines["age_grid"])
            mk["N"] = count
        mk["age_grid"] = (lo, hi)
    M = mk.get("M", 16)
    if "backbone" not in mk:
        mk["backbone"] = (ConvBlock(8), ConvBlock(16), ConvBlock(M, relu=False))
    S, R, C = phantom.volume_extents
    model = build("model", lambda: ModelConfig(S=S, R=R, C=C, **mk))

    schedule = build("schedule", lambda: TrainSchedule(seed=seed, **groups["schedule"]))
    weights = build("weights", lambda: LossWeights(**groups["weights"]))
    pw = {k.replace("pretrain_", "", 1): v for k, v in groups["pretrain_weights"].items()}
    pretrain_weights = build("pretrain_weights", lambda: replace(PRETRAIN_WEIGHTS, **pw))
    augment = build("augment", lambda: AugmentConfig(**groups["augment"]))

    n_samples = top.get("n_samples", 200)
    if n_samples < 10:
        raise ConfigError("n_samples must be >= 10", "n_samples", lines.get("n_samples"))
    thr = top.get("detect_threshold", DETECT_THRESHOLD)
    if not 0 <= thr < 1:
        raise ConfigError("detect_threshold must lie in [0, 1)", "detect_threshold", lines.get("detect_threshold"))
    if seed < 0:
        raise ConfigError("seed must be >= 0", "seed", lines.get("seed"))
    return Config(
        model=model,
        phantom=phantom,
        schedule=schedule,
        weights=weights,
        pretrain_weights=pretrain_weights,
        augment=augment,
        n_samples=n_samples,
        detect_threshold=thr,
        seed=seed,
        data=top.get("data"),
        checkpoint=top.get("checkpoint"),
        out=top.get("out"),
    )


def config_text(cfg: Config) -> str:
    """Canonical effective configuration; parsing it reproduces ``cfg``."""
    m, p, s, w, pw, a = cfg.model, cfg.phantom, cfg.schedule, cfg.weights, cfg.pretrain_weights, cfg.augment
    items = [
        ("ch", m.ch),
        ("M", m.M),
        ("N", m.N),
        ("K", m.K),
        ("t_bar", _num(m.t_bar)),
        ("s", m.s),
        ("backbone", _fmt_backbone(m.backbone)),
        ("age_sim_kind", m.age_sim_kind),
        ("age_grid", f"{_num(m.age_grid[0])},{_num(m.age_grid[1])}"),
        ("task_kind", p.task_kind),
        ("volume", _tuple(p.volume_extents)),
        ("region_count", p.region_count),
        ("age_range", _tuple(tuple(float(x) for x in p.age_range))),
        ("normal_atrophy_rate", _num(p.normal_atrophy_rate)),
        ("ad_extra_atrophy", _num(p.ad_extra_atrophy)),
        ("noise_sigma", _num(p.noise_sigma)),
        ("target_radius", _num(p.target_radius)),
        ("other_radius", _num(p.other_radius)),
        ("radius_jitter", _num(p.radius_jitter)),
        ("age_modes", _tuple(tuple(float(x) for x in p.age_modes))),
        ("age_mode_halfwidth", _num(p.age_mode_halfwidth)),
        ("confound_age_modes", _tuple(tuple(float(x) for x in p.confound_age_modes))),
        ("confound_mode_halfwidths", _tuple(tuple(float(x) for x in p.confound_mode_halfwidths))),
        ("n_samples", cfg.n_samples),
        ("pretrain_epochs", s.pretrain_epochs),
        ("train_epochs", s.train_epochs),
        ("batch_size", s.batch_size),
        ("lr_backbone", _num(s.lr_backbone)),
        ("lr_age", _num(s.lr_age)),
        ("lr_head", _num(s.lr_head)),
        ("eps_tanh", _num(s.eps_tanh)),
        ("sparsity_clamp_threshold", _num(s.sparsity_clamp_threshold)),
        ("lambda_A", _num(w.lambda_A)),
        ("lambda_T", _num(w.lambda_T)),
        ("lambda_C", _num(w.lambda_C)),
        ("pretrain_lambda_A", _num(pw.lambda_A)),
        ("pretrain_lambda_T", _num(pw.lambda_T)),
        ("pretrain_ramp_align", str(pw.ramp_align).lower()),
        ("flip_prob", _tuple(tuple(float(x) for x in a.flip_prob))),
        ("max_translate_voxels", a.max_translate_voxels),
        ("intensity_noise_sigma", _num(a.intensity_noise_sigma)),
        ("detect_threshold", _num(cfg.detect_threshold)),
        ("seed", cfg.seed),
    ]
    for key in ("data", "checkpoint", "out"):
        if getattr(cfg, key) is not None:
            items.append((key, getattr(cfg, key)))
    return "".join(f"{k} = {v}\n" for k, v in items)
