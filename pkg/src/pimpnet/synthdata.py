"""Seeded 3D brain phantoms with an atlas and a planted age/atrophy rule.

Atlas labels: 0 is background (outside the brain ellipsoid), 1 is the brain
parenchyma not covered by any structure, and 2..region_count are spherical
structures at fixed positions. Labels 2 and 3 are the bilateral target pair
that atrophies with age and, for AD, by an extra factor.
"""
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

TASK_KINDS = ("image_separable", "age_confounded", "age_only")

# structure centers as fractions of the extents, relative to the volume center
_OFFSETS = [
    (0.25, 0.0, 0.0),
    (-0.25, 0.0, 0.0),
    (0.0, 0.25, 0.0),
    (0.0, -0.25, 0.0),
    (0.0, 0.0, 0.25),
    (0.0, 0.0, -0.25),
]
TARGET_LABELS = (2, 3)
BRAIN_INTENSITY = 0.4
BRAIN_SEMI_AXES = (0.45, 0.42, 0.44)
AGE_ONLY_THRESHOLD = 73.0

# calibrated atrophy settings per task kind: (normal_atrophy_rate, ad_extra_atrophy)
_PRESETS = {
    "image_separable": (0.004, 0.45),
    "age_confounded": (0.019, 0.5),
    "age_only": (0.0, 0.0),
}


class DatasetFormatError(ValueError):
    """Raised for unreadable dataset containers; ``code`` names the failure."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class PhantomSpec:
    volume_extents: Tuple[int, int, int] = (32, 32, 32)
    region_count: int = 6
    age_range: Tuple[float, float] = (55.0, 90.0)
    normal_atrophy_rate: float = 0.004
    ad_extra_atrophy: float = 0.45
    noise_sigma: float = 0.03
    task_kind: str = "image_separable"
    target_radius: float = 5.0
    other_radius: float = 4.0
    radius_jitter: float = 0.03
    age_modes: Tuple[float, float] = (65.0, 81.0)
    age_mode_halfwidth: float = 5.0
    # age_confounded draws ages from two class-independent windows. Ageing from
    # the young to the old window shrinks a CN target as much as AD does, and
    # the half-widths make both windows cover the same radius interval.
    confound_age_modes: Tuple[float, float] = (60.0, 84.0)
    confound_mode_halfwidths: Tuple[float, float] = (4.0, 2.0)

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}, got {self.task_kind!r}")
        if len(self.volume_extents) != 3 or min(self.volume_extents) < 8 or max(self.volume_extents) > 65535:
            raise ValueError("volume_extents must be three extents in [8, 65535]")
        if not 3 <= self.region_count <= len(_OFFSETS) + 1:
            raise ValueError(f"region_count must be in [3, {len(_OFFSETS) + 1}]")
        lo, hi = self.age_range
        if not lo < hi:
            raise ValueError("age_range must be increasing")
        if self.normal_atrophy_rate < 0 or not 0 <= self.ad_extra_atrophy < 1:
            raise ValueError("atrophy rates out of range")
        if self.noise_sigma < 0 or self.radius_jitter < 0:
            raise ValueError("noise_sigma and radius_jitter must be >= 0")
        if self.task_kind == "age_only":
            m0, m1 = self.age_modes
            w = self.age_mode_halfwidth
            if not (lo <= m0 - w and m0 + w < AGE_ONLY_THRESHOLD < m1 - w and m1 + w <= hi):
                raise ValueError("age modes must straddle the threshold 73 inside age_range")
        if self.task_kind == "age_confounded":
            pairs = zip(self.confound_age_modes, self.confound_mode_halfwidths)
            if any(w < 0 or not (lo <= m - w and m + w <= hi) for m, w in pairs):
                raise ValueError("confound_age_modes windows must lie inside age_range")
        if self.min_radius() < 0.75:
            raise ValueError(f"atrophy settings shrink structures below 0.75 voxels ({self.min_radius():.2f})")
        self._check_layout()

    @classmethod
    def preset(cls, task_kind, **overrides):
        if task_kind not in _PRESETS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}, got {task_kind!r}")
        rate, extra = _PRESETS[task_kind]
        kw = {"normal_atrophy_rate": rate, "ad_extra_atrophy": extra, **overrides}
        return cls(task_kind=task_kind, **kw)

    def centers(self):
        mid = np.array([(n - 1) / 2.0 for n in self.volume_extents])
        ext = np.array(self.volume_extents, dtype=float)
        return [mid + np.array(off) * ext for off in _OFFSETS[: self.region_count - 1]]

    def base_radii(self):
        return [self.target_radius if lab in TARGET_LABELS else self.other_radius for lab in range(2, self.region_count + 1)]

    def age_factor(self, age):
        if self.task_kind == "age_only":
            return 1.0
        return 1.0 - self.normal_atrophy_rate * (age - self.age_range[0])

    def ad_factor(self, label):
        if self.task_kind == "age_only" or label == 0:
            return 1.0
        return 1.0 - self.ad_extra_atrophy

    def min_radius(self):
        jit = np.exp(-3.0 * self.radius_jitter)
        worst = self.age_factor(self.age_range[1]) * self.ad_factor(1) * jit
        return min(self.target_radius * worst, self.other_radius * jit)

    def _check_layout(self):
        centers = self.centers()
        radii = [r * np.exp(3.0 * self.radius_jitter) for r in self.base_radii()]
        for i in range(len(centers)):
            for j in range(i + 1, len(centers)):
                if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j]:
                    raise ValueError("structures overlap at their maximal radius")
        brain = _brain_mask(self.volume_extents)
        grid = _grid(self.volume_extents)
        for c, r in zip(centers, radii):
            inside = _sphere_distance(grid, c) <= r + 0.5
            if np.any(inside & ~brain):
                raise ValueError("structures must fit inside the brain ellipsoid")


@dataclass
class SyntheticSample:
    volume: np.ndarray  # 1 x S x R x C, float32 in [0, 1]
    age: float
    label: int
    atlas: np.ndarray  # S x R x C, uint8
    truth: Optional[dict] = None

    def same_payload(self, other):
        return (
            self.age == other.age
            and self.label == other.label
            and np.array_equal(self.atlas, other.atlas)
            and self.volume.shape == other.volume.shape
            and self.volume.tobytes() == other.volume.tobytes()
        )


@dataclass
class DatasetSplit:
    train_ids: List[int] = field(default_factory=list)
    val_ids: List[int] = field(default_factory=list)
    test_ids: List[int] = field(default_factory=list)


def _grid(extents):
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents], indexing="ij"), axis=0)


def _sphere_distance(grid, center):
    return np.sqrt(sum((grid[a] - center[a]) ** 2 for a in range(3)))


def _brain_mask(extents):
    grid = _grid(extents)
    mid = [(n - 1) / 2.0 for n in extents]
    q = sum(((grid[a] - mid[a]) / (BRAIN_SEMI_AXES[a] * extents[a])) ** 2 for a in range(3))
    return q <= 1.0


def draw_parameters(spec: PhantomSpec, sample_seed: int):
    """Draw (age, label, structure radii, rng) for one phantom; the rng is left ready for noise."""
    rng = np.random.default_rng(sample_seed)
    label = int(rng.integers(0, 2))
    if spec.task_kind == "age_only":
        mode = spec.age_modes[label]
        age = rng.uniform(mode - spec.age_mode_halfwidth, mode + spec.age_mode_halfwidth)
    elif spec.task_kind == "age_confounded":
        k = int(rng.integers(0, 2))
        mode, w = spec.confound_age_modes[k], spec.confound_mode_halfwidths[k]
        age = rng.uniform(mode - w, mode + w)
    else:
        age = rng.uniform(*spec.age_range)
    age = float(np.float32(age))
    eps = np.clip(rng.standard_normal(spec.region_count - 1), -3.0, 3.0)
    radii = []
    for lab, base, e in zip(range(2, spec.region_count + 1), spec.base_radii(), eps):
        r = base * np.exp(spec.radius_jitter * e)
        if lab in TARGET_LABELS:
            r *= spec.age_factor(age) * spec.ad_factor(label)
        radii.append(float(r))
    return age, label, radii, rng


def generate_sample(spec: PhantomSpec, sample_seed: int) -> SyntheticSample:
    age, label, radii, rng = draw_parameters(spec, sample_seed)
    extents = spec.volume_extents
    grid = _grid(extents)
    brain = _brain_mask(extents)
    atlas = np.where(brain, 1, 0).astype(np.uint8)
    vol = np.where(brain, BRAIN_INTENSITY, 0.0)
    centers = spec.centers()
    intensities = np.linspace(0.6, 0.9, spec.region_count - 1)
    for lab, c, r, inten in zip(range(2, spec.region_count + 1), centers, radii, intensities):
        dist = _sphere_distance(grid, c)
        # partial-volume coverage keeps intensity smooth in the radius
        cover = np.clip(r - dist + 0.5, 0.0, 1.0)
        vol = vol * (1.0 - cover) + inten * cover
        atlas[dist <= r] = lab
    if spec.noise_sigma > 0:
        vol = vol + spec.noise_sigma * rng.standard_normal(vol.shape)
    vol = np.clip(vol, 0.0, 1.0).astype(np.float32)[None]
    truth = {"radii": radii, "centers": [tuple(map(float, c)) for c in centers]}
    return SyntheticSample(vol, age, label, atlas, truth)


def stratified_split(labels) -> DatasetSplit:
    """60/20/20 split, stratified by label via a repeating 3:1:1 pattern over class-sorted indices."""
    labels = np.asarray(labels)
    order = np.concatenate([np.flatnonzero(labels == c) for c in np.unique(labels)])
    pattern = ("train", "train", "val", "train", "test")
    split = DatasetSplit()
    for pos, idx in enumerate(order):
        getattr(split, f"{pattern[pos % 5]}_ids").append(int(idx))
    for ids in (split.train_ids, split.val_ids, split.test_ids):
        ids.sort()
    return split


def generate_dataset(spec: PhantomSpec, n: int, seed: int):
    if n < 10:
        raise ValueError("a dataset needs at least 10 samples")
    samples = [generate_sample(spec, seed + i) for i in range(n)]
    return samples, stratified_split([s.label for s in samples])


# ------------------------------------------------------------------ container

MAGIC = b"PSYN"
VERSION = 1
_HEADER = struct.Struct("<4sIIHHHH")


def dataset_bytes(samples: List[SyntheticSample], region_count: int) -> bytes:
    if not samples:
        raise ValueError("cannot write an empty dataset")
    extents = samples[0].atlas.shape
    parts = [_HEADER.pack(MAGIC, VERSION, len(samples), *extents, region_count)]
    for s in samples:
        if s.atlas.shape != extents or s.volume.shape != (1,) + extents:
            raise ValueError("all samples must share the same extents")
        parts.append(struct.pack("<fB", s.age, s.label))
        parts.append(np.ascontiguousarray(s.atlas, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(s.volume, dtype="<f4").tobytes())
    return b"".join(parts)


def expected_size(count, extents):
    vox = int(np.prod(extents))
    return _HEADER.size + count * (5 + vox + 4 * vox)


def parse_dataset(buf: bytes):
    """Decode a container; returns (samples, region_count)."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise DatasetFormatError("bad magic", "not a PSYN dataset container")
    if len(buf) < _HEADER.size:
        raise DatasetFormatError("truncated payload", "header incomplete")
    _, version, count, S, R, C, regions = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise DatasetFormatError("version mismatch", f"expected version {VERSION}, found {version}")
    extents = (S, R, C)
    need = expected_size(count, extents)
    if len(buf) < need:
        raise DatasetFormatError("truncated payload", f"expected {need} bytes, found {len(buf)}")
    if len(buf) > need:
        raise DatasetFormatError("trailing data", f"expected {need} bytes, found {len(buf)}")
    vox = S * R * C
    off = _HEADER.size
    samples = []
    for _ in range(count):
        age, label = struct.unpack_from("<fB", buf, off)
        off += 5
        atlas = np.frombuffer(buf, dtype=np.uint8, count=vox, offset=off).reshape(extents).copy()
        off += vox
        vol = np.frombuffer(buf, dtype="<f4", count=vox, offset=off).reshape((1,) + extents).astype(np.float32)
        off += 4 * vox
        samples.append(SyntheticSample(vol, float(age), int(label), atlas))
    return samples, regions


def split_text(split: DatasetSplit) -> str:
    return "".join(
        f"{name}: {','.join(str(i) for i in ids)}\n"
        for name, ids in (("train", split.train_ids), ("val", split.val_ids), ("test", split.test_ids))
    )


def parse_split(text: str) -> DatasetSplit:
    split = DatasetSplit()
    seen = set()
    for line in text.splitlines():
        if not line.strip():
            continue
        name, _, rest = line.partition(":")
        name = name.strip()
        if name not in ("train", "val", "test") or name in seen:
            raise DatasetFormatError("bad split", f"unexpected line {line!r}")
        seen.add(name)
        ids = [int(t) for t in rest.split(",") if t.strip()]
        setattr(split, f"{name}_ids", ids)
    if seen != {"train", "val", "test"}:
        raise DatasetFormatError("bad split", "split file needs train, val and test lines")
    return split


def split_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.name + ".split")


def write_dataset(samples, split: DatasetSplit, path, region_count=None):
    if region_count is None:
        region_count = int(max(int(s.atlas.max()) for s in samples))
    Path(path).write_bytes(dataset_bytes(samples, region_count))
    split_path(path).write_text(split_text(split), encoding="utf-8")


def read_dataset(path):
    samples, _ = parse_dataset(Path(path).read_bytes())
    sp = split_path(path)
    split = parse_split(sp.read_text(encoding="utf-8")) if sp.exists() else None
    return samples, split


def with_task(spec: PhantomSpec, task_kind: str) -> PhantomSpec:
    rate, extra = _PRESETS[task_kind]
    return replace(spec, task_kind=task_kind, normal_atrophy_rate=rate, ad_extra_atrophy=extra)


def _balanced_accuracy(pred, labels):
    return 0.5 * (np.mean(pred[labels == 0] == 0) + np.mean(pred[labels == 1] == 1))


def bayes_oracle(spec: PhantomSpec, n=10_000, seed=0, age_grid_points=4001):
    """Monte-Carlo balanced accuracy of the Bayes classifiers built from the generator.

    Both classifiers see the true target-structure radii (not the rendered
    image). The image-only one integrates the unknown age out of the radius
    likelihood; the image+age one conditions on it. Returns
    ``(image_only_balacc, image_plus_age_balacc)``.
    """
    n_t = len(TARGET_LABELS)
    base = spec.target_radius
    sd = spec.radius_jitter / np.sqrt(n_t)
    ages = np.empty(n)
    labels = np.empty(n, dtype=int)
    u = np.empty(n)
    for i in range(n):
        age, label, radii, _ = draw_parameters(spec, seed + i)
        ages[i], labels[i] = age, label
        u[i] = np.mean([np.log(radii[lab - 2] / base) for lab in TARGET_LABELS])

    def log_lik(uv, mean):
        s = max(sd, 1e-9)
        return -0.5 * ((uv - mean) / s) ** 2

    # image + age: Gaussian likelihoods with known age
    fa = np.log(np.array([spec.age_factor(a) for a in ages]))
    with_age = (log_lik(u, fa + np.log(spec.ad_factor(1))) > log_lik(u, fa + np.log(spec.ad_factor(0)))).astype(int)

    # image only: integrate over the class-conditional age density
    def marginal(label):
        if spec.task_kind == "age_only":
            m, w = spec.age_modes[label], spec.age_mode_halfwidth
            grid = np.linspace(m - w, m + w, age_grid_points)
        elif spec.task_kind == "age_confounded":
            # equal-weight windows, so each gets the same number of grid points
            grid = np.concatenate(
                [np.linspace(m - w, m + w, age_grid_points) for m, w in zip(spec.confound_age_modes, spec.confound_mode_halfwidths)]
            )
        else:
            grid = np.linspace(*spec.age_range, age_grid_points)
        means = np.log([spec.age_factor(a) for a in grid]) + np.log(spec.ad_factor(label))
        ll = log_lik(u[:, None], means[None, :])
        mx = ll.max(axis=1, keepdims=True)
        return mx[:, 0] + np.log(np.exp(ll - mx).mean(axis=1))

    image_only = (marginal(1) > marginal(0)).astype(int)
    return _balanced_accuracy(image_only, labels), _balanced_accuracy(with_age, labels)
