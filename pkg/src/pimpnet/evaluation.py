"""Classification metrics, explanation-size/sparsity/localization/purity metrics and explanations.

SENS and SPEC follow the naming of the original evaluation: SENS is the recall
of the cognitively normal class (label 0) and SPEC the recall of the AD class
(label 1). F1 treats AD as the positive class.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .model import PimpnetModel, infer_batch, patch_center, receptive_box

DETECT_THRESHOLD = 0.1


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ClassificationMetrics:
    counts: ConfusionCounts
    acc: float
    bal_acc: float
    sens: float
    spec: float
    f1: float


def _ratio(num, den):
    return num / den if den else float("nan")


def classification_metrics(predictions, labels) -> ClassificationMetrics:
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if pred.size == 0:
        raise ValueError("no predictions to evaluate")
    if pred.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    if not np.all(np.isin(y, (0, 1))) or not np.all(np.isin(pred, (0, 1))):
        raise ValueError("binary metrics need labels and predictions in {0, 1}")
    c = ConfusionCounts(
        tp=int(np.sum((pred == 1) & (y == 1))),
        fp=int(np.sum((pred == 1) & (y == 0))),
        fn=int(np.sum((pred == 0) & (y == 1))),
        tn=int(np.sum((pred == 0) & (y == 0))),
    )
    sens = _ratio(c.tn, c.tn + c.fp)
    spec = _ratio(c.tp, c.tp + c.fn)
    return ClassificationMetrics(
        counts=c,
        acc=(c.tp + c.tn) / c.total,
        bal_acc=(sens + spec) / 2,
        sens=sens,
        spec=spec,
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


# ------------------------------------------------------------- model metrics


def global_size(w_c) -> int:
    """Prototypes with a strictly positive weight to at least one class."""
    return int(np.sum(np.any(np.asarray(w_c) > 0, axis=1)))


def sparsity(w_c) -> float:
    w = np.asarray(w_c)
    return float(np.sum(w == 0)) / w.size


@dataclass
class InferenceDump:
    """Inference outputs for a set of samples, the input to the set-level metrics."""

    labels: np.ndarray
    o: np.ndarray
    p_img: np.ndarray
    p_age: np.ndarray  # masked
    locations: np.ndarray


def run_inference(model: PimpnetModel, samples, batch_size=16) -> InferenceDump:
    parts = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        parts.append(infer_batch(model, np.stack([s.volume for s in chunk]), [s.age for s in chunk]))
    return InferenceDump(*(np.concatenate(col) for col in zip(*parts)))


def local_sizes(dump: InferenceDump, w_c, detect_threshold=DETECT_THRESHOLD):
    """Per sample: detected prototypes with positive weight to the predicted class."""
    p = np.concatenate([dump.p_img, dump.p_age], axis=1)
    w_pred = np.asarray(w_c)[:, dump.labels].T  # samples x L
    return np.sum((p > detect_threshold) & (w_pred > 0), axis=1)


def local_size(model: PimpnetModel, sample, detect_threshold=DETECT_THRESHOLD) -> int:
    return int(local_sizes(run_inference(model, [sample]), model.w_c.data, detect_threshold)[0])


def _lc_from(p_img, locations, feature_shape, detect_threshold):
    scale = np.array([max(n - 1, 1) for n in feature_shape], dtype=np.float64)
    contribs = []
    for m in range(p_img.shape[1]):
        hit = p_img[:, m] > detect_threshold
        if hit.sum() < 2:
            continue
        coords = locations[hit, m, :].astype(np.float64) / scale
        contribs.append(float(np.mean(coords.var(axis=0))))
    return float(np.mean(contribs)) if contribs else None


def localization_consistency(model: PimpnetModel, test_set, detect_threshold=DETECT_THRESHOLD, dump=None):
    """Mean over prototypes detected in >= 2 images of the mean per-axis variance
    of their normalized argmax cell. ``None`` when no prototype qualifies."""
    dump = dump or run_inference(model, test_set)
    return _lc_from(dump.p_img, dump.locations, model.config.feature_shape(), detect_threshold)


def _label_counts(model, dump, atlases, detect_threshold, n_labels):
    counts = {}
    for b, atlas in enumerate(atlases):
        for m in np.flatnonzero(dump.p_img[b] > detect_threshold):
            (d0, d1), (h0, h1), (w0, w1) = receptive_box(model.config, dump.locations[b, m])
            box = atlas[d0:d1, h0:h1, w0:w1]
            c = np.bincount(box.ravel(), minlength=n_labels)
            counts[int(m)] = counts.get(int(m), 0) + c
    return counts


def entropy_bits(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    q = c[c > 0] / c.sum()
    return float(-np.sum(q * np.log2(q))) if q.size else 0.0


@dataclass
class PurityResult:
    h_p: Optional[float]
    per_prototype: dict
    background_fraction: Optional[float]


def prototype_entropy(model: PimpnetModel, test_set, atlas_volumes=None, detect_threshold=DETECT_THRESHOLD,
                      dump=None) -> PurityResult:
    """Shannon entropy (bits) of atlas labels in each detected prototype's receptive
    field, pooled over the test set; H_p is the mean over detected prototypes."""
    dump = dump or run_inference(model, test_set)
    atlases = atlas_volumes if atlas_volumes is not None else [s.atlas for s in test_set]
    n_labels = int(max(int(a.max()) for a in atlases)) + 1
    counts = _label_counts(model, dump, atlases, detect_threshold, n_labels)
    if not counts:
        return PurityResult(None, {}, None)
    per = {m: entropy_bits(c) for m, c in sorted(counts.items())}
    bg = float(np.mean([c[0] / c.sum() for c in counts.values()]))
    return PurityResult(float(np.mean(list(per.values()))), per, bg)


@dataclass
class MetricsReport:
    n_samples: int
    acc: float
    bal_acc: float
    sens: float
    spec: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    detect_threshold: float
    gs: int
    ls: float
    sp: float
    lc_p: Optional[float]
    h_p: Optional[float]
    background_fraction: Optional[float]


_SECTIONS = {
    "classification": ("n_samples", "acc", "bal_acc", "sens", "spec", "f1", "tp", "fp", "fn", "tn"),
    "explainability": ("detect_threshold", "gs", "ls", "sp", "lc_p", "h_p", "background_fraction"),
}


def evaluate(model: PimpnetModel, test_set, detect_threshold=DETECT_THRESHOLD) -> MetricsReport:
    dump = run_inference(model, test_set)
    cm = classification_metrics(dump.labels, [s.label for s in test_set])
    purity = prototype_entropy(model, test_set, detect_threshold=detect_threshold, dump=dump)
    w = model.w_c.data
    return MetricsReport(
        n_samples=len(test_set),
        acc=cm.acc,
        bal_acc=cm.bal_acc,
        sens=cm.sens,
        spec=cm.spec,
        f1=cm.f1,
        tp=cm.counts.tp,
        fp=cm.counts.fp,
        fn=cm.counts.fn,
        tn=cm.counts.tn,
        detect_threshold=detect_threshold,
        gs=global_size(w),
        ls=float(np.mean(local_sizes(dump, w, detect_threshold))),
        sp=sparsity(w),
        lc_p=localization_consistency(model, test_set, detect_threshold, dump=dump),
        h_p=purity.h_p,
        background_fraction=purity.background_fraction,
    )


def _fmt(v):
    if v is None:
        return "undefined"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_text(report: MetricsReport) -> str:
    blocks = []
    for section, keys in _SECTIONS.items():
        lines = [f"[{section}]"] + [f"{k}: {_fmt(getattr(report, k))}" for k in keys]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def parse_blocks(text: str):
    """Parse ``[section]`` headed ``key: value`` blocks into a dict of dicts of strings."""
    out, cur = {}, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = out.setdefault(line[1:-1], {})
            continue
        key, sep, val = line.partition(":")
        if not sep or cur is None:
            raise ValueError(f"line {lineno}: expected 'key: value' inside a section")
        cur[key.strip()] = val.strip()
    return out


def _num(s):
    if s == "undefined":
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_metrics(text: str) -> MetricsReport:
    blocks = parse_blocks(text)
    vals = {}
    for section, keys in _SECTIONS.items():
        for k in keys:
            vals[k] = _num(blocks[section][k])
    return MetricsReport(**vals)


def aggregate_text(reports: Sequence[MetricsReport]) -> str:
    """Mean and standard deviation of every metric across runs (undefined values skipped)."""
    blocks = [f"[runs]\ncount: {len(reports)}\n"]
    for section, keys in _SECTIONS.items():
        lines = [f"[{section}]"]
        for k in keys:
            vals = [getattr(r, k) for r in reports if getattr(r, k) is not None]
            if vals:
                lines.append(f"{k}.mean: {_fmt(float(np.mean(vals)))}")
                lines.append(f"{k}.std: {_fmt(float(np.std(vals)))}")
            else:
                lines.append(f"{k}.mean: undefined")
                lines.append(f"{k}.std: undefined")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


# ---------------------------------------------------------------- explanations


@dataclass
class ExplainEntry:
    prototype: int
    kind: str
    presence: float
    weight: float
    contribution: float
    center: Optional[tuple] = None
    age: Optional[float] = None


@dataclass
class ExplainReport:
    sample: int
    predicted: int
    score: float
    entries: List[ExplainEntry] = field(default_factory=list)


def explain(model: PimpnetModel, sample, sample_id=0) -> ExplainReport:
    labels, o, p_img, p_age, locs = infer_batch(model, sample.volume[None], [sample.age])
    k = int(labels[0])
    M = model.config.M
    p = np.concatenate([p_img[0], p_age[0]]).astype(np.float64)
    w = model.w_c.data[:, k].astype(np.float64)
    contrib = p * w
    entries = []
    for l in np.flatnonzero(contrib != 0):
        l = int(l)
        if l < M:
            entries.append(ExplainEntry(l, "image", p[l], w[l], contrib[l], center=patch_center(model.config, locs[0, l])))
        else:
            entries.append(ExplainEntry(l, "age", p[l], w[l], contrib[l], age=float(model.t_age.data[l - M])))
    entries.sort(key=lambda e: (-e.contribution, e.prototype))
    return ExplainReport(sample_id, k, float(o[0, k]), entries)


def explain_text(reports: Sequence[ExplainReport]) -> str:
    blocks = []
    for r in reports:
        lines = [f"[sample {r.sample}]", f"predicted: {r.predicted}", f"score: {_fmt(r.score)}", f"entries: {len(r.entries)}"]
        for e in r.entries:
            item = (
                f"prototype={e.prototype} kind={e.kind} presence={_fmt(e.presence)} "
                f"weight={_fmt(e.weight)} contribution={_fmt(e.contribution)}"
            )
            if e.center is not None:
                item += " center=" + ",".join(_fmt(c) for c in e.center)
            if e.age is not None:
                item += f" age={_fmt(e.age)}"
            lines.append(f"entry: {item}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)
