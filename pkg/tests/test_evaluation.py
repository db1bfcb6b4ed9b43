import numpy as np
import pytest

from pimpnet.evaluation import (
    InferenceDump,
    MetricsReport,
    aggregate_text,
    classification_metrics,
    entropy_bits,
    explain,
    explain_text,
    global_size,
    local_sizes,
    metrics_text,
    parse_blocks,
    parse_metrics,
    sparsity,
)
from pimpnet.model import ConvBlock, ModelConfig, PimpnetModel
from pimpnet.synthdata import PhantomSpec, generate_sample


def test_confusion_example():
    # 10 CN with 8 correct, 10 AD with 7 correct
    y = [0] * 10 + [1] * 10
    pred = [0] * 8 + [1] * 2 + [1] * 7 + [0] * 3
    m = classification_metrics(pred, y)
    assert (m.acc, m.bal_acc) == (0.75, 0.75)
    assert m.sens == pytest.approx(0.8) and m.spec == pytest.approx(0.7)
    assert m.f1 == pytest.approx(2 * (7 / 9) * 0.7 / ((7 / 9) + 0.7))
    assert m.counts.total == 20


def test_metric_input_errors():
    with pytest.raises(ValueError):
        classification_metrics([], [])
    with pytest.raises(ValueError):
        classification_metrics([0, 1], [0])
    with pytest.raises(ValueError):
        classification_metrics([2], [0])


def test_sizes_and_sparsity():
    w = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 2.0], [0.0, 0.0]])
    assert global_size(w) == 2
    assert sparsity(w) == 6 / 8
    dump = InferenceDump(
        labels=np.array([0, 1]),
        o=np.zeros((2, 2)),
        p_img=np.array([[0.9, 0.9, 0.9], [0.05, 0.5, 0.9]]),
        p_age=np.array([[0.0], [1.0]]),
        locations=np.zeros((2, 3, 3), dtype=int),
    )
    np.testing.assert_array_equal(local_sizes(dump, w, 0.1), [1, 1])


def test_entropy_exact_values():
    assert entropy_bits([10, 0, 0]) == 0.0
    assert entropy_bits([3, 3, 3, 3]) == 2.0


def _report(**kw):
    base = dict(
        n_samples=4, acc=0.5, bal_acc=0.5, sens=0.25, spec=0.75, f1=0.6, tp=1, fp=1, fn=1, tn=1,
        detect_threshold=0.1, gs=3, ls=2.5, sp=0.4, lc_p=None, h_p=1.25, background_fraction=0.1,
    )
    base.update(kw)
    return MetricsReport(**base)


def test_metrics_text_roundtrip():
    r = _report(acc=1 / 3)
    text = metrics_text(r)
    assert "lc_p: undefined" in text
    assert parse_metrics(text) == r


def test_aggregate_mean_and_std():
    text = aggregate_text([_report(acc=0.5), _report(acc=1.0)])
    blocks = parse_blocks(text)
    assert float(blocks["classification"]["acc.mean"]) == 0.75
    assert float(blocks["classification"]["acc.std"]) == 0.25
    assert blocks["explainability"]["lc_p.mean"] == "undefined"
    assert blocks["runs"]["count"] == "2"


def test_parse_blocks_rejects_stray_lines():
    with pytest.raises(ValueError):
        parse_blocks("acc: 1\n")


def test_explanation_contributions_sum_to_score():
    cfg = ModelConfig(M=4, backbone=(ConvBlock(4), ConvBlock(4), ConvBlock(4, relu=False)))
    model = PimpnetModel.init(cfg, 0)
    s = generate_sample(PhantomSpec(), 0)
    rep = explain(model, s, 7)
    assert rep.sample == 7
    total = sum(e.contribution for e in rep.entries)
    assert total == pytest.approx(rep.score, abs=1e-5)
    contribs = [e.contribution for e in rep.entries]
    assert contribs == sorted(contribs, reverse=True)
    assert sum(e.kind == "age" for e in rep.entries) <= 1
    text = explain_text([rep])
    assert text.startswith("[sample 7]") and text.count("entry: ") == len(rep.entries)
