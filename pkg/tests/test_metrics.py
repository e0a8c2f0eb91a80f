import json

import numpy as np
import pytest

from alwnn import data, metrics, model as M

from hypothesis import given, settings
from hypothesis import strategies as st


# ---------------------------------------------------------------------------
# confusion-matrix metrics


def test_perfect_predictions_score_one():
    y = np.array([0, 1, 2, 0, 1, 2])
    cm = metrics.confusion_matrix(y, y, 3)
    acc, mf1, kappa = metrics.metrics_from_confusion(cm)
    assert acc == 1.0
    assert mf1 == 1.0
    assert kappa == 1.0


def test_constant_prediction_balanced_classes():
    # always predicting class 0 on a balanced 4-class set: acc 1/K, kappa 0
    y = np.repeat(np.arange(4), 25)
    p = np.zeros_like(y)
    cm = metrics.confusion_matrix(y, p, 4)
    acc, mf1, kappa = metrics.metrics_from_confusion(cm)
    assert acc == pytest.approx(0.25)
    assert kappa == pytest.approx(0.0, abs=1e-12)


def test_empty_class_counts_as_zero_f1():
    # class 2 never appears in truth or prediction
    y = np.array([0, 0, 1, 1])
    p = np.array([0, 0, 1, 1])
    cm = metrics.confusion_matrix(y, p, 3)
    _, mf1, _ = metrics.metrics_from_confusion(cm)
    assert mf1 == pytest.approx(2.0 / 3.0)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        metrics.metrics_from_confusion(np.zeros((3, 3), dtype=np.int64))


def _scripted_metrics(y, p, k):
    # independent loop-based formulas, no shared code with the module
    n = len(y)
    acc = sum(int(a == b) for a, b in zip(y, p)) / n
    f1s = []
    for c in range(k):
        tp = sum(int(a == c and b == c) for a, b in zip(y, p))
        fp = sum(int(a != c and b == c) for a, b in zip(y, p))
        fn = sum(int(a == c and b != c) for a, b in zip(y, p))
        f1s.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    mf1 = sum(f1s) / k
    pe = sum((sum(int(a == c) for a in y) / n) * (sum(int(b == c) for b in p) / n)
             for c in range(k))
    if abs(1 - pe) < 1e-12:
        kappa = 1.0 if acc >= 1 - 1e-12 else 0.0
    else:
        kappa = (acc - pe) / (1 - pe)
    return acc, mf1, kappa


def test_random_labels_match_scripted_oracle():
    rng = np.random.default_rng(7)
    y = rng.integers(0, 3, size=200)
    p = rng.integers(0, 3, size=200)
    cm = metrics.confusion_matrix(y, p, 3)
    got = metrics.metrics_from_confusion(cm)
    want = _scripted_metrics(y.tolist(), p.tolist(), 3)
    assert got == pytest.approx(want, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)),
                min_size=2, max_size=120))
def test_confusion_path_equals_samplewise_path(pairs):
    y = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    cm = metrics.confusion_matrix(y, p, 5)
    assert cm.sum() == len(pairs)
    got = metrics.metrics_from_confusion(cm)
    want = _scripted_metrics(y, p, 5)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# evaluate() on a dataset


def _tagged_dataset(n_per, length=16, snrs=(0, 10)):
    # two classes separated by the sign of the I-channel mean
    from alwnn.signals import SCHEME_IDS
    rng = np.random.default_rng(3)
    frames, sids, snr_col = [], [], []
    for sid, offset in ((SCHEME_IDS["BPSK"], -1.0), (SCHEME_IDS["QPSK"], 1.0)):
        for snr in snrs:
            for _ in range(n_per):
                iq = 0.05 * rng.normal(size=(2, length))
                iq[0] += offset
                frames.append(iq)
                sids.append(sid)
                snr_col.append(snr)
    meta = {"version": data.FORMAT_VERSION, "schemes": ["BPSK", "QPSK"],
            "snr_grid": list(snrs), "length": length,
            "frames_per_cell": n_per, "seed": 3}
    return data.Dataset(np.array(frames, dtype=np.float32),
                        np.array(sids, dtype=np.uint16),
                        np.array(snr_col, dtype=np.int16), meta)


def _fitted_params(mcfg, ds):
    from alwnn import train
    params = M.init_params(mcfg, seed=0)
    tcfg = train.TrainConfig(batch_size=16, learning_rate=0.01, max_epochs=40,
                             patience=40, lambda1=0.0, lambda2=0.0, seed=0)
    return train.train(params, mcfg, ds, ds, tcfg).params


def test_evaluate_report_fields_and_per_snr():
    ds = _tagged_dataset(12)
    mcfg = M.ModelConfig(levels=1, num_classes=2, length=16, channels=4)
    params = _fitted_params(mcfg, ds)
    rep = metrics.evaluate(params, mcfg, ds, batch_size=16)
    assert rep.confusion.shape == (2, 2)
    assert rep.confusion.sum() == len(ds)
    assert set(rep.per_snr) == {0, 10}
    assert rep.class_names == ["BPSK", "QPSK"]
    # separable by construction, the tiny fit should be near perfect
    assert rep.accuracy > 0.9
    # overall accuracy is the frame-weighted mean of the per-SNR curve
    counts = {s: int(np.sum(ds.snrs == s)) for s in rep.per_snr}
    mixed = sum(rep.per_snr[s] * counts[s] for s in rep.per_snr) / len(ds)
    assert rep.accuracy == pytest.approx(mixed, abs=1e-9)


def test_evaluate_empty_set_rejected():
    ds = _tagged_dataset(4)
    mcfg = M.ModelConfig(levels=1, num_classes=2, length=16, channels=4)
    params = M.init_params(mcfg, seed=0)
    with pytest.raises(ValueError):
        metrics.evaluate(params, mcfg, ds.subset(np.array([], dtype=int)))


def test_eval_csv_layout(tmp_path):
    rep = metrics.EvalReport(0.5, 0.5, 0.0, {10: 0.75, -20: 0.25},
                             np.eye(2, dtype=np.int64), ["BPSK", "QPSK"])
    out = tmp_path / "curve.csv"
    metrics.write_eval_csv(out, rep)
    lines = out.read_text().splitlines()
    assert lines[0] == "snr_db,accuracy"
    assert lines[1] == "-20,0.250000"
    assert lines[2] == "10,0.750000"


def test_confusion_csv_layout(tmp_path):
    cm = np.array([[3, 1], [0, 4]], dtype=np.int64)
    rep = metrics.EvalReport(0.875, 0.0, 0.0, {}, cm, ["BPSK", "QPSK"])
    out = tmp_path / "confusion.csv"
    metrics.write_confusion_csv(out, rep)
    lines = out.read_text().splitlines()
    assert lines[0] == "true\\pred,BPSK,QPSK"
    assert lines[1] == "BPSK,3,1"
    assert lines[2] == "QPSK,0,4"


def test_summary_json_round_trip(tmp_path):
    path = tmp_path / "summary.json"
    metrics.write_summary_json(path, {"accuracy": 0.5, "nested": {"a": 1}})
    assert json.loads(path.read_text()) == {"accuracy": 0.5, "nested": {"a": 1}}


# ---------------------------------------------------------------------------
# complexity


def test_pointwise_layer_macc_value():
    cfg = M.ModelConfig(levels=1, num_classes=11, length=128)
    rep = metrics.count_complexity(cfg)
    rows = {r.name: r for r in rep.rows}
    assert rows["stem.pw1"].macc == 524288       # 64*64*128
    assert rows["stem.pw2"].macc == 524288


def test_head_layer_counts():
    cfg = M.ModelConfig(levels=1, num_classes=11, length=128)
    rows = {r.name: r for r in metrics.count_complexity(cfg).rows}
    assert rows["head.fc"].macc == 1408          # 128*11
    assert rows["head.fc"].params == 1419        # 128*11 + 11


def test_totals_match_instrumented_counter():
    for cfg in (M.ModelConfig(levels=1, num_classes=11, length=128),
                M.ModelConfig(levels=2, num_classes=4, length=64, channels=8),
                M.ModelConfig(levels=0, num_classes=3, length=32, channels=4)):
        rep = metrics.count_complexity(cfg)
        assert rep.macc == metrics.instrumented_macc(cfg)


def test_params_match_checkpoint_enumeration(tmp_path):
    cfg = M.ModelConfig(levels=1, num_classes=4, length=32, channels=8)
    params = M.init_params(cfg, seed=1)
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(params, cfg, path)
    rep = metrics.count_complexity(cfg)
    assert rep.params == metrics.checkpoint_param_count(path)
    assert rep.params == params.count()


def test_flops_exceed_twice_macc():
    cfg = M.ModelConfig(levels=1, num_classes=11, length=128)
    rep = metrics.count_complexity(cfg)
    assert rep.flops > 2 * rep.macc              # activation + pooling elements


def test_complexity_writers(tmp_path):
    cfg = M.ModelConfig(levels=1, num_classes=4, length=32, channels=8)
    rep = metrics.count_complexity(cfg)
    out = tmp_path / "complexity.csv"
    metrics.write_complexity_csv(out, rep)
    lines = out.read_text().splitlines()
    assert lines[1] == "layer,params,macc,flops"
    assert lines[-1] == f"TOTAL,{rep.params},{rep.macc},{rep.flops}"
    text = metrics.complexity_text(rep)
    assert "TOTAL" in text and "head.fc" in text


# ---------------------------------------------------------------------------
# latency


def test_bench_latency_rows_and_csv(tmp_path):
    cfg = M.ModelConfig(levels=1, num_classes=3, length=16, channels=4)
    params = M.init_params(cfg, seed=0)
    rows = metrics.bench_latency(params, cfg, batch_sizes=(2, 8),
                                 repetitions=1, warmup=1)
    assert [b for b, _ in rows] == [2, 8]
    assert all(sec > 0 for _, sec in rows)
    out = tmp_path / "bench.csv"
    metrics.write_bench_csv(out, rows)
    lines = out.read_text().splitlines()
    assert lines[0] == "batch,per_sample_seconds"
    assert lines[1].startswith("2,")
