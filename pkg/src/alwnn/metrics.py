"""Evaluation metrics, complexity accounting, and a latency benchmark.

FLOPs convention used everywhere in reports: one multiply-accumulate is
2 FLOPs, plus 1 FLOP per element entering an activation or pooling op.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M

FLOPS_NOTE = "# flops = 2*macc + 1 per activation/pooling input element"


# ---------------------------------------------------------------------------
# classification metrics


def confusion_matrix(y_true, y_pred, num_classes):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm):
    """(accuracy, macro-F1, kappa) from a rows-true/cols-pred count matrix."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    acc = np.trace(cm) / total
    f1s = []
    for i in range(cm.shape[0]):
        tp = cm[i, i]
        denom = cm[i, :].sum() + cm[:, i].sum()
        # no support and no predictions: F1 defined as 0, still counted
        f1s.append(0.0 if denom == 0 else 2.0 * tp / denom)
    mf1 = float(np.mean(f1s))
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (total * total)
    if abs(1.0 - pe) < 1e-12:
        kappa = 1.0 if acc >= 1.0 - 1e-12 else 0.0
    else:
        kappa = (acc - pe) / (1.0 - pe)
    return float(acc), mf1, float(kappa)


@dataclass
class EvalReport:
    accuracy: float
    mf1: float
    kappa: float
    per_snr: dict            # snr_db -> accuracy
    confusion: np.ndarray    # (K, K) counts, rows are true classes
    class_names: list

    def summary(self):
        return {"accuracy": self.accuracy, "mf1": self.mf1, "kappa": self.kappa,
                "per_snr": {str(k): v for k, v in sorted(self.per_snr.items())},
                "classes": list(self.class_names)}


def evaluate(params, mcfg, test_ds, batch_size=None):
    """Predict the whole set and compute all report metrics."""
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    x = test_ds.iq.reshape(len(test_ds), 1, 2, test_ds.length)
    y = test_ds.labels()
    preds = M.predict(params, mcfg, x, batch_size=batch_size)
    cm = confusion_matrix(y, preds, mcfg.num_classes)
    acc, mf1, kappa = metrics_from_confusion(cm)
    per_snr = {}
    for snr in np.unique(test_ds.snrs):
        mask = test_ds.snrs == snr
        per_snr[int(snr)] = float(np.mean(preds[mask] == y[mask]))
    return EvalReport(acc, mf1, kappa, per_snr, cm, test_ds.schemes)


# ---------------------------------------------------------------------------
# complexity accounting


@dataclass
class LayerRow:
    name: str
    params: int
    macc: int
    flops: int


@dataclass
class ComplexityReport:
    rows: list = field(default_factory=list)

    @property
    def params(self):
        return sum(r.params for r in self.rows)

    @property
    def macc(self):
        return sum(r.macc for r in self.rows)

    @property
    def flops(self):
        return sum(r.flops for r in self.rows)


def count_complexity(config):
    """Analytic per-layer parameter/MACC/FLOP counts for one input frame."""
    c, L = config.channels, config.length
    rows = []

    def add(name, params, macc, act_elems=0):
        rows.append(LayerRow(name, params, macc, 2 * macc + act_elems))

    add("stem.dw2d", c * 2 * config.stem_kernel + c, c * 2 * config.stem_kernel * L)
    add("stem.pw1", c * c + c, c * c * L, act_elems=c * L)       # + ReLU
    add("stem.dw1d", c * config.dw_kernel + c, c * config.dw_kernel * L)
    add("stem.pw2", c * c + c, c * c * L, act_elems=c * L)       # + ReLU
    for j in range(1, config.levels + 1):
        t = L >> j
        for op in ("P", "U"):
            add(f"lift{j}.{op}_dw", c * config.pu_kernel + c,
                c * config.pu_kernel * t, act_elems=c * t)       # + ReLU
            add(f"lift{j}.{op}_pw", c * c + c, c * c * t)
    feat = c * (config.levels + 1)
    bands = config.levels + 1
    gap_elems = (L >> config.levels) * c + sum((L >> j) * c
                                               for j in range(1, config.levels + 1))
    rows.append(LayerRow("gap", 0, 0, gap_elems))
    add("head.fc", feat * config.num_classes + config.num_classes,
        feat * config.num_classes)
    assert bands * c == feat
    return ComplexityReport(rows)


def instrumented_macc(config):
    """Count MACs by walking every loop position of the forward pass.

    Deliberately written as bare enumeration (no closed forms) so it can
    disagree with count_complexity when either is wrong.  Intended for
    L <= 256; the loops are pure Python.
    """
    c, L = config.channels, config.length
    n = 0
    for _ in range(c):                       # stem 2x7 conv
        for _ in range(L):
            for _ in range(2):
                for _ in range(config.stem_kernel):
                    n += 1
    for _ in range(c):                       # stem pointwise 1
        for _ in range(c):
            for _ in range(L):
                n += 1
    for _ in range(c):                       # stem depthwise 1x5
        for _ in range(L):
            for _ in range(config.dw_kernel):
                n += 1
    for _ in range(c):                       # stem pointwise 2
        for _ in range(c):
            for _ in range(L):
                n += 1
    length = L
    for _ in range(config.levels):
        half = length // 2
        for _ in range(2):                   # P then U
            for _ in range(c):               # depthwise K
                for _ in range(half):
                    for _ in range(config.pu_kernel):
                        n += 1
            for _ in range(c):               # pointwise
                for _ in range(c):
                    for _ in range(half):
                        n += 1
        length = half
    for _ in range(config.num_classes):      # head
        for _ in range(c * (config.levels + 1)):
            n += 1
    return n


def checkpoint_param_count(path):
    """Number of scalar weights serialized in a checkpoint file."""
    params, _ = M.load_checkpoint(path)
    return params.count()


# ---------------------------------------------------------------------------
# latency benchmark


def bench_latency(params, mcfg, batch_sizes=(2, 16, 128, 1024),
                  repetitions=20, warmup=3, seed=0, threads=1):
    """Median per-sample forward time per batch size after warm-up runs.

    threads=1 pins the BLAS pool for stable numbers; None leaves it alone.
    """
    rng = np.random.default_rng(seed)
    rows = []

    def run():
        for batch in batch_sizes:
            x = rng.normal(size=(batch, 1, 2, mcfg.length)).astype(np.float32)
            for _ in range(warmup):
                M.predict(params, mcfg, x)
            times = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                M.predict(params, mcfg, x)
                times.append(time.perf_counter() - t0)
            rows.append((batch, float(np.median(times)) / batch))

    if threads is not None:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            run()
        else:
            with threadpool_limits(limits=threads):
                run()
    else:
        run()
    return rows


# ---------------------------------------------------------------------------
# report writers


def write_eval_csv(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["snr_db,accuracy"]
    for snr, acc in sorted(report.per_snr.items()):
        lines.append(f"{snr},{acc:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_confusion_csv(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = report.class_names
    lines = ["true\\pred," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(str(int(v)) for v in report.confusion[i]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_complexity_csv(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [FLOPS_NOTE, "layer,params,macc,flops"]
    for r in report.rows:
        lines.append(f"{r.name},{r.params},{r.macc},{r.flops}")
    lines.append(f"TOTAL,{report.params},{report.macc},{report.flops}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def complexity_text(report):
    w = max(len(r.name) for r in report.rows) + 2
    lines = [f"{'layer':<{w}}{'params':>10}{'macc':>12}{'flops':>12}"]
    for r in report.rows:
        lines.append(f"{r.name:<{w}}{r.params:>10}{r.macc:>12}{r.flops:>12}")
    lines.append(f"{'TOTAL':<{w}}{report.params:>10}{report.macc:>12}{report.flops:>12}")
    lines.append(FLOPS_NOTE.lstrip("# "))
    return "\n".join(lines)


def write_bench_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["batch,per_sample_seconds"]
    for batch, sec in rows:
        lines.append(f"{batch},{sec:.9f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
