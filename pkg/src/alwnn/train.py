"""Batch training: Adam, stratified splits, validation-loss early stopping."""

import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import model as M
from .autodiff import Tensor

LOG_HEADER = "epoch,train_loss,val_loss,val_acc,seconds"
LOG_COMMENT = "# val_loss is the composite objective: cross-entropy plus regularizers"


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 30
    patience: int = 5
    lambda1: float = 0.01
    lambda2: float = 0.01
    ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    clip_norm: float = 0.0   # 0 disables clipping

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios {self.ratios} must sum to 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["ratios"] = list(self.ratios)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train config fields {sorted(extra)}")
        return cls(**d)


def stratified_split(ds, ratios=(0.6, 0.2, 0.2), seed=0):
    """Split every (scheme, snr) cell independently at the given ratios.

    Train and val take floor(ratio * cell); test gets the remainder.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    cells = sorted({(int(s), int(r)) for s, r in zip(ds.scheme_ids, ds.snrs)})
    for sid, snr in cells:
        idx = np.flatnonzero((ds.scheme_ids == sid) & (ds.snrs == snr))
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_tr = int(ratios[0] * n)
        n_va = int(ratios[1] * n)
        counts = (n_tr, n_va, n - n_tr - n_va)
        for want, got in zip(ratios, counts):
            if want > 0 and got == 0:
                raise ValueError(
                    f"cell scheme={sid} snr={snr} has {n} frames, too few for ratios {ratios}")
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    out = []
    for chunks in parts:
        sel = np.concatenate(chunks) if chunks else np.array([], dtype=np.int64)
        out.append(ds.subset(np.sort(sel)))
    return tuple(out)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a new best loss."""

    def __init__(self, patience):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad = 0
        self.epoch = 0

    def update(self, loss):
        """Record one epoch's validation loss; returns True on improvement."""
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self):
        return self.bad >= self.patience


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """theta <- theta - lr * mhat / sqrt(vhat + eps), eps under the root."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / np.sqrt(v / c2 + eps)
    return params


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        s = max_norm / total
        for g in grads.values():
            g *= s
    return total


def frames_to_input(ds):
    return ds.iq.reshape(len(ds), 1, 2, ds.length)


def eval_loss_acc(params, mcfg, x, y, tcfg, batch_size=None):
    """Composite loss and accuracy over a labeled array, batched, no updates."""
    bs = batch_size or tcfg.batch_size
    total, correct = 0.0, 0
    for i in range(0, len(x), bs):
        xb, yb = x[i:i + bs], y[i:i + bs]
        tr = M.forward(params, mcfg, Tensor(xb))
        lo = M.loss(tr, yb, tcfg.lambda1, tcfg.lambda2, reg_form=mcfg.reg_form)
        total += float(lo.data) * len(xb)
        correct += int(np.sum(np.argmax(tr.logits.data, axis=1) == yb))
    return total / len(x), correct / len(x)


@dataclass
class TrainResult:
    params: M.ModelParams        # weights from the best validation epoch
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    log: list = field(default_factory=list)   # (epoch, train_loss, val_loss, val_acc, seconds)


def train(params, mcfg, train_ds, val_ds, tcfg, verbose=False):
    """Shuffled mini-batch epochs; keeps the best-validation-loss weights."""
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    x_tr, y_tr = frames_to_input(train_ds), train_ds.labels()
    x_va, y_va = frames_to_input(val_ds), val_ds.labels()
    rng = np.random.default_rng(tcfg.seed)
    state = AdamState(params)
    stopper = EarlyStopper(tcfg.patience)
    best = TrainResult(params.copy(), 0, float("inf"), 0)
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(len(x_tr))
        running = 0.0
        for i in range(0, len(perm), tcfg.batch_size):
            sel = perm[i:i + tcfg.batch_size]
            tr = M.forward(params, mcfg, Tensor(x_tr[sel]))
            lo = M.loss(tr, y_tr[sel], tcfg.lambda1, tcfg.lambda2, reg_form=mcfg.reg_form)
            params.zero_grad()
            lo.backward()
            grads = {n: t.grad for n, t in params.items()}
            if tcfg.clip_norm > 0:
                clip_gradients(grads, tcfg.clip_norm)
            adam_step(params, grads, state, tcfg.learning_rate,
                      (tcfg.beta1, tcfg.beta2), tcfg.epsilon)
            running += float(lo.data) * len(sel)
        train_loss = running / len(x_tr)
        val_loss, val_acc = eval_loss_acc(params, mcfg, x_va, y_va, tcfg)
        seconds = time.perf_counter() - t0
        best.log.append((epoch, train_loss, val_loss, val_acc, seconds))
        if verbose:
            print(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f} "
                  f"acc {val_acc:.4f} ({seconds:.1f}s)", file=sys.stderr)
        if stopper.update(val_loss):
            best.best_val_loss = val_loss
            best.best_epoch = epoch
            best.params = params.copy()
        best.stopped_epoch = epoch
        if stopper.should_stop:
            break
    return best


def write_train_log(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [LOG_COMMENT, LOG_HEADER]
    for epoch, tr, va, acc, sec in rows:
        lines.append(f"{epoch},{tr:.6f},{va:.6f},{acc:.6f},{sec:.3f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
