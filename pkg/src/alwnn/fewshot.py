"""Episodic few-shot extension: prototype construction over the encoder
embedding, distance-softmax query classification, meta-train/meta-test."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Tensor
from .signals import frame_rng
from .train import AdamState, adam_step

META_CSV_HEADER = "trial,k_shot,n_way,snr_db,accuracy"

# Class-split presets in the spirit of the reference evaluation cases,
# remapped onto this scheme set with train/test kept disjoint (except E,
# which deliberately shares the full pool on both sides).
CASES = {
    "A": (["4ASK", "QPSK", "8PSK", "64QAM"], ["OOK", "BPSK", "16QAM", "GFSK"]),
    "B": (["OOK", "4ASK", "BPSK", "8PSK", "16QAM", "64QAM"], ["AM-DSB", "FM"]),
    "C": (["OOK", "4ASK", "BPSK", "8PSK", "64QAM"], ["QPSK", "16QAM"]),
    "D": (["OOK", "4ASK", "8PSK", "16QAM", "AM-DSB", "GFSK"], ["QPSK", "64QAM", "FM"]),
    "E": (list(map(str, ("OOK", "4ASK", "BPSK", "QPSK", "8PSK", "16QAM",
                         "64QAM", "CPFSK", "GFSK", "AM-DSB", "FM"))),) * 2,
}


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    q_query: int = 15
    target_length: int = 1024
    distance: str = "sqeuclidean"   # or "euclidean"

    def __post_init__(self):
        if self.n_way < 1:
            raise ValueError("n_way must be >= 1")
        if self.k_shot < 1 or self.q_query < 1:
            raise ValueError("k_shot and q_query must be >= 1")
        if self.distance not in ("sqeuclidean", "euclidean"):
            raise ValueError(f"unknown distance {self.distance!r}")


def adjust_length(x, z):
    """Truncate to z samples, or tile cyclically then truncate if too short."""
    if z < 1:
        raise ValueError("target length must be >= 1")
    x = np.asarray(x)
    length = x.shape[-1]
    if length == 0:
        raise ValueError("empty frame")
    if length >= z:
        return np.ascontiguousarray(x[..., :z])
    reps = -(-z // length)
    return np.ascontiguousarray(np.tile(x, (1,) * (x.ndim - 1) + (reps,))[..., :z])


def episode_count(n_total, p_train, n_support, n_query, n_epoch):
    """floor(p_train * N / (N_S + N_Q) * N_epoch): the default episode budget."""
    if n_support + n_query == 0:
        raise ValueError("support plus query size must be positive")
    return int(p_train * n_total / (n_support + n_query) * n_epoch)


@dataclass
class Episode:
    support_x: np.ndarray   # (n_way*k_shot, 2, z), class-major order
    support_y: np.ndarray   # episode-local labels 0..n-1
    query_x: np.ndarray     # (n_way*q_query, 2, z)
    query_y: np.ndarray
    query_snrs: np.ndarray
    class_map: dict         # original scheme id -> episode-local label


def sample_episode(pool, spec, seed=None, rng=None):
    """Uniform class pick, uniform disjoint support/query pick, relabeled."""
    if rng is None:
        rng = frame_rng(0 if seed is None else seed, 0)
    ids = np.unique(pool.scheme_ids)
    if len(ids) < spec.n_way:
        raise ValueError(f"pool has {len(ids)} classes, episode needs {spec.n_way}")
    chosen = rng.choice(ids, size=spec.n_way, replace=False)
    sup_idx, qry_idx = [], []
    need = spec.k_shot + spec.q_query
    for sid in chosen:
        idx = np.flatnonzero(pool.scheme_ids == sid)
        if len(idx) < need:
            raise ValueError(
                f"class {int(sid)} has {len(idx)} frames, episode needs {need}")
        pick = rng.choice(idx, size=need, replace=False)
        sup_idx.append(pick[:spec.k_shot])
        qry_idx.append(pick[spec.k_shot:])
    sup_idx = np.concatenate(sup_idx)
    qry_idx = np.concatenate(qry_idx)
    z = spec.target_length
    return Episode(
        support_x=adjust_length(pool.iq[sup_idx], z),
        support_y=np.repeat(np.arange(spec.n_way), spec.k_shot),
        query_x=adjust_length(pool.iq[qry_idx], z),
        query_y=np.repeat(np.arange(spec.n_way), spec.q_query),
        query_snrs=pool.snrs[qry_idx],
        class_map={int(sid): local for local, sid in enumerate(chosen)})


@dataclass
class PrototypeSet:
    protos: Tensor          # (n_way, D)
    class_map: dict = field(default_factory=dict)


def embed_frames(params, mcfg, frames, group=512):
    """Encoder features for (N,2,z) frames, grouped passes; keeps the graph.

    Returns the (N, D) embedding tensor and the per-pass regularizer scalars.
    """
    n = len(frames)
    chunks, reg_h, reg_l = [], [], []
    for i in range(0, n, group):
        xb = frames[i:i + group]
        tr = M.forward(params, mcfg, Tensor(xb.reshape(len(xb), 1, 2, xb.shape[-1])))
        chunks.append(tr.features)
        reg_h.extend(tr.reg_h)
        reg_l.extend(tr.reg_l)
    emb = chunks[0] if len(chunks) == 1 else ad.concat(chunks, axis=0)
    return emb, reg_h, reg_l


def prototypes(embeddings, n_way, k_shot, class_map=None):
    """Class means over class-major support embeddings (Eq-exact arithmetic)."""
    if embeddings.shape[0] != n_way * k_shot:
        raise ValueError(f"expected {n_way * k_shot} support embeddings, "
                         f"got {embeddings.shape[0]}")
    stacked = ad.reshape(embeddings, (n_way, k_shot, embeddings.shape[1]))
    return PrototypeSet(ad.mean_axis(stacked, 1), class_map or {})


def classify_query(protoset, query_emb, distance="sqeuclidean"):
    """softmax(-d(query, prototype)) rows; d is squared Euclidean by default."""
    d = ad.pairwise_sqdist(query_emb, protoset.protos)
    if distance == "euclidean":
        d = ad.sqrt_op(d)
    return ad.softmax_rows(ad.scale(d, -1.0))


@dataclass
class MetaTrainResult:
    params: M.ModelParams
    history: list           # (episode, loss, query_accuracy)
    trained_schemes: list   # scheme names seen by the encoder


def _episode_loss(params, mcfg, ep, spec, lambda1, lambda2, group):
    s_emb, rh1, rl1 = embed_frames(params, mcfg, ep.support_x, group)
    q_emb, rh2, rl2 = embed_frames(params, mcfg, ep.query_x, group)
    protos = prototypes(s_emb, spec.n_way, spec.k_shot, ep.class_map)
    probs = classify_query(protos, q_emb, spec.distance)
    total = ad.cross_entropy(probs, ep.query_y)
    for t in rh1 + rh2:
        if lambda1 != 0.0:
            total = ad.add(total, ad.scale(t, lambda1))
    for t in rl1 + rl2:
        if lambda2 != 0.0:
            total = ad.add(total, ad.scale(t, lambda2))
    acc = float(np.mean(np.argmax(probs.data, axis=1) == ep.query_y))
    return total, acc


def meta_train(params, mcfg, pool, spec, episodes, lr=0.001,
               lambda1=0.001, lambda2=0.001, seed=0, group=512, verbose=False):
    """One Adam step per episode on the mean query loss plus regularizers."""
    if spec.n_way < 2:
        raise ValueError("meta-training needs n_way >= 2")
    if mcfg.length != spec.target_length:
        raise ValueError(f"encoder length {mcfg.length} != episode length "
                         f"{spec.target_length}")
    state = AdamState(params)
    history = []
    for e in range(episodes):
        rng = frame_rng(seed, e)
        ep = sample_episode(pool, spec, rng=rng)
        total, acc = _episode_loss(params, mcfg, ep, spec, lambda1, lambda2, group)
        params.zero_grad()
        total.backward()
        grads = {n: t.grad for n, t in params.items()}
        adam_step(params, grads, state, lr)
        history.append((e, float(total.data), acc))
        if verbose and (e + 1) % 25 == 0:
            import sys
            recent = history[-25:]
            print(f"episode {e + 1}/{episodes}: loss "
                  f"{np.mean([r[1] for r in recent]):.4f} acc "
                  f"{np.mean([r[2] for r in recent]):.4f}", file=sys.stderr)
    return MetaTrainResult(params, history, sorted(pool.schemes))


@dataclass
class MetaTestReport:
    rows: list              # (trial, k_shot, n_way, snr_db, accuracy)
    counts: list            # queries behind each row
    spec: EpisodeSpec
    trials: int

    def summary(self):
        per_trial = {}
        per_snr = {}
        for (trial, _, _, snr, acc), n in zip(self.rows, self.counts):
            per_trial.setdefault(trial, []).append((acc, n))
            per_snr.setdefault(snr, []).append(acc)
        trial_acc = [sum(a * n for a, n in v) / sum(n for _, n in v)
                     for v in per_trial.values()]
        high = [(acc, n) for (_, _, _, snr, acc), n in zip(self.rows, self.counts)
                if snr >= 10]
        out = {"trials": self.trials,
               "n_way": self.spec.n_way,
               "k_shot": self.spec.k_shot,
               "overall": {"mean": float(np.mean(trial_acc)),
                           "std": float(np.std(trial_acc))},
               "per_snr": {str(snr): {"mean": float(np.mean(v)),
                                      "std": float(np.std(v))}
                           for snr, v in sorted(per_snr.items())}}
        if high:
            out["high_snr_mean"] = float(sum(a * n for a, n in high)
                                         / sum(n for _, n in high))
        return out


def meta_test(params, mcfg, pool, spec, trials=100, seed=0,
              trained_schemes=None):
    """Frozen-encoder trials: prototypes from support, argmax over Eq-14 probs."""
    if trained_schemes is not None:
        overlap = set(trained_schemes) & set(pool.schemes)
        if overlap:
            raise ValueError(f"meta-test classes overlap training: {sorted(overlap)}")
    if mcfg.length != spec.target_length:
        raise ValueError(f"encoder length {mcfg.length} != episode length "
                         f"{spec.target_length}")
    rows, counts = [], []
    for t in range(trials):
        rng = frame_rng(seed, t)
        ep = sample_episode(pool, spec, rng=rng)
        s_emb, _, _ = embed_frames(params, mcfg, ep.support_x)
        q_emb, _, _ = embed_frames(params, mcfg, ep.query_x)
        protos = prototypes(s_emb, spec.n_way, spec.k_shot, ep.class_map)
        probs = classify_query(protos, q_emb, spec.distance)
        correct = np.argmax(probs.data, axis=1) == ep.query_y
        for snr in np.unique(ep.query_snrs):
            mask = ep.query_snrs == snr
            rows.append((t, spec.k_shot, spec.n_way, int(snr),
                         float(np.mean(correct[mask]))))
            counts.append(int(np.sum(mask)))
    return MetaTestReport(rows, counts, spec, trials)


def write_meta_report(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [META_CSV_HEADER]
    for trial, k, n, snr, acc in report.rows:
        lines.append(f"{trial},{k},{n},{snr},{acc:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
