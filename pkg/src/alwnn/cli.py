"""One binary for the whole workflow.

Subcommands: synth, train, eval, complexity, bench, meta-train, meta-eval,
gradcheck.  A JSON config file may supply any flag's value; explicit flags
win.  Every command drops a manifest JSON next to its primary output with
the fully resolved configuration, enough to reproduce the run.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 gradcheck
failure.  Set ALWNN_THREADS before launch to cap the BLAS thread pool;
it is applied before numpy is imported, which is why imports here are lazy.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract wants 1
    def error(self, message):
        raise UsageError(message)


def _apply_thread_env():
    n = os.environ.get("ALWNN_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _load_config_file(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _resolve(args, file_cfg, key, default=None, required=False):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is None:
        val = file_cfg.get(key, default)
    if val is None and required:
        raise UsageError(f"missing required option --{key}")
    return val


def write_manifest(out_path, command, resolved, inputs, outputs):
    from . import data, model
    manifest = {
        "command": command,
        "config": resolved,
        "seed": resolved.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "format_versions": {"dataset": data.FORMAT_VERSION,
                            "checkpoint": model.CHECKPOINT_VERSION},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = Path(out_path)
    mpath = path.parent / (path.stem + ".manifest.json")
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return mpath


def _default_levels(length):
    return 3 if length >= 1024 else 1


def _parse_schemes(text):
    from . import signals
    if text in (None, "all"):
        return list(signals.SCHEME_NAMES)
    names = [s.strip() for s in text.split(",") if s.strip()]
    for n in names:
        if n not in signals.SCHEME_IDS:
            raise UsageError(f"unknown scheme {n!r}")
    if not names:
        raise UsageError("empty scheme list")
    return names


def _parse_int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, file_cfg):
    from . import data, signals
    seed = _resolve(args, file_cfg, "seed", required=True)
    out = Path(_resolve(args, file_cfg, "out", required=True))
    resolved = {
        "schemes": _resolve(args, file_cfg, "schemes", "all"),
        "snr-min": int(_resolve(args, file_cfg, "snr-min", -20)),
        "snr-max": int(_resolve(args, file_cfg, "snr-max", 18)),
        "snr-step": int(_resolve(args, file_cfg, "snr-step", 2)),
        "frames-per": int(_resolve(args, file_cfg, "frames-per", 100)),
        "length": int(_resolve(args, file_cfg, "length", 128)),
        "profile": _resolve(args, file_cfg, "profile", "standard"),
        "workers": int(_resolve(args, file_cfg, "workers", 0)),
        "seed": int(seed),
        "out": str(out),
    }
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    if resolved["profile"] not in signals.PROFILES:
        raise UsageError(f"unknown profile {resolved['profile']!r}")
    snrs = list(range(resolved["snr-min"], resolved["snr-max"] + 1,
                      resolved["snr-step"]))
    if not snrs:
        raise UsageError("empty SNR grid")
    ds = signals.synth_dataset(
        schemes=_parse_schemes(resolved["schemes"]),
        snr_grid=snrs,
        frames_per_cell=resolved["frames-per"],
        length=resolved["length"],
        ranges=signals.PROFILES[resolved["profile"]],
        seed=resolved["seed"],
        workers=resolved["workers"])
    data.save_dataset(ds, out)
    write_manifest(out, "synth", resolved, [], [out, data.sidecar_path(out)])
    print(f"wrote {len(ds)} frames to {out}")
    return 0


def _load_ds(path):
    from . import data
    return data.load_dataset(path)


def cmd_train(args, file_cfg):
    from . import model, train
    data_path = Path(_resolve(args, file_cfg, "data", required=True))
    out = Path(_resolve(args, file_cfg, "out", required=True))
    ds = _load_ds(data_path)
    resolved = {
        "data": str(data_path),
        "out": str(out),
        "levels": _resolve(args, file_cfg, "levels", _default_levels(ds.length)),
        "channels": int(_resolve(args, file_cfg, "channels", 64)),
        "epochs": int(_resolve(args, file_cfg, "epochs", 30)),
        "batch-size": int(_resolve(args, file_cfg, "batch-size", 256)),
        "lr": float(_resolve(args, file_cfg, "lr", 0.001)),
        "lambda1": float(_resolve(args, file_cfg, "lambda1", 0.01)),
        "lambda2": float(_resolve(args, file_cfg, "lambda2", 0.01)),
        "reg-form": _resolve(args, file_cfg, "reg-form", "algorithmic"),
        "patience": int(_resolve(args, file_cfg, "patience", 5)),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
    }
    resolved["levels"] = int(resolved["levels"])
    mcfg = model.ModelConfig(levels=resolved["levels"],
                             num_classes=len(ds.schemes),
                             length=ds.length,
                             channels=resolved["channels"],
                             lambda1=resolved["lambda1"],
                             lambda2=resolved["lambda2"],
                             reg_form=resolved["reg-form"])
    tcfg = train.TrainConfig(batch_size=resolved["batch-size"],
                             learning_rate=resolved["lr"],
                             max_epochs=resolved["epochs"],
                             patience=resolved["patience"],
                             lambda1=resolved["lambda1"],
                             lambda2=resolved["lambda2"],
                             seed=resolved["seed"])
    train_ds, val_ds, _ = train.stratified_split(ds, tcfg.ratios, tcfg.seed)
    params = model.init_params(mcfg, seed=resolved["seed"])
    result = train.train(params, mcfg, train_ds, val_ds, tcfg, verbose=True)
    model.save_checkpoint(result.params, mcfg, out)
    log_path = out.parent / (out.stem + ".trainlog.csv")
    train.write_train_log(log_path, result.log)
    write_manifest(out, "train", resolved, [data_path], [out, log_path])
    print(f"best epoch {result.best_epoch}  val_loss {result.best_val_loss:.6f}")
    return 0


def cmd_eval(args, file_cfg):
    from . import metrics, model, train
    data_path = Path(_resolve(args, file_cfg, "data", required=True))
    ckpt_path = Path(_resolve(args, file_cfg, "checkpoint", required=True))
    out_dir = Path(_resolve(args, file_cfg, "out-dir", required=True))
    resolved = {
        "data": str(data_path),
        "checkpoint": str(ckpt_path),
        "out-dir": str(out_dir),
        "split": _resolve(args, file_cfg, "split", "all"),
        "split-seed": int(_resolve(args, file_cfg, "split-seed", 0)),
        "batch-size": int(_resolve(args, file_cfg, "batch-size", 512)),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
    }
    ds = _load_ds(data_path)
    params, mcfg = model.load_checkpoint(ckpt_path)
    if mcfg.length != ds.length:
        raise UsageError(f"checkpoint expects frames of length {mcfg.length}, "
                         f"dataset has {ds.length}")
    if mcfg.num_classes != len(ds.schemes):
        raise UsageError(f"checkpoint has {mcfg.num_classes} classes, "
                         f"dataset has {len(ds.schemes)}")
    if resolved["split"] != "all":
        parts = dict(zip(("train", "val", "test"),
                         train.stratified_split(ds, (0.6, 0.2, 0.2),
                                                resolved["split-seed"])))
        if resolved["split"] not in parts:
            raise UsageError(f"unknown split {resolved['split']!r}")
        ds = parts[resolved["split"]]
    report = metrics.evaluate(params, mcfg, ds,
                              batch_size=resolved["batch-size"])
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = out_dir / "accuracy_vs_snr.csv"
    confusion = out_dir / "confusion.csv"
    summary = out_dir / "summary.json"
    metrics.write_eval_csv(curve, report)
    metrics.write_confusion_csv(confusion, report)
    metrics.write_summary_json(summary, report.summary())
    write_manifest(out_dir / "run", "eval", resolved,
                   [data_path, ckpt_path], [curve, confusion, summary])
    print(f"accuracy {report.accuracy:.4f}  mf1 {report.mf1:.4f}  "
          f"kappa {report.kappa:.4f}")
    return 0


def cmd_complexity(args, file_cfg):
    from . import metrics, model
    ckpt = _resolve(args, file_cfg, "checkpoint")
    if ckpt is not None:
        _, mcfg = model.load_checkpoint(ckpt)
        inputs = [Path(ckpt)]
    else:
        length = int(_resolve(args, file_cfg, "length", 128))
        mcfg = model.ModelConfig(
            levels=int(_resolve(args, file_cfg, "levels",
                                _default_levels(length))),
            num_classes=int(_resolve(args, file_cfg, "classes", 11)),
            length=length,
            channels=int(_resolve(args, file_cfg, "channels", 64)))
        inputs = []
    resolved = {"checkpoint": ckpt, "levels": mcfg.levels,
                "classes": mcfg.num_classes, "length": mcfg.length,
                "channels": mcfg.channels, "seed": None}
    report = metrics.count_complexity(mcfg)
    print(metrics.complexity_text(report))
    out = _resolve(args, file_cfg, "out")
    if out is not None:
        metrics.write_complexity_csv(out, report)
        write_manifest(out, "complexity", resolved, inputs, [Path(out)])
    return 0


def cmd_bench(args, file_cfg):
    from . import metrics, model
    ckpt = Path(_resolve(args, file_cfg, "checkpoint", required=True))
    out = Path(_resolve(args, file_cfg, "out", required=True))
    resolved = {
        "checkpoint": str(ckpt),
        "out": str(out),
        "batches": _resolve(args, file_cfg, "batches", "2,16,128,1024"),
        "reps": int(_resolve(args, file_cfg, "reps", 20)),
        "threads": int(_resolve(args, file_cfg, "threads", 1)),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
    }
    params, mcfg = model.load_checkpoint(ckpt)
    rows = metrics.bench_latency(params, mcfg,
                                 batch_sizes=_parse_int_list(resolved["batches"]),
                                 repetitions=resolved["reps"],
                                 seed=resolved["seed"],
                                 threads=resolved["threads"])
    metrics.write_bench_csv(out, rows)
    write_manifest(out, "bench", resolved, [ckpt], [out])
    for batch, sec in rows:
        print(f"batch {batch:>5}: {sec * 1e6:.2f} us/sample")
    return 0


def cmd_meta_train(args, file_cfg):
    from . import fewshot, model
    data_path = Path(_resolve(args, file_cfg, "data", required=True))
    out = Path(_resolve(args, file_cfg, "out", required=True))
    case = _resolve(args, file_cfg, "case")
    schemes_flag = _resolve(args, file_cfg, "train-schemes")
    if case is not None and schemes_flag is not None:
        raise UsageError("--case and --train-schemes are mutually exclusive")
    if case is not None:
        if case not in fewshot.CASES:
            raise UsageError(f"unknown case {case!r}")
        train_schemes = fewshot.CASES[case][0]
    elif schemes_flag is not None:
        train_schemes = _parse_schemes(schemes_flag)
    else:
        raise UsageError("need --case or --train-schemes")
    ds = _load_ds(data_path)
    resolved = {
        "data": str(data_path),
        "out": str(out),
        "case": case,
        "train-schemes": ",".join(train_schemes),
        "n-way": int(_resolve(args, file_cfg, "n-way", 5)),
        "k-shot": int(_resolve(args, file_cfg, "k-shot", 5)),
        "q-query": int(_resolve(args, file_cfg, "q-query", 15)),
        "episodes": int(_resolve(args, file_cfg, "episodes", 300)),
        "length": int(_resolve(args, file_cfg, "length", ds.length)),
        "levels": None,
        "channels": int(_resolve(args, file_cfg, "channels", 64)),
        "lr": float(_resolve(args, file_cfg, "lr", 0.001)),
        "lambda1": float(_resolve(args, file_cfg, "lambda1", 0.001)),
        "lambda2": float(_resolve(args, file_cfg, "lambda2", 0.001)),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
    }
    resolved["levels"] = int(_resolve(args, file_cfg, "levels",
                                      _default_levels(resolved["length"])))
    missing = [s for s in train_schemes if s not in ds.schemes]
    if missing:
        raise UsageError(f"training schemes absent from pool: {missing}")
    keep = {ds.schemes.index(s) for s in train_schemes}
    pool = ds.subset([i for i, lab in enumerate(ds.labels()) if lab in keep])
    pool.meta = dict(ds.meta, schemes=[s for s in ds.schemes
                                       if s in set(train_schemes)])
    spec = fewshot.EpisodeSpec(n_way=resolved["n-way"],
                               k_shot=resolved["k-shot"],
                               q_query=resolved["q-query"],
                               target_length=resolved["length"])
    mcfg = model.ModelConfig(levels=resolved["levels"],
                             num_classes=len(pool.schemes),
                             length=resolved["length"],
                             channels=resolved["channels"],
                             lambda1=resolved["lambda1"],
                             lambda2=resolved["lambda2"])
    params = model.init_params(mcfg, seed=resolved["seed"])
    result = fewshot.meta_train(params, mcfg, pool, spec,
                                episodes=resolved["episodes"],
                                lr=resolved["lr"],
                                lambda1=resolved["lambda1"],
                                lambda2=resolved["lambda2"],
                                seed=resolved["seed"], verbose=True)
    model.save_checkpoint(result.params, mcfg, out)
    card = out.with_suffix(".card.json")
    card.write_text(json.dumps({"trained_schemes": result.trained_schemes,
                                "n_way": spec.n_way, "k_shot": spec.k_shot,
                                "target_length": spec.target_length},
                               indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "meta-train", resolved, [data_path], [out, card])
    accs = [a for _, _, a in result.history[-20:]]
    print(f"episodes {resolved['episodes']}  "
          f"late-window accuracy {sum(accs) / len(accs):.4f}")
    return 0


def cmd_meta_eval(args, file_cfg):
    from . import fewshot, model
    data_path = Path(_resolve(args, file_cfg, "data", required=True))
    ckpt_path = Path(_resolve(args, file_cfg, "checkpoint", required=True))
    out = Path(_resolve(args, file_cfg, "out", required=True))
    case = _resolve(args, file_cfg, "case")
    schemes_flag = _resolve(args, file_cfg, "test-schemes")
    if case is not None:
        if case not in fewshot.CASES:
            raise UsageError(f"unknown case {case!r}")
        test_schemes = fewshot.CASES[case][1]
    elif schemes_flag is not None:
        test_schemes = _parse_schemes(schemes_flag)
    else:
        raise UsageError("need --case or --test-schemes")
    resolved = {
        "data": str(data_path),
        "checkpoint": str(ckpt_path),
        "out": str(out),
        "case": case,
        "test-schemes": ",".join(test_schemes),
        "n-way": int(_resolve(args, file_cfg, "n-way", 3)),
        "k-shot": int(_resolve(args, file_cfg, "k-shot", 5)),
        "q-query": int(_resolve(args, file_cfg, "q-query", 15)),
        "trials": int(_resolve(args, file_cfg, "trials", 100)),
        "distance": _resolve(args, file_cfg, "distance", "sqeuclidean"),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
    }
    ds = _load_ds(data_path)
    params, mcfg = model.load_checkpoint(ckpt_path)
    missing = [s for s in test_schemes if s not in ds.schemes]
    if missing:
        raise UsageError(f"test schemes absent from pool: {missing}")
    pool = ds.subset([i for i, lab in enumerate(ds.labels())
                      if ds.schemes[lab] in set(test_schemes)])
    pool.meta = dict(ds.meta, schemes=[s for s in ds.schemes
                                       if s in set(test_schemes)])
    trained = None
    card = ckpt_path.with_suffix(".card.json")
    if card.exists():
        trained = json.loads(card.read_text(encoding="utf-8"))["trained_schemes"]
    if case == "E":
        trained = None               # the all-schemes case overlaps on purpose
    spec = fewshot.EpisodeSpec(n_way=resolved["n-way"],
                               k_shot=resolved["k-shot"],
                               q_query=resolved["q-query"],
                               target_length=mcfg.length,
                               distance=resolved["distance"])
    try:
        report = fewshot.meta_test(params, mcfg, pool, spec,
                                   trials=resolved["trials"],
                                   seed=resolved["seed"],
                                   trained_schemes=trained)
    except ValueError as exc:
        raise UsageError(str(exc))
    fewshot.write_meta_report(out, report)
    write_manifest(out, "meta-eval", resolved, [data_path, ckpt_path], [out])
    s = report.summary()
    high = s.get("high_snr_mean")
    print(f"overall {s['overall']['mean']:.4f} +/- {s['overall']['std']:.4f}"
          + (f"  high-snr {high:.4f}" if high is not None else ""))
    return 0


def cmd_gradcheck(args, file_cfg):
    from . import model
    resolved = {
        "levels": int(_resolve(args, file_cfg, "levels", 1)),
        "length": int(_resolve(args, file_cfg, "length", 16)),
        "channels": int(_resolve(args, file_cfg, "channels", 4)),
        "classes": int(_resolve(args, file_cfg, "classes", 3)),
        "seed": int(_resolve(args, file_cfg, "seed", 0)),
        "tol": float(_resolve(args, file_cfg, "tol", 1e-4)),
    }
    mcfg = model.ModelConfig(levels=resolved["levels"],
                             num_classes=resolved["classes"],
                             length=resolved["length"],
                             channels=resolved["channels"])
    result = model.gradcheck(mcfg, seed=resolved["seed"], tol=resolved["tol"])
    width = max(len(n) for n in result["per_tensor"])
    for name, err in result["per_tensor"].items():
        print(f"{name:<{width}}  {err:.3e}")
    status = "PASS" if result["passed"] else "FAIL"
    print(f"max relative error {result['max_rel_err']:.3e} "
          f"(tol {result['tolerance']:.0e})  {status}  "
          f"{result['seconds']:.1f}s")
    return 0 if result["passed"] else 3


# ---------------------------------------------------------------------------
# parser


def build_parser():
    top = _Parser(prog="alwnn", description=__doc__,
                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with flag defaults")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a dataset")
    common(p)
    p.add_argument("--schemes")
    p.add_argument("--snr-min", type=int)
    p.add_argument("--snr-max", type=int)
    p.add_argument("--snr-step", type=int)
    p.add_argument("--frames-per", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--profile", choices=["clean", "standard", "harsh"])
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier")
    common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--levels", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--reg-form", choices=["algorithmic", "eq11"])
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, emit plot data")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--out-dir")
    p.add_argument("--split", choices=["all", "train", "val", "test"])
    p.add_argument("--split-seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complexity", help="parameter/MACC/FLOP table")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--levels", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("bench", help="forward latency per batch size")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--batches")
    p.add_argument("--reps", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("meta-train", help="episodic encoder training")
    common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--case", choices=["A", "B", "C", "D", "E"])
    p.add_argument("--train-schemes")
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--q-query", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("meta-eval", help="few-shot trials on unseen schemes")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--case", choices=["A", "B", "C", "D", "E"])
    p.add_argument("--test-schemes")
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--q-query", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--distance", choices=["sqeuclidean", "euclidean"])
    p.set_defaults(func=cmd_meta_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--levels", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)

    return top


def main(argv=None):
    _apply_thread_env()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = _load_config_file(getattr(args, "config", None))
        return args.func(args, file_cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        from . import data, model
        if isinstance(exc, (data.DataFormatError, model.CheckpointFormatError)):
            print(f"data error: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc, FileNotFoundError):
            print(f"data error: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
