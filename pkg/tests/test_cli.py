import json
from pathlib import Path

import numpy as np
import pytest

from alwnn import cli, data, kernels, model as M
from alwnn.kernels import numpy_backend


# ---------------------------------------------------------------------------
# shared artifacts (built once, commands are not free)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    rc = cli.main(["synth", "--schemes", "BPSK,QPSK", "--snr-min", "10",
                   "--snr-max", "14", "--snr-step", "2", "--frames-per", "20",
                   "--length", "32", "--seed", "5",
                   "--out", str(root / "toy.bin")])
    assert rc == 0
    rc = cli.main(["train", "--data", str(root / "toy.bin"),
                   "--out", str(root / "toy.ckpt"), "--epochs", "2",
                   "--batch-size", "32", "--channels", "4", "--seed", "1"])
    assert rc == 0
    return root


# ---------------------------------------------------------------------------
# exit codes


def test_missing_seed_is_usage_error(tmp_path, capsys):
    rc = cli.main(["synth", "--out", str(tmp_path / "x.bin")])
    assert rc == 1
    assert "seed" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(tmp_path):
    rc = cli.main(["synth", "--seed", "1", "--out", str(tmp_path / "x.bin"),
                   "--no-such-flag"])
    assert rc == 1


def test_unknown_subcommand_is_usage_error():
    assert cli.main(["frobnicate"]) == 1


def test_missing_data_file_is_format_error(tmp_path, capsys):
    rc = cli.main(["train", "--data", str(tmp_path / "absent.bin"),
                   "--out", str(tmp_path / "m.ckpt")])
    assert rc == 2
    assert "data error" in capsys.readouterr().err


def test_corrupt_checkpoint_is_format_error(work, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + b"\x00" * 64)
    rc = cli.main(["eval", "--data", str(work / "toy.bin"),
                   "--checkpoint", str(bad), "--out-dir", str(tmp_path / "o")])
    assert rc == 2


def test_existing_output_needs_force(work, capsys):
    args = ["synth", "--schemes", "BPSK", "--snr-min", "0", "--snr-max", "0",
            "--snr-step", "2", "--frames-per", "2", "--length", "32",
            "--seed", "1", "--out", str(work / "toy.bin")]
    assert cli.main(args) == 1
    assert "--force" in capsys.readouterr().err
    assert cli.main(args + ["--force"]) == 0
    # put the module-scoped artifact back for later tests
    assert cli.main(["synth", "--schemes", "BPSK,QPSK", "--snr-min", "10",
                     "--snr-max", "14", "--snr-step", "2", "--frames-per",
                     "20", "--length", "32", "--seed", "5",
                     "--out", str(work / "toy.bin"), "--force"]) == 0


# ---------------------------------------------------------------------------
# artifacts


def test_synth_writes_sidecar_and_manifest(work):
    assert (work / "toy.bin").exists()
    assert (work / "toy.json").exists()
    manifest = json.loads((work / "toy.manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 5
    assert manifest["format_versions"]["dataset"] == data.FORMAT_VERSION


def test_train_writes_checkpoint_log_manifest(work):
    assert (work / "toy.ckpt").exists()
    log = (work / "toy.trainlog.csv").read_text().splitlines()
    assert log[0].startswith("#")
    assert log[1] == "epoch,train_loss,val_loss,val_acc,seconds"
    manifest = json.loads((work / "toy.manifest.json").read_text())
    assert manifest["command"] == "synth"      # synth manifest untouched
    tm = json.loads((work / "toy.manifest.json").read_text())
    assert tm["config"]["seed"] == 5


def test_eval_emits_plot_data(work, tmp_path, capsys):
    out = tmp_path / "evalout"
    rc = cli.main(["eval", "--data", str(work / "toy.bin"),
                   "--checkpoint", str(work / "toy.ckpt"),
                   "--out-dir", str(out)])
    assert rc == 0
    curve = (out / "accuracy_vs_snr.csv").read_text().splitlines()
    assert curve[0] == "snr_db,accuracy"
    assert len(curve) == 4                      # 3 SNR points
    assert (out / "confusion.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) >= {"accuracy", "mf1", "kappa", "per_snr"}
    assert "accuracy" in capsys.readouterr().out


def test_eval_rejects_class_mismatch(work, tmp_path):
    cfg = M.ModelConfig(levels=1, num_classes=5, length=32, channels=4)
    ckpt = tmp_path / "wrong.ckpt"
    M.save_checkpoint(M.init_params(cfg, seed=0), cfg, ckpt)
    rc = cli.main(["eval", "--data", str(work / "toy.bin"),
                   "--checkpoint", str(ckpt), "--out-dir", str(tmp_path / "o")])
    assert rc == 1


def test_untrained_model_scores_chance_on_balanced_data(tmp_path):
    ds_path = tmp_path / "full.bin"
    assert cli.main(["synth", "--schemes", "all", "--snr-min", "10",
                     "--snr-max", "10", "--snr-step", "2", "--frames-per",
                     "40", "--length", "32", "--seed", "3",
                     "--out", str(ds_path)]) == 0
    cfg = M.ModelConfig(levels=1, num_classes=11, length=32, channels=4)
    ckpt = tmp_path / "untrained.ckpt"
    M.save_checkpoint(M.init_params(cfg, seed=0), cfg, ckpt)
    out = tmp_path / "chance"
    assert cli.main(["eval", "--data", str(ds_path), "--checkpoint", str(ckpt),
                     "--out-dir", str(out)]) == 0
    acc = json.loads((out / "summary.json").read_text())["accuracy"]
    assert abs(acc - 1.0 / 11.0) <= 0.05


def test_complexity_stdout_and_csv(tmp_path, capsys):
    rc = cli.main(["complexity", "--length", "128", "--classes", "11",
                   "--out", str(tmp_path / "c.csv")])
    assert rc == 0
    assert "TOTAL" in capsys.readouterr().out
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[1] == "layer,params,macc,flops"
    assert lines[-1].startswith("TOTAL,")


def test_bench_writes_csv(work, tmp_path):
    out = tmp_path / "bench.csv"
    rc = cli.main(["bench", "--checkpoint", str(work / "toy.ckpt"),
                   "--batches", "2,4", "--reps", "1", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "batch,per_sample_seconds"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# determinism and manifest round-trip


def test_same_seed_synth_is_byte_identical(tmp_path):
    args = lambda out: ["synth", "--schemes", "BPSK", "--snr-min", "0",
                        "--snr-max", "2", "--snr-step", "2", "--frames-per",
                        "5", "--length", "32", "--seed", "11", "--out", out]
    assert cli.main(args(str(tmp_path / "a.bin"))) == 0
    assert cli.main(args(str(tmp_path / "b.bin"))) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_manifest_reproduces_synth_run(tmp_path):
    first = tmp_path / "a.bin"
    assert cli.main(["synth", "--schemes", "QPSK,CPFSK", "--snr-min", "-2",
                     "--snr-max", "2", "--snr-step", "2", "--frames-per", "4",
                     "--length", "32", "--seed", "21", "--profile", "harsh",
                     "--out", str(first)]) == 0
    manifest = json.loads((tmp_path / "a.manifest.json").read_text())
    argv = ["synth"]
    for key, val in manifest["config"].items():
        if key == "out":
            continue
        argv += [f"--{key}", str(val)]
    second = tmp_path / "b.bin"
    argv += ["--out", str(second)]
    assert cli.main(argv) == 0
    assert first.read_bytes() == second.read_bytes()
    assert data.sidecar_path(first).read_text() == \
        data.sidecar_path(second).read_text()


def test_config_file_supplies_defaults_flags_win(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text("not json")                 # malformed file first
    rc = cli.main(["synth", "--config", str(cfg),
                   "--out", str(tmp_path / "x.bin")])
    assert rc == 1
    cfg.write_text(json.dumps({"schemes": "BPSK", "snr-min": 0, "snr-max": 0,
                               "snr-step": 2, "frames-per": 3, "length": 32,
                               "seed": 7}))
    rc = cli.main(["synth", "--config", str(cfg),
                   "--out", str(tmp_path / "x.bin")])
    assert rc == 0
    meta = json.loads((tmp_path / "x.json").read_text())
    assert meta["seed"] == 7
    # explicit flag beats the file
    rc = cli.main(["synth", "--config", str(cfg), "--seed", "9",
                   "--out", str(tmp_path / "y.bin")])
    assert rc == 0
    assert json.loads((tmp_path / "y.json").read_text())["seed"] == 9


# ---------------------------------------------------------------------------
# meta workflow


@pytest.fixture(scope="module")
def meta_work(tmp_path_factory):
    root = tmp_path_factory.mktemp("metawork")
    assert cli.main(["synth", "--schemes", "BPSK,QPSK,8PSK,16QAM,CPFSK",
                     "--snr-min", "10", "--snr-max", "12", "--snr-step", "2",
                     "--frames-per", "25", "--length", "32", "--seed", "9",
                     "--out", str(root / "pool.bin")]) == 0
    assert cli.main(["meta-train", "--data", str(root / "pool.bin"),
                     "--out", str(root / "enc.ckpt"),
                     "--train-schemes", "BPSK,QPSK,8PSK",
                     "--n-way", "2", "--k-shot", "2", "--q-query", "3",
                     "--episodes", "4", "--length", "32", "--channels", "4",
                     "--seed", "0"]) == 0
    return root


def test_meta_train_writes_encoder_card(meta_work):
    card = json.loads((meta_work / "enc.card.json").read_text())
    assert card["trained_schemes"] == ["8PSK", "BPSK", "QPSK"]
    assert card["target_length"] == 32


def test_meta_eval_unseen_schemes_runs(meta_work, tmp_path):
    out = tmp_path / "trials.csv"
    assert cli.main(["meta-eval", "--data", str(meta_work / "pool.bin"),
                     "--checkpoint", str(meta_work / "enc.ckpt"),
                     "--test-schemes", "16QAM,CPFSK", "--n-way", "2",
                     "--k-shot", "2", "--q-query", "3", "--trials", "3",
                     "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "trial,k_shot,n_way,snr_db,accuracy"
    assert len(lines) > 1


def test_meta_eval_rejects_seen_schemes(meta_work, tmp_path):
    rc = cli.main(["meta-eval", "--data", str(meta_work / "pool.bin"),
                   "--checkpoint", str(meta_work / "enc.ckpt"),
                   "--test-schemes", "BPSK,16QAM", "--n-way", "2",
                   "--k-shot", "2", "--q-query", "3", "--trials", "2",
                   "--out", str(tmp_path / "t.csv")])
    assert rc == 1


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_passes_and_lists_tensors(capsys):
    rc = cli.main(["gradcheck"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    for name in ("stem.dw2d.w", "lift1.P_dw.w", "head.fc.b"):
        assert name in out


def test_gradcheck_sabotaged_backward_fails(capsys):
    class Sabotaged:
        dwconv1d_fwd = staticmethod(numpy_backend.dwconv1d_fwd)
        stemconv_fwd = staticmethod(numpy_backend.stemconv_fwd)
        stemconv_bwd = staticmethod(numpy_backend.stemconv_bwd)

        @staticmethod
        def dwconv1d_bwd(xp, w, g):
            dxp, dw = numpy_backend.dwconv1d_bwd(xp, w, g)
            return dxp, -dw                    # sign-flipped weight gradient
    kernels._BACKENDS["sabotaged"] = Sabotaged
    prev = kernels.use_backend("sabotaged")
    try:
        rc = cli.main(["gradcheck"])
    finally:
        kernels.use_backend(prev)
        del kernels._BACKENDS["sabotaged"]
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out
