"""Command-line interface: exit codes, locking, snapshots and the full
tiny end-to-end workflow."""

import os

import numpy as np
import pytest

from diat import cli
from diat.data import DatasetManifest, decode_image


def run(tmp, *argv):
    """Invoke the CLI in-process with all outputs under tmp."""
    base = [
        "-s", f"dataset_root={tmp}/data",
        "-s", f"checkpoint_dir={tmp}/ckpt",
        "-s", f"report_dir={tmp}/reports",
        "-s", "scale_factor=0.125",
        "-s", "n_samples=60",
        "-s", "verbosity=0",
    ]
    cmd, rest = argv[0], list(argv[1:])
    return cli.main([cmd] + base + rest)


class TestExitCodes:
    def test_unknown_config_key_is_config_error(self, tmp_path, capsys):
        rc = run(tmp_path, "gen-data", "-s", "bogus=1")
        assert rc == cli.EXIT_CONFIG
        assert "error: config:" in capsys.readouterr().err

    def test_malformed_set_is_config_error(self, tmp_path, capsys):
        rc = run(tmp_path, "gen-data", "-s", "justakey")
        assert rc == cli.EXIT_CONFIG
        assert "error: config:" in capsys.readouterr().err

    def test_missing_dataset_is_prerequisite_error(self, tmp_path, capsys):
        rc = run(tmp_path, "pretrain")
        assert rc == cli.EXIT_PREREQ
        assert "error: missing-prerequisite:" in capsys.readouterr().err

    def test_missing_config_file_is_io_error(self, tmp_path, capsys):
        rc = cli.main(["gen-data", "-c", str(tmp_path / "nope.cfg")])
        assert rc == cli.EXIT_IO
        assert "error: io:" in capsys.readouterr().err

    def test_locked_directory_is_io_error(self, tmp_path, capsys):
        lock_dir = tmp_path / "data"
        lock_dir.mkdir()
        (lock_dir / cli.LOCK_NAME).write_text("12345")
        rc = run(tmp_path, "gen-data")
        assert rc == cli.EXIT_IO
        assert "locked" in capsys.readouterr().err

    def test_transfer_missing_input_is_io_error(self, tmp_path, capsys):
        rc = run(tmp_path, "transfer", str(tmp_path / "missing.ppm"))
        # no trained transform yet -> prerequisite; with one it would be IO.
        assert rc in (cli.EXIT_PREREQ, cli.EXIT_IO)

    def test_enhance_train_with_mode_none_is_config_error(self, tmp_path, capsys):
        rc = run(tmp_path, "enhance-train", "-s", "enhancement=none")
        assert rc == cli.EXIT_CONFIG


class TestGenData:
    def test_writes_manifest_and_snapshot(self, tmp_path):
        assert run(tmp_path, "gen-data") == cli.EXIT_OK
        man = DatasetManifest.load(str(tmp_path / "data"))
        assert man.count == 60 and man.size == 16
        snap = tmp_path / "data" / "effective-config.txt"
        assert snap.exists()
        assert "scale_factor = 0.125" in snap.read_text()

    def test_lock_released_after_success(self, tmp_path):
        assert run(tmp_path, "gen-data") == cli.EXIT_OK
        assert not (tmp_path / "data" / cli.LOCK_NAME).exists()
        # a second run over the same directory works (lock was released)
        assert run(tmp_path, "gen-data") == cli.EXIT_OK


FAST = [
    "-s", "pretrain_transform_steps=4",
    "-s", "pretrain_disc_steps=4",
    "-s", "embedder_steps=4",
    "-s", "regularizer_steps=2",
    "-s", "enhancer_steps=2",
    "-s", "max_iters=4",
    "-s", "eval_every=2",
    "-s", "checkpoint_every=2",
    "-s", "batch_size=4",
    "-s", "input_set_size=30",
]


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    """gen-data + pretrain + train once; later stages build on it."""
    tmp = tmp_path_factory.mktemp("cli_flow")
    assert run(tmp, "gen-data") == cli.EXIT_OK
    assert run(tmp, "pretrain", *FAST) == cli.EXIT_OK
    assert run(tmp, "train", *FAST) == cli.EXIT_OK
    return tmp


class TestWorkflow:
    def test_pretrain_writes_checkpoints(self, workflow):
        ckpt = workflow / "ckpt"
        assert (ckpt / "transform_pretrain.ckpt").exists()
        assert (ckpt / "discriminator_pretrain.ckpt").exists()
        # default variant is DIAT-A: no embedder or denoiser required
        assert not (ckpt / "denoiser.ckpt").exists()

    def test_train_writes_state_and_report(self, workflow):
        train_dir = workflow / "ckpt" / "train"
        assert (train_dir / "transform.ckpt").exists()
        assert (train_dir / "discriminator.ckpt").exists()
        report = (workflow / "reports" / "report.tsv").read_text().splitlines()
        assert report[0].split("\t")[0] == "iter"
        assert len(report) == 1 + 4  # header + max_iters rows

    def test_eval_models_cached(self, workflow):
        eval_dir = workflow / "ckpt" / "eval"
        assert (eval_dir / "phi_eval.ckpt").exists()
        assert (eval_dir / "c_attr_glasses.ckpt").exists()

    def test_enhance_train_then_transfer(self, workflow):
        assert run(workflow, "enhance-train", *FAST) == cli.EXIT_OK
        assert (workflow / "ckpt" / "enhancer_local.ckpt").exists()
        src = workflow / "data" / "images" / "000000.ppm"
        assert run(workflow, "transfer", *FAST, str(src)) == cli.EXIT_OK
        out = workflow / "reports" / "transfers" / "000000_out.ppm"
        img = decode_image(str(out))
        assert img.shape == (3, 16, 16)
        assert np.all((img >= 0.0) & (img <= 1.0))

    def test_eval_writes_metrics_and_mosaic(self, workflow):
        assert run(workflow, "eval", *FAST) == cli.EXIT_OK
        lines = (workflow / "reports" / "metrics.tsv").read_text().splitlines()
        assert lines[0] == "metric\tvalue"
        keys = {l.split("\t")[0] for l in lines[1:]}
        assert {"attr_success", "id_dist_matched",
                "id_dist_baseline", "pixel_change_outside_mask"} <= keys
        assert (workflow / "reports" / "mosaic.ppm").exists()

    def test_resume_after_completion_is_exit_ok(self, workflow):
        # resuming a finished run performs no further iterations
        report = (workflow / "reports" / "report.tsv").read_bytes()
        assert run(workflow, "train", *FAST, "--resume") == cli.EXIT_OK
        assert (workflow / "reports" / "report.tsv").read_bytes() == report

    def test_second_train_reuses_directory(self, workflow):
        # the train directory lock is released, so a fresh (non-resumed)
        # run over the same directory succeeds
        assert not (workflow / "ckpt" / "train" / cli.LOCK_NAME).exists()


class TestGradcheckCommand:
    def test_single_instance_run_passes(self, capsys):
        rc = cli.main(["gradcheck", "--instances", "1"])
        out = capsys.readouterr().out
        assert rc == cli.EXIT_OK
        assert "worst relative error" in out
