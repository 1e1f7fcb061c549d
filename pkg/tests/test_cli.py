"""Command-line behavior: exit codes, artifact wiring between subcommands,
and the sweep config parser. Everything runs in-process via cli.main."""

import numpy as np
import pytest

from capinv import fields, generative, inverse
from capinv.cli import main
from capinv.experiments import EXPORT_NAMES, read_field_blocks, read_timing_table


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Small artifacts shared by the happy-path tests, built once."""
    root = tmp_path_factory.mktemp("cli")
    train = root / "train.ds"
    test = root / "test.ds"
    assert main(["generate", "--out", str(train), "--count", "8", "--fine-n", "41"]) == 0
    assert main(["generate", "--out", str(test), "--test-set", "--fine-n", "41"]) == 0
    vae = root / "vae.model"
    args = ["train", "--kind", "vae", "--data", str(train), "--out", str(vae),
            "--optimizer", "adam", "--iters", "60", "--batch", "4",
            "--latent", "4", "--hidden", "12", "--seed", "3"]
    assert main(args) == 0
    return root


class TestExitCodes:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["generate", "--bogus"]) == 2
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "generate" in capsys.readouterr().out

    def test_domain_error_exits_one(self, tmp_path, capsys):
        out = tmp_path / "x.ds"
        code = main(["generate", "--out", str(out), "--count", "2", "--fine-n", "401",
                     "--d-min", "0.999", "--d-max", "0.9995"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exits_one(self, tmp_path, capsys):
        code = main(["train", "--kind", "ae", "--data", str(tmp_path / "nope.ds"),
                     "--out", str(tmp_path / "m")])
        assert code == 1
        capsys.readouterr()


class TestGenerate:
    def test_writes_loadable_dataset(self, workdir):
        ds = fields.load_dataset(workdir / "train.ds")
        assert len(ds) == 8
        assert ds.grid_n == 21
        assert ds.d[0] == 0.1 and ds.d[-1] == 0.9

    def test_test_set_flag_uses_benchmark_values(self, workdir):
        ds = fields.load_dataset(workdir / "test.ds")
        assert np.array_equal(ds.d, sorted(fields.TEST_D))

    def test_bad_range_rejected(self, tmp_path, capsys):
        code = main(["generate", "--out", str(tmp_path / "x.ds"), "--d-min", "0.9",
                     "--d-max", "0.1", "--fine-n", "41"])
        assert code == 1
        capsys.readouterr()


class TestTrain:
    def test_model_and_history_files(self, workdir):
        model = generative.load_model(workdir / "vae.model")
        assert model.kind == "vae"
        assert model.latent_dim == 4
        history = (workdir / "vae.model.history.csv").read_text().splitlines()
        assert history[0] == "iteration,total,rec,kld"
        assert len(history) == 61
        first = history[1].split(",")
        assert float(first[1]) == float(first[2]) + float(first[3])

    def test_training_is_reproducible_across_invocations(self, workdir, tmp_path):
        again = tmp_path / "again.model"
        args = ["train", "--kind", "vae", "--data", str(workdir / "train.ds"),
                "--out", str(again), "--optimizer", "adam", "--iters", "60",
                "--batch", "4", "--latent", "4", "--hidden", "12", "--seed", "3"]
        assert main(args) == 0
        assert again.read_bytes() == (workdir / "vae.model").read_bytes()


class TestInvert:
    def test_fit_on_the_fly_and_reuse_artifact(self, workdir, tmp_path):
        reg = tmp_path / "full.reg"
        out1 = tmp_path / "a.field"
        code = main(["invert", "--approach", "fullspace", "--data", str(workdir / "train.ds"),
                     "--save-regression", str(reg), "--d", "0.5", "--out", str(out1)])
        assert code == 0
        out2 = tmp_path / "b.field"
        code = main(["invert", "--approach", "fullspace", "--regression", str(reg),
                     "--d", "0.5", "--out", str(out2)])
        assert code == 0
        assert out1.read_bytes() == out2.read_bytes()
        blocks = read_field_blocks(out1)
        assert len(blocks) == 1
        meta, values = blocks[0]
        assert meta["approach"] == "fullspace"
        assert values.shape == (21, 21)

    def test_latent_invert_matches_library_call(self, workdir, tmp_path):
        out = tmp_path / "v.field"
        code = main(["invert", "--approach", "latent", "--model", str(workdir / "vae.model"),
                     "--data", str(workdir / "train.ds"), "--d", "0.36",
                     "--noise", "0.1", "--seed", "5", "--out", str(out)])
        assert code == 0
        train = fields.load_dataset(workdir / "train.ds")
        model = generative.load_model(workdir / "vae.model")
        pipe = inverse.fit_pipeline("latent", train, model=model)
        want = inverse.recover_field(pipe, 0.36, 0.1, seed=5)
        _, values = read_field_blocks(out)[0]
        assert np.array_equal(values, want.values)

    def test_source_flags_are_exclusive(self, workdir, tmp_path, capsys):
        base = ["invert", "--approach", "fullspace", "--d", "0.5",
                "--out", str(tmp_path / "x.field")]
        assert main(base) == 1
        assert main(base + ["--data", str(workdir / "train.ds"),
                            "--regression", str(tmp_path / "nope.reg")]) == 1
        capsys.readouterr()

    def test_latent_requires_model(self, workdir, tmp_path, capsys):
        code = main(["invert", "--approach", "latent", "--data", str(workdir / "train.ds"),
                     "--d", "0.5", "--out", str(tmp_path / "x.field")])
        assert code == 1
        assert "requires --model" in capsys.readouterr().err

    def test_approach_mismatch_with_artifact(self, workdir, tmp_path, capsys):
        reg = tmp_path / "full.reg"
        main(["invert", "--approach", "fullspace", "--data", str(workdir / "train.ds"),
              "--save-regression", str(reg), "--d", "0.5", "--out", str(tmp_path / "y.field")])
        code = main(["invert", "--approach", "latent", "--model", str(workdir / "vae.model"),
                     "--regression", str(reg), "--d", "0.5", "--out", str(tmp_path / "z.field")])
        assert code == 1
        assert "fitted for" in capsys.readouterr().err


class TestSweep:
    def test_full_run_writes_every_export(self, workdir, tmp_path):
        out_dir = tmp_path / "out"
        config = tmp_path / "sweep.cfg"
        config.write_text(
            "# comment line\n"
            f"train_data={workdir / 'train.ds'}\n"
            f"test_data={workdir / 'test.ds'}\n"
            f"out_dir={out_dir}\n"
            "approaches=fullspace,vae\n"
            f"model_vae={workdir / 'vae.model'}\n"
            "optimizer_vae=adam\n"
            "noise_levels=0.01,0.5\n"
            "test_d=0.3,0.5\n"
            "seeds=0,1\n"
            "keep_fields_d=0.5\n"
            "timing_reps=3\n"
            "timing_warmup=0\n"
        )
        assert main(["sweep", "--config", str(config)]) == 0
        for name in EXPORT_NAMES:
            assert (out_dir / name).exists()
        header, _ = read_timing_table(out_dir / "table2_timing.csv")
        assert header == ["stage", "fullspace", "vae"]

    def test_timing_zero_disables_the_table(self, workdir, tmp_path):
        out_dir = tmp_path / "out"
        config = tmp_path / "sweep.cfg"
        config.write_text(
            f"train_data={workdir / 'train.ds'}\n"
            f"test_data={workdir / 'test.ds'}\n"
            f"out_dir={out_dir}\n"
            "noise_levels=0.01\ntest_d=0.5\nseeds=0\nkeep_fields_d=\ntiming_reps=0\n"
        )
        assert main(["sweep", "--config", str(config)]) == 0
        header, rows = read_timing_table(out_dir / "table2_timing.csv")
        assert (header, rows) == (["stage"], [])

    def test_unknown_key_rejected(self, workdir, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("train_data=x\ntest_data=y\nout_dir=z\nbogus=1\n")
        assert main(["sweep", "--config", str(config)]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_missing_required_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("train_data=x\n")
        assert main(["sweep", "--config", str(config)]) == 1
        assert "missing required key" in capsys.readouterr().err

    def test_latent_approach_without_model_key(self, workdir, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text(
            f"train_data={workdir / 'train.ds'}\n"
            f"test_data={workdir / 'test.ds'}\n"
            f"out_dir={tmp_path / 'o'}\n"
            "approaches=vae\n"
        )
        assert main(["sweep", "--config", str(config)]) == 1
        assert "model_vae" in capsys.readouterr().err


class TestBench:
    def test_writes_timing_table(self, workdir, tmp_path):
        out = tmp_path / "bench.csv"
        code = main(["bench", "--data", str(workdir / "train.ds"),
                     "--vae-model", str(workdir / "vae.model"),
                     "--reps", "3", "--warmup", "0", "--target-d", "0.5",
                     "--out", str(out)])
        assert code == 0
        header, rows = read_timing_table(out)
        assert header == ["stage", "fullspace", "vae"]
        by_stage = {r[0]: r[1:] for r in rows}
        assert by_stage["space_dim"] == ["441", "4"]
        assert float(by_stage["inverse"][0]) > 0.0
