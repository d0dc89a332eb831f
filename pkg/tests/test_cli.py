import numpy as np
import pytest

from mattn import cli
from mattn import io as fio

TINY = ["--set", "preset=toy", "--set", "train_steps=5",
        "--set", "K=20", "--set", "steps=10"]


def run(args, monkeypatch, out_dir=None, fault=False):
    if out_dir is not None:
        monkeypatch.setenv("MATTN_OUT", str(out_dir))
    else:
        monkeypatch.delenv("MATTN_OUT", raising=False)
    if fault:
        monkeypatch.setenv("MATTN_FAULT", "1")
    else:
        monkeypatch.delenv("MATTN_FAULT", raising=False)
    return cli.main(args)


def test_verify_passes_and_prints_per_check_lines(monkeypatch, capsys):
    assert run(["verify"], monkeypatch) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 6
    for line in lines:
        name, dev, status = line.split(",")
        float(dev)
        assert status == "PASS"


def test_verify_fault_injection_fails(monkeypatch, capsys):
    assert run(["verify"], monkeypatch, fault=True) == 1
    out = capsys.readouterr().out
    assert ",FAIL" in out


def test_unknown_key_is_config_error(monkeypatch):
    assert run(["train", "--set", "bogus=1"], monkeypatch) == 2


def test_missing_config_file_is_config_error(monkeypatch):
    assert run(["verify", "--config", "/no/such/file"], monkeypatch) == 2


def test_train_then_sample_outputs(tmp_path, monkeypatch, capsys):
    assert run(["train"] + TINY, monkeypatch, out_dir=tmp_path) == 0
    assert (tmp_path / "model.fdtc").exists()
    assert (tmp_path / "loss.csv").exists()
    resolved = tmp_path / "config.resolved"
    assert resolved.exists()
    assert "train_steps=5" in resolved.read_text()

    assert run(["sample"] + TINY, monkeypatch, out_dir=tmp_path) == 0
    assert (tmp_path / "sample.fdtc").exists()
    assert (tmp_path / "sample.pgm").exists()
    tokens = fio.read_checkpoint(tmp_path / "sample.fdtc")["tokens"]
    assert tokens.shape == (4, 4, 16)

    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,grad_norm,ema_delta"
    assert len(lines) == 6


def test_sample_without_checkpoint_is_config_error(tmp_path, monkeypatch):
    assert run(["sample"] + TINY, monkeypatch, out_dir=tmp_path) == 2


def test_rerun_from_resolved_config_bit_identical(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["train"] + TINY, monkeypatch, out_dir=a) == 0
    # reproduce purely from the resolved config written by the first run
    assert run(["train", "--config", str(a / "config.resolved")],
               monkeypatch, out_dir=b) == 0
    assert (a / "model.fdtc").read_bytes() == (b / "model.fdtc").read_bytes()
    assert (a / "loss.csv").read_bytes() == (b / "loss.csv").read_bytes()

    assert run(["sample"] + TINY, monkeypatch, out_dir=a) == 0
    assert run(["sample", "--config", str(a / "config.resolved")],
               monkeypatch, out_dir=b) == 0
    assert (a / "sample.fdtc").read_bytes() == (b / "sample.fdtc").read_bytes()


def test_bench_csv_written(tmp_path, monkeypatch, capsys):
    assert run(["bench", "--set", "preset=toy", "--set", "T=2"],
               monkeypatch, out_dir=tmp_path) == 0
    text = (tmp_path / "bench.csv").read_text()
    lines = text.splitlines()
    assert lines[0].startswith("variant,T,N,D,")
    assert len(lines) > 1
    assert capsys.readouterr().out.splitlines()[0] == lines[0]


def test_bench_deterministic_modulo_wall_time(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["bench", "--set", "preset=toy", "--set", "T=2"],
                   monkeypatch, out_dir=d) == 0

    def strip_wall(path):
        rows = (path / "bench.csv").read_text().splitlines()
        return [",".join(r.split(",")[:9] + r.split(",")[10:]) for r in rows]

    assert strip_wall(a) == strip_wall(b)


def test_flops_csv_written(tmp_path, monkeypatch):
    assert run(["flops", "--set", "preset=toy"], monkeypatch,
               out_dir=tmp_path) == 0
    text = (tmp_path / "flops.csv").read_text()
    assert text.splitlines()[0] == ("variant,T,N,D,N_qk,N_v,flops_spatial,"
                                    "flops_temporal,flops_proj,flops_total")


def test_config_file_plus_set_override(tmp_path, monkeypatch):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("preset=toy\nseed=1\n")
    out = tmp_path / "out"
    assert run(["flops", "--config", str(cfgfile), "--set", "seed=2"],
               monkeypatch, out_dir=out) == 0
    assert "seed=2" in (out / "config.resolved").read_text()


def test_non_square_token_count_rejected_for_training(tmp_path, monkeypatch):
    assert run(["train", "--set", "preset=toy", "--set", "N=3",
                "--set", "N_v=3", "--set", "N_qk=1"],
               monkeypatch, out_dir=tmp_path) == 2
