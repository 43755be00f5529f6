import subprocess
import sys
from dataclasses import asdict

import numpy as np
import pytest

from xssm import io
from xssm.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from xssm.data import gen_synthetic
from xssm.net import GDSRNet, ModelConfig, upsample
from xssm.numerics import Tensor

TINY = ModelConfig(channels=4, stages=2, d_state=4)


def write_model(root, net):
    root.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(root / "model.ckpt", net.state_dict())
    io.atomic_write(root / "config.txt", io.format_config(asdict(net.cfg)).encode())
    return root / "model.ckpt"


@pytest.fixture
def pair(tmp_path):
    smp = gen_synthetic(0, 1, 32, 4)[0]
    io.write_pfm(tmp_path / "d.pfm", smp.depth_lr)
    io.write_ppm(tmp_path / "c.ppm", smp.rgb_hr)
    io.write_pfm(tmp_path / "gt.pfm", smp.depth_gt)
    return tmp_path


def infer_args(root, ckpt, *extra):
    return ["infer", "--checkpoint", str(ckpt), "--depth", str(root / "d.pfm"),
            "--rgb", str(root / "c.ppm"), "--out", str(root / "out.pfm"), *extra]


def test_zero_residual_infer_is_bicubic_and_round_trips(pair, capsys):
    net = GDSRNet(TINY, seed=0)
    net.zero_residual()
    ckpt = write_model(pair / "m", net)
    assert main(infer_args(pair, ckpt, "--gt", str(pair / "gt.pfm"))) == EXIT_OK
    assert "rmse_cm," in capsys.readouterr().out
    out = io.read_pfm(pair / "out.pfm")
    depth = io.read_pfm(pair / "d.pfm")
    assert out.shape == (1, 4 * depth.shape[1], 4 * depth.shape[2])
    np.testing.assert_array_equal(out[0], upsample(Tensor(depth[None]), 4).data[0, 0])


def test_infer_output_written_bitwise(pair):
    net = GDSRNet(TINY, seed=2)
    ckpt = write_model(pair / "m", net)
    assert main(infer_args(pair, ckpt)) == EXIT_OK
    d, c = io.read_pfm(pair / "d.pfm"), io.read_ppm(pair / "c.ppm")
    expect = net(Tensor(d[None]), Tensor(c[None])).data[0]
    assert io.read_pfm(pair / "out.pfm").tobytes() == expect.astype(np.float32).tobytes()


def test_infer_routing_dumps(pair):
    ckpt = write_model(pair / "m", GDSRNet(TINY, seed=0))
    m, s = pair / "match.csv", pair / "sel.csv"
    assert main(infer_args(pair, ckpt, "--dump-matching", str(m), "--dump-selection", str(s))) == EXIT_OK
    mrows = m.read_text().splitlines()
    srows = s.read_text().splitlines()
    assert mrows[0] == "block,sample,rank,depth_idx,rgb_idx,score"
    assert srows[0] == "block,step,sample,rank,aux_idx"
    # 2 stages * 2 blocks + 1 decoder stage * 2 blocks = 6 blocks, each with one ISSM and two CMMTs
    assert len({r.split(",")[0] for r in mrows[1:]}) == 6
    assert len({r.split(",")[0] for r in srows[1:]}) == 12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(pair, capsys):
    good = write_model(pair / "m", GDSRNet(TINY, seed=0))
    # 1: usage
    with pytest.raises(SystemExit) as exc:
        main(["infer", "--checkpoint", str(good)])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    (pair / "bad.cfg").write_text("channels = 4\nwidth = 3\n")
    assert main(infer_args(pair, good, "--config", str(pair / "bad.cfg"))) == EXIT_USAGE
    # 2: data
    assert main(infer_args(pair, pair / "missing.ckpt")) == EXIT_DATA
    (pair / "trunc.ckpt").write_bytes(good.read_bytes()[:-7])
    assert main(infer_args(pair, pair / "trunc.ckpt", "--config", str(pair / "m" / "config.txt"))) == EXIT_DATA
    assert main(infer_args(pair, good, "--scale", "8")) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(good), "--data", str(pair / "nowhere")]) == EXIT_DATA
    # 3: numeric
    net = GDSRNet(TINY, seed=0)
    net.parameters()[0].data[...] = np.nan
    nan_ckpt = write_model(pair / "nan", net)
    assert main(infer_args(pair, nan_ckpt)) == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_gen_data_train_eval(tmp_path, capsys):
    assert main(["gen-data", "--n", "2", "--size", "32", "--out", str(tmp_path / "d"), "--seed", "3"]) == EXIT_OK
    assert len(list((tmp_path / "d").glob("*_depth.pfm"))) == 2
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("channels = 4\nstages = 2\nd_state = 4\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "d"), "--epochs", "1",
                 "--crop", "16", "--out", str(tmp_path / "run")]) == EXIT_OK
    run = tmp_path / "run"
    assert {p.name for p in run.iterdir()} >= {"model.ckpt", "metrics.csv", "config.txt"}
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(tmp_path / "d")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "scale,n,rmse_cm" and lines[1].startswith("4,2,")
    assert main(["gen-data", "--size", "30", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_train_is_reproducible_under_seed(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("channels = 4\nstages = 2\nd_state = 4\n")
    base = ["train", "--config", str(cfg), "--synthetic", "--n", "2", "--n-eval", "1", "--size", "32",
            "--epochs", "1", "--crop", "16", "--seed", "5"]
    for name in ("a", "b"):
        assert main(base + ["--out", str(tmp_path / name)]) == EXIT_OK
    a = io.load_checkpoint(tmp_path / "a" / "model.ckpt")
    b = io.load_checkpoint(tmp_path / "b" / "model.ckpt")
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    strip = lambda p: [r.rsplit(",", 1)[0] for r in p.read_text().splitlines()]  # drop timing
    assert strip(tmp_path / "a" / "metrics.csv") == strip(tmp_path / "b" / "metrics.csv")
    assert main(base + ["--crop", "20", "--out", str(tmp_path / "c")]) == EXIT_USAGE


def test_gen_data_is_reproducible_under_seed(tmp_path):
    for name in ("a", "b"):
        main(["gen-data", "--n", "1", "--size", "16", "--seed", "9", "--out", str(tmp_path / name)])
    for f in ("0000_depth.pfm", "0000_rgb.ppm", "0000_gt.pfm"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bench_scan_csv(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench-scan", "--lengths", "64", "128", "--repeats", "1", "--d-inner", "4",
                 "--d-state", "4", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "L,scan_ms,attention_ms" and len(rows) == 3
    assert "median doubling ratio" in capsys.readouterr().out


def test_gradcheck_single_group(capsys):
    assert main(["gradcheck", "--module", "gdfn"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "group,check,rel_error,tolerance,coords,status"
    assert all(line.endswith("pass") for line in lines[1:])


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("XSSM_THREADS", "x")
    assert main(["gen-data", "--n", "1", "--size", "16", "--out", str(tmp_path)]) == EXIT_USAGE
    monkeypatch.setenv("XSSM_THREADS", "1")
    assert main(["gen-data", "--n", "1", "--size", "16", "--out", str(tmp_path)]) == EXIT_OK


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "xssm", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
    res = subprocess.run([sys.executable, "-m", "xssm", "train"], capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE
