import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tprop import tasks, trainer
from tprop.cli import EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main


def write_tiny_idx(root, n=8, h=4, w=4, n_classes=4, seed=0):
    """Write a small IDX image/label pair for both splits."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for img_name, lab_name in (
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ):
        imgs = rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
        labels = (np.arange(n) % n_classes).astype(np.uint8)
        (root / img_name).write_bytes(struct.pack(">iiii", 0x803, n, h, w) + imgs.tobytes())
        (root / lab_name).write_bytes(struct.pack(">ii", 0x801, n) + labels.tobytes())


def test_unknown_command_exits_with_usage_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_required_flag_exits_with_usage_code():
    with pytest.raises(SystemExit) as exc:
        main(["gen-data"])  # --out is required
    assert exc.value.code == EXIT_USAGE


def test_gen_data_round_trip(tmp_path, capsys):
    out = tmp_path / "batches.csv"
    argv = ["gen-data", "--task", "adding", "--T", "20", "--batch", "5",
            "--n", "3", "--seed", "9", "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert "wrote 3 adding batches" in capsys.readouterr().out
    batches = tasks.load_batches_csv(str(out))
    assert len(batches) == 3
    for b in batches:
        assert b.inputs.shape == (20, 2, 5)
        assert b.labels.shape == (5,)
    # same seed, same bytes
    out2 = tmp_path / "again.csv"
    main(["gen-data", "--task", "adding", "--T", "20", "--batch", "5",
          "--n", "3", "--seed", "9", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_train_writes_snapshot_and_metrics(tmp_path, capsys):
    out = tmp_path / "run"
    argv = ["train", "--task", "temporal-order", "--T", "12", "--hidden", "8",
            "--method", "tp", "--batch", "4", "--iters", "6", "--seed", "3",
            "--out", str(out)]
    assert main(argv) == EXIT_OK
    line = capsys.readouterr().out
    assert line.startswith("ok task=temporal-order method=tp iters=6")
    log = trainer.MetricsLog.from_csv(str(out / "metrics.csv"))
    assert len(log.losses) == 6
    # the snapshot pins every setting: rerunning it reproduces the metrics
    cfg = trainer.load_config(str(out / "config.snapshot"))
    rerun = trainer.train(cfg)
    assert rerun.log.losses == log.losses


def test_train_divergence_exit_code(tmp_path, capsys):
    out = tmp_path / "blowup"
    argv = ["train", "--task", "adding", "--T", "12", "--hidden", "8",
            "--method", "bp", "--gamma", "1e8", "--momentum", "0.0",
            "--batch", "4", "--iters", "200", "--out", str(out)]
    assert main(argv) == EXIT_DIVERGED
    assert capsys.readouterr().out.startswith("diverged task=adding")
    log = trainer.MetricsLog.from_csv(str(out / "metrics.csv"))
    assert log.diverged and log.diverged_at is not None


def test_train_rejects_bad_config_value(tmp_path, capsys):
    argv = ["train", "--task", "temporal-order", "--batch", "0",
            "--out", str(tmp_path / "x")]
    assert main(argv) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_train_pixels_missing_dataset(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(trainer.DATA_DIR_ENV, raising=False)
    argv = ["train", "--task", "pixels", "--hidden", "6", "--batch", "2",
            "--iters", "2", "--out", str(tmp_path / "x")]
    assert main(argv) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err
    # pointing at an empty directory names the first missing file
    argv += ["--data-dir", str(tmp_path)]
    assert main(argv) == EXIT_USAGE
    assert "missing dataset file" in capsys.readouterr().err


def test_train_pixels_end_to_end(tmp_path, capsys):
    data = tmp_path / "idx"
    write_tiny_idx(data)
    out = tmp_path / "run"
    argv = ["train", "--task", "pixels", "--data-dir", str(data), "--k", "4",
            "--hidden", "6", "--batch", "2", "--iters", "4", "--eval-every", "2",
            "--method", "tp", "--out", str(out)]
    assert main(argv) == EXIT_OK
    log = trainer.MetricsLog.from_csv(str(out / "metrics.csv"))
    assert len(log.losses) == 4
    assert log.eval_accs, "eval cadence should have fired"
    assert all(0.0 <= a <= 1.0 for a in log.eval_accs)


def test_plot_two_logs(tmp_path):
    paths = []
    for j, name in enumerate(("left", "right")):
        log = trainer.MetricsLog()
        for i in range(10):
            log.iters.append(i)
            log.losses.append(float(1 + i + j))
            log.accs.append(0.0)
            log.wall_ms.append(0.1)
        p = tmp_path / f"{name}.csv"
        log.to_csv(str(p))
        paths.append(str(p))
    svg_path = tmp_path / "out.svg"
    assert main(["plot", "--in", *paths, "--out", str(svg_path)]) == EXIT_OK
    svg = svg_path.read_text()
    ET.fromstring(svg)
    assert svg.count("<polyline") == 2
    assert "left" in svg and "right" in svg
    # axes span the exact data extrema: x in [0, 9], loss in [1, 11]
    assert ">0<" in svg and ">9<" in svg
    assert ">1<" in svg and ">11<" in svg


def test_plot_header_only_csv(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("iter,loss,acc,wall_ms\n")
    svg_path = tmp_path / "empty.svg"
    assert main(["plot", "--in", str(p), "--out", str(svg_path)]) == EXIT_OK
    svg = svg_path.read_text()
    ET.fromstring(svg)
    assert "<polyline" not in svg  # nothing to draw, axes still render
    assert '<line' in svg


def test_plot_rejects_unknown_metric(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("iter,loss,acc,wall_ms\n")
    with pytest.raises(SystemExit) as exc:
        main(["plot", "--in", str(p), "--metric", "entropy", "--out", str(tmp_path / "x.svg")])
    assert exc.value.code == EXIT_USAGE


def test_grid_writes_csv_and_heatmap(tmp_path, capsys):
    csv_path = tmp_path / "grid.csv"
    svg_path = tmp_path / "grid.svg"
    argv = ["grid", "--task", "temporal-order", "--T", "12", "--hidden", "8",
            "--batch", "4", "--iters", "5", "--method", "tp",
            "--gamma-theta-grid", "0.05,0.1", "--r-grid", "0.5,1.0",
            "--out-csv", str(csv_path), "--out-svg", str(svg_path)]
    assert main(argv) == EXIT_OK
    assert "grid 4 cells" in capsys.readouterr().out
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "gamma_theta,r,area,diverged"
    assert len(lines) == 5
    seen = set()
    for line in lines[1:]:
        gt, r, area, flag = line.split(",")
        seen.add((float(gt), float(r)))
        assert flag in ("true", "false")
        if flag == "false":
            assert np.isfinite(float(area))
    assert seen == {(0.05, 0.5), (0.05, 1.0), (0.1, 0.5), (0.1, 1.0)}
    svg = svg_path.read_text()
    ET.fromstring(svg)
    assert svg.count("<rect") >= 4


def test_bench_csv_counts_inversions(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    argv = ["bench", "--tau-grid", "5,10", "--p-grid", "8", "--batch", "2",
            "--reps", "2", "--out", str(out)]
    assert main(argv) == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "tau,p,method,ms_per_iter,inversions"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 4  # two taus, two methods
    for tau, p, method, ms, inversions in rows:
        assert float(ms) > 0.0
        assert int(inversions) == (1 if method == "tp" else 0)
    assert capsys.readouterr().out.startswith("tau,p,method")


def test_check_suite_reports_all_pass(capsys):
    assert main(["check", "--suite", "dtp"]) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "suite,check,passed,measured,bound"
    assert len(out) > 1
    for line in out[1:]:
        fields = line.split(",")
        assert fields[0] == "dtp" and fields[2] == "pass"


def test_check_rejects_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        main(["check", "--suite", "vibes"])
    assert exc.value.code == EXIT_USAGE
