import json
import re
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from unidad import cli
from unidad.svg import SIZE, emit_scatter_svg, render_scatter_svg

TINY = """\
width = 16
depth = 2
iterations = 10
ft_iterations = 5
pretrain_iterations = 20
eval_every = 5
eval_samples = 32
batch_size = 16
pretrain_batch_size = 32
"""


@pytest.fixture
def tiny(tmp_path, monkeypatch):
    monkeypatch.setenv("UDAD_OUT_ROOT", str(tmp_path / "runs"))
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    return cfg


@pytest.fixture
def source_ckpt(tiny, tmp_path, capsys):
    assert cli.main(["pretrain-source", "--config", str(tiny), "--out", str(tmp_path / "src")]) == 0
    capsys.readouterr()
    return tmp_path / "src" / "checkpoint.udad"


def test_run_directory_layout(tiny, source_ckpt, tmp_path, capsys):
    assert cli.main(["run", "--pipeline", "unidad", "--config", str(tiny), "--checkpoint", str(source_ckpt)]) == 0
    out = capsys.readouterr().out.splitlines()
    run_dir = tmp_path / "runs" / out[-1].rsplit("/", 1)[-1]
    assert re.fullmatch(r"unidad-close-s0-[0-9a-f]{8}", run_dir.name)
    assert sorted(p.name for p in run_dir.iterdir()) == sorted(cli.LAYOUT.values())
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["pipeline"] == "unidad" and manifest["config"]["iterations"] == 10
    header = (run_dir / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("step,loss_g_dmd_src")
    assert len(out[0].split(",")) == 5


def test_same_seed_same_files(tiny, source_ckpt, tmp_path, capsys):
    for name in ("a", "b"):
        assert cli.main(["run", "--pipeline", "ft_then_dmd2", "--config", str(tiny),
                         "--checkpoint", str(source_ckpt), "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "checkpoint.udad", "samples.svg", "config.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_a_on_distant(tiny, source_ckpt, tmp_path, capsys):
    assert cli.main(["sweep", "--axis", "a", "--benchmark", "distant", "--config", str(tiny),
                     "--checkpoint", str(source_ckpt), "--out", str(tmp_path / "sw")]) == 0
    dirs = sorted(p.name for p in (tmp_path / "sw").iterdir())
    assert dirs == ["a=0.0", "a=0.25", "a=0.5", "a=0.75", "a=1.0"]
    assert "a = 0.75" in (tmp_path / "sw" / "a=0.75" / "config.txt").read_text()
    assert len(capsys.readouterr().out.strip().splitlines()) == 5


def test_eval_and_plot(tiny, source_ckpt, tmp_path, capsys):
    run = tmp_path / "r"
    assert cli.main(["run", "--pipeline", "dmd2", "--config", str(tiny), "--checkpoint", str(source_ckpt),
                     "--out", str(run)]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--config", str(tiny), "--checkpoint", str(run / "checkpoint.udad"),
                     "--out", str(tmp_path / "rep.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",")[0] == "w2_to_target" and len(lines) == 2
    assert (tmp_path / "rep.csv").read_text().splitlines() == lines
    svg = tmp_path / "g.svg"
    assert cli.main(["plot", "--config", str(tiny), "--checkpoint", str(run / "checkpoint.udad"),
                     "--out", str(svg)]) == 0
    ET.fromstring(svg.read_text())


def test_distant_benchmark_defaults_a(tiny, source_ckpt, tmp_path, capsys):
    assert cli.main(["run", "--benchmark", "distant", "--config", str(tiny), "--checkpoint", str(source_ckpt),
                     "--out", str(tmp_path / "d")]) == 0
    assert "a = 0.75" in (tmp_path / "d" / "config.txt").read_text()


def test_errors_exit_nonzero(tiny, tmp_path, capsys):
    assert cli.main(["frobnicate"]) != 0
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.udad")]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("a = 2\n")
    assert cli.main(["run", "--config", str(bad)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "line 1" in err[0]
    assert cli.main(["run", "--config", str(tiny), "--target-checkpoint", str(tmp_path / "none.udad")]) == 1


def test_frozen_target_without_checkpoint_fails(tiny, source_ckpt, tmp_path, capsys):
    cfg = tmp_path / "frozen.cfg"
    cfg.write_text(TINY + "target_mode = frozen-checkpoint\n")
    assert cli.main(["run", "--config", str(cfg), "--checkpoint", str(source_ckpt)]) == 1
    assert "target" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "unidad", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
    proc = subprocess.run([sys.executable, "-m", "unidad", "nope"], capture_output=True, text=True)
    assert proc.returncode != 0


def _circles(svg: str):
    root = ET.fromstring(svg)
    return [(float(c.get("cx")), float(c.get("cy")), c.get("r")) for c in root.iter("{http://www.w3.org/2000/svg}circle")]


def test_svg_empty_scatter_is_valid():
    svg = render_scatter_svg(np.zeros((0, 2)))
    root = ET.fromstring(svg)
    assert root.get("viewBox") == f"0 0 {SIZE} {SIZE}"
    assert _circles(svg) == []


def test_svg_origin_maps_to_centre():
    assert _circles(render_scatter_svg([[0.0, 0.0]])) == [(SIZE / 2, SIZE / 2, "2")]


def test_svg_orientation_and_overlays():
    svg = render_scatter_svg([[1.0, 1.0]], {"centers": [[-1.0, 0.0]], "exemplars": [[0.0, 0.5]]}, title="a<b")
    (x, y, _), (cx, cy, r) = _circles(svg)
    assert x > SIZE / 2 and y < SIZE / 2
    assert cx < SIZE / 2 and cy == SIZE / 2 and r == "9"
    assert svg.count("<path") == 1 and "a&lt;b" in svg
    with pytest.raises(ValueError):
        render_scatter_svg([[0, 0]], {"modes": [[0, 0]]})


def test_svg_is_byte_stable(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 2))
    emit_scatter_svg(pts, {"centers": pts[:3]}, tmp_path / "a.svg")
    emit_scatter_svg(pts.copy(), {"centers": pts[:3].copy()}, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
