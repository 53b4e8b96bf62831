import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ecplots import FigureSpec, SchemaError, render
from ecplots.render import main


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@pytest.fixture(scope="module")
def pipeline_outputs(tmp_path_factory):
    """Coupling-experiment outputs produced through the simulator CLI."""
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg = {
        "grid": {"n": 16},
        "noise": {"scalar_kmax_sq": 2, "vector_kmax_sq": 2, "sigma": 0.1, "alpha": 2.0},
        "schedule": {"dt": 0.01, "t_final": 2.0, "snapshot_stride": 1000, "ledger_stride": 5},
        "coupling": {"shell_m": 2, "budget_k": 1e9},
    }
    cfg_path = tmp / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    run = tmp / "run_out"
    couple = tmp / "couple_out"
    for argv in (
        ["ensemble", "--config", str(cfg_path), "--paths", "2", "--seed", "5",
         "--out", str(run)],
        ["diagnose", "--config", str(cfg_path), "--run", str(run)],
        ["couple", "--config", str(cfg_path), "--shell", "2", "--lambda", "4.0",
         "--budget", "1e9", "--paths", "2", "--seed", "5", "--out", str(couple)],
    ):
        proc = subprocess.run(
            [sys.executable, "-m", "ecspde.cli", *argv], capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
    return {
        "ledger": run / "ledger_path0000.csv",
        "diagnostics": run / "diagnostics.json",
        "coupling_ledger": couple / "coupling_ledger_path0000.csv",
        "tmp": tmp,
    }


def test_all_four_kinds_render_from_pipeline_outputs(pipeline_outputs):
    # secondary acceptance: every figure kind renders from real run outputs
    tmp = pipeline_outputs["tmp"]
    jobs = [
        ("decay", pipeline_outputs["ledger"]),
        ("moments", pipeline_outputs["ledger"]),
        ("contraction", pipeline_outputs["coupling_ledger"]),
        ("tails", pipeline_outputs["diagnostics"]),
    ]
    for kind, inp in jobs:
        out = tmp / f"fig_{kind}.png"
        info = render(FigureSpec(kind=kind, inputs=[str(inp)], output=str(out)))
        assert out.exists() and out.stat().st_size > 0, kind
        assert info


def test_synthetic_exponential_slope_annotation(tmp_path):
    # secondary acceptance: exact e^{-t} series fits slope -1.00 +/- 0.01
    t = np.linspace(0.0, 6.0, 121)
    write_csv(tmp_path / "synthetic.csv", ["t", "omega_h_sq"], np.stack([t, np.exp(-t)], axis=1))
    out = tmp_path / "fig.png"
    info = render(
        FigureSpec(kind="contraction", inputs=[str(tmp_path / "synthetic.csv")], output=str(out))
    )
    slope = info["synthetic.csv"]["slope"]
    assert slope == pytest.approx(-1.00, abs=0.01)
    assert out.exists()


def test_single_row_ledger_renders_without_crash(tmp_path):
    write_csv(
        tmp_path / "one.csv",
        ["t", "q_l2", "q_l4", "q_hm12", "u_l2", "u_h1"],
        [[0.0, 1.0, 1.2, 0.8, 0.5, 0.9]],
    )
    for kind in ("decay", "moments"):
        out = tmp_path / f"one_{kind}.png"
        info = render(FigureSpec(kind=kind, inputs=[str(tmp_path / 'one.csv')], output=str(out)))
        assert out.exists(), kind


def test_missing_column_exits_2_with_column_name(tmp_path, capsys):
    write_csv(tmp_path / "bad.csv", ["t", "q_l2"], [[0.0, 1.0], [1.0, 0.5]])
    rc = main(["--kind", "contraction", "--in", str(tmp_path / "bad.csv"),
               "--out", str(tmp_path / "x.png")])
    captured = capsys.readouterr()
    assert rc == 2
    assert "omega_h_sq" in captured.err


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(SchemaError):
        FigureSpec(kind="sparkline", inputs=["x.csv"], output="y.png")


def test_malformed_csv_rejected(tmp_path):
    (tmp_path / "junk.csv").write_text("a,b\n1,2\n")
    rc = main(["--kind", "decay", "--in", str(tmp_path / "junk.csv"),
               "--out", str(tmp_path / "x.png")])
    assert rc == 2


def test_rerender_does_not_mutate_inputs(tmp_path):
    t = np.linspace(0.0, 2.0, 21)
    path = tmp_path / "series.csv"
    write_csv(path, ["t", "omega_h_sq"], np.stack([t, np.exp(-2 * t)], axis=1))
    before = path.read_bytes()
    for _ in range(2):
        render(FigureSpec(kind="contraction", inputs=[str(path)], output=str(tmp_path / "f.png")))
    assert path.read_bytes() == before
