"""Command line surface: flags, config file, subcommands."""

import json
import os

import numpy as np
import pytest

from dflsim.cli import (
    PAPER_SCALE_D,
    PAPER_SCALE_M,
    build_parser,
    config_from_options,
    main,
    read_config_file,
    resolve_options,
)

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

TINY = [
    "--clients", "4", "--dim", "8", "--samples", "40", "--rounds", "10",
    "--batch-size", "5", "--repeats", "2", "--seed", "3", "--lr0", "0.05",
]


def test_run_writes_csv(tmp_path, capsys):
    rc = main(["run", "--algorithm", "fedndl3", "--topology", "ring", *TINY,
               "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "final round 9" in out
    files = [f for f in os.listdir(tmp_path) if f.endswith(".csv")]
    assert files == ["fedndl3_ring_var0_mu0.02.csv"]
    header = (tmp_path / files[0]).read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("round,eta,loss_mean")


def test_sweep_comma_lists(tmp_path):
    rc = main([
        "sweep", "--algorithm", "fedndl1,fedndl3", "--topology", "ring",
        "--noise-var", "0,0.005", *TINY, "--out", str(tmp_path),
    ])
    assert rc == 0
    manifest = (tmp_path / "manifest.csv").read_text(encoding="utf-8").splitlines()
    assert len(manifest) == 5  # header + 4 cells
    for line in manifest[1:]:
        cell_csv = line.split(",")[-1]
        assert (tmp_path / cell_csv).exists()


def test_rate_on_existing_csv(tmp_path, capsys):
    path = tmp_path / "cell.csv"
    rounds = np.arange(-1, 299)
    sums = 2.0 * np.sqrt(np.arange(1, 302))
    series = np.diff(np.concatenate([[0.0], sums]))  # running average 2/sqrt(T)
    lines = ["round,eta,loss_mean,loss_std,consensus_error_mean,consensus_error_std,"
             "grad_norm_sq_mean,grad_norm_sq_std,loss_local_avg_mean"]
    for r, g in zip(rounds, series):
        lines.append(f"{r},0.1,1,0,0,0,{float(g)!r},0,1")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    rc = main(["rate", "--csv", str(path)])
    assert rc == 0
    slope = float(capsys.readouterr().out.split("slope:")[1])
    assert slope == pytest.approx(-0.5, abs=1e-3)


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        """
        # experiment settings
        algorithm = fedndl1
        topology = torus
        clients = 9
        noise-var = 0.01   # per-coordinate
        lr-gamma = 0.8
        paper-scale = false
        """,
        encoding="utf-8",
    )
    values = read_config_file(str(cfg))
    assert values == {
        "algorithm": "fedndl1",
        "topology": "torus",
        "clients": 9,
        "noise_var": 0.01,
        "lr_gamma": 0.8,
        "paper_scale": False,
    }
    parser = build_parser()
    args = parser.parse_args(["run", "--config", str(cfg), "--algorithm", "fednmut"])
    opts = resolve_options(args)
    assert opts["algorithm"] == "fednmut"  # CLI wins
    assert opts["topology"] == "torus"  # file fills the rest
    assert opts["noise_var"] == 0.01
    assert opts["rounds"] == 500  # default
    config = config_from_options(opts)
    assert config.topology.kind == "torus" and config.n == 9


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="unknown key"):
        read_config_file(str(cfg))


def test_paper_scale_sets_dimensions():
    parser = build_parser()
    args = parser.parse_args(["run", "--paper-scale"])
    opts = resolve_options(args)
    assert opts["dim"] == PAPER_SCALE_D and opts["samples"] == PAPER_SCALE_M


def test_topology_and_x0_name_mapping():
    parser = build_parser()
    args = parser.parse_args(["run", "--topology", "full", "--x0", "independent", *TINY])
    config = config_from_options(resolve_options(args))
    assert config.topology.kind == "fully_connected"
    assert config.x0_mode == "independent_random"


def test_verify_writes_report_and_passes(tmp_path, capsys):
    rc = main(["verify", "--out", str(tmp_path), "--seed", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "overall: PASS" in out
    report = (tmp_path / "verify_report.txt").read_text(encoding="utf-8")
    assert "bound-sanity" in report and "rate-slope" in report
    summary = json.loads((tmp_path / "verify_summary.json").read_text(encoding="utf-8"))
    assert summary["passed"] is True
    assert {c["name"] for c in summary["checks"]} >= {
        "mixing[ring]", "contraction[torus]", "bias-zero-mean", "bound-sanity", "rate-slope",
    }
