import csv

import pytest

from pilotcluster.cli import main

CONFIG = """\
seed=11
L=4
M=200
n_deployments=2
mu_samples=500
schemes=mrc,zfc
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text(CONFIG)
    return path


def test_run_then_stability_check_then_plot(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["run", str(config), "-o", str(out)]) == 0
    for name in ("rows.csv", "aggregate.csv", "structures.csv", "config.txt", "se_per_cell.svg",
                 "coalition_size.svg", "messages_per_bs.svg"):
        assert (out / name).is_file()
    assert main(["stability-check", str(out / "structures.csv")]) == 0
    assert "0 unstable" in capsys.readouterr().out
    target = tmp_path / "fig.svg"
    assert main(["plot", str(out / "aggregate.csv"), f"metric=se_sum;output={target}"]) == 0
    assert target.is_file()


def test_stability_check_flags_tampered_structure(tmp_path, config, capsys):
    out = tmp_path / "run"
    main(["run", str(config), "-o", str(out), "-s", "figures=false", "-s", "schemes=mrc"])
    path = out / "structures.csv"
    rows = list(csv.DictReader(open(path)))
    for r in rows:
        if r["scheme"] == "mrc/formation":
            r["structure"] = "{0}{1}{2}{3}"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, rows[0].keys())
        w.writeheader()
        w.writerows(rows)
    assert main(["stability-check", str(path)]) == 1
    assert "UNSTABLE" in capsys.readouterr().out


def test_validate_writes_per_point_and_summary(tmp_path, config, capsys):
    out = tmp_path / "val"
    code = main(["validate", str(config), "-o", str(out), "-s", "n_deployments=1",
                 "-s", "n_position_draws=40", "-s", "n_channel_draws=100",
                 "-s", "validation_mu_samples=20000", "-s", "M=60"])
    text = capsys.readouterr().out
    assert code in (0, 1)
    summary = list(csv.DictReader(open(out / "validation_summary.csv")))
    assert [r["scheme"] for r in summary] == ["mrc", "zfc"]
    assert (out / "validation_L4_d0_mrc.csv").is_file()
    assert "mrc:" in text


def test_errors_exit_with_code_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("L=4\n")
    assert main(["run", str(bad)]) == 2
    assert "seed" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])
