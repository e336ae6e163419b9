import numpy as np
import pytest

from octupole import experiments as ex
from octupole import kvfile
from octupole.cli import main
from octupole.errors import ConfigError


def test_scan_spec_validation():
    with pytest.raises(ConfigError):
        ex.ScanSpec("defect", "nope", 0, 1, 0.1)
    with pytest.raises(ConfigError):
        ex.ScanSpec("coeff", "l_s", 0, 1, 0.1)
    with pytest.raises(ConfigError):
        ex.ScanSpec("defect", "l_s", 0, 1, -0.1)
    with pytest.raises(ConfigError):
        ex.ScanSpec("defect", "l_s", 0, 1, 1e-5)  # more than 10^4 points
    with pytest.raises(ConfigError):
        ex.ScanSpec("shape", "l_s", 0, 1, 0.1)


def test_scan_values():
    assert ex.figure_spec("fig3").values() == [round(0.011 * i, 12) for i in range(11)]
    v = ex.figure_spec("fig8").values()
    assert len(v) == 21 and v[0] == 0.088 and v[-1] == -0.088
    v = ex.figure_spec("fig7").values()
    assert len(v) == 21 and v[0] == 0.108 and v[-1] == -0.111


def test_scan_outputs_are_deterministic(tmp_path):
    spec = dict(kind="defect", parameter="l_s", start=0.0, stop=0.02, step=0.01, fixed={"y0": 0.005})
    a = ex.run_scan(ex.ScanSpec(**spec, out_dir=str(tmp_path / "a")))
    ex.run_scan(ex.ScanSpec(**spec, out_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "scan.csv").read_bytes() == (tmp_path / "b" / "scan.csv").read_bytes()
    assert (tmp_path / "a" / "scan.svg").exists()
    man = kvfile.read(tmp_path / "a" / "manifest.txt")
    assert "code_version" in man and "solver_tolerance" in man
    assert len(a) == 3 and all(not r.error for r in a)


def test_coefficient_scan_uses_biased_perfect_trap(tmp_path):
    rows = ex.run_scan(ex.ScanSpec("coeff", "a1", 0.02, 0.04, 0.02, fixed={"a3": 0.005}), plot=False)
    assert all(r.d_bar <= 8e-6 for r in rows)


def test_topology_labels():
    rows = ex.run_scan(ex.ScanSpec("coeff", "a1", 0.0, 0.1, 0.1, fixed={"a2": 0.0}), plot=False)
    assert ex.topology_sequence(rows) == ["line", "line"]


def test_completeness_without_displacement():
    s = ex.run_completeness(seeds=3, fraction=0.0)
    assert s.n == 3 and s.below_2pct == 3
    with pytest.raises(ConfigError):
        ex.run_completeness(seeds=1, fraction=0.2)


def test_completeness_files_are_deterministic(tmp_path):
    ex.run_completeness(seeds=3, fraction=0.01, out_dir=tmp_path / "a")
    ex.run_completeness(seeds=3, fraction=0.01, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "completeness.csv").read_bytes() == (tmp_path / "b" / "completeness.csv").read_bytes()


def test_tables_need_fifty_cases():
    with pytest.raises(ConfigError):
        ex.run_success_tables(cases=10)


def test_tables_degrade_with_pixel_size():
    t2, t4, t8 = ex.run_success_tables(50, (2e-6, 4e-6, 8e-6))
    assert t8.success_1 <= t4.success_1 <= t2.success_1 + 1e-12
    assert np.all(np.array(t8.sigma) > np.array(t4.sigma))
    assert np.all(np.array(t4.sigma) > np.array(t2.sigma))


def test_compensation_of_undisplaced_trap():
    (h,) = ex.run_compensation_demo(seeds=(0,), fraction=0.0, steps=3)
    assert np.all(h.d_b == 0)


def test_h_calibration_rejects_ratio_range():
    with pytest.raises(ConfigError):
        ex.run_h_calibration("splitting", [0.05], [0.01, 0.2])
    with pytest.raises(ConfigError):
        ex.run_h_calibration("twist", [0.05], [0.2])


def test_worker_env(monkeypatch):
    monkeypatch.setenv(ex.WORKERS_ENV, "3")
    assert ex.worker_count() == 3
    monkeypatch.setenv(ex.WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        ex.worker_count()


def test_parallel_map_keeps_order():
    assert ex._map(abs, [-3, 2, -1], workers=2) == [3, 2, 1]


# --- command line ----------------------------------------------------------

def test_cli_scan(tmp_path, capsys):
    cfg = tmp_path / "scan.txt"
    cfg.write_text("# splitting scan\nparameter = y0\nstart = 0\nstop = 0.01\nstep = 0.01\nfixed.l_s = 0.01\n")
    assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "scan.csv").exists()
    assert "2 points" in capsys.readouterr().out


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("parameter = y0\nstart = 0\nstop = 0.01\nstep = 0.01\ncolour = red\n")
    assert main(["scan", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("this line has no equals sign\n")
    assert main(["scan", "--config", str(bad)]) == 2
    assert main(["scan", "--config", str(tmp_path / "missing.txt")]) == 2
    bad.write_text("rd_mm = 9\nparameter = y0\nstop = 0.01\nstep = 0.01\n")
    assert main(["scan", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_cli_solver_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.txt"
    # compression large enough for facing electrodes to overlap
    cfg.write_text("parameter = l_s\nstart = 4.5\nstop = 4.5\nstep = 1\n")
    assert main(["completeness", "--config", str(cfg)]) == 2  # unknown keys for this command
    assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "InvalidGeometryError" in (tmp_path / "o" / "scan.csv").read_text()
    # electrodes that touch their neighbours stop a whole run
    cfg.write_text("rd_mm = 3.9\n")
    assert main(["compensate", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 3
    cfg.write_text("fraction = 0.3\n")
    assert main(["compensate", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 2


def test_cli_reproduce_check(tmp_path, capsys):
    assert main(["reproduce", "fig3", "--check", "--out", str(tmp_path / "f3")]) == 0
    out = capsys.readouterr().out
    assert "fig3: PASS" in out


def test_cli_compensate_and_tables(tmp_path):
    assert main(["compensate", "--seed", "2", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "history_seed2.csv").exists()
    cfg = tmp_path / "t.txt"
    cfg.write_text("d_px_um = 4\n")
    assert main(["tables", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "table2.csv").exists()
