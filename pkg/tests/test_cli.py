import subprocess
import sys

import pytest

from pecc.cli import main
from pecc.profiles import Anchor, ControlPair, ModelParams, default_table, dump_anchors, published_anchors
from pecc.service import start_server


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


def test_solve_local(capsys):
    code, out, _ = run(capsys, "solve", "--rd", "0.5", "--ebpm", "160")
    kv = parse_kv(out)
    assert code == 0
    assert (kv["frequency_ghz"], kv["max_speed_mps"], kv["epsilon_jpm"]) == ("2.03", "1.2", "0")


def test_solve_unbounded(capsys):
    code, out, _ = run(capsys, "solve", "--rd", "1e9", "--ebpm", "1e9")
    assert code == 0 and parse_kv(out)["max_speed_mps"] == "2.4"


def test_solve_infeasible_exit_code(capsys):
    code, _, err = run(capsys, "solve", "--rd", "0.01")
    assert code == 1
    assert "infeasible" in err and "min_achievable_rd_m=" in err


def test_solve_ee(capsys):
    code, out, _ = run(capsys, "solve", "--ee", "--rd", "0.5")
    assert code == 0 and "energy_per_meter=140.418" in out


def test_solve_remote_matches_local(capsys):
    server = start_server("127.0.0.1:0", default_table())
    try:
        port = server.server_address[1]
        _, local, _ = run(capsys, "solve", "--rd", "0.75", "--ebpm", "120")
        code, remote, _ = run(capsys, "solve", "--rd", "0.75", "--ebpm", "120", "--remote", f"127.0.0.1:{port}")
    finally:
        server.shutdown()
        server.server_close()
    assert code == 0 and remote == local


def test_solve_remote_unreachable(capsys):
    code, _, err = run(capsys, "solve", "--rd", "0.5", "--remote", "127.0.0.1:1", "--timeout", "0.5")
    assert code == 1 and "error" in err


def test_calibrate_default(capsys, tmp_path):
    out_file = tmp_path / "params.txt"
    code, out, _ = run(capsys, "calibrate", "--out", str(out_file))
    assert code == 0
    params = ModelParams.loads(out_file.read_text())
    assert params.f_ref == 1.11 and out == out_file.read_text()


def test_calibrate_contradictory_anchors(capsys, tmp_path):
    path = tmp_path / "anchors.csv"
    path.write_text(dump_anchors(published_anchors() + [Anchor(ControlPair(1.11, 0.4), "power", 50.0)]))
    code, _, err = run(capsys, "calibrate", "--anchors", str(path))
    assert code == 1 and "calibration failed" in err


def test_params_round_trip_through_table(capsys, tmp_path):
    params = tmp_path / "p.txt"
    run(capsys, "calibrate", "--out", str(params))
    code, out, _ = run(capsys, "table", "--params", str(params))
    assert code == 0 and len(out.splitlines()) == 37
    table = tmp_path / "t.csv"
    table.write_text(out)
    code, out, _ = run(capsys, "solve", "--table", str(table), "--rd", "0.5", "--ebpm", "160")
    assert code == 0 and parse_kv(out)["frequency_ghz"] == "2.03"


def test_simulate(capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "simulate", "--scenario", "AB", "--mode", "PECC-10", "--seed", "1",
                       "--trace", str(trace))
    assert code == 0
    assert "travel_time_s=" in out and "ebu=" in out
    assert trace.read_text().startswith("t_s,pos_m")


def test_simulate_timeout_exit_code(capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "QU", "--timeout", "1")
    assert code == 1 and "timed out" in err


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["solve"],
    ["solve", "--rd", "abc"],
    ["simulate", "--mode", "FAST"],
    ["simulate", "--scenario", "nowhere.yaml"],
    ["solve", "--rd", "0.5", "--table", "missing.csv"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        sys.exit(main(argv))
    assert exc.value.code == 2


def test_bench_small_grid(capsys, tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("scenarios: [AB]\nrd_values: [0.5]\nmodes: [EE, PECC-0]\ntrials: 3\n")
    out_csv = tmp_path / "m.csv"
    code, out, _ = run(capsys, "bench", "--grid", str(grid), "--out", str(out_csv))
    assert code == 0
    assert len(out_csv.read_text().splitlines()) == 1 + 3 * 2
    assert "mean_rtt" in out


def test_bench_bad_grid(capsys, tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("trials: -4\n")
    code, _, err = run(capsys, "bench", "--grid", str(grid))
    assert code == 2 and "trials" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pecc", "solve", "--rd", "0.5", "--ebpm", "100"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "frequency_ghz=1.11" in proc.stdout
