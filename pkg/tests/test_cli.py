import csv
import io
import json
import subprocess
import sys

import pytest

from marketsim import cli

from conftest import CONFIGS, FIXTURES

BH = str(CONFIGS / "buy_and_hold.toml")


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestRun:
    def test_writes_all_outputs(self, tmp_path, capsys) -> None:
        code, out, _ = run_cli(capsys, "run", BH, "--out", str(tmp_path / "r"))
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "r").iterdir())
        assert names == ["audit.ndjson", "candles.csv", "equity.csv", "report.html", "report.json", "run.json",
                         "trade_log.ndjson", "trades.csv"]
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert report["agents"]["hold"]["metrics"]["ROI"] == pytest.approx(110 / 101 - 1, rel=1e-12)
        html = (tmp_path / "r" / "report.html").read_text()
        assert "▲" in html
        # self-contained: the svg namespace is the only URL allowed
        assert "<script src" not in html and 'src="http' not in html and 'href="http' not in html

    def test_same_config_same_bytes(self, tmp_path, capsys) -> None:
        for name in ("a", "b"):
            assert run_cli(capsys, "run", BH, "--out", str(tmp_path / name))[0] == 0
        for f in ("trade_log.ndjson", "report.json", "report.html", "audit.ndjson", "equity.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_missing_data_exit_2_no_partial_outputs(self, tmp_path, capsys) -> None:
        cfg = tmp_path / "c.toml"
        cfg.write_text(open(BH).read().replace("../bars_small.csv", str(FIXTURES / "absent.csv")))
        code, _, err = run_cli(capsys, "run", str(cfg), "--out", str(tmp_path / "out"))
        assert code == 2
        assert "MISSING_FILE" in err
        assert sorted(p.name for p in tmp_path.iterdir()) == ["c.toml"]

    def test_config_error_exit_1_with_line(self, tmp_path, capsys) -> None:
        cfg = tmp_path / "c.toml"
        cfg.write_text(open(BH).read() + "wat = 1\n")
        code, _, err = run_cli(capsys, "run", str(cfg), "--out", str(tmp_path / "out"))
        assert code == 1
        assert "line" in err and "wat" in err

    def test_existing_output_needs_force(self, tmp_path, capsys) -> None:
        out = tmp_path / "r"
        assert run_cli(capsys, "run", BH, "--out", str(out))[0] == 0
        (out / "marker").write_text("x")
        assert run_cli(capsys, "run", BH, "--out", str(out))[0] == 1
        assert (out / "marker").exists()
        assert run_cli(capsys, "run", BH, "--out", str(out), "--force")[0] == 0
        assert not (out / "marker").exists()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["r"]

    def test_module_entry_point(self, tmp_path) -> None:
        res = subprocess.run([sys.executable, "-m", "marketsim", "run", BH, "--out", str(tmp_path / "r")],
                             capture_output=True, text=True, timeout=120)
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "r" / "report.json").exists()


class TestVerify:
    def test_identical(self, capsys) -> None:
        code, out, _ = run_cli(capsys, "verify", str(CONFIGS / "order_replay.toml"), "--runs", "3")
        assert code == 0
        assert out.splitlines()[-1] == "identical"

    def test_negative_control_diverges(self, capsys) -> None:
        code, out, _ = run_cli(capsys, "verify", str(CONFIGS / "small_tcp.toml"), "--runs", "2", "--vary-seed",
                               "--transport", "inprocess")
        assert code == cli.EXIT_DIVERGENT
        assert out.splitlines()[-1] == "divergent"

    def test_transports_identical(self, capsys) -> None:
        outs = []
        for transport in ("inprocess", "tcp"):
            code, out, _ = run_cli(capsys, "verify", str(CONFIGS / "small_tcp.toml"), "--runs", "2",
                                   "--transport", transport)
            assert code == 0
            outs.append([ln.split(" (")[0].split(": ", 1)[1] for ln in out.splitlines() if ln.startswith("run ")])
        assert outs[0] == outs[1]

    def test_needs_two_runs(self, capsys) -> None:
        assert run_cli(capsys, "verify", BH, "--runs", "1")[0] == 1


class TestBench:
    def test_csv_shape(self, tmp_path, capsys) -> None:
        code, out, _ = run_cli(capsys, "bench", str(CONFIGS / "bench_ma.toml"), "--agents", "1,2,3",
                               "--no-isolate", "--out", str(tmp_path / "b.csv"))
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [int(r["agents"]) for r in rows] == [1, 2, 3]
        assert list(rows[0]) == cli.BENCH_COLUMNS
        assert all(float(r["events_per_sec"]) > 0 for r in rows)
        assert (tmp_path / "b.csv").read_text() == out

    def test_bench_does_not_perturb_results(self) -> None:
        cfg = cli.load_config(CONFIGS / "bench_ma.toml")
        a = cli.bench_one(cfg, 3)
        b = cli.bench_one(cfg, 3)
        assert a["trade_log_sha256"] == b["trade_log_sha256"]

    def test_isolated_rows(self) -> None:
        rows = cli.run_bench(cli.load_config(CONFIGS / "bench_ma.toml"), [2])
        assert rows[0]["agents"] == 2 and rows[0]["peak_rss_mb"] > 0

    def test_bad_counts(self, capsys) -> None:
        assert run_cli(capsys, "bench", BH, "--agents", "ten")[0] == 1


class TestReport:
    def test_regenerate_is_byte_stable(self, tmp_path, capsys) -> None:
        run_dir = tmp_path / "r"
        assert run_cli(capsys, "run", str(CONFIGS / "order_replay.toml"), "--out", str(run_dir))[0] == 0
        before = {f: (run_dir / f).read_bytes() for f in ("report.json", "report.html")}
        for fmt in ("json", "html"):
            (run_dir / f"report.{fmt}").unlink()
            assert run_cli(capsys, "report", str(run_dir), "--format", fmt)[0] == 0
            assert (run_dir / f"report.{fmt}").read_bytes() == before[f"report.{fmt}"]

    def test_not_a_run_dir(self, tmp_path, capsys) -> None:
        code, _, err = run_cli(capsys, "report", str(tmp_path), "--format", "json")
        assert code == 2 and "run.json" in err
