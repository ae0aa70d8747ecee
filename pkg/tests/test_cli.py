import os
import re
import signal
import subprocess
import sys

import pytest

from bamboo import cli
from bamboo.client import setup
from bamboo.server import EncryptedDatabase
from bamboo.service import LocalServer
from bamboo.session import BambooClient

BAMBOO = [sys.executable, "-m", "bamboo.cli"]


class Daemon:
    def __init__(self, data_dir, workers=1):
        self.proc = subprocess.Popen(
            BAMBOO + ["serve", "--listen", "127.0.0.1:0", "--data-dir", str(data_dir), "--workers", str(workers)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        )
        line = self.proc.stdout.readline()
        m = re.match(r"listening on (\S+) ", line)
        if not m:
            self.proc.kill()
            raise RuntimeError(f"daemon failed: {line!r} {self.proc.stderr.read()}")
        self.address = m.group(1)
        self.fingerprint = self.proc.stdout.readline().split()[1]

    def stop(self):
        self.proc.send_signal(signal.SIGTERM)
        out, _ = self.proc.communicate(timeout=30)
        return out


@pytest.fixture
def daemon(tmp_path):
    d = Daemon(tmp_path / "data")
    yield d
    if d.proc.poll() is None:
        d.stop()


@pytest.fixture
def run(tmp_path, daemon, capsys, monkeypatch):
    """In-process CLI against the daemon; returns (exit code, stdout lines)."""
    monkeypatch.delenv("BAMBOO_CONFIG", raising=False)
    state = str(tmp_path / "state.db")

    def invoke(*argv, init=False):
        argv = list(argv)
        if argv[0] not in ("init", "bench", "serve"):
            argv += ["--server", daemon.address]
        argv += ["--state", state] if argv[0] != "bench" else []
        capsys.readouterr()
        code = cli.main(argv)
        out = capsys.readouterr()
        invoke.stderr = out.err
        return code, out.out.split()

    assert invoke("init", "--amax", "32")[0] == 0
    return invoke


def test_add_del_search_empty(run):
    assert run("add", "w1", "0x01")[0] == 0
    assert run("del", "w1", "0x01")[0] == 0
    assert run("search", "w1") == (0, [])


def test_three_adds_rotate_search(run):
    for fid in ("1", "2", "3"):
        assert run("add", "w", fid)[0] == 0
    assert run("rotate") == (0, ["0", "->", "1"])
    assert run("search", "w") == (0, ["0x01", "0x02", "0x03"])


def test_unknown_keyword_exit_2(run):
    code, _ = run("search", "nothing")
    assert code == 2 and "unknown keyword" in run.stderr


def test_usage_errors_exit_1(run):
    assert run("add", "w", "0")[0] == 1
    assert run("add", "w", "zz")[0] == 1
    assert run("add", "w", "f" * 40)[0] == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_missing_state_exit_2(tmp_path):
    assert cli.main(["search", "w", "--state", str(tmp_path / "none.db")]) == 2


def test_network_error_exit_3(tmp_path):
    state = str(tmp_path / "s.db")
    cli.main(["init", "--state", state])
    assert cli.main(["add", "w", "1", "--state", state, "--server", "127.0.0.1:1"]) == 3


def test_epoch_mismatch_exit_4(tmp_path, run, daemon, capsys):
    # a second client state that has rotated elsewhere is fenced by this daemon
    other_state = str(tmp_path / "other.db")
    other = Daemon(tmp_path / "other-data")
    try:
        cli.main(["init", "--state", other_state])
        cli.main(["rotate", "--state", other_state, "--server", other.address])
    finally:
        other.stop()
    capsys.readouterr()
    assert run("add", "w", "1")[0] == 0
    assert cli.main(["add", "w", "2", "--state", other_state, "--server", daemon.address]) == 4


def test_pinned_fingerprint(run, daemon):
    run("add", "w", "1")
    assert run("search", "w", "--fingerprint", daemon.fingerprint) == (0, ["0x01"])
    assert run("search", "w", "--fingerprint", "ab" * 32)[0] == 4


def test_adjustable_policy(run):
    for fid in range(1, 6):
        run("add", "w", hex(fid))
    run("add", "v", "9")
    assert run("search", "w", "--policy", "adjustable") == (0, [f"0x0{i}" for i in range(1, 6)])


def test_ingest(run, tmp_path):
    f = tmp_path / "pairs.tsv"
    f.write_text("alpha\t1\nalpha\t2\nbeta\t0x0a\n\n", encoding="utf-8")
    assert run("ingest", str(f)) == (0, ["ingested", "3", "entries"])
    assert run("search", "alpha")[1] == ["0x01", "0x02"]
    assert run("search", "beta")[1] == ["0x0a"]
    f.write_text("no tab here\n", encoding="utf-8")
    assert run("ingest", str(f))[0] == 1


def test_cli_matches_library(run):
    steps = [("add", "a", 1), ("add", "a", 2), ("add", "b", 3), ("del", "a", 1), ("rotate",),
             ("add", "a", 1), ("del", "b", 3), ("del", "c", 4), ("add", "b", 0x33)]
    key, state = setup(128, 32, 2)
    lib = BambooClient(key, state, LocalServer(EncryptedDatabase(state.params)))
    for s in steps:
        if s[0] == "rotate":
            run("rotate")
            lib.rotate()
            continue
        assert run(s[0], s[1], hex(s[2]))[0] == 0
        (lib.add if s[0] == "add" else lib.delete)(s[1], s[2])
    for w in "abc":
        assert run("search", w)[1] == [cli.format_file_id(i) for i in sorted(lib.search(w))]


def test_rotate_after_timer(run, tmp_path):
    run("add", "w", "1", "--rotate-after", "3600")  # records the first timestamp
    assert run("add", "w", "3", "--rotate-after", "3600")[0] == 0
    assert run("rotate") == (0, ["0", "->", "1"])
    # idle longer than 0 s: rotates 1 -> 2 before adding
    assert run("add", "w", "2", "--rotate-after", "0")[0] == 0
    assert run("rotate") == (0, ["2", "->", "3"])
    assert run("search", "w") == (0, ["0x01", "0x02", "0x03"])


def test_daemon_persists_across_restart(tmp_path):
    data = tmp_path / "data"
    state = str(tmp_path / "s.db")
    cli.main(["init", "--state", state])
    d = Daemon(data)
    cli.main(["add", "w", "5", "--state", state, "--server", d.address])
    cli.main(["rotate", "--state", state, "--server", d.address])
    assert "database flushed" in d.stop()
    d = Daemon(data)
    try:
        out = subprocess.run(BAMBOO + ["search", "w", "--state", state, "--server", d.address],
                             capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.split() == ["0x05"]
    finally:
        d.stop()


def test_corrupt_snapshot_startup_error(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    (data / "edb.snapshot").write_bytes(b"BSEKU1" + os.urandom(40))
    proc = subprocess.run(BAMBOO + ["serve", "--listen", "127.0.0.1:0", "--data-dir", str(data)],
                          capture_output=True, text=True, timeout=30)
    assert proc.returncode == 2
    assert "snapshot" in proc.stderr


def test_subprocess_exit_codes_stable(tmp_path):
    state = str(tmp_path / "s.db")
    codes = []
    for _ in range(2):
        codes.append([
            subprocess.run(BAMBOO + ["add", "w", "0", "--state", state], capture_output=True).returncode,
            subprocess.run(BAMBOO + ["search", "w", "--state", state], capture_output=True).returncode,
            subprocess.run(BAMBOO + ["--bogus"], capture_output=True).returncode,
        ])
    assert codes == [[1, 2, 1], [1, 2, 1]]


def test_settings_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "bamboo.conf"
    cfg.write_text("# comment\nserver = 10.0.0.1:1\namax=99\npolicy=adjustable\n", encoding="utf-8")
    parser = cli.build_parser()
    args = parser.parse_args(["search", "w", "--server", "h:2"])
    args._config = cli.read_config_file(str(cfg))
    monkeypatch.setenv("BAMBOO_POLICY", "max")
    monkeypatch.delenv("BAMBOO_SERVER", raising=False)
    assert cli.resolve(args, "server") == "h:2"  # flag
    assert cli.resolve(args, "policy") == "max"  # env over file
    monkeypatch.delenv("BAMBOO_POLICY")
    assert cli.resolve(args, "policy") == "adjustable"  # file
    assert cli.resolve(args, "state") == "bamboo-state.db"  # default
    bad = tmp_path / "bad.conf"
    bad.write_text("novalue\n", encoding="utf-8")
    with pytest.raises(cli.UsageError):
        cli.read_config_file(str(bad))


def test_parse_helpers():
    assert cli.parse_file_id("0x1F") == 31 and cli.parse_file_id("1f") == 31
    assert cli.format_file_id(1) == "0x01" and cli.format_file_id(0xABC) == "0xabc"
    assert cli.parse_address("example:7878") == ("example", 7878)
    for bad in ("nport", "h:x"):
        with pytest.raises(cli.UsageError):
            cli.parse_address(bad)


def test_bench_conformance_command(capsys):
    assert cli.main(["bench", "conformance", "--steps", "300", "--keywords", "10"]) == 0
    assert "ok" in capsys.readouterr().out
