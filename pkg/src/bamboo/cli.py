"""Command line: ``bamboo serve`` runs the daemon, the other subcommands act
as the client.

Settings resolve as flag > ``BAMBOO_<NAME>`` environment variable > config
file (``--config``, ``key=value`` lines) > default.  Exit codes: 0 ok,
1 usage, 2 state, 3 network, 4 protocol/epoch.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
import time

from . import bench, group
from .client import Policy
from .errors import BambooError, ConfigError
from .oracle import run_conformance

log = logging.getLogger("bamboo")

EXIT_USAGE = 1

DEFAULTS = {
    "server": "127.0.0.1:7878",
    "listen": "127.0.0.1:7878",
    "state": "bamboo-state.db",
    "data_dir": "bamboo-data",
    "amax": "410000",
    "x": "2",
    "policy": "max",
    "workers": "1",
    "max_frame": str(4 * 1024 * 1024),
    "fingerprint": "",
    "rotate_after": "",
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{n}: expected key=value")
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return out


def resolve(args: argparse.Namespace, name: str) -> str:
    v = getattr(args, name, None)
    if v is not None:
        return str(v)
    env = os.environ.get("BAMBOO_" + name.upper())
    if env is not None:
        return env
    if name in args._config:
        return args._config[name]
    return DEFAULTS[name]


def _int(args, name: str, minimum: int) -> int:
    raw = resolve(args, name)
    try:
        v = int(raw)
    except ValueError:
        raise UsageError(f"--{name.replace('_', '-')} must be an integer, got {raw!r}") from None
    if v < minimum:
        raise UsageError(f"--{name.replace('_', '-')} must be at least {minimum}")
    return v


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def parse_file_id(text: str) -> int:
    """Hex identifier, optional 0x prefix; zero is reserved."""
    params = group.pgen()
    s = text[2:] if text.lower().startswith("0x") else text
    try:
        v = int(s, 16)
    except ValueError:
        raise UsageError(f"file id must be hexadecimal, got {text!r}") from None
    if v == 0:
        raise UsageError("file id 0 is reserved")
    if v >> params.id_bits:
        raise UsageError(f"file id exceeds {params.id_bits} bits")
    return v


def format_file_id(v: int) -> str:
    return f"{v:#04x}"


# -- client commands ----------------------------------------------------------


def _session(args):
    from .service import RemoteServer
    from .session import BambooClient
    from .state_store import open_state

    key, state = open_state(resolve(args, "state"))
    policy = resolve(args, "policy")
    try:
        policy = Policy(policy)
    except ValueError:
        raise UsageError(f"--policy must be max or adjustable, got {policy!r}") from None
    fp = resolve(args, "fingerprint") or None
    remote = RemoteServer(parse_address(resolve(args, "server")), fingerprint=fp,
                          max_frame=_int(args, "max_frame", 1024))
    session = BambooClient(key, state, remote, policy)
    session.recover()
    rotate_after = resolve(args, "rotate_after")
    if rotate_after and args.command != "rotate":
        last = state.store.get_rotated_at()
        if last is None:
            state.store.put_rotated_at(time.time())
        elif time.time() - last > float(rotate_after):
            old, new = session.rotate()
            log.info("idle timer rotated epoch %d -> %d", old, new)
    return session


def cmd_init(args) -> int:
    from .state_store import create_state

    amax = _int(args, "amax", 1)
    x = _int(args, "x", 2)
    key, state = create_state(resolve(args, "state"), 128, amax, x)
    state.store.close()
    print(f"initialized {resolve(args, 'state')} (epoch {key.epoch}, a_max={amax}, x={x})")
    return 0


def cmd_update(args) -> int:
    file_id = parse_file_id(args.id)
    session = _session(args)
    if args.command == "add":
        session.add(args.keyword, file_id)
    else:
        session.delete(args.keyword, file_id)
    return 0


def cmd_search(args) -> int:
    session = _session(args)
    for file_id in sorted(session.search(args.keyword)):
        print(format_file_id(file_id))
    return 0


def cmd_rotate(args) -> int:
    session = _session(args)
    old, new = session.rotate()
    print(f"{old} -> {new}")
    return 0


def read_ingest(lines):
    """``keyword<TAB>hex-id`` lines -> [(keyword, id)]."""
    pairs = []
    for n, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise UsageError(f"line {n}: expected keyword<TAB>hex-id")
        w, fid = line.split("\t", 1)
        pairs.append((w, parse_file_id(fid.strip())))
    return pairs


def cmd_ingest(args) -> int:
    try:
        with open(args.file, encoding="utf-8") as f:
            pairs = read_ingest(f)
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc}") from exc
    session = _session(args)
    n = session.ingest(pairs)
    print(f"ingested {n} entries")
    return 0


def cmd_bench(args) -> int:
    if args.suite == "conformance":
        failed = 0
        for i in range(args.scripts):
            seed = args.seed + i
            rep = run_conformance(seed, args.steps, args.keywords)
            status = "ok" if rep.ok else f"DIVERGED at step {rep.first_divergence.step}"
            print(f"seed={seed} steps={rep.steps} searches={rep.searches} rotations={rep.rotations} {status}")
            failed += not rep.ok
        return 4 if failed else 0
    if args.suite not in bench.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}")
    metrics = bench.run_scaling(args.suite, progress=lambda m: print(f"# {m}", file=sys.stderr))
    text = bench.to_csv(metrics)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


# -- daemon -------------------------------------------------------------------


def cmd_serve(args) -> int:
    from .server import EncryptedDatabase
    from .service import BambooTCPServer, identity_fingerprint, load_identity
    from .storage import FileBackend

    data_dir = resolve(args, "data_dir")
    workers = _int(args, "workers", 1)
    os.makedirs(data_dir, exist_ok=True)
    backend = FileBackend(data_dir)
    db = EncryptedDatabase(backend=backend)
    identity = load_identity(data_dir)
    try:
        srv = BambooTCPServer(parse_address(resolve(args, "listen")), db, identity, workers,
                              _int(args, "max_frame", 1024))
    except OSError as exc:
        from .errors import TransportError

        raise TransportError(f"cannot listen: {exc}") from exc
    host, port = srv.server_address[:2]
    print(f"listening on {host}:{port} epoch={db.epoch} records={len(db)}", flush=True)
    print(f"fingerprint {identity_fingerprint(identity)}", flush=True)

    def stop(signum, frame):
        threading.Thread(target=srv.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    try:
        srv.serve_forever()
    finally:
        srv.server_close()
        db.close()
        print("database flushed", flush=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bamboo", description="Searchable encryption with key update.")
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def client_flags(sp):
        sp.add_argument("--server")
        sp.add_argument("--state")
        sp.add_argument("--fingerprint")
        sp.add_argument("--max-frame", dest="max_frame")
        sp.add_argument("--rotate-after", dest="rotate_after", help="rotate first if the last rotation is older (s)")
        sp.add_argument("--policy", choices=[p.value for p in Policy])

    sp = sub.add_parser("serve", help="run the server daemon")
    sp.add_argument("--listen")
    sp.add_argument("--data-dir", dest="data_dir")
    sp.add_argument("--workers")
    sp.add_argument("--max-frame", dest="max_frame")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("init", help="create a client state file")
    sp.add_argument("--state")
    sp.add_argument("--amax")
    sp.add_argument("--x")
    sp.set_defaults(func=cmd_init)

    for name in ("add", "del"):
        sp = sub.add_parser(name, help=f"{name} a (keyword, file id) entry")
        sp.add_argument("keyword")
        sp.add_argument("id", help="hex file identifier")
        client_flags(sp)
        sp.set_defaults(func=cmd_update)

    sp = sub.add_parser("search", help="list file ids matching a keyword")
    sp.add_argument("keyword")
    client_flags(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("rotate", help="rotate the key of the whole database")
    client_flags(sp)
    sp.set_defaults(func=cmd_rotate)

    sp = sub.add_parser("ingest", help="bulk-load keyword<TAB>hex-id lines")
    sp.add_argument("file")
    client_flags(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("bench", help="run a benchmark suite (desk, small, smoke, conformance)")
    sp.add_argument("suite")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--scripts", type=int, default=1)
    sp.add_argument("--steps", type=int, default=10_000)
    sp.add_argument("--keywords", type=int, default=100)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args._config = read_config_file(args.config or os.environ.get("BAMBOO_CONFIG"))
        return args.func(args)
    except BambooError as exc:
        print(f"bamboo: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
