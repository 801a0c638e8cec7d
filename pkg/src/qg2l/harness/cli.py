"""Command-line entry point: ``qg2l {simulate,couple,verify,constants,replay}``.

Exit codes: 0 success, 2 invalid input, 3 numerical blow-up, 4 failed
condition check (including replay mismatches).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

from .commands import COMMANDS, EXIT_CONDITION, EXIT_INVALID, EXIT_OK, Context
from .config import ConfigError, ExperimentConfig, load_config, loads, parse_override
from .manifest import Output, compare_artifacts, read_manifest, write_manifest


def _common(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="experiment config file")
    p.add_argument("--seed", type=int, metavar="U64", default=d, help="master seed (env QG2_SEED)")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory (env QG2_OUT)")
    p.add_argument("--threads", type=int, metavar="N", default=d, help="worker threads")
    p.add_argument("--quiet", action="store_true", default=d, help="suppress progress output")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=d,
                   help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qg2l", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("simulate", "integrate trajectories and write time series"),
                        ("couple", "run coupled pairs and check synchronization"),
                        ("verify", "check the ergodicity assumptions and measure contraction"),
                        ("constants", "print the explicit constants and condition flags")]:
        _common(sub.add_parser(name, help=help_), suppress=True)
    rp = sub.add_parser("replay", help="re-run a manifest and compare checksums")
    _common(rp, suppress=True)
    rp.add_argument("--manifest", required=True, metavar="PATH", help="manifest file or run directory")
    return parser


def _resolve_seed(args, cfg: ExperimentConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QG2_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("QG2_SEED", f"not an integer: {env!r}") from None
    return cfg["run.seed"]


def _resolve_out(args, cfg: ExperimentConfig) -> str:
    return args.out or os.environ.get("QG2_OUT") or cfg["output.dir"]


def _apply_overrides(cfg: ExperimentConfig, items) -> ExperimentConfig:
    if not items:
        return cfg
    return cfg.with_overrides(dict(parse_override(i) for i in items))


def execute(command: str, cfg: ExperimentConfig, out_dir, seed: int, threads: int,
            quiet: bool = False) -> tuple[int, dict]:
    """Run one command and write its manifest; returns ``(exit code, manifest)``."""
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    out = Output(Path(out_dir), set(cfg["output.formats"]))
    start = time.time()
    started = datetime.now(timezone.utc).isoformat()
    code = COMMANDS[command](Context(cfg, out, seed, threads, quiet))
    wall = {"start": started, "seconds": time.time() - start}
    m = write_manifest(out, command=command, config_text=cfg.dump(), config_hash=cfg.hash,
                       seed=seed, threads=threads, wall=wall, exit_code=code)
    return code, m


def replay(manifest_path, out_dir=None, seed=None, threads=None, overrides=None,
           quiet: bool = False) -> tuple[int, list[dict]]:
    m = read_manifest(manifest_path)
    cfg = _apply_overrides(loads(m["config"]), overrides)
    seed = m["seeds"]["master"] if seed is None else seed
    threads = m["threads"] if threads is None else threads
    out_dir = out_dir or tempfile.mkdtemp(prefix="qg2l-replay-")
    _, m2 = execute(m["command"], cfg, out_dir, seed, threads, quiet=True)
    diffs = compare_artifacts(m["artifacts"], m2["artifacts"])
    if not quiet:
        if diffs:
            for d in diffs:
                print(f"MISMATCH {d['artifact']}: expected {d['expected']} got {d['actual']}")
        else:
            print(f"replay ok: {len(m['artifacts'])} artifacts identical")
    return (EXIT_OK if not diffs else EXIT_CONDITION), diffs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            code, _ = replay(args.manifest, args.out, args.seed, args.threads, args.set, args.quiet)
            return code
        if not args.config:
            raise ConfigError("--config", "a config file is required")
        cfg = _apply_overrides(load_config(args.config), args.set)
        seed = _resolve_seed(args, cfg)
        threads = args.threads if args.threads is not None else cfg.threads
        code, _ = execute(args.command, cfg, _resolve_out(args, cfg), seed, threads, bool(args.quiet))
        return code
    except ConfigError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
