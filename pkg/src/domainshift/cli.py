"""Command-line entry point.

Subcommands: forward, sample, sweep-t1, sweep-order, scorefield, train.
Global flags: --config <path.json>, --seed <u64>, --out <dir>.  Exit
code 0 on success; on failure a machine-readable JSON object
{"error": <class>, "message": <text>} is written to stderr and the exit
code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DomainShiftError
from .harness import (
    ExperimentConfig,
    cmd_forward,
    cmd_sample,
    cmd_scorefield,
    cmd_sweep_order,
    cmd_sweep_t1,
    cmd_train,
)

_COMMANDS = {
    "forward": cmd_forward,
    "sample": cmd_sample,
    "sweep-t1": cmd_sweep_t1,
    "sweep-order": cmd_sweep_order,
    "scorefield": cmd_scorefield,
    "train": cmd_train,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainshift",
        description="Domain-shift diffusion experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, default=None,
                         help="experiment config JSON (defaults apply if omitted)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--out", type=Path, required=True,
                         help="output directory")
    return parser


def _load_config(path: Path | None, seed: int | None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw, seed=seed)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config, args.seed)
        summary = _COMMANDS[args.command](cfg, args.out)
    except DomainShiftError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    except OSError as exc:
        json.dump({"error": "IOError", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    print(json.dumps({"out": str(args.out),
                      "metrics": summary["metrics"]}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
