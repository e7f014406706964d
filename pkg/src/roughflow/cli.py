"""Command-line experiment runner.

    roughflow <kind> [--config FILE] [--out DIR] [--seed N] [--tolerance X]
    roughflow list-fixtures [--fixture-dir DIR]

Without ``--config`` the bundled example config for the kind is used.
Exit codes: 0 all assertions pass, 1 an assertion failed, 2 config error,
3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from importlib import resources
from typing import List, Optional

import yaml

from .experiments import EXPERIMENTS, ConfigError, run_experiment
from .flows import BlowUpError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3

BUILTIN_DRIVERS = {
    "pure-area": "x_{s,t} = 1 + (t-s) A with antisymmetric A, p = 2",
    "piecewise-linear": "signature lift of a piecewise-linear path (knots inline or CSV)",
    "smooth": "signature lift of a finely sampled smooth curve, p = 1",
}
BUILTIN_FIELDS = {
    "linear": "f_i(x) = M_i x with matrices from the config",
    "polynomial": "polynomial components from coefficient tables",
    "rotation": "rotation generator (a) and shear (b) on R^2",
    "vanderpol": "Van der Pol drift (a) and a polynomial forcing (b) on R^2",
}


def _fixture_files():
    root = resources.files("roughflow") / "fixtures"
    return sorted((p for p in root.iterdir() if p.name.endswith((".yaml", ".txt", ".csv"))), key=lambda p: p.name)


def _describe(text: str, name: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("# "):
            return line[2:]
        if line.startswith("description:"):
            return line.split(":", 1)[1].strip().strip('"')
    return name


def list_fixtures(fixture_dir: Optional[str] = None, out=None) -> List[str]:
    """Print bundled drivers, field families and fixture files; return the fixture names."""
    out = out or sys.stdout
    names = []
    out.write("drivers:\n")
    for k, v in BUILTIN_DRIVERS.items():
        out.write(f"  {k}: {v}\n")
    out.write("fields:\n")
    for k, v in BUILTIN_FIELDS.items():
        out.write(f"  {k}: {v}\n")
    out.write("fixtures:\n")
    for p in _fixture_files():
        out.write(f"  {p.name}: {_describe(p.read_text(), p.name)}\n")
        names.append(p.name)
    if fixture_dir:
        extra = sorted(f for f in os.listdir(fixture_dir) if f.endswith((".yaml", ".txt", ".csv")))
        if extra:
            out.write(f"custom ({fixture_dir}):\n")
        for f in extra:
            with open(os.path.join(fixture_dir, f)) as fh:
                out.write(f"  {f}: {_describe(fh.read(), f)}\n")
            names.append(f)
    return names


def load_config(kind: str, path: Optional[str]):
    try:
        if path is None:
            text = (resources.files("roughflow") / "fixtures" / f"{kind}.yaml").read_text()
            base = "."
        else:
            with open(path) as fh:
                text = fh.read()
            base = os.path.dirname(os.path.abspath(path))
        cfg = yaml.safe_load(text) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg.pop("description", None)
    return cfg, base


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _atomic_write(path: str, text: str):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughflow", description="rough-path algebra and almost-flow experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="YAML config (default: bundled example)")
        p.add_argument("--out", default="roughflow-out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tolerance", type=float, default=None, help="override the pass threshold")
    lf = sub.add_parser("list-fixtures", help="list bundled drivers, fields and fixtures")
    lf.add_argument("--fixture-dir", default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-fixtures":
        list_fixtures(args.fixture_dir)
        return EXIT_OK
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, base = load_config(args.command, args.config)
        result = run_experiment(args.command, cfg, args.seed, args.tolerance, base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    os.makedirs(args.out, exist_ok=True)
    stem = args.command
    _atomic_write(os.path.join(args.out, f"{stem}.csv"), _csv_text(result.header, result.rows))
    for name, (header, rows) in result.extra_tables.items():
        _atomic_write(os.path.join(args.out, f"{stem}-{name}.csv"), _csv_text(header, rows))
    verdict = "PASS" if result.passed else "FAIL"
    lines = [f"{stem}: {verdict}"] + result.summary
    _atomic_write(os.path.join(args.out, f"{stem}-summary.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
