"""Command-line front end.

Subcommands: ``simulate``, ``discover``, ``fit``, ``eval`` and ``fixtures``.
Exit codes: 0 success, 2 usage error, 3 input error, 4 configuration error,
5 identification error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .catalog import FIXTURES, fixture_text, load_fixture
from .emit import load_pattern, pattern_to_json, to_dot
from .errors import ConfigError, IdentificationError, InputError
from .fit import fit_ml, fit_report
from .search import DiscoveryConfig, discover, recovery_metrics
from .sem import (
    cov_from_text,
    cov_to_text,
    data_from_csv,
    data_to_csv,
    implied_covariance,
    sample,
    sample_covariance,
    sem_from_text,
    sem_to_text,
)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_CONFIG, EXIT_IDENT = 0, 2, 3, 4, 5
ENV_OUT = "IMPURE_MM_OUT"
ENV_THREADS = "IMPURE_MM_THREADS"
FORMATS = ("dot", "json", "text")

log = logging.getLogger("impure_mm")


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load_model(source: str):
    if source in FIXTURES or not (Path(source).suffix or Path(source).exists()):
        # a bare name is taken as a fixture; load_fixture lists the choices
        return load_fixture(source)
    return sem_from_text(_read(source))


def _load_input(path: str):
    """A model (.sem or fixture name), data (.csv) or a covariance file."""
    if path in FIXTURES or path.endswith(".sem"):
        return _load_model(path)
    text = _read(path)
    if path.endswith(".csv"):
        return data_from_csv(text)
    return cov_from_text(text)


def _load_cov(path: str):
    if path.endswith(".csv"):
        return sample_covariance(data_from_csv(_read(path)))
    cov = cov_from_text(_read(path))
    if cov.n is None:
        raise ConfigError(f"{path}: fitting needs the sample size; set the n= header")
    return cov


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUT) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_value(field: dataclasses.Field, raw: str):
    if field.type in (bool, "bool"):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    kind = {"int": int, "float": float, "str": str}.get(field.type if isinstance(field.type, str) else field.type.__name__, str)
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r}") from None


def read_config_file(path: str) -> dict:
    fields = {f.name: f for f in dataclasses.fields(DiscoveryConfig)}
    out = {}
    for lineno, line in enumerate(_read(path).splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(fields[key], val)
    return out


def build_config(args) -> DiscoveryConfig:
    """Defaults, then the config file, then environment, then flags."""
    values = read_config_file(args.config) if args.config else {}
    env_threads = os.environ.get(ENV_THREADS)
    if env_threads:
        try:
            values["threads"] = int(env_threads)
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    for f in dataclasses.fields(DiscoveryConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = DiscoveryConfig(**values)
    cfg.validate()
    return cfg


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise InputError("--n must be at least 1")
    m = _load_model(args.source)
    out = _out_dir(args)
    stem = args.source if args.source in FIXTURES else Path(args.source).stem
    data = sample(m, args.n, args.seed)
    (out / f"{stem}_data.csv").write_text(data_to_csv(data))
    (out / f"{stem}.sem").write_text(fixture_text(args.source) if args.source in FIXTURES else sem_to_text(m))
    (out / f"{stem}_cov.txt").write_text(cov_to_text(implied_covariance(m)))
    print(f"wrote {args.n} rows over {len(data.names)} variables to {out}")
    return EXIT_OK


def cmd_discover(args) -> int:
    cfg = build_config(args)
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    bad = [f for f in formats if f not in FORMATS]
    if not formats or bad:
        raise ConfigError(f"--formats must list some of {FORMATS}")
    data = _load_input(args.input)
    pattern, report = discover(data, cfg)
    out = _out_dir(args)
    stem = Path(args.input).stem
    if "json" in formats:
        (out / f"{stem}_pattern.json").write_text(pattern_to_json(pattern))
    if "dot" in formats:
        (out / f"{stem}_pattern.dot").write_text(to_dot(pattern))
    if "text" in formats:
        (out / f"{stem}_report.txt").write_text(report.to_text())
    sys.stdout.write(pattern_to_json(pattern))
    return EXIT_OK


def cmd_fit(args) -> int:
    pattern = load_pattern(_read(args.pattern))
    cov = _load_cov(args.data)
    fitted = fit_ml(pattern, cov, starts=args.starts, seed=args.seed)
    text = fit_report(fitted, cov)
    if args.out:
        (_out_dir(args) / f"{Path(args.pattern).stem}_fit.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    pattern = load_pattern(_read(args.pattern))
    truth = _load_model(args.truth).graph
    missing = [y for y in pattern.observed if y not in truth.observed]
    if missing:
        raise InputError(f"pattern variables not in the true model: {', '.join(missing)}")
    metrics = recovery_metrics(pattern, truth)
    text = json.dumps(metrics, indent=2) + "\n"
    if args.out:
        (_out_dir(args) / f"{Path(args.pattern).stem}_eval.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for name in FIXTURES:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impure-mm", description="Learn impure measurement models from covariances.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample data from a fixture or SEM file")
    s.add_argument("source", help="fixture name or .sem file")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("discover", help="search for a measurement pattern")
    d.add_argument("input", help=".csv data, covariance file, .sem model or fixture name")
    d.add_argument("--mode", choices=("auto", "population", "sample"))
    d.add_argument("--alpha", type=float)
    d.add_argument("--population-tol", dest="population_tol", type=float)
    d.add_argument("--min-clique-size", dest="min_clique_size", type=int)
    d.add_argument("--screening-alpha", dest="screening_alpha", type=float)
    d.add_argument("--no-bic", dest="use_bic_augmentation", action="store_const", const=False)
    d.add_argument("--bonferroni", action="store_const", const=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--threads", type=int)
    d.add_argument("--config", help="key=value file; flags take precedence")
    d.add_argument("--formats", default="dot,json,text")
    d.add_argument("--out")
    d.set_defaults(func=cmd_discover)

    f = sub.add_parser("fit", help="maximum-likelihood fit of a pattern")
    f.add_argument("pattern", help="pattern as JSON or graph text")
    f.add_argument("data", help=".csv data or covariance file with n")
    f.add_argument("--starts", type=int, default=3)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="compare a pattern with a true model")
    e.add_argument("pattern")
    e.add_argument("truth", help=".sem file or fixture name")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("fixtures", help="list bundled example models")
    x.set_defaults(func=cmd_fixtures)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except IdentificationError as exc:
        print(f"identification error: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
