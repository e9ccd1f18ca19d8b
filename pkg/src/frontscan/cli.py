"""``frontscan`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error. Failures print one JSON object on stderr::

    {"error": "DataError", "exit_code": 2, "message": "missing block 12"}
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from .config import Config, GasTokenConfig
from .exceptions import ConfigError, DataError, FrontscanError, OracleError
from .records import ATTACK_KINDS, AttackRecord, read_attacks, read_ndjson, write_ndjson

log = logging.getLogger("frontscan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(FrontscanError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _error_line(exc: BaseException, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}, sort_keys=True)


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yield fh


# -- data access -------------------------------------------------------------------


def _snapshot(args, cfg: Config):
    from .ingest import FixtureSource, JsonRpcSource, load_prices_csv, load_snapshot

    fixture = args.fixture or cfg.data.fixture
    rpc = args.rpc or cfg.data.rpc_url
    prices_path = args.prices or cfg.data.prices
    prices = load_prices_csv(prices_path) if prices_path else None
    if fixture:
        path = Path(fixture)
        if not path.exists():
            raise DataError(f"fixture not found: {fixture}")
        src = FixtureSource.from_path(path)
        if not src.blocks:
            raise DataError(f"{fixture}: fixture contains no blocks")
        lo = args.from_block if args.from_block is not None else min(src.blocks)
        hi = args.to_block if args.to_block is not None else max(src.blocks)
    elif rpc:
        if args.from_block is None or args.to_block is None:
            raise UsageError("--from and --to are required with --rpc")
        src = JsonRpcSource(rpc, cfg.data.batch_size, cfg.data.retries, cfg.data.timeout)
        lo, hi = args.from_block, args.to_block
    else:
        raise UsageError("no chain data: pass --fixture or --rpc (or set [data] in the config)")
    if lo > hi:
        raise UsageError(f"--from {lo} is after --to {hi}")
    return load_snapshot(src, lo, hi, prices=prices, n_workers=cfg.n_jobs)


def _gas_tokens(args, cfg: Config) -> GasTokenConfig:
    path = getattr(args, "gas_token_config", None)
    if not path:
        return cfg.gas_tokens
    return Config.load(path).gas_tokens


def _overlay(section, args, names: Sequence[str]):
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(section, name, value)
    return section


def _detector(kind: str, args, cfg: Config):
    if kind == "displacement":
        from .displacement import DisplacementDetector

        c = _overlay(cfg.displacement, args, ("window", "stride", "threshold", "size_ratio"))
        return DisplacementDetector(n_jobs=cfg.n_jobs, **asdict(c))
    if kind == "insertion":
        from .insertion import InsertionDetector

        c = _overlay(cfg.insertion, args, ("amount_tolerance", "pairing"))
        return InsertionDetector(gas_tokens=_gas_tokens(args, cfg), n_jobs=cfg.n_jobs, **asdict(c))
    from .suppression import SuppressionDetector

    c = _overlay(cfg.suppression, args, ("min_gas", "gas_ratio", "loop_count", "max_gap"))
    return SuppressionDetector(n_jobs=cfg.n_jobs, **asdict(c))


def _run_detector(det, snapshot):
    try:
        return det.fit(snapshot).attacks_
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _read_all_attacks(paths: Sequence[str]) -> list[AttackRecord]:
    out = []
    for p in paths:
        if not Path(p).exists():
            raise DataError(f"attack file not found: {p}")
        out.extend(read_attacks(p))
    return out


def _clusters_for(args, attacks):
    from .graph import AttackerClusterer
    from .ingest import read_code_map

    if getattr(args, "clusters", None):
        return [rec for rec in read_ndjson(args.clusters) if rec.get("kind") == "cluster"]
    code = read_code_map(args.code) if getattr(args, "code", None) else {}
    return AttackerClusterer().fit(attacks, code=code).clusters_


# -- commands -----------------------------------------------------------------------


def cmd_synth(args, cfg: Config) -> int:
    from .synthetic import generate_fixture, parse_plant, write_fixture

    try:
        plant = parse_plant(args.plant)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        src, manifest = generate_fixture(args.seed, args.blocks, plant, negatives=not args.no_negatives)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    fixture, man = write_fixture(args.out, src, manifest)
    log.info("wrote %s and %s", fixture, man)
    print(json.dumps({"fixture": str(fixture), "manifest": str(man), "planted": len(manifest.positives())}, sort_keys=True))
    return EXIT_OK


def cmd_scan(args, cfg: Config) -> int:
    snapshot = _snapshot(args, cfg)
    attacks = _run_detector(_detector(args.kind, args, cfg), snapshot)
    with _output(args.out) as fh:
        write_ndjson(attacks, fh)
    log.info("%d %s attacks", len(attacks), args.kind)
    return EXIT_OK


def cmd_cluster(args, cfg: Config) -> int:
    from .graph import AttackerClusterer
    from .ingest import read_code_map

    attacks = _read_all_attacks(args.attacks)
    code = read_code_map(args.code) if args.code else {}
    model = AttackerClusterer().fit(attacks, code=code)
    with _output(args.out) as fh:
        write_ndjson(model.clusters_, fh)
    return EXIT_OK


def cmd_compete(args, cfg: Config) -> int:
    from .insertion import detect_competition
    from .report import cluster_labels

    attacks = _read_all_attacks(args.attacks)
    labels = cluster_labels(_clusters_for(args, attacks))
    with _output(args.out) as fh:
        write_ndjson(detect_competition(attacks, labels), fh)
    return EXIT_OK


def cmd_report(args, cfg: Config) -> int:
    from .report import (
        distribution_rows,
        report_yearly_and_hourly,
        write_distribution_csv,
        write_hourly_csv,
        write_yearly_csv,
    )

    attacks = _read_all_attacks(args.attacks)
    clusters = _clusters_for(args, attacks) if (args.clusters or args.code) else []
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = distribution_rows(attacks, clusters)
    matrix, yearly = report_yearly_and_hourly(attacks)
    for name, writer, payload in (
        ("distributions.csv", write_distribution_csv, rows),
        ("hourly.csv", write_hourly_csv, matrix),
        ("yearly.csv", write_yearly_csv, yearly),
    ):
        with open(out / name, "w", encoding="utf-8", newline="") as fh:
            writer(fh, payload)
    write_distribution_csv(sys.stdout, rows)
    return EXIT_OK


def cmd_score(args, cfg: Config) -> int:
    from .report import score_against_manifest
    from .synthetic import GroundTruthManifest

    attacks = _read_all_attacks(args.attacks)
    if not Path(args.manifest).exists():
        raise DataError(f"manifest not found: {args.manifest}")
    try:
        manifest = GroundTruthManifest.load(args.manifest)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{args.manifest}: {exc}") from exc
    report = score_against_manifest(attacks, manifest, kinds=args.kinds or None)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def cmd_run(args, cfg: Config) -> int:
    """Scan all kinds, cluster, find competition and write reports into one directory."""
    from .graph import AttackerClusterer
    from .insertion import detect_competition
    from .report import (
        cluster_labels,
        distribution_rows,
        report_yearly_and_hourly,
        write_distribution_csv,
        write_hourly_csv,
        write_yearly_csv,
    )

    snapshot = _snapshot(args, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    everything = []
    for kind in ATTACK_KINDS:
        attacks = _run_detector(_detector(kind, args, cfg), snapshot)
        with open(out / f"{kind}.ndjson", "w", encoding="utf-8", newline="\n") as fh:
            write_ndjson(attacks, fh)
        everything.extend(AttackRecord.of(a) for a in attacks)
    model = AttackerClusterer().fit(everything, code=snapshot.code)
    with open(out / "clusters.ndjson", "w", encoding="utf-8", newline="\n") as fh:
        write_ndjson(model.clusters_, fh)
    with open(out / "competition.ndjson", "w", encoding="utf-8", newline="\n") as fh:
        write_ndjson(detect_competition(everything, cluster_labels(model.clusters_)), fh)
    matrix, yearly = report_yearly_and_hourly(everything)
    with open(out / "distributions.csv", "w", encoding="utf-8", newline="") as fh:
        write_distribution_csv(fh, distribution_rows(everything, model.clusters_))
    with open(out / "hourly.csv", "w", encoding="utf-8", newline="") as fh:
        write_hourly_csv(fh, matrix)
    with open(out / "yearly.csv", "w", encoding="utf-8", newline="") as fh:
        write_yearly_csv(fh, yearly)
    counts = {k: sum(1 for r in everything if r.kind == k) for k in ATTACK_KINDS}
    print(json.dumps({"attacks": counts, "clusters": len(model.clusters_), "out_dir": str(out)}, sort_keys=True))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_source_args(p):
    p.add_argument("--fixture", help="NDJSON chain fixture")
    p.add_argument("--rpc", help="JSON-RPC endpoint of an archive node")
    p.add_argument("--from", dest="from_block", type=int)
    p.add_argument("--to", dest="to_block", type=int)
    p.add_argument("--prices", help="CSV of date,eth_usd rows")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frontscan", description="Detect frontrunning attacks in transaction history.")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--jobs", type=int, help="worker threads (overrides config n_jobs)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic fixture and its manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, default=2000)
    p.add_argument("--plant", default="insertion=5,displacement=3,suppression=1")
    p.add_argument("--no-negatives", action="store_true", help="skip near-miss negative controls")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scan", help="run one detector")
    kinds = p.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in ATTACK_KINDS:
        k = kinds.add_parser(kind)
        _add_source_args(k)
        k.add_argument("--out", help="NDJSON output path (default stdout)")
        if kind == "displacement":
            k.add_argument("--window", type=int)
            k.add_argument("--stride", type=int)
            k.add_argument("--threshold", type=float)
            k.add_argument("--size-ratio", dest="size_ratio", type=float)
        elif kind == "insertion":
            k.add_argument("--gas-token-config", help="TOML file with a [gas_tokens] table")
            k.add_argument("--amount-tolerance", dest="amount_tolerance", type=float)
            k.add_argument("--pairing", choices=("all", "earliest"))
        else:
            k.add_argument("--min-gas", dest="min_gas", type=int)
            k.add_argument("--gas-ratio", dest="gas_ratio", type=float)
            k.add_argument("--loop-count", dest="loop_count", type=int)
            k.add_argument("--max-gap", dest="max_gap", type=int)
        k.set_defaults(func=cmd_scan)

    p = sub.add_parser("cluster", help="group attacker accounts and bots")
    p.add_argument("--attacks", nargs="+", required=True)
    p.add_argument("--code", help="NDJSON with code records")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compete", help="find insertion attacks competing for one victim")
    p.add_argument("--attacks", nargs="+", required=True)
    p.add_argument("--clusters", help="cluster NDJSON from the cluster command")
    p.add_argument("--code", help="NDJSON with code records (clusters are computed when --clusters is absent)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compete)

    p = sub.add_parser("report", help="distribution tables and time histograms")
    p.add_argument("--attacks", nargs="+", required=True)
    p.add_argument("--clusters")
    p.add_argument("--code")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("score", help="compare detected attacks with a manifest")
    p.add_argument("--attacks", nargs="+", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--kinds", nargs="+", choices=ATTACK_KINDS, help="score only these kinds")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("run", help="full pipeline: scan, cluster, compete, report")
    _add_source_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = Config.load(args.config)
        if args.jobs is not None:
            if args.jobs < 1:
                raise UsageError("--jobs must be at least 1")
            cfg.n_jobs = args.jobs
        return args.func(args, cfg)
    except SystemExit as exc:
        # argparse --help exits 0
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        err, code = exc, EXIT_USAGE
    except (DataError, OracleError, OSError) as exc:
        err, code = exc, EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        err, code = exc, EXIT_INTERNAL
    print(_error_line(err, code), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
