"""Distribution tables, time histograms and manifest scoring over attack records."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from typing import IO, Iterable, Mapping, Optional, Sequence

from .chain import WEI_PER_ETH, WEI_PER_GWEI
from .records import ATTACK_KINDS, AttackRecord
from .synthetic import GroundTruthManifest

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
SUMMARY_FIELDS = ("mean", "std", "min", "q25", "q50", "q75", "max")
SUMMARY_HEADER = ("mean", "std", "min", "25%", "50%", "75%", "max")

# profits closer than this are treated as equal when scoring (1e-9 ETH)
PROFIT_TOLERANCE_WEI = 10**9


@dataclass(frozen=True)
class DistributionSummary:
    count: int
    mean: Decimal
    std: Decimal
    min: Decimal
    q25: Decimal
    q50: Decimal
    q75: Decimal
    max: Decimal

    def values(self) -> tuple[Decimal, ...]:
        return tuple(getattr(self, f) for f in SUMMARY_FIELDS)

    def render(self) -> tuple[str, ...]:
        return tuple(fmt_decimal(v) for v in self.values())


def fmt_decimal(value: Decimal) -> str:
    """Two decimals, half-up, with thousands separators."""
    return f"{Decimal(value).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP):,.2f}"


def quantile(ordered: Sequence[Decimal], q: Decimal) -> Decimal:
    """Linear interpolation between order statistics at rank ``(n - 1) * q``."""
    pos = (len(ordered) - 1) * q
    lo = int(pos)
    frac = pos - lo
    if lo + 1 >= len(ordered) or frac == 0:
        return ordered[lo]
    return ordered[lo] + (ordered[lo + 1] - ordered[lo]) * frac


def summarize(values: Iterable) -> DistributionSummary:
    """Mean, population std, min, quartiles and max."""
    data = sorted(Decimal(str(v)) if isinstance(v, float) else Decimal(v) for v in values)
    if not data:
        raise ValueError("cannot summarize an empty sequence")
    n = len(data)
    with localcontext() as ctx:
        ctx.prec = 50
        mean = sum(data, Decimal(0)) / n
        var = sum(((x - mean) ** 2 for x in data), Decimal(0)) / n
        std = var.sqrt()
        qs = [quantile(data, Decimal(q) / 4) for q in (1, 2, 3)]
    return DistributionSummary(n, mean, std, data[0], qs[0], qs[1], qs[2], data[-1])


# -- per-kind metrics ------------------------------------------------------------


def _eth(wei) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(int(wei)) / WEI_PER_ETH


def _gwei(wei) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(int(wei)) / WEI_PER_GWEI


def _money(rec: AttackRecord) -> dict:
    return {
        "cost_eth": _eth(rec["cost_wei"]),
        "profit_eth": _eth(rec["profit_wei"]),
        "cost_usd": rec.cost_usd,
        "profit_usd": rec.profit_usd,
    }


def attack_metrics(rec: AttackRecord) -> dict[str, Decimal]:
    """Numeric columns summarized for one attack kind."""
    out: dict[str, Decimal] = {}
    if rec.kind == "displacement":
        out["gas_price_delta_gwei"] = _gwei(rec["gas_price_delta_wei"])
        out["block_delta"] = Decimal(rec["block_delta"])
    elif rec.kind == "insertion":
        out["gas_price_delta1_gwei"] = _gwei(rec["gas_price_delta1_wei"])
        out["gas_price_delta2_gwei"] = _gwei(rec["gas_price_delta2_wei"])
    elif rec.kind == "suppression":
        out["rounds"] = Decimal(rec["round_count"])
        out["blocks_stuffed"] = Decimal(rec["blocks_stuffed"])
        out["tx_count"] = Decimal(rec["tx_count"])
    out.update(_money(rec))
    return out


def distribution_rows(attacks: Iterable, clusters: Iterable = ()) -> list[list[str]]:
    """Rows ``[kind, metric, count, mean, std, min, 25%, 50%, 75%, max]``."""
    by_kind: dict[str, list[dict]] = {}
    for a in attacks:
        rec = AttackRecord.of(a)
        by_kind.setdefault(rec.kind, []).append(attack_metrics(rec))
    cluster_metrics = []
    for c in clusters:
        d = c.to_dict() if hasattr(c, "to_dict") else dict(c)
        cluster_metrics.append(
            {
                "attacks": Decimal(d["attack_count"]),
                "accounts": Decimal(len(d["accounts"])),
                "bots": Decimal(len(d["bots"])),
                "profit_eth": _eth(d["profit_wei"]),
                "profit_usd": Decimal(d["profit_usd"]),
            }
        )
    if cluster_metrics:
        by_kind["cluster"] = cluster_metrics

    rows = []
    for kind in [k for k in (*ATTACK_KINDS, "cluster") if k in by_kind]:
        metrics = by_kind[kind]
        for name in metrics[0]:
            s = summarize(m[name] for m in metrics)
            rows.append([kind, name, str(s.count), *s.render()])
    return rows


def write_distribution_csv(fh: IO[str], rows: Sequence[Sequence[str]]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["kind", "metric", "count", *SUMMARY_HEADER])
    w.writerows(rows)


# -- time histograms ---------------------------------------------------------------


def report_yearly_and_hourly(attacks: Iterable) -> tuple[list[list[int]], list[tuple[int, int, Decimal]]]:
    """Weekday x hour counts (UTC, Monday first) and ``(year, count, percent)`` rows."""
    matrix = [[0] * 24 for _ in WEEKDAYS]
    years: dict[int, int] = {}
    total = 0
    for a in attacks:
        rec = AttackRecord.of(a)
        when = dt.datetime.fromtimestamp(rec.timestamp, tz=dt.timezone.utc)
        matrix[when.weekday()][when.hour] += 1
        years[when.year] = years.get(when.year, 0) + 1
        total += 1
    yearly = [
        (y, n, (Decimal(100) * n / total).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
        for y, n in sorted(years.items())
    ]
    return matrix, yearly


def write_hourly_csv(fh: IO[str], matrix: Sequence[Sequence[int]]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["weekday", *range(24)])
    for day, row in zip(WEEKDAYS, matrix):
        w.writerow([day, *row])


def write_yearly_csv(fh: IO[str], yearly: Sequence[tuple[int, int, Decimal]]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["year", "count", "percent"])
    for year, n, pct in yearly:
        w.writerow([year, n, f"{pct:.2f}"])


# -- scoring ------------------------------------------------------------------------


@dataclass
class KindScore:
    planted: int = 0
    detected: int = 0
    matched: int = 0
    missed: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)
    negatives_detected: list[str] = field(default_factory=list)
    max_profit_error_wei: int = 0
    max_relative_profit_error: Decimal = Decimal(0)

    @property
    def precision(self) -> float:
        return self.matched / self.detected if self.detected else 1.0

    @property
    def recall(self) -> float:
        return self.matched / self.planted if self.planted else 1.0

    def to_dict(self) -> dict:
        return {
            "planted": self.planted,
            "detected": self.detected,
            "matched": self.matched,
            "precision": self.precision,
            "recall": self.recall,
            "missed": sorted(self.missed),
            "unexpected": sorted(self.unexpected),
            "negatives_detected": sorted(self.negatives_detected),
            "max_profit_error_wei": str(self.max_profit_error_wei),
            "profit_error": str(self.max_relative_profit_error),
        }


@dataclass
class ScoreReport:
    kinds: dict[str, KindScore]
    unmatched_kinds: list[str]

    @property
    def precision(self) -> float:
        detected = sum(k.detected for k in self.kinds.values())
        return sum(k.matched for k in self.kinds.values()) / detected if detected else 1.0

    @property
    def recall(self) -> float:
        planted = sum(k.planted for k in self.kinds.values())
        return sum(k.matched for k in self.kinds.values()) / planted if planted else 1.0

    @property
    def profit_error(self) -> Decimal:
        return max((k.max_relative_profit_error for k in self.kinds.values()), default=Decimal(0))

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "profit_error": str(self.profit_error),
            "kinds": {k: v.to_dict() for k, v in sorted(self.kinds.items())},
            "unmatched_kinds": self.unmatched_kinds,
        }


def score_against_manifest(
    attacks: Iterable,
    manifest: GroundTruthManifest,
    kinds: Optional[Iterable[str]] = None,
    tolerance_wei: int = PROFIT_TOLERANCE_WEI,
) -> ScoreReport:
    """Precision, recall and profit error of detected attacks against planted ground truth.

    Attacks are matched on their id. ``kinds`` restricts scoring to the
    scanners that were actually run; by default every kind seen in either
    input is scored. Profit differences within ``tolerance_wei`` count as zero.
    """
    records = [AttackRecord.of(a) for a in attacks]
    seen_kinds = {r.kind for r in records}
    planted_kinds = manifest.kinds()
    scope = set(kinds) if kinds is not None else seen_kinds | planted_kinds
    unmatched = sorted(seen_kinds - planted_kinds)

    report = ScoreReport({k: KindScore() for k in sorted(scope)}, unmatched)
    negatives = {p.key for p in manifest.negatives()}
    for kind, score in report.kinds.items():
        expected = {p.key: p for p in manifest.positives(kind)}
        found = {r.attack_id: r for r in records if r.kind == kind}
        score.planted, score.detected = len(expected), len(found)
        score.matched = len(expected.keys() & found.keys())
        score.missed = sorted(expected.keys() - found.keys())
        score.unexpected = sorted(found.keys() - expected.keys())
        score.negatives_detected = sorted(found.keys() & negatives)
        for key in expected.keys() & found.keys():
            want = expected[key].expected_profit
            if want is None:
                continue
            err = abs(found[key].profit - want)
            if err <= tolerance_wei:
                continue
            score.max_profit_error_wei = max(score.max_profit_error_wei, err)
            rel = Decimal(err) / abs(want) if want else Decimal(err)
            score.max_relative_profit_error = max(score.max_relative_profit_error, rel)
    return report


def cluster_labels(clusters: Iterable) -> dict:
    """Address to cluster id from cluster objects or their serialized records."""
    labels = {}
    for c in clusters:
        d = c.to_dict() if hasattr(c, "to_dict") else c
        for addr in (*d["accounts"], *d["bots"]):
            labels[addr] = d["id"]
    return labels


def totals_by_kind(attacks: Iterable) -> Mapping[str, dict]:
    out: dict[str, dict] = {}
    for a in attacks:
        rec = AttackRecord.of(a)
        t = out.setdefault(rec.kind, {"count": 0, "profit_wei": 0, "cost_wei": 0, "profit_usd": Decimal(0)})
        t["count"] += 1
        t["profit_wei"] += rec.profit
        t["cost_wei"] += rec.cost
        t["profit_usd"] += rec.profit_usd
    return out
