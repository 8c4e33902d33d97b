"""Nonparametric tests and per-day traffic aggregation.

The one-sided Mann-Whitney U test is exact (full enumeration of rank
assignments, mid-ranks for ties) for pooled sizes up to 14 and falls back to
a tie-corrected, continuity-corrected normal approximation beyond that.
Group comparisons use a Bonferroni correction over the comparisons actually
performed in one call.
"""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

from .model import BucketSpec, EventStore, day_of

EXACT_MWU_LIMIT = 14  # C(14,7)=3432 arrangements, still instant
EXACT_KS_LIMIT = 10


def _midranks_doubled(pooled: Sequence[float]) -> list[int]:
    """Rank each pooled value, mid-ranks for ties, scaled by 2 so every rank
    is an exact integer."""
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    doubled = [0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        # mid-rank of positions i..j (1-based) is (i+j)/2 + 1
        value = i + j + 2
        for k in range(i, j + 1):
            doubled[order[k]] = value
        i = j + 1
    return doubled


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mannwhitney_one_sided(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """U statistic and p-value for the alternative "x stochastically greater".

    Exact permutation p when len(x)+len(y) <= 14; otherwise the normal
    approximation with tie and continuity corrections.
    """
    if not x or not y:
        raise ValueError("samples must be non-empty")
    n, m = len(x), len(y)
    pooled = list(x) + list(y)
    doubled = _midranks_doubled(pooled)
    # U doubled: 2*U = 2*R_x - n(n+1)
    u2_obs = sum(doubled[:n]) - n * (n + 1)
    u_obs = u2_obs / 2.0

    if n + m <= EXACT_MWU_LIMIT:
        total = 0
        at_least = 0
        for positions in combinations(range(n + m), n):
            total += 1
            u2 = sum(doubled[i] for i in positions) - n * (n + 1)
            if u2 >= u2_obs:
                at_least += 1
        return u_obs, at_least / total

    big_n = n + m
    tie_term = 0.0
    seen: dict[float, int] = {}
    for v in pooled:
        seen[v] = seen.get(v, 0) + 1
    for count in seen.values():
        tie_term += count**3 - count
    variance = (n * m / 12.0) * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if variance <= 0:
        return u_obs, 1.0
    z = (u_obs - n * m / 2.0 - 0.5) / math.sqrt(variance)
    return u_obs, _normal_sf(z)


def bonferroni(p: float, m: int) -> float:
    """Multiply by the comparison count and cap at 1."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    return min(1.0, p * m)


def ecdf_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """sup |ECDF_x - ECDF_y| over the pooled support."""
    if not x or not y:
        raise ValueError("samples must be non-empty")
    xs, ys = sorted(x), sorted(y)
    n, m = len(xs), len(ys)
    d = 0.0
    i = j = 0
    while i < n or j < m:
        if j >= m or (i < n and xs[i] <= ys[j]):
            v = xs[i]
        else:
            v = ys[j]
        while i < n and xs[i] <= v:
            i += 1
        while j < m and ys[j] <= v:
            j += 1
        d = max(d, abs(i / n - j / m))
    return d


def _kolmogorov_sf(lam: float) -> float:
    if lam <= 0:
        return 1.0
    total = 0.0
    for k in range(1, 101):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-12:
            break
    return min(1.0, max(0.0, total))


def ks_two_sample(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov distance and p-value.

    Exact permutation p (conditional on the pooled data) when both samples
    hold at most 10 values; asymptotic Kolmogorov distribution otherwise.
    """
    if not x or not y:
        raise ValueError("samples must be non-empty")
    n, m = len(x), len(y)
    d_obs = ecdf_distance(x, y)

    if n <= EXACT_KS_LIMIT and m <= EXACT_KS_LIMIT:
        pooled = sorted(list(x) + list(y))
        total = 0
        at_least = 0
        eps = 1e-12
        for positions in combinations(range(n + m), n):
            total += 1
            chosen = set(positions)
            xs = [pooled[i] for i in range(n + m) if i in chosen]
            ys = [pooled[i] for i in range(n + m) if i not in chosen]
            if ecdf_distance(xs, ys) >= d_obs - eps:
                at_least += 1
        return d_obs, at_least / total

    ne = n * m / (n + m)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d_obs
    return d_obs, _kolmogorov_sf(lam)


class AsnMap:
    """Longest-prefix IP-to-ASN lookup from a 'prefix asn' text file."""

    def __init__(self, entries: Iterable[tuple[str, str]] = ()):
        self._nets = sorted(
            ((ipaddress.ip_network(prefix), asn) for prefix, asn in entries),
            key=lambda item: item[0].prefixlen,
            reverse=True,
        )

    @classmethod
    def load(cls, path: str) -> "AsnMap":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                prefix, asn = line.split()
                entries.append((prefix, asn))
        return cls(entries)

    def lookup(self, ip: str) -> str:
        addr = ipaddress.ip_address(ip)
        for net, asn in self._nets:
            if addr.version == net.version and addr in net:
                return asn
        return "unknown"


@dataclass(frozen=True)
class DayCount:
    day: int
    ips: int
    asns: int


@dataclass(frozen=True)
class GroupSeries:
    """Per-day unique-visitor series for one group of buckets."""

    group: str
    per_day_counts: tuple[DayCount, ...]
    n_buckets: int
    bucket_daily_avg: tuple[tuple[str, float], ...]
    avg_total_ips_per_bucket: float
    avg_total_asns_per_bucket: float
    avg_daily_ips_per_bucket: float
    avg_daily_asns_per_bucket: float

    def daily_ip_series(self) -> list[int]:
        return [dc.ips for dc in self.per_day_counts]

    def mean_daily_ips(self) -> float:
        series = self.daily_ip_series()
        return sum(series) / len(series) if series else 0.0

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "n_buckets": self.n_buckets,
            "per_day_counts": [
                {"day": dc.day, "ips": dc.ips, "asns": dc.asns} for dc in self.per_day_counts
            ],
            "avg_total_ips_per_bucket": self.avg_total_ips_per_bucket,
            "avg_total_asns_per_bucket": self.avg_total_asns_per_bucket,
            "avg_daily_ips_per_bucket": self.avg_daily_ips_per_bucket,
            "avg_daily_asns_per_bucket": self.avg_daily_asns_per_bucket,
        }


GroupKey = Callable[[BucketSpec], str]

_GROUPERS: dict[str, GroupKey] = {
    "type": lambda spec: spec.strategy.kind.value,
    "vdp": lambda spec: (
        "n/a"
        if spec.company_attrs is None
        else ("has_vdp" if spec.company_attrs.has_vdp else "no_vdp")
    ),
    "sector": lambda spec: (
        "n/a" if spec.company_attrs is None else spec.company_attrs.sector
    ),
}


def group_key(name_or_fn: str | GroupKey) -> GroupKey:
    if callable(name_or_fn):
        return name_or_fn
    return _GROUPERS[name_or_fn]


def per_day_unique(
    store: EventStore,
    specs: Mapping[str, BucketSpec],
    group_by: str | GroupKey,
    asn_map: AsnMap | None = None,
) -> list[GroupSeries]:
    """Distinct IP and ASN counts per UTC calendar day, per group.

    Days with no traffic count as zero across the store's full day range so
    per-day averages are not inflated. Events for buckets missing from
    `specs` are ignored; IPs with no ASN mapping fall into "unknown".
    """
    keyfn = group_key(group_by)
    asn_map = asn_map or AsnMap()
    events = [e for e in store if e.bucket in specs]
    if not events:
        return []
    day_lo = min(day_of(e.time) for e in events)
    day_hi = max(day_of(e.time) for e in events)
    n_days = day_hi - day_lo + 1

    group_buckets: dict[str, set[str]] = {}
    for name, spec in specs.items():
        group_buckets.setdefault(keyfn(spec), set()).add(name)

    day_group_ips: dict[tuple[str, int], set[str]] = {}
    day_group_asns: dict[tuple[str, int], set[str]] = {}
    bucket_ips: dict[str, set[str]] = {}
    bucket_asns: dict[str, set[str]] = {}
    bucket_day_ips: dict[tuple[str, int], set[str]] = {}
    bucket_day_asns: dict[tuple[str, int], set[str]] = {}

    for e in events:
        g = keyfn(specs[e.bucket])
        d = day_of(e.time)
        asn = asn_map.lookup(e.ip)
        day_group_ips.setdefault((g, d), set()).add(e.ip)
        day_group_asns.setdefault((g, d), set()).add(asn)
        bucket_ips.setdefault(e.bucket, set()).add(e.ip)
        bucket_asns.setdefault(e.bucket, set()).add(asn)
        bucket_day_ips.setdefault((e.bucket, d), set()).add(e.ip)
        bucket_day_asns.setdefault((e.bucket, d), set()).add(asn)

    out = []
    for g in sorted(group_buckets):
        buckets = sorted(group_buckets[g])
        days = tuple(
            DayCount(
                day=d,
                ips=len(day_group_ips.get((g, d), ())),
                asns=len(day_group_asns.get((g, d), ())),
            )
            for d in range(day_lo, day_hi + 1)
        )
        nb = len(buckets)
        daily_ip_avg = {
            b: sum(len(bucket_day_ips.get((b, d), ())) for d in range(day_lo, day_hi + 1)) / n_days
            for b in buckets
        }
        daily_asn_avg = {
            b: sum(len(bucket_day_asns.get((b, d), ())) for d in range(day_lo, day_hi + 1)) / n_days
            for b in buckets
        }
        out.append(
            GroupSeries(
                group=g,
                per_day_counts=days,
                n_buckets=nb,
                bucket_daily_avg=tuple((b, daily_ip_avg[b]) for b in buckets),
                avg_total_ips_per_bucket=sum(len(bucket_ips.get(b, ())) for b in buckets) / nb,
                avg_total_asns_per_bucket=sum(len(bucket_asns.get(b, ())) for b in buckets) / nb,
                avg_daily_ips_per_bucket=sum(daily_ip_avg.values()) / nb,
                avg_daily_asns_per_bucket=sum(daily_asn_avg.values()) / nb,
            )
        )
    return out


@dataclass(frozen=True)
class SignificanceResult:
    groups: tuple[str, ...]
    matrix: tuple[tuple[bool, ...], ...]
    pvalues: dict[tuple[str, str], float]
    corrected: dict[tuple[str, str], float]
    comparisons: int
    status: dict[str, str]  # tested | untestable | excluded
    starred: tuple[str, ...]

    def significant(self, greater: str, lesser: str) -> bool:
        i = self.groups.index(greater)
        j = self.groups.index(lesser)
        return self.matrix[i][j]

    def to_dict(self) -> dict:
        return {
            "groups": list(self.groups),
            "matrix": [list(row) for row in self.matrix],
            "comparisons": self.comparisons,
            "pvalues": {f"{a}>{b}": p for (a, b), p in sorted(self.pvalues.items())},
            "corrected": {f"{a}>{b}": p for (a, b), p in sorted(self.corrected.items())},
            "status": dict(self.status),
            "starred": list(self.starred),
        }


def significance_matrix(
    groups: Sequence[GroupSeries],
    alpha: float = 0.05,
    sample: str = "daily",
    min_days: int = 3,
    min_sample: int = 10,
) -> SignificanceResult:
    """Which groups draw stochastically more traffic than smaller-mean groups.

    For every ordered pair whose left group has the larger sample mean, a
    one-sided test runs; the Bonferroni family is the set of comparisons this
    call performs. A group gets a star when it beats every testable group
    below it. Groups with under `min_days` days are untestable; samples under
    `min_sample` observations are excluded outright.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if sample == "daily":
        series = {g.group: [float(v) for v in g.daily_ip_series()] for g in groups}
    elif sample == "per_bucket":
        series = {g.group: [v for _, v in g.bucket_daily_avg] for g in groups}
    else:
        raise ValueError(f"unknown sample mode: {sample}")

    status = {}
    for g in groups:
        s = series[g.group]
        if len(s) < min_days:
            status[g.group] = "untestable"
        elif len(s) < min_sample:
            status[g.group] = "excluded"
        else:
            status[g.group] = "tested"

    means = {name: (sum(s) / len(s) if s else 0.0) for name, s in series.items()}
    names = tuple(g.group for g in groups)
    testable = [n for n in names if status[n] == "tested"]

    pairs = [
        (a, b)
        for a in testable
        for b in testable
        if a != b and means[a] > means[b]
    ]
    m = max(len(pairs), 1)
    pvalues: dict[tuple[str, str], float] = {}
    corrected: dict[tuple[str, str], float] = {}
    for a, b in pairs:
        _, p = mannwhitney_one_sided(series[a], series[b])
        pvalues[(a, b)] = p
        corrected[(a, b)] = bonferroni(p, m)

    matrix = tuple(
        tuple(
            (a, b) in corrected and corrected[(a, b)] < alpha
            for b in names
        )
        for a in names
    )
    starred = []
    for a in testable:
        below = [b for b in testable if means[b] < means[a]]
        if below and all(corrected.get((a, b), 1.0) < alpha for b in below):
            starred.append(a)
    return SignificanceResult(
        groups=names,
        matrix=matrix,
        pvalues=pvalues,
        corrected=corrected,
        comparisons=len(pairs),
        status=status,
        starred=tuple(starred),
    )
