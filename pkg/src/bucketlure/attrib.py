"""Attribute logged activity to actors: collusion detection over lure tokens,
IP clustering, SSH-abuse classification, tool-usage detection, upload triage.

Collusion detection works backwards from a token use. Each rotating document
name or SSH password is only observable during one bucket-hour, so an IP
that uses a token it never obtained first-hand must have received it from
whichever IP(s) did observe it inside that window.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .luregen import FileObject, TokenRegistry
from .model import (
    AccessEvent,
    ActorCluster,
    Certainty,
    CollusionCase,
    CollusionEdge,
    EventStore,
    LureToken,
    OperationKind,
    SshAttempt,
    TokenKind,
)

SSH_BRUTE_FORCE_SPACE = 1000  # 3-digit prefixes: 000..999
SSH_ATTEMPT_MAX_OBSERVED = 8


class UnknownToken(KeyError):
    """The supplied token value was never minted by this deployment."""


def _listings(events: Sequence[AccessEvent], bucket: str) -> dict[str, list[int]]:
    times: dict[str, list[int]] = defaultdict(list)
    for e in events:
        if e.bucket == bucket and e.operation is OperationKind.LIST_DIRECTORY and e.outcome.is_success:
            times[e.ip].append(e.time)
    return times


def _download_attempts(
    events: Sequence[AccessEvent], bucket: str, key: str
) -> dict[str, list[AccessEvent]]:
    per_ip: dict[str, list[AccessEvent]] = defaultdict(list)
    for e in events:
        if (
            e.bucket == bucket
            and e.operation is OperationKind.DOWNLOAD_OBJECT
            and e.object_key == key
        ):
            per_ip[e.ip].append(e)
    return per_ip


def find_colluding_ips(
    ip: str,
    token: LureToken | None,
    store: EventStore,
    registry: TokenRegistry,
) -> dict[str, Certainty]:
    """IPs that could have supplied `token` to `ip`, tagged by certainty.

    Three cases, all anchored on the token's hour window:

    * failure: `ip` tried to download the token-named file after the window
      closed, never having listed; candidates are the IPs that listed during
      the window.
    * success: `ip` downloaded the file without ever listing; candidates are
      the IPs that listed between the window start and that download.
    * ssh: `ip` tried the windowed password without having downloaded the
      matching document; candidates are the IPs that downloaded it.

    If `ip` listed before its own download (or downloaded the document
    itself, in the ssh case) it needed no one: the result is `{ip}`. With no
    token there is nothing to trace and the result is empty. A candidate is
    Unique when it is the only possibility, otherwise every candidate is
    tagged as such.
    """
    if token is None:
        return {}
    if not registry.lookup_all(token.value):
        raise UnknownToken(token.value)

    if token.kind is TokenKind.SSH_PASSWORD:
        return _find_via_password(ip, token, store, registry)
    return _find_via_document(ip, token, store)


def _find_via_document(ip: str, token: LureToken, store: EventStore) -> dict[str, Certainty]:
    events = store.for_bucket(token.bucket)
    attempts = _download_attempts(events, token.bucket, token.value)
    own = attempts.get(ip)
    if not own:
        return {}
    first = min(own, key=lambda e: e.time)
    listings = _listings(events, token.bucket)
    if any(t < first.time for t in listings.get(ip, ())):
        return {ip: Certainty.UNIQUE}

    if first.outcome.is_success:
        lo, hi = token.window_start, first.time
        candidates = {
            other for other, times in listings.items()
            if other != ip and any(lo <= t <= hi for t in times)
        }
    else:
        lo, hi = token.window_start, token.window_end
        candidates = {
            other for other, times in listings.items()
            if other != ip and any(lo <= t < hi for t in times)
        }
    certainty = Certainty.UNIQUE if len(candidates) == 1 else Certainty.CANDIDATE
    return {c: certainty for c in sorted(candidates)}


def _find_via_password(
    ip: str, token: LureToken, store: EventStore, registry: TokenRegistry
) -> dict[str, Certainty]:
    # Buckets rotating in the same hour share the password value, so the
    # matching document may live in several buckets; all their downloaders
    # are candidate sources.
    downloaders: set[str] = set()
    for twin in registry.lookup_all(token.value):
        doc = registry.document_for(twin)
        if doc is None:
            continue
        events = store.for_bucket(doc.bucket)
        for other, evs in _download_attempts(events, doc.bucket, doc.value).items():
            if any(e.outcome.is_success for e in evs):
                downloaders.add(other)
    if ip in downloaders:
        return {ip: Certainty.UNIQUE}
    candidates = downloaders - {ip}
    certainty = Certainty.UNIQUE if len(candidates) == 1 else Certainty.CANDIDATE
    return {c: certainty for c in sorted(candidates)}


def collusion_edges(
    store: EventStore,
    registry: TokenRegistry,
    ssh_attempts: Sequence[SshAttempt] = (),
) -> list[CollusionEdge]:
    """Trace every token use in the logs and emit the resulting evidence."""
    edges: set[CollusionEdge] = set()

    seen_doc_pairs: set[tuple[str, str, str]] = set()
    for event in store:
        if event.operation is not OperationKind.DOWNLOAD_OBJECT or not event.object_key:
            continue
        token = registry.lookup_for_bucket(event.object_key, event.bucket)
        if token is None or token.kind is not TokenKind.DOCUMENT_NAME:
            continue
        pair = (event.ip, event.bucket, event.object_key)
        if pair in seen_doc_pairs:
            continue
        seen_doc_pairs.add(pair)
        attempts = _download_attempts(store.for_bucket(event.bucket), event.bucket, token.value)
        first = min(attempts[event.ip], key=lambda e: e.time)
        case = CollusionCase.SUCCESS if first.outcome.is_success else CollusionCase.FAILURE
        for source, certainty in find_colluding_ips(event.ip, token, store, registry).items():
            if source != event.ip:
                edges.add(CollusionEdge(source, event.ip, case, token, certainty))

    seen_pw_pairs: set[tuple[str, str]] = set()
    for attempt in ssh_attempts:
        match = registry.match_password(attempt.password)
        if match is None:
            continue
        _, token = match
        pair = (attempt.ip, token.value)
        if pair in seen_pw_pairs:
            continue
        seen_pw_pairs.add(pair)
        for source, certainty in find_colluding_ips(attempt.ip, token, store, registry).items():
            if source != attempt.ip:
                edges.add(CollusionEdge(source, attempt.ip, CollusionCase.SSH, token, certainty))

    return sorted(
        edges,
        key=lambda e: (e.from_ip, e.to_ip, e.case.value, e.token.value, e.certainty.value),
    )


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}

    def add(self, x: str) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Deterministic root choice keeps clustering order-independent.
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def cluster_actors(
    edges: Sequence[CollusionEdge],
    all_ips: Iterable[str] = (),
    merge_candidates: bool = False,
) -> list[ActorCluster]:
    """Connected components over Unique evidence.

    Candidate evidence rides along on the cluster of the IP it would
    attribute, but only merges components when `merge_candidates` is set
    (optimistic attribution). IPs with no evidence become singletons.
    """
    uf = _UnionFind(all_ips)
    for edge in edges:
        uf.add(edge.from_ip)
        uf.add(edge.to_ip)
        if edge.certainty is Certainty.UNIQUE or merge_candidates:
            uf.union(edge.from_ip, edge.to_ip)

    members: dict[str, set[str]] = defaultdict(set)
    for ip in uf.parent:
        members[uf.find(ip)].add(ip)

    clusters = []
    for i, (_, ips) in enumerate(
        sorted(members.items(), key=lambda kv: min(kv[1])), start=1
    ):
        evidence = tuple(
            e
            for e in edges
            if (e.certainty is Certainty.UNIQUE and e.from_ip in ips and e.to_ip in ips)
            or (e.certainty is Certainty.CANDIDATE and e.to_ip in ips)
        )
        clusters.append(ActorCluster(f"actor-{i:03d}", frozenset(ips), evidence))
    return clusters


class AbuseKind(Enum):
    SSH_ATTEMPT = "SshAttempt"
    SSH_BRUTE_FORCE = "SshBruteForce"
    MALICIOUS_UPLOAD = "MaliciousUpload"
    WARNING_UPLOAD = "WarningUpload"
    BENIGN_UPLOAD = "BenignUpload"
    SENSITIVE_DOWNLOAD = "SensitiveDownload"


@dataclass(frozen=True)
class AbuseClassification:
    actor_id: str
    kind: AbuseKind
    evidence: tuple = ()
    distinct_password_count: int = 0
    # Set for 9..999 distinct prefixes: more than any non-brute actor has
    # been seen to try, yet short of full enumeration.
    exceeds_observed_max: bool = False

    def to_dict(self) -> dict:
        return {
            "actor_id": self.actor_id,
            "kind": self.kind.value,
            "distinct_password_count": self.distinct_password_count,
            "exceeds_observed_max": self.exceeds_observed_max,
            "evidence_count": len(self.evidence),
        }


def classify_ssh(
    attempts: Sequence[SshAttempt],
    registry: TokenRegistry,
    actor_of: Mapping[str, str] | None = None,
) -> list[AbuseClassification]:
    """Group credential uses per actor and split attempt from brute force.

    An actor iterating all 1000 3-digit prefixes of one windowed password is
    brute-forcing; small prefix counts are lone attempts. Passwords matching
    no minted token are background noise and classify nothing.
    """
    groups: dict[tuple[str, str], dict] = {}
    for attempt in attempts:
        match = registry.match_password(attempt.password)
        if match is None:
            continue
        prefix, token = match
        actor = actor_of.get(attempt.ip, attempt.ip) if actor_of else attempt.ip
        group = groups.setdefault(
            (actor, token.value), {"prefixes": set(), "attempts": []}
        )
        group["prefixes"].add(prefix)
        group["attempts"].append(attempt)

    out = []
    for (actor, _value), group in sorted(groups.items()):
        n = len(group["prefixes"])
        if n >= SSH_BRUTE_FORCE_SPACE:
            kind = AbuseKind.SSH_BRUTE_FORCE
        else:
            kind = AbuseKind.SSH_ATTEMPT
        out.append(
            AbuseClassification(
                actor_id=actor,
                kind=kind,
                evidence=tuple(group["attempts"]),
                distinct_password_count=n,
                exceeds_observed_max=SSH_ATTEMPT_MAX_OBSERVED < n < SSH_BRUTE_FORCE_SPACE,
            )
        )
    return out


def unmatched_ssh_attempts(attempts: Sequence[SshAttempt], registry: TokenRegistry) -> int:
    return sum(1 for a in attempts if registry.match_password(a.password) is None)


# Upper 5% chi-square critical values for df 1..30.
_CHI2_CRIT_05 = (
    3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919, 18.307,
    19.675, 21.026, 22.362, 23.685, 24.996, 26.296, 27.587, 28.869, 30.144, 31.410,
    32.671, 33.924, 35.172, 36.415, 37.652, 38.885, 40.113, 41.337, 42.557, 43.773,
)


@dataclass(frozen=True)
class TgaUsageReport:
    tool: str
    exhaustive_ips: tuple[str, ...]
    per_bucket_ip_counts: dict[str, int]
    chi_square: float
    uniform: bool

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "exhaustive_ips": list(self.exhaustive_ips),
            "per_bucket_ip_counts": dict(self.per_bucket_ip_counts),
            "chi_square": self.chi_square,
            "uniform": self.uniform,
        }


def detect_tga_usage(
    store: EventStore, tga_names: Mapping[str, Iterable[str]]
) -> dict[str, TgaUsageReport]:
    """Per tool: IPs that touched every one of its decoy names, plus a
    uniformity statistic over per-bucket visitor counts.

    The chi-square value is reported as-is; the `uniform` flag compares it
    against the conventional 5% critical value for the tool's bucket count.
    """
    touched: dict[str, set[str]] = defaultdict(set)
    for event in store:
        touched[event.bucket].add(event.ip)

    reports = {}
    for tool, names in sorted(tga_names.items()):
        names = sorted(names)
        per_bucket = {name: len(touched.get(name, ())) for name in names}
        hit_all = set.intersection(*(touched.get(name, set()) for name in names)) if names else set()
        counts = list(per_bucket.values())
        mean = sum(counts) / len(counts) if counts else 0.0
        if mean > 0:
            stat = sum((c - mean) ** 2 / mean for c in counts)
        else:
            stat = 0.0
        df = max(len(counts) - 1, 1)
        crit = _CHI2_CRIT_05[df - 1] if df <= len(_CHI2_CRIT_05) else _CHI2_CRIT_05[-1]
        reports[tool] = TgaUsageReport(
            tool=tool,
            exhaustive_ips=tuple(sorted(hit_all)),
            per_bucket_ip_counts=per_bucket,
            chi_square=stat,
            uniform=stat <= crit,
        )
    return reports


class UploadCategory(Enum):
    WARNING = "warning"
    MALICIOUS = "malicious"
    BENIGN = "benign"
    EMPTY = "empty"
    NO_ACCESS = "no_access"


_DEFAULT_MALICIOUS = (
    r"/etc/passwd",
    r"reverse\s+shell",
    r"\b(?:ba)?sh\s+-i\b",
    r"\bnc\b[^\n]*\s-e\b",
    r"socket\.socket",
    r"Runtime\.getRuntime\(\)\.exec",
    r"ngrok\.io",
    r"window\.location\s*=",
    r"http-equiv=[\"']refresh",
)

_DEFAULT_WARNING = (
    r"bucket[^\n]{0,40}(?:public|exposed|open)",
    r"misconfigur",
    r"vulnerab",
    r"bug\s*bounty",
    r"secure\s+your",
    r"\bs3sec\b",
)

_RISKY_EXTENSIONS = (".jar", ".exe", ".dll", ".so", ".scr", ".bin", ".elf")


@dataclass(frozen=True)
class UploadSignatures:
    malicious: tuple[re.Pattern, ...] = tuple(
        re.compile(p, re.IGNORECASE) for p in _DEFAULT_MALICIOUS
    )
    warning: tuple[re.Pattern, ...] = tuple(
        re.compile(p, re.IGNORECASE) for p in _DEFAULT_WARNING
    )


DEFAULT_SIGNATURES = UploadSignatures()


def _byte_entropy(data: bytes) -> float:
    counts = [0] * 256
    for b in data:
        counts[b] += 1
    n = len(data)
    return -sum((c / n) * math.log2(c / n) for c in counts if c)


def categorize_upload(
    file: FileObject, signatures: UploadSignatures = DEFAULT_SIGNATURES
) -> UploadCategory:
    """Rule-based triage of one actor-uploaded object."""
    if not file.owner.is_operator and not file.owner.readable:
        return UploadCategory.NO_ACCESS
    if file.size == 0:
        return UploadCategory.EMPTY
    try:
        text = file.data.decode("utf-8")
    except UnicodeDecodeError:
        ext = "." + file.key.rsplit(".", 1)[-1].lower() if "." in file.key else ""
        if ext in _RISKY_EXTENSIONS and _byte_entropy(file.data) > 7.2:
            return UploadCategory.MALICIOUS
        return UploadCategory.BENIGN
    for pattern in signatures.malicious:
        if pattern.search(text):
            return UploadCategory.MALICIOUS
    for pattern in signatures.warning:
        if pattern.search(text):
            return UploadCategory.WARNING
    return UploadCategory.BENIGN


def actor_uploads(states: Iterable) -> list[tuple[str, FileObject]]:
    """All actor-owned object versions across bucket states."""
    out = []
    for state in states:
        for key in sorted(state.versions):
            for version in state.versions[key]:
                if version is not None and not version.owner.is_operator:
                    out.append((state.spec.name, version))
    return out


def upload_summary(
    states: Iterable, signatures: UploadSignatures = DEFAULT_SIGNATURES
) -> dict[str, int]:
    counts: dict[str, int] = {c.value: 0 for c in UploadCategory}
    for _bucket, obj in actor_uploads(states):
        counts[categorize_upload(obj, signatures).value] += 1
    return counts


def sensitive_download_actors(
    store: EventStore,
    operator_keys: Callable[[str, str], bool],
    actor_of: Mapping[str, str] | None = None,
) -> list[AbuseClassification]:
    """Actors that pulled at least one operator-planted file."""
    hits: dict[str, list[AccessEvent]] = defaultdict(list)
    for e in store:
        if (
            e.operation is OperationKind.DOWNLOAD_OBJECT
            and e.outcome.is_success
            and e.object_key
            and operator_keys(e.bucket, e.object_key)
        ):
            actor = actor_of.get(e.ip, e.ip) if actor_of else e.ip
            hits[actor].append(e)
    return [
        AbuseClassification(actor, AbuseKind.SENSITIVE_DOWNLOAD, tuple(evs))
        for actor, evs in sorted(hits.items())
    ]


def attribution_report(
    clusters: Sequence[ActorCluster],
    edges: Sequence[CollusionEdge],
    ssh_classes: Sequence[AbuseClassification] = (),
) -> dict:
    """Stable JSON contract consumed by the CLI and downstream tooling."""
    multi = [c for c in clusters if len(c.ips) > 1]
    return {
        "clusters": [c.to_dict() for c in clusters],
        "edges": [e.to_dict() for e in edges],
        "ssh_classifications": [c.to_dict() for c in ssh_classes],
        "totals": {
            "ips": sum(len(c.ips) for c in clusters),
            "actors": len(clusters),
            "multi_ip_actors": len(multi),
            "unique_edges": sum(1 for e in edges if e.certainty is Certainty.UNIQUE),
            "candidate_edges": sum(1 for e in edges if e.certainty is Certainty.CANDIDATE),
        },
    }
