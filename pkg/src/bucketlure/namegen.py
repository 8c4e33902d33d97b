"""Deterministic decoy-bucket name generation, one function per strategy."""

from __future__ import annotations

import csv
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .model import (
    BucketSpec,
    CompanyAttributes,
    LeakChannel,
    PermissionPolicy,
    PILOT_POLICY,
    REFINED_POLICY,
    Strategy,
    StrategyKind,
    validate_bucket_name,
)

_LOWER_ALNUM = re.compile(r"^[a-z0-9]+$")
_ALNUM_CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"

FORTUNE500_KEYWORDS = ("production", "download")


class InsufficientDisjointNames(ValueError):
    """A tool's disjoint candidate set is smaller than the requested count."""

    def __init__(self, tool: str, available: int, requested: int):
        super().__init__(
            f"tool {tool!r} has {available} disjoint name(s), {requested} requested"
        )
        self.tool = tool
        self.available = available
        self.requested = requested


def load_wordlist(path: str) -> list[str]:
    """Read one candidate name per line; blank lines and '#' comments ignored."""
    names = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                names.append(line)
    return names


def load_company_roster(path: str) -> list[tuple[str, CompanyAttributes]]:
    """Read a company roster CSV with columns name,rank,sector,has_vdp,has_bounty."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            attrs = CompanyAttributes(
                fortune_rank=int(rec["rank"]),
                has_vdp=_parse_bool(rec["has_vdp"]),
                has_bounty=_parse_bool(rec["has_bounty"]),
                sector=rec["sector"].strip(),
            )
            rows.append((rec["name"].strip(), attrs))
    return rows


def _parse_bool(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "y")


def tga_disjoint_names(
    tool_lists: dict[str, Sequence[str]], per_tool: int, seed: int = 0
) -> list[tuple[str, str]]:
    """Pick `per_tool` names per tool that no other tool's list contains.

    A hit on such a name implicates exactly one enumeration tool. Selection
    is a seeded sample so repeated runs of a deployment plan agree.
    """
    if not tool_lists:
        raise ValueError("tool_lists must be non-empty")
    if per_tool < 1:
        raise ValueError("per_tool must be >= 1")
    rng = random.Random(seed)
    sets = {tool: set(names) for tool, names in tool_lists.items()}
    chosen: list[tuple[str, str]] = []
    for tool in sorted(tool_lists):
        others: set[str] = set()
        for other, names in sets.items():
            if other != tool:
                others |= names
        disjoint = sorted(sets[tool] - others)
        if len(disjoint) < per_tool:
            raise InsufficientDisjointNames(tool, len(disjoint), per_tool)
        chosen.extend((tool, name) for name in sorted(rng.sample(disjoint, per_tool)))
    return chosen


def org_keyword_names(
    orgs: Sequence[str],
    keywords: Sequence[str],
    policy: PermissionPolicy = PILOT_POLICY,
) -> list[BucketSpec]:
    """Cartesian product of organizations and keywords, concatenated bare."""
    for part in list(orgs) + list(keywords):
        if not _LOWER_ALNUM.fullmatch(part):
            raise ValueError(f"org/keyword must be lowercase alphanumeric: {part!r}")
    return [
        BucketSpec(org + kw, Strategy.org_keyword(org, kw), policy)
        for org in orgs
        for kw in keywords
    ]


def sanitize_company(name: str) -> str:
    """Lowercase a company name and drop every char a bucket name can't hold."""
    return re.sub(r"[^a-z0-9]", "", name.lower())


def fortune500_names(
    companies: Sequence[tuple[str, CompanyAttributes]],
    policy: PermissionPolicy = REFINED_POLICY,
) -> list[BucketSpec]:
    """Two specs per company: <company>production and <company>download."""
    specs = []
    for raw_name, attrs in companies:
        base = sanitize_company(raw_name)
        if not base:
            raise ValueError(f"company name empty after sanitization: {raw_name!r}")
        for kw in FORTUNE500_KEYWORDS:
            specs.append(
                BucketSpec(
                    base + kw,
                    Strategy.fortune500(base, kw),
                    policy,
                    company_attrs=attrs,
                )
            )
    return specs


def random_alphanumeric_names(
    count: int,
    length: int = 16,
    seed: int = 0,
    leak_channels: Sequence[LeakChannel] = (),
    policy: PermissionPolicy = PILOT_POLICY,
) -> list[BucketSpec]:
    """Unlikely-guessable names from [a-z0-9], collision-free within the batch.

    Leak channels are consumed two buckets at a time, pairing the first
    2*len(leak_channels) names; the remainder stay unleaked as controls.
    A scanner hitting both names of a pair almost surely harvested the leak
    rather than guessed.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if 2 * len(leak_channels) > count:
        raise ValueError("not enough names to leak two per channel")
    rng = random.Random(seed)
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < count:
        name = "".join(rng.choice(_ALNUM_CHARSET) for _ in range(length))
        if name not in seen:
            seen.add(name)
            names.append(name)
    specs = []
    for i, name in enumerate(names):
        channel = leak_channels[i // 2] if i // 2 < len(leak_channels) else None
        specs.append(
            BucketSpec(
                name,
                Strategy(StrategyKind.RANDOM_ALPHANUMERIC),
                policy,
                leak_channels=(channel,) if channel else (),
            )
        )
    return specs


def literal_names(
    names: Sequence[str],
    kind: StrategyKind,
    policy: PermissionPolicy = PILOT_POLICY,
) -> list[BucketSpec]:
    """Wrap caller-supplied names (crypto, keyword, control sets) into specs."""
    return [BucketSpec(n, Strategy(kind), policy) for n in names]


def name_entropy(name: str) -> float:
    """Total Shannon entropy of a name in bits.

    Per-character entropy of the name's own character distribution times its
    length, so short low-diversity names rank below long mixed ones.
    """
    if not name:
        raise ValueError("name must be non-empty")
    counts = Counter(name)
    n = len(name)
    h = -sum((c / n) * math.log2(c / n) for c in counts.values())
    return h * n


@dataclass(frozen=True)
class NamePlan:
    """A full generated deployment plan: specs plus per-strategy counts."""

    specs: tuple[BucketSpec, ...]
    seed: int
    counts: dict[str, int]

    def __post_init__(self) -> None:
        names = [s.name for s in self.specs]
        if len(names) != len(set(names)):
            dupes = sorted(n for n, c in Counter(names).items() if c > 1)
            raise ValueError(f"duplicate bucket names in plan: {dupes}")
        for spec in self.specs:
            if not validate_bucket_name(spec.name):
                raise ValueError(f"invalid name in plan: {spec.name!r}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "counts": dict(self.counts),
            "specs": [s.to_dict() for s in self.specs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NamePlan":
        return cls(
            specs=tuple(BucketSpec.from_dict(s) for s in d["specs"]),
            seed=d["seed"],
            counts=dict(d["counts"]),
        )


def compile_plan(request: dict, seed: int) -> NamePlan:
    """Build a NamePlan from a plan-request document.

    Request sections (all optional): tga, org_keyword, crypto, sensitive,
    non_sensitive, control, random, fortune500. Wordlists and rosters may be
    inline lists or file paths.
    """
    specs: list[BucketSpec] = []
    policy = policy_from_request(request)

    tga = request.get("tga")
    if tga:
        lists = {
            tool: (load_wordlist(src) if isinstance(src, str) else list(src))
            for tool, src in tga["wordlists"].items()
        }
        # Candidates that cannot be bucket names are unusable for any tool,
        # so validity filtering cannot move a name between disjoint sets.
        lists = {tool: [n for n in names if validate_bucket_name(n)] for tool, names in lists.items()}
        for tool, name in tga_disjoint_names(lists, tga.get("per_tool", 4), seed):
            specs.append(BucketSpec(name, Strategy.tga(tool), policy))

    ok = request.get("org_keyword")
    if ok:
        specs.extend(org_keyword_names(ok["orgs"], ok["keywords"], policy))

    for section, kind in (
        ("crypto", StrategyKind.CRYPTO),
        ("sensitive", StrategyKind.SENSITIVE_KEYWORD),
        ("non_sensitive", StrategyKind.NON_SENSITIVE_KEYWORD),
        ("control", StrategyKind.CONTROL),
    ):
        names = request.get(section)
        if names:
            specs.extend(literal_names(names, kind, policy))

    rnd = request.get("random")
    if rnd:
        channels = tuple(LeakChannel(c) for c in rnd.get("leak_channels", ()))
        specs.extend(
            random_alphanumeric_names(
                rnd["count"], rnd.get("length", 16), seed, channels, policy
            )
        )

    f500 = request.get("fortune500")
    if f500:
        roster = f500["roster"]
        if isinstance(roster, str):
            companies = load_company_roster(roster)
        else:
            companies = [
                (name, CompanyAttributes(rank, vdp, bounty, sector))
                for name, rank, sector, vdp, bounty in roster
            ]
        specs.extend(fortune500_names(companies))

    counts = Counter(s.strategy.kind.value for s in specs)
    return NamePlan(specs=tuple(specs), seed=seed, counts=dict(counts))


def policy_from_request(request: dict) -> PermissionPolicy:
    from .model import policy_preset

    return policy_preset(request.get("policy", "pilot"))
