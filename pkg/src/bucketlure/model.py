"""Shared domain types and the JSON-lines event-log schema.

Every type here is an immutable value object. The event log is append-only:
one JSON object per line, field names matching the dataclass fields,
timestamps as integer Unix seconds interpreted as UTC.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

HOUR = 3600
DAY = 86400

_NAME_RE = re.compile(r"^[a-z0-9](?:[a-z0-9-]*[a-z0-9])?$")


def validate_bucket_name(name: str) -> bool:
    """True iff `name` is a legal bucket name (3-64 chars, lowercase
    alphanumeric plus hyphen, no leading/trailing hyphen)."""
    if not isinstance(name, str) or not 3 <= len(name) <= 64:
        return False
    return _NAME_RE.fullmatch(name) is not None


def canonical_ip(text: str) -> str:
    """Normalize an IP address to canonical text form.

    v4-mapped v6 addresses collapse to plain v4 so one host never splits
    into two clustering keys.
    """
    addr = ipaddress.ip_address(text.strip())
    if isinstance(addr, ipaddress.IPv6Address) and addr.ipv4_mapped is not None:
        return str(addr.ipv4_mapped)
    return str(addr)


def hour_floor(ts: int) -> int:
    """Align a timestamp to the top of its UTC hour."""
    return (int(ts) // HOUR) * HOUR


def day_of(ts: int) -> int:
    """UTC calendar day index (days since the epoch)."""
    return int(ts) // DAY


class StrategyKind(Enum):
    TGA = "tga"
    ORG_KEYWORD = "org_keyword"
    CRYPTO = "crypto"
    SENSITIVE_KEYWORD = "sensitive_keyword"
    NON_SENSITIVE_KEYWORD = "non_sensitive_keyword"
    RANDOM_ALPHANUMERIC = "random_alphanumeric"
    FORTUNE500 = "fortune500"
    CONTROL = "control"


@dataclass(frozen=True)
class Strategy:
    """Provenance of a bucket name: which luring strategy produced it."""

    kind: StrategyKind
    tool: str | None = None
    org: str | None = None
    keyword: str | None = None
    company: str | None = None

    def __post_init__(self) -> None:
        if self.kind is StrategyKind.TGA and not self.tool:
            raise ValueError("TGA strategy requires a tool id")
        if self.kind is StrategyKind.ORG_KEYWORD and not (self.org and self.keyword):
            raise ValueError("org-keyword strategy requires org and keyword")
        if self.kind is StrategyKind.FORTUNE500 and not (self.company and self.keyword):
            raise ValueError("fortune500 strategy requires company and keyword")

    @classmethod
    def tga(cls, tool: str) -> "Strategy":
        return cls(StrategyKind.TGA, tool=tool)

    @classmethod
    def org_keyword(cls, org: str, keyword: str) -> "Strategy":
        return cls(StrategyKind.ORG_KEYWORD, org=org, keyword=keyword)

    @classmethod
    def fortune500(cls, company: str, keyword: str) -> "Strategy":
        return cls(StrategyKind.FORTUNE500, company=company, keyword=keyword)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        for k in ("tool", "org", "keyword", "company"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        return cls(
            StrategyKind(d["kind"]),
            tool=d.get("tool"),
            org=d.get("org"),
            keyword=d.get("keyword"),
            company=d.get("company"),
        )


class LeakChannel(Enum):
    GITHUB = "github"
    PASTEBIN = "pastebin"
    TWITTER = "twitter"
    WEBSITE = "website"
    DNS = "dns"
    EMAIL = "email"


class UploadRule(Enum):
    NO = "no"
    YES = "yes"
    YES_WITH_OWNERSHIP_TRANSFER = "yes_with_ownership_transfer"


@dataclass(frozen=True)
class PermissionPolicy:
    """What anonymous visitors may do to a bucket."""

    allow_list: bool
    allow_download: bool
    allow_upload: UploadRule
    allow_delete_owner_files: bool
    allow_delete_actor_files: bool
    versioning: bool

    def to_dict(self) -> dict:
        return {
            "allow_list": self.allow_list,
            "allow_download": self.allow_download,
            "allow_upload": self.allow_upload.value,
            "allow_delete_owner_files": self.allow_delete_owner_files,
            "allow_delete_actor_files": self.allow_delete_actor_files,
            "versioning": self.versioning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PermissionPolicy":
        return cls(
            allow_list=d["allow_list"],
            allow_download=d["allow_download"],
            allow_upload=UploadRule(d["allow_upload"]),
            allow_delete_owner_files=d["allow_delete_owner_files"],
            allow_delete_actor_files=d["allow_delete_actor_files"],
            versioning=d["versioning"],
        )


# Open season: list, download, upload; actors may delete their own files but
# never ours; versioning keeps a history of what they touch.
PILOT_POLICY = PermissionPolicy(
    allow_list=True,
    allow_download=True,
    allow_upload=UploadRule.YES,
    allow_delete_owner_files=False,
    allow_delete_actor_files=True,
    versioning=True,
)

# Locked down: list and download only; uploads accepted solely with ownership
# transfer so we can always read what arrives; deletes forbidden outright.
REFINED_POLICY = PermissionPolicy(
    allow_list=True,
    allow_download=True,
    allow_upload=UploadRule.YES_WITH_OWNERSHIP_TRANSFER,
    allow_delete_owner_files=False,
    allow_delete_actor_files=False,
    versioning=False,
)

_POLICY_PRESETS = {"pilot": PILOT_POLICY, "refined": REFINED_POLICY}


def policy_preset(name: str) -> PermissionPolicy:
    return _POLICY_PRESETS[name]


def policy_preset_name(policy: PermissionPolicy) -> str | None:
    for name, preset in _POLICY_PRESETS.items():
        if preset == policy:
            return name
    return None


@dataclass(frozen=True)
class CompanyAttributes:
    fortune_rank: int
    has_vdp: bool
    has_bounty: bool
    sector: str

    def __post_init__(self) -> None:
        if not 1 <= self.fortune_rank <= 500:
            raise ValueError(f"fortune_rank out of range: {self.fortune_rank}")

    def to_dict(self) -> dict:
        return {
            "fortune_rank": self.fortune_rank,
            "has_vdp": self.has_vdp,
            "has_bounty": self.has_bounty,
            "sector": self.sector,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompanyAttributes":
        return cls(d["fortune_rank"], d["has_vdp"], d["has_bounty"], d["sector"])


@dataclass(frozen=True)
class BucketSpec:
    """A named decoy bucket with its provenance and access policy."""

    name: str
    strategy: Strategy
    policy: PermissionPolicy
    leak_channels: tuple[LeakChannel, ...] = ()
    company_attrs: CompanyAttributes | None = None

    def __post_init__(self) -> None:
        if not validate_bucket_name(self.name):
            raise ValueError(f"invalid bucket name: {self.name!r}")
        if self.strategy.kind is StrategyKind.RANDOM_ALPHANUMERIC and len(self.name) != 16:
            raise ValueError("random alphanumeric names must be exactly 16 chars")
        if self.strategy.kind is StrategyKind.FORTUNE500 and not (
            self.name.endswith("production") or self.name.endswith("download")
        ):
            raise ValueError("fortune500 names must end in 'production' or 'download'")

    def to_dict(self) -> dict:
        d: dict = {
            "name": self.name,
            "strategy": self.strategy.to_dict(),
            "policy": self.policy.to_dict(),
            "leak_channels": [c.value for c in self.leak_channels],
        }
        if self.company_attrs is not None:
            d["company_attrs"] = self.company_attrs.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BucketSpec":
        attrs = d.get("company_attrs")
        return cls(
            name=d["name"],
            strategy=Strategy.from_dict(d["strategy"]),
            policy=PermissionPolicy.from_dict(d["policy"]),
            leak_channels=tuple(LeakChannel(c) for c in d.get("leak_channels", [])),
            company_attrs=CompanyAttributes.from_dict(attrs) if attrs else None,
        )


@dataclass(frozen=True)
class Identity:
    """Requester identity: the anonymous constant or an account/user pair."""

    account_id: str | None = None
    username: str | None = None

    def __post_init__(self) -> None:
        if (self.account_id is None) != (self.username is None):
            raise ValueError("authenticated identity needs both account id and username")

    @property
    def is_authenticated(self) -> bool:
        return self.account_id is not None

    def encode(self) -> str:
        if not self.is_authenticated:
            return "-"
        return f"acct:{self.account_id}/{self.username}"

    @classmethod
    def decode(cls, text: str) -> "Identity":
        if text == "-":
            return UNAUTHENTICATED
        if not text.startswith("acct:") or "/" not in text:
            raise ValueError(f"bad identity encoding: {text!r}")
        account, username = text[5:].split("/", 1)
        if not account or not username:
            raise ValueError(f"bad identity encoding: {text!r}")
        return cls(account, username)


UNAUTHENTICATED = Identity()


class OperationKind(Enum):
    CHECK_EXISTS = "CheckExists"
    LIST_DIRECTORY = "ListDirectory"
    GET_OBJECT_METADATA = "GetObjectMetadata"
    GET_ACL = "GetAcl"
    UPLOAD_OBJECT = "UploadObject"
    DOWNLOAD_OBJECT = "DownloadObject"
    DELETE_OBJECT = "DeleteObject"

    @property
    def token(self) -> str:
        return _OP_TOKENS[self]

    @property
    def targets_object(self) -> bool:
        return self in _OBJECT_OPS

    @classmethod
    def from_token(cls, token: str) -> "OperationKind":
        return _TOKEN_OPS[token]


_OP_TOKENS = {
    OperationKind.CHECK_EXISTS: "CHECK",
    OperationKind.LIST_DIRECTORY: "LIST",
    OperationKind.GET_OBJECT_METADATA: "HEAD",
    OperationKind.GET_ACL: "ACL",
    OperationKind.UPLOAD_OBJECT: "PUT",
    OperationKind.DOWNLOAD_OBJECT: "GET",
    OperationKind.DELETE_OBJECT: "DELETE",
}
_TOKEN_OPS = {tok: op for op, tok in _OP_TOKENS.items()}
_OBJECT_OPS = frozenset(
    {
        OperationKind.GET_OBJECT_METADATA,
        OperationKind.UPLOAD_OBJECT,
        OperationKind.DOWNLOAD_OBJECT,
        OperationKind.DELETE_OBJECT,
    }
)


class OutcomeKind(Enum):
    SUCCESS = "Success"
    FORBIDDEN = "ErrorForbidden"
    NO_SUCH_KEY = "ErrorNoSuchKey"
    OTHER = "ErrorOther"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    code: str | None = None

    def __post_init__(self) -> None:
        if (self.kind is OutcomeKind.OTHER) != (self.code is not None):
            raise ValueError("code is set exactly for ErrorOther outcomes")

    @classmethod
    def success(cls) -> "Outcome":
        return cls(OutcomeKind.SUCCESS)

    @classmethod
    def forbidden(cls) -> "Outcome":
        return cls(OutcomeKind.FORBIDDEN)

    @classmethod
    def no_such_key(cls) -> "Outcome":
        return cls(OutcomeKind.NO_SUCH_KEY)

    @classmethod
    def other(cls, code: str) -> "Outcome":
        return cls(OutcomeKind.OTHER, code)

    @property
    def is_success(self) -> bool:
        return self.kind is OutcomeKind.SUCCESS

    @property
    def status(self) -> str:
        """Status token used by the text log format."""
        if self.kind is OutcomeKind.SUCCESS:
            return "200"
        if self.kind is OutcomeKind.FORBIDDEN:
            return "403"
        if self.kind is OutcomeKind.NO_SUCH_KEY:
            return "404"
        return self.code or "000"

    @classmethod
    def from_status(cls, status: str) -> "Outcome":
        return {
            "200": cls.success(),
            "403": cls.forbidden(),
            "404": cls.no_such_key(),
        }.get(status) or cls.other(status)

    @property
    def label(self) -> str:
        if self.kind is OutcomeKind.OTHER:
            return f"ErrorOther:{self.code}"
        return self.kind.value

    @classmethod
    def from_label(cls, label: str) -> "Outcome":
        if label.startswith("ErrorOther:"):
            return cls.other(label.split(":", 1)[1])
        return cls(OutcomeKind(label))


@dataclass(frozen=True)
class AccessEvent:
    """One logged interaction with a bucket."""

    time: int
    ip: str
    identity: Identity
    bucket: str
    operation: OperationKind
    object_key: str | None
    outcome: Outcome
    request_uri: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "time", int(self.time))
        object.__setattr__(self, "ip", canonical_ip(self.ip))
        if self.operation.targets_object:
            if not self.object_key:
                raise ValueError(f"{self.operation.value} requires an object key")
        else:
            if self.object_key is not None:
                raise ValueError(f"{self.operation.value} must not carry an object key")
            if self.outcome.kind is OutcomeKind.NO_SUCH_KEY:
                raise ValueError("ErrorNoSuchKey only applies to object operations")

    @property
    def sort_key(self) -> tuple:
        return (
            self.time,
            self.ip,
            self.bucket,
            self.operation.value,
            self.object_key or "",
            self.identity.encode(),
            self.outcome.label,
            self.request_uri,
        )

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "ip": self.ip,
            "identity": self.identity.encode(),
            "bucket": self.bucket,
            "operation": self.operation.value,
            "object_key": self.object_key,
            "outcome": self.outcome.label,
            "request_uri": self.request_uri,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccessEvent":
        return cls(
            time=d["time"],
            ip=d["ip"],
            identity=Identity.decode(d["identity"]),
            bucket=d["bucket"],
            operation=OperationKind(d["operation"]),
            object_key=d.get("object_key"),
            outcome=Outcome.from_label(d["outcome"]),
            request_uri=d["request_uri"],
        )


class TokenKind(Enum):
    DOCUMENT_NAME = "DocumentName"
    SSH_PASSWORD = "SshPassword"


@dataclass(frozen=True)
class LureToken:
    """A time-windowed secret: a rotating document name or SSH password."""

    value: str
    kind: TokenKind
    bucket: str
    window_start: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "window_start", int(self.window_start))
        if self.window_start % HOUR != 0:
            raise ValueError("token windows are aligned to the top of the UTC hour")

    @property
    def window_end(self) -> int:
        return self.window_start + HOUR

    def covers(self, ts: int) -> bool:
        return self.window_start <= ts < self.window_end

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "kind": self.kind.value,
            "bucket": self.bucket,
            "window_start": self.window_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LureToken":
        return cls(d["value"], TokenKind(d["kind"]), d["bucket"], d["window_start"])


@dataclass(frozen=True)
class SshAttempt:
    """One SSH login attempt observed at the credential-sink host."""

    time: int
    ip: str
    username: str
    password: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "time", int(self.time))
        object.__setattr__(self, "ip", canonical_ip(self.ip))

    def to_dict(self) -> dict:
        return {"t": self.time, "ip": self.ip, "user": self.username, "pw": self.password}

    @classmethod
    def from_dict(cls, d: dict) -> "SshAttempt":
        return cls(d["t"], d["ip"], d["user"], d["pw"])


class CollusionCase(Enum):
    FAILURE = "failure"
    SUCCESS = "success"
    SSH = "ssh"


class Certainty(Enum):
    UNIQUE = "unique"
    CANDIDATE = "candidate"


@dataclass(frozen=True)
class CollusionEdge:
    """Evidence that `from_ip` supplied a token later used by `to_ip`."""

    from_ip: str
    to_ip: str
    case: CollusionCase
    token: LureToken
    certainty: Certainty

    def to_dict(self) -> dict:
        return {
            "from_ip": self.from_ip,
            "to_ip": self.to_ip,
            "case": self.case.value,
            "token": self.token.to_dict(),
            "certainty": self.certainty.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CollusionEdge":
        return cls(
            d["from_ip"],
            d["to_ip"],
            CollusionCase(d["case"]),
            LureToken.from_dict(d["token"]),
            Certainty(d["certainty"]),
        )


@dataclass(frozen=True)
class ActorCluster:
    """A set of IP addresses attributed to one actor."""

    actor_id: str
    ips: frozenset[str]
    evidence: tuple[CollusionEdge, ...] = ()

    def to_dict(self) -> dict:
        return {
            "actor_id": self.actor_id,
            "ips": sorted(self.ips),
            "evidence": [e.to_dict() for e in self.evidence],
        }


class EventStore:
    """Immutable, globally time-sorted view over access events.

    Single writer appends to the on-disk log; readers work from snapshots
    like this one.
    """

    def __init__(self, events: Iterable[AccessEvent] = (), *, presorted: bool = False):
        evs = tuple(events) if presorted else tuple(sorted(events, key=lambda e: e.sort_key))
        self._events = evs
        self._by_bucket: dict[str, tuple[AccessEvent, ...]] = {}

    @property
    def events(self) -> tuple[AccessEvent, ...]:
        return self._events

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[AccessEvent]:
        return iter(self._events)

    def for_bucket(self, bucket: str) -> tuple[AccessEvent, ...]:
        if not self._by_bucket:
            grouped: dict[str, list[AccessEvent]] = {}
            for e in self._events:
                grouped.setdefault(e.bucket, []).append(e)
            self._by_bucket = {b: tuple(evs) for b, evs in grouped.items()}
        return self._by_bucket.get(bucket, ())

    def buckets(self) -> set[str]:
        return {e.bucket for e in self._events}

    def ips(self) -> set[str]:
        return {e.ip for e in self._events}

    def save_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self._events:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> "EventStore":
        events = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(AccessEvent.from_dict(json.loads(line)))
        return cls(events)


def append_events_jsonl(path: str, events: Iterable[AccessEvent]) -> None:
    """Append events to an on-disk JSONL log (the single-writer side)."""
    with open(path, "a", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
