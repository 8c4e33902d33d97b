"""In-memory storage backend: policy enforcement, versioning, event emission.

Also defines the adapter surface a real cloud provider backend would have to
satisfy (create/put/delete/list/get plus access-log fetch); the shipped
provider adapter is a stub that refuses to run without explicit
configuration so the whole package works with zero cloud credentials.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .luregen import (
    DEFAULT_BASE_KEY,
    FileObject,
    FileOwner,
    RotationReport,
    TokenRegistry,
    pilot_profile,
    rotate,
)
from .model import (
    AccessEvent,
    BucketSpec,
    Identity,
    OperationKind,
    Outcome,
    UploadRule,
    hour_floor,
    HOUR,
)

# Surfaced to visitors via GetAcl; makes the operator identifiable on request.
ACL_OWNER = "campus-research-storage-admin"


@dataclass
class BucketState:
    """Mutable per-bucket object state: key -> version history.

    Version lists grow in upload order; None entries are delete markers.
    With versioning off a key holds at most one live version.
    """

    spec: BucketSpec
    created_at: int
    versions: dict[str, list[FileObject | None]] = field(default_factory=dict)

    def live(self, key: str) -> FileObject | None:
        history = self.versions.get(key)
        if not history:
            return None
        return history[-1]

    def live_keys(self) -> list[str]:
        return sorted(k for k, h in self.versions.items() if h and h[-1] is not None)

    def all_versions(self, key: str) -> list[FileObject]:
        return [v for v in self.versions.get(key, []) if v is not None]

    def has_operator_version(self, key: str) -> bool:
        return any(v is not None and v.owner.is_operator for v in self.versions.get(key, []))

    def put(self, obj: FileObject) -> None:
        if self.spec.policy.versioning:
            self.versions.setdefault(obj.key, []).append(obj)
        else:
            self.versions[obj.key] = [obj]

    def delete(self, key: str) -> None:
        if self.spec.policy.versioning:
            self.versions.setdefault(key, []).append(None)
        else:
            self.versions.pop(key, None)


def list_directory(state: BucketState) -> list[str]:
    """Visible keys in lexicographic order."""
    return state.live_keys()


def acl_descriptor(state: BucketState) -> str:
    return f"owner={ACL_OWNER}; bucket={state.spec.name}; grants=public-read"


@dataclass(frozen=True)
class RequestResult:
    outcome: Outcome
    event: AccessEvent
    data: bytes | None = None


def _uri_for(operation: OperationKind, key: str | None) -> str:
    if operation is OperationKind.CHECK_EXISTS:
        return "HEAD /"
    if operation is OperationKind.LIST_DIRECTORY:
        return "GET /?list-type=2"
    if operation is OperationKind.GET_ACL:
        return "GET /?acl"
    verb = {
        OperationKind.GET_OBJECT_METADATA: "HEAD",
        OperationKind.UPLOAD_OBJECT: "PUT",
        OperationKind.DOWNLOAD_OBJECT: "GET",
        OperationKind.DELETE_OBJECT: "DELETE",
    }[operation]
    return f"{verb} /{key}"


def handle_request(
    state: BucketState,
    *,
    time: int,
    ip: str,
    identity: Identity,
    operation: OperationKind,
    key: str | None = None,
    payload: bytes | None = None,
    ownership_transfer: bool = False,
    private: bool = False,
) -> RequestResult:
    """Apply one visitor request against the bucket's policy.

    Policy violations surface as ErrorForbidden outcomes in the returned
    event, never as exceptions; exactly one event is produced per call.
    """
    policy = state.spec.policy
    outcome = Outcome.success()
    data: bytes | None = None

    if operation is OperationKind.CHECK_EXISTS or operation is OperationKind.GET_ACL:
        if operation is OperationKind.GET_ACL:
            data = acl_descriptor(state).encode()
    elif operation is OperationKind.LIST_DIRECTORY:
        if not policy.allow_list:
            outcome = Outcome.forbidden()
        else:
            data = "\n".join(list_directory(state)).encode()
    elif operation is OperationKind.DOWNLOAD_OBJECT:
        if not policy.allow_download:
            outcome = Outcome.forbidden()
        else:
            obj = state.live(key)  # type: ignore[arg-type]
            if obj is None:
                outcome = Outcome.no_such_key()
            else:
                data = obj.data
    elif operation is OperationKind.GET_OBJECT_METADATA:
        if not policy.allow_download:
            outcome = Outcome.forbidden()
        elif state.live(key) is None:  # type: ignore[arg-type]
            outcome = Outcome.no_such_key()
    elif operation is OperationKind.UPLOAD_OBJECT:
        if policy.allow_upload is UploadRule.NO:
            outcome = Outcome.forbidden()
        elif policy.allow_upload is UploadRule.YES_WITH_OWNERSHIP_TRANSFER and not ownership_transfer:
            outcome = Outcome.forbidden()
        else:
            owner = (
                FileOwner.operator()
                if ownership_transfer
                else FileOwner.actor(identity, readable=not private)
            )
            state.put(FileObject(key, payload or b"", time, owner))  # type: ignore[arg-type]
    elif operation is OperationKind.DELETE_OBJECT:
        obj = state.live(key)  # type: ignore[arg-type]
        protected = state.has_operator_version(key)  # type: ignore[arg-type]
        if protected and not policy.allow_delete_owner_files:
            outcome = Outcome.forbidden()
        elif not protected and not policy.allow_delete_actor_files:
            outcome = Outcome.forbidden()
        elif obj is None:
            outcome = Outcome.no_such_key()
        else:
            state.delete(key)  # type: ignore[arg-type]
    else:  # pragma: no cover - OperationKind is exhaustive
        raise ValueError(f"unsupported operation: {operation}")

    event = AccessEvent(
        time=time,
        ip=ip,
        identity=identity,
        bucket=state.spec.name,
        operation=operation,
        object_key=key if operation.targets_object else None,
        outcome=outcome,
        request_uri=_uri_for(operation, key),
    )
    return RequestResult(outcome, event, data)


class StorageBackend(Protocol):
    """Operator-side surface a storage provider must offer.

    `fetch_access_log` returns lines in the ingest text format, newest last.
    """

    def create_bucket(self, spec: BucketSpec, at: int) -> None: ...

    def put_object(self, bucket: str, obj: FileObject) -> None: ...

    def delete_object(self, bucket: str, key: str) -> None: ...

    def get_object(self, bucket: str, key: str) -> FileObject | None: ...

    def list_keys(self, bucket: str) -> list[str]: ...

    def fetch_access_log(self, since: int = 0) -> list[str]: ...


class NoAccessError(PermissionError):
    """Operator read refused: the uploader kept ownership and a private ACL."""


class InMemoryBackend:
    """Reference backend: everything in process, one lock per bucket."""

    def __init__(self) -> None:
        self.buckets: dict[str, BucketState] = {}
        self.events: list[AccessEvent] = []
        self._locks: dict[str, threading.Lock] = {}
        self._log_lock = threading.Lock()

    def create_bucket(self, spec: BucketSpec, at: int) -> None:
        if spec.name in self.buckets:
            raise ValueError(f"bucket exists: {spec.name}")
        self.buckets[spec.name] = BucketState(spec, at)
        self._locks[spec.name] = threading.Lock()

    def state(self, bucket: str) -> BucketState:
        return self.buckets[bucket]

    def put_object(self, bucket: str, obj: FileObject) -> None:
        with self._locks[bucket]:
            self.buckets[bucket].put(obj)

    def delete_object(self, bucket: str, key: str) -> None:
        with self._locks[bucket]:
            self.buckets[bucket].delete(key)

    def get_object(self, bucket: str, key: str) -> FileObject | None:
        obj = self.buckets[bucket].live(key)
        if obj is not None and not obj.owner.is_operator and not obj.owner.readable:
            raise NoAccessError(f"{bucket}/{key}: uploader retained ownership")
        return obj

    def list_keys(self, bucket: str) -> list[str]:
        return self.buckets[bucket].live_keys()

    def request(
        self,
        bucket: str,
        *,
        time: int,
        ip: str,
        identity: Identity = Identity(),
        operation: OperationKind,
        key: str | None = None,
        payload: bytes | None = None,
        ownership_transfer: bool = False,
        private: bool = False,
    ) -> RequestResult:
        """Visitor request path: mutate state and log exactly one event."""
        with self._locks[bucket]:
            result = handle_request(
                self.buckets[bucket],
                time=time,
                ip=ip,
                identity=identity,
                operation=operation,
                key=key,
                payload=payload,
                ownership_transfer=ownership_transfer,
                private=private,
            )
        with self._log_lock:
            self.events.append(result.event)
        return result

    def fetch_access_log(self, since: int = 0) -> list[str]:
        from .ingest import format_access_line

        with self._log_lock:
            events = sorted(
                (e for e in self.events if e.time >= since), key=lambda e: e.sort_key
            )
        return [format_access_line(e) for e in events]


class NotConfiguredError(RuntimeError):
    pass


class RealProviderAdapter:
    """Placeholder for a live provider backend.

    Satisfies the StorageBackend surface but refuses every call until it is
    constructed with explicit endpoint credentials; nothing in this package
    configures it. Translation of the provider's native access-log format
    into the ingest text format is this adapter's job.
    """

    def __init__(self, endpoint: str | None = None, credentials: dict | None = None):
        self.endpoint = endpoint
        self.credentials = credentials

    def _refuse(self) -> None:
        if not self.endpoint or not self.credentials:
            raise NotConfiguredError(
                "real-provider adapter needs explicit endpoint and credentials"
            )
        raise NotImplementedError("no live provider integration is shipped")

    def create_bucket(self, spec: BucketSpec, at: int) -> None:
        self._refuse()

    def put_object(self, bucket: str, obj: FileObject) -> None:
        self._refuse()

    def delete_object(self, bucket: str, key: str) -> None:
        self._refuse()

    def get_object(self, bucket: str, key: str) -> FileObject | None:
        self._refuse()

    def list_keys(self, bucket: str) -> list[str]:
        self._refuse()

    def fetch_access_log(self, since: int = 0) -> list[str]:
        self._refuse()


class Deployment:
    """A set of decoy buckets plus the registry and rotation clock."""

    def __init__(
        self,
        backend: InMemoryBackend,
        specs: list[BucketSpec],
        profile: str,
        seed: int,
        created_at: int,
        registry: TokenRegistry,
        clock: int,
    ):
        self.backend = backend
        self.specs = specs
        self.profile = profile
        self.seed = seed
        self.created_at = created_at
        self.registry = registry
        self.clock = clock

    @classmethod
    def create(
        cls,
        specs: Iterable[BucketSpec],
        profile: str,
        seed: int,
        at: int = 0,
        base_key: str = DEFAULT_BASE_KEY,
    ) -> "Deployment":
        if profile not in ("pilot", "finance"):
            raise ValueError(f"unknown content profile: {profile}")
        backend = InMemoryBackend()
        registry = TokenRegistry(base_key)
        specs = list(specs)
        for spec in specs:
            backend.create_bucket(spec, at)
        dep = cls(backend, specs, profile, seed, at, registry, clock=at)
        if profile == "pilot":
            for spec in specs:
                for obj in pilot_profile(seed, at):
                    backend.put_object(spec.name, obj)
        else:
            for spec in specs:
                rotate(spec, at, registry, backend, seed)
        return dep

    def spec_map(self) -> dict[str, BucketSpec]:
        return {s.name: s for s in self.specs}

    def rotate_until(self, now: int) -> list[RotationReport]:
        """Advance rotation window by window so every hour mints tokens."""
        if self.profile != "finance":
            self.clock = max(self.clock, now)
            return []
        reports = []
        window = hour_floor(self.clock)
        while window < hour_floor(now):
            window += HOUR
            for spec in self.specs:
                reports.append(rotate(spec, window, self.registry, self.backend, self.seed))
        self.clock = max(self.clock, now)
        return reports

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        buckets = []
        for spec in self.specs:
            state = self.backend.state(spec.name)
            objects = []
            for key in sorted(state.versions):
                for version in state.versions[key]:
                    objects.append(
                        None
                        if version is None
                        else {
                            "key": version.key,
                            "data": base64.b64encode(version.data).decode(),
                            "uploaded_at": version.uploaded_at,
                            "owner": version.owner.to_dict(),
                        }
                    )
                objects.append({"end_of_history": key})
            buckets.append({"spec": spec.to_dict(), "objects": objects})
        return {
            "profile": self.profile,
            "seed": self.seed,
            "created_at": self.created_at,
            "clock": self.clock,
            "base_key": self.registry.base_key,
            "registry": [t.to_dict() for t in self.registry.all_tokens()],
            "buckets": buckets,
            "events": [e.to_dict() for e in self.backend.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Deployment":
        backend = InMemoryBackend()
        registry = TokenRegistry(d.get("base_key", DEFAULT_BASE_KEY))
        from .model import LureToken

        for tok in d.get("registry", []):
            registry.add(LureToken.from_dict(tok))
        specs = []
        for bucket in d["buckets"]:
            spec = BucketSpec.from_dict(bucket["spec"])
            specs.append(spec)
            backend.create_bucket(spec, d["created_at"])
            state = backend.state(spec.name)
            history: list[FileObject | None] = []
            for entry in bucket["objects"]:
                if entry is None:
                    history.append(None)
                elif "end_of_history" in entry:
                    state.versions[entry["end_of_history"]] = history
                    history = []
                else:
                    history.append(
                        FileObject(
                            entry["key"],
                            base64.b64decode(entry["data"]),
                            entry["uploaded_at"],
                            FileOwner.from_dict(entry["owner"]),
                        )
                    )
        for ev in d.get("events", []):
            backend.events.append(AccessEvent.from_dict(ev))
        return cls(
            backend,
            specs,
            d["profile"],
            d["seed"],
            d["created_at"],
            registry,
            d.get("clock", d["created_at"]),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Deployment":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
