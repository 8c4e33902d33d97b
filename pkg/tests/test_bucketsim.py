from __future__ import annotations

import random

import pytest

from bucketlure.bucketsim import (
    ACL_OWNER,
    BucketState,
    Deployment,
    InMemoryBackend,
    NoAccessError,
    NotConfiguredError,
    RealProviderAdapter,
    acl_descriptor,
    handle_request,
    list_directory,
)
from bucketlure.luregen import FileObject, PILOT_KEYS, document_key
from bucketlure.model import (
    HOUR,
    OperationKind,
    Outcome,
    UNAUTHENTICATED,
)

IP = "203.0.113.7"


def _pilot_state(org_spec):
    state = BucketState(org_spec, created_at=0)
    state.put(FileObject("Backup.pst", b"mail", 0))
    state.put(FileObject("README2", b"", 0))
    return state


def _req(state, op, t=10, key=None, **kw):
    return handle_request(
        state, time=t, ip=IP, identity=UNAUTHENTICATED, operation=op, key=key, **kw
    )


def test_delete_operator_file_forbidden_under_pilot(org_spec):
    state = _pilot_state(org_spec)
    result = _req(state, OperationKind.DELETE_OBJECT, key="Backup.pst")
    assert result.outcome == Outcome.forbidden()
    assert state.live("Backup.pst") is not None
    assert result.event.outcome == Outcome.forbidden()


def test_upload_without_transfer_forbidden_under_refined(finance_spec):
    state = BucketState(finance_spec, created_at=0)
    denied = _req(state, OperationKind.UPLOAD_OBJECT, key="Read.txt", payload=b"hi")
    assert denied.outcome == Outcome.forbidden()
    granted = _req(
        state, OperationKind.UPLOAD_OBJECT, key="Read.txt", payload=b"hi",
        ownership_transfer=True,
    )
    assert granted.outcome.is_success
    assert state.live("Read.txt").owner.is_operator


def test_download_missing_key(org_spec):
    state = _pilot_state(org_spec)
    result = _req(state, OperationKind.DOWNLOAD_OBJECT, key="nope.txt")
    assert result.outcome == Outcome.no_such_key()


def test_actor_may_delete_own_file_under_pilot(org_spec):
    state = _pilot_state(org_spec)
    _req(state, OperationKind.UPLOAD_OBJECT, key="mine.txt", payload=b"x")
    result = _req(state, OperationKind.DELETE_OBJECT, key="mine.txt", t=11)
    assert result.outcome.is_success
    assert state.live("mine.txt") is None
    # versioning keeps the actor's upload retrievable
    assert len(state.all_versions("mine.txt")) == 1


def test_all_deletes_forbidden_under_refined(finance_spec):
    state = BucketState(finance_spec, created_at=0)
    _req(state, OperationKind.UPLOAD_OBJECT, key="a.txt", payload=b"x", ownership_transfer=True)
    assert _req(state, OperationKind.DELETE_OBJECT, key="a.txt").outcome == Outcome.forbidden()
    assert _req(state, OperationKind.DELETE_OBJECT, key="ghost").outcome == Outcome.forbidden()


def test_versioning_keeps_history(org_spec):
    state = _pilot_state(org_spec)
    for i in range(3):
        _req(state, OperationKind.UPLOAD_OBJECT, key="v.txt", payload=f"v{i}".encode(), t=i)
    assert [v.data for v in state.all_versions("v.txt")] == [b"v0", b"v1", b"v2"]
    assert state.live("v.txt").data == b"v2"


def test_versioning_off_replaces(finance_spec):
    state = BucketState(finance_spec, created_at=0)
    for i in range(2):
        _req(state, OperationKind.UPLOAD_OBJECT, key="v.txt", payload=f"v{i}".encode(),
             ownership_transfer=True, t=i)
    assert [v.data for v in state.all_versions("v.txt")] == [b"v1"]


def test_list_directory_sorted(org_spec):
    state = BucketState(org_spec, created_at=0)
    state.put(FileObject("b", b"1", 0))
    state.put(FileObject("a", b"1", 0))
    assert list_directory(state) == ["a", "b"]
    empty = BucketState(org_spec, created_at=0)
    assert list_directory(empty) == []


def test_check_and_acl_always_succeed(finance_spec):
    state = BucketState(finance_spec, created_at=0)
    assert _req(state, OperationKind.CHECK_EXISTS).outcome.is_success
    acl = _req(state, OperationKind.GET_ACL)
    assert acl.outcome.is_success
    assert ACL_OWNER in acl.data.decode()
    assert ACL_OWNER in acl_descriptor(state)


def test_metadata_is_bodyless_success(org_spec):
    state = _pilot_state(org_spec)
    result = _req(state, OperationKind.GET_OBJECT_METADATA, key="Backup.pst")
    assert result.outcome.is_success
    assert result.data is None


def test_event_per_request_and_fields(org_spec):
    state = _pilot_state(org_spec)
    result = _req(state, OperationKind.LIST_DIRECTORY, t=99)
    event = result.event
    assert (event.time, event.ip, event.bucket) == (99, IP, org_spec.name)
    assert event.operation is OperationKind.LIST_DIRECTORY
    assert event.object_key is None
    assert event.request_uri == "GET /?list-type=2"


def test_backend_event_completeness(org_spec):
    backend = InMemoryBackend()
    backend.create_bucket(org_spec, 0)
    rng = random.Random(5)
    calls = 200
    for i in range(calls):
        op = rng.choice(list(OperationKind))
        backend.request(
            org_spec.name, time=i, ip=IP, operation=op,
            key="k.txt" if op.targets_object else None, payload=b"x",
        )
    assert len(backend.events) == calls


def test_operator_read_of_private_actor_file(org_spec):
    backend = InMemoryBackend()
    backend.create_bucket(org_spec, 0)
    backend.request(
        org_spec.name, time=1, ip=IP, operation=OperationKind.UPLOAD_OBJECT,
        key="secret.bin", payload=b"zz", private=True,
    )
    with pytest.raises(NoAccessError):
        backend.get_object(org_spec.name, "secret.bin")


def test_adapter_stub_refuses():
    adapter = RealProviderAdapter()
    with pytest.raises(NotConfiguredError):
        adapter.list_keys("any")
    with pytest.raises(NotImplementedError):
        RealProviderAdapter("https://example", {"key": "x"}).list_keys("any")


def test_deployment_create_pilot(org_spec):
    dep = Deployment.create([org_spec], "pilot", seed=3, at=0)
    assert dep.backend.list_keys(org_spec.name) == sorted(PILOT_KEYS)
    assert len(dep.registry) == 0


def test_deployment_create_finance_and_rotate(finance_spec):
    dep = Deployment.create([finance_spec], "finance", seed=3, at=0)
    keys = dep.backend.list_keys(finance_spec.name)
    assert keys[0] == document_key(0)
    reports = dep.rotate_until(2 * HOUR + 100)
    assert sum(1 for r in reports if r.rotated) == 2
    assert dep.backend.list_keys(finance_spec.name)[0] == document_key(2 * HOUR)
    assert dep.rotate_until(2 * HOUR + 200) == []


def test_deployment_save_load_round_trip(tmp_path, finance_spec, org_spec):
    dep = Deployment.create([finance_spec, org_spec], "finance", seed=3, at=0)
    dep.backend.request(
        finance_spec.name, time=50, ip=IP, operation=OperationKind.LIST_DIRECTORY
    )
    dep.rotate_until(HOUR + 5)
    path = tmp_path / "state.json"
    dep.save(str(path))
    again = Deployment.load(str(path))
    assert again.to_dict() == dep.to_dict()
    assert again.clock == dep.clock
    assert again.backend.list_keys(finance_spec.name) == dep.backend.list_keys(finance_spec.name)


def test_deployment_round_trip_keeps_version_tombstones(tmp_path, org_spec):
    dep = Deployment.create([org_spec], "pilot", seed=1, at=0)
    dep.backend.request(
        org_spec.name, time=5, ip=IP, operation=OperationKind.UPLOAD_OBJECT,
        key="mine.txt", payload=b"v1",
    )
    dep.backend.request(
        org_spec.name, time=6, ip=IP, operation=OperationKind.DELETE_OBJECT, key="mine.txt"
    )
    path = tmp_path / "state.json"
    dep.save(str(path))
    again = Deployment.load(str(path))
    state = again.backend.state(org_spec.name)
    assert state.live("mine.txt") is None
    assert [v.data for v in state.all_versions("mine.txt")] == [b"v1"]
    assert again.to_dict() == dep.to_dict()


def test_fetch_access_log_round_trips(org_spec):
    from bucketlure.ingest import parse_access_line

    backend = InMemoryBackend()
    backend.create_bucket(org_spec, 0)
    backend.request(org_spec.name, time=5, ip=IP, operation=OperationKind.LIST_DIRECTORY)
    backend.request(
        org_spec.name, time=6, ip=IP, operation=OperationKind.DOWNLOAD_OBJECT, key="x y.txt"
    )
    lines = backend.fetch_access_log()
    events = [parse_access_line(l) for l in lines]
    assert events == sorted(backend.events, key=lambda e: e.sort_key)
    assert events[1].object_key == "x y.txt"
