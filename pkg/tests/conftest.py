from __future__ import annotations

import pytest

from bucketlure.model import (
    AccessEvent,
    BucketSpec,
    Identity,
    OperationKind,
    Outcome,
    PILOT_POLICY,
    REFINED_POLICY,
    Strategy,
)


def make_event(
    time=0,
    ip="203.0.113.7",
    bucket="teslaproduction",
    operation=OperationKind.LIST_DIRECTORY,
    key=None,
    outcome=None,
    identity=Identity(),
    uri=None,
):
    if outcome is None:
        outcome = Outcome.success()
    if uri is None:
        uri = "GET /?list-type=2" if not operation.targets_object else f"GET /{key}"
    return AccessEvent(
        time=time,
        ip=ip,
        identity=identity,
        bucket=bucket,
        operation=operation,
        object_key=key if operation.targets_object else None,
        outcome=outcome,
        request_uri=uri,
    )


@pytest.fixture
def org_spec():
    return BucketSpec("teslaproduction", Strategy.org_keyword("tesla", "production"), PILOT_POLICY)


@pytest.fixture
def finance_spec():
    from bucketlure.model import CompanyAttributes

    return BucketSpec(
        "oracledownload",
        Strategy.fortune500("oracle", "download"),
        REFINED_POLICY,
        company_attrs=CompanyAttributes(91, True, False, "Technology"),
    )
