from __future__ import annotations

import json
import os

import pytest

from bucketlure.attrib import (
    AbuseKind,
    classify_ssh,
    cluster_actors,
    collusion_edges,
)
from bucketlure.bucketsim import Deployment
from bucketlure.ingest import format_access_line, format_ssh_line
from bucketlure.model import (
    HOUR,
    Certainty,
    OperationKind,
    REFINED_POLICY,
    Strategy,
)
from bucketlure.scansim import (
    ScanKind,
    Scenario,
    StrategyProfile,
    run_simulation,
    score_attribution,
)

DATA = os.path.join(os.path.dirname(__file__), "data")


def load_scenario(name="collusion_demo.json"):
    with open(os.path.join(DATA, name), "r", encoding="utf-8") as fh:
        return Scenario.from_dict(json.load(fh))


def _finance_deployment(n=2, seed=0):
    from bucketlure.model import BucketSpec, CompanyAttributes

    companies = ["oracle", "nvidia", "target", "intuit", "carvana", "deere", "pfizer", "csx"]
    specs = [
        BucketSpec(
            f"{companies[i]}download",
            Strategy.fortune500(companies[i], "download"),
            REFINED_POLICY,
            company_attrs=CompanyAttributes(10 + i, i % 2 == 0, False, "Technology"),
        )
        for i in range(n)
    ]
    return Deployment.create(specs, "finance", seed, at=0)


def test_empty_population_empty_logs():
    dep = _finance_deployment()
    result = run_simulation(dep, [], duration=2 * HOUR, seed=1)
    assert len(result.store) == 0
    assert result.ssh_attempts == []


def test_simulation_is_deterministic():
    scenario = load_scenario()
    a = scenario.run()
    b = load_scenario().run()
    lines_a = [format_access_line(e) for e in a.store]
    lines_b = [format_access_line(e) for e in b.store]
    assert lines_a == lines_b
    assert [format_ssh_line(s) for s in a.ssh_attempts] == [
        format_ssh_line(s) for s in b.ssh_attempts
    ]
    c = load_scenario().run(seed=8)
    assert [format_access_line(e) for e in c.store] != lines_a


def test_colluder_chain_reproduces_expiry_replay():
    dep = _finance_deployment(1)
    profile = StrategyProfile(
        kind=ScanKind.VPN_COLLUDER,
        ip_pool_size=2,
        intel_delay=25 * HOUR,
        ips=("203.0.113.31", "203.0.113.32"),
    )
    result = run_simulation(dep, [profile], duration=30 * HOUR, seed=3)
    bucket = dep.specs[0].name
    ops = [
        (e.time, e.ip, e.operation, e.outcome.is_success)
        for e in result.store.for_bucket(bucket)
    ]
    # list -> expired download -> fresh list -> successful download
    assert [o[2] for o in ops] == [
        OperationKind.LIST_DIRECTORY,
        OperationKind.DOWNLOAD_OBJECT,
        OperationKind.LIST_DIRECTORY,
        OperationKind.DOWNLOAD_OBJECT,
    ]
    assert ops[0][1] == "203.0.113.31" and ops[1][1] == "203.0.113.32"
    assert ops[1][3] is False and ops[3][3] is True
    assert ops[1][0] - ops[0][0] == 25 * HOUR
    assert len(result.ssh_attempts) == 1
    assert result.ssh_attempts[0].ip == "203.0.113.31"

    edges = collusion_edges(result.store, dep.registry, result.ssh_attempts)
    pairs = {(e.from_ip, e.to_ip, e.case.value) for e in edges}
    assert ("203.0.113.31", "203.0.113.32", "failure") in pairs
    assert all(e.certainty is Certainty.UNIQUE for e in edges)

    clusters = cluster_actors(edges, result.store.ips() | {s.ip for s in result.ssh_attempts})
    precision, recall = score_attribution(clusters, result.truth)
    assert (precision, recall) == (1.0, 1.0)


def test_brute_exploiter_emits_full_prefix_space():
    dep = _finance_deployment(1)
    profile = StrategyProfile(kind=ScanKind.SSH_EXPLOITER, brute=True, ips=("203.0.113.40",))
    result = run_simulation(dep, [profile], duration=4 * HOUR, seed=2)
    assert len(result.ssh_attempts) == 1000
    assert {a.password[:3] for a in result.ssh_attempts} == {f"{i:03d}" for i in range(1000)}
    (cls,) = classify_ssh(result.ssh_attempts, dep.registry)
    assert cls.kind is AbuseKind.SSH_BRUTE_FORCE
    assert cls.distinct_password_count == 1000


def test_non_brute_exploiter_small_prefix_count():
    dep = _finance_deployment(1)
    profile = StrategyProfile(kind=ScanKind.SSH_EXPLOITER, brute=False, ips=("203.0.113.41",))
    result = run_simulation(dep, [profile], duration=4 * HOUR, seed=5)
    assert 1 <= len({a.password[:3] for a in result.ssh_attempts}) <= 8
    (cls,) = classify_ssh(result.ssh_attempts, dep.registry)
    assert cls.kind is AbuseKind.SSH_ATTEMPT
    assert 1 <= cls.distinct_password_count <= 8


def test_causality_no_token_used_before_observed():
    scenario = load_scenario()
    result = scenario.run()
    registry = result.deployment.registry
    actor_ips = {}
    for ip, actor in result.truth.ip_actor.items():
        actor_ips.setdefault(actor, set()).add(ip)
    for attempt in result.ssh_attempts:
        match = registry.match_password(attempt.password)
        assert match is not None
        _, token = match
        doc = registry.document_for(token)
        mates = actor_ips[result.truth.ip_actor[attempt.ip]]
        fetched = [
            e
            for e in result.store
            if e.operation is OperationKind.DOWNLOAD_OBJECT
            and e.object_key == doc.value
            and e.outcome.is_success
            and e.ip in mates
            and e.time <= attempt.time
        ]
        assert fetched, "an actor used a password none of its addresses had fetched"


def test_demo_scenario_cluster_sets():
    result = load_scenario().run()
    dep = result.deployment
    edges = collusion_edges(result.store, dep.registry, result.ssh_attempts)
    all_ips = result.store.ips() | {a.ip for a in result.ssh_attempts}
    clusters = cluster_actors(edges, all_ips)
    multi = sorted(sorted(c.ips) for c in clusters if len(c.ips) > 1)
    assert multi == [
        ["198.51.100.10", "198.51.100.11", "198.51.100.12"],
        ["198.51.100.5", "198.51.100.6"],
        ["198.51.100.8", "198.51.100.9"],
    ]
    crowd = next(c for c in clusters if c.ips == frozenset({"198.51.100.4"}))
    assert {e.from_ip for e in crowd.evidence if e.certainty is Certainty.CANDIDATE} == {
        "198.51.100.2",
        "198.51.100.3",
    }


def test_background_targets_resolution():
    dep = _finance_deployment(4)
    guesser = StrategyProfile(kind=ScanKind.RANDOM_GUESSER, rate=12, ips=("203.0.113.50",))
    org = StrategyProfile(
        kind=ScanKind.ORG_TARGETED, orgs=("oracle",), rate=12, ips=("203.0.113.51",)
    )
    result = run_simulation(dep, [guesser, org], duration=6 * HOUR, seed=11)
    org_buckets = {e.bucket for e in result.store if e.ip == "203.0.113.51"}
    assert org_buckets == {"oracledownload"}
    guesser_buckets = {e.bucket for e in result.store if e.ip == "203.0.113.50"}
    assert len(guesser_buckets) > 1


def test_duplicate_ip_assignment_rejected():
    dep = _finance_deployment(1)
    profiles = [
        StrategyProfile(kind=ScanKind.RANDOM_GUESSER, ips=("203.0.113.50",)),
        StrategyProfile(kind=ScanKind.ORG_TARGETED, orgs=("oracle",), ips=("203.0.113.50",)),
    ]
    with pytest.raises(ValueError, match="two actors"):
        run_simulation(dep, profiles, duration=2 * HOUR, seed=1)


def test_colluder_random_ip_choice():
    dep = _finance_deployment(1)
    profile = StrategyProfile(
        kind=ScanKind.VPN_COLLUDER, ip_pool_size=4, intel_delay=900,
        ip_choice="random",
    )
    result = run_simulation(dep, [profile], duration=20 * HOUR, seed=17)
    again = run_simulation(_finance_deployment(1), [profile], duration=20 * HOUR, seed=17)
    assert [format_access_line(e) for e in result.store] == [
        format_access_line(e) for e in again.store
    ]
    # downloads prefer never-lister addresses until the whole pool has listed
    downloads = [e for e in result.store if e.operation is OperationKind.DOWNLOAD_OBJECT]
    assert downloads
    fresh_downloads = 0
    for dl in downloads:
        listed_before = {
            e.ip for e in result.store
            if e.operation is OperationKind.LIST_DIRECTORY and e.time < dl.time
        }
        if dl.ip in listed_before:
            assert listed_before >= set(result.truth.ip_actor)  # pool exhausted
        else:
            fresh_downloads += 1
    assert fresh_downloads > 0
    with pytest.raises(ValueError, match="ip_choice"):
        StrategyProfile(kind=ScanKind.VPN_COLLUDER, ip_choice="alternating")


def test_ground_truth_covers_every_event_ip():
    result = load_scenario().run()
    for e in result.store:
        assert e.ip in result.truth.ip_actor
    for a in result.ssh_attempts:
        assert a.ip in result.truth.ip_actor


def test_score_attribution_edges():
    from bucketlure.model import ActorCluster
    from bucketlure.scansim import GroundTruth

    truth = GroundTruth({"a": "x", "b": "x", "c": "y"}, {})
    perfect = [
        ActorCluster("1", frozenset({"a", "b"})),
        ActorCluster("2", frozenset({"c"})),
    ]
    assert score_attribution(perfect, truth) == (1.0, 1.0)

    singletons = [ActorCluster(str(i), frozenset({ip})) for i, ip in enumerate("abc")]
    precision, recall = score_attribution(singletons, truth)
    assert precision == 1.0 and recall == 0.0


def test_profile_round_trip():
    profile = StrategyProfile(
        kind=ScanKind.VPN_COLLUDER, ip_pool_size=4, intel_delay=600,
        targets=("oracledownload",), ips=("203.0.113.1",), name="crew",
    )
    assert StrategyProfile.from_dict(profile.to_dict()) == profile
