from __future__ import annotations

import math

import pytest

from bucketlure.model import CompanyAttributes, LeakChannel, validate_bucket_name
from bucketlure import namegen
from bucketlure.namegen import (
    InsufficientDisjointNames,
    NamePlan,
    compile_plan,
    fortune500_names,
    name_entropy,
    org_keyword_names,
    random_alphanumeric_names,
    tga_disjoint_names,
)


def test_tga_disjoint_basic():
    pairs = tga_disjoint_names({"A": ["x", "y", "z"], "B": ["y", "w"]}, per_tool=1, seed=3)
    picked = dict(pairs)
    assert picked["A"] in {"x", "z"}
    assert picked["B"] == "w"


def test_tga_disjoint_insufficient():
    with pytest.raises(InsufficientDisjointNames):
        tga_disjoint_names({"A": ["y"], "B": ["y"]}, per_tool=1)


def test_tga_disjoint_three_tools_four_each():
    lists = {
        "dnspop": ["lyncdiscover", "612", "origin-www", "liboyulecheng", "shared-a", "shared-b"],
        "slurp": ["advogado", "applogie", "blognovo", "click1mail", "shared-a"],
        "pastebin": ["screenshots-www", "www-slack", "www-download", "www-security", "shared-b"],
    }
    pairs = tga_disjoint_names(lists, per_tool=4, seed=0)
    assert len(pairs) == 12
    for tool, name in pairs:
        assert name in lists[tool]
        for other, names in lists.items():
            if other != tool:
                assert name not in names
    assert pairs == tga_disjoint_names(lists, per_tool=4, seed=0)


def test_org_keyword_names():
    specs = org_keyword_names(["tesla"], ["production"])
    assert [s.name for s in specs] == ["teslaproduction"]
    orgs = ["tesla", "walmart", "tinder", "ucsd", "stanford", "fbi", "cia", "nypd"]
    keywords = ["production", "download", "public", "private", "security", "hidden"]
    assert len(org_keyword_names(orgs, keywords)) == 48
    assert org_keyword_names([], keywords) == []
    with pytest.raises(ValueError):
        org_keyword_names(["Tesla Inc"], ["production"])


def test_fortune500_names():
    attrs = CompanyAttributes(290, True, False, "Retail")
    specs = fortune500_names([("carvana", attrs)])
    assert [s.name for s in specs] == ["carvanaproduction", "carvanadownload"]
    assert all(s.company_attrs == attrs for s in specs)

    roster = [(f"company{i}", CompanyAttributes(i + 1, i % 2 == 0, False, "Technology")) for i in range(60)]
    assert len(fortune500_names(roster)) == 120

    sanitized = fortune500_names([("a b&c", attrs)])
    assert sanitized[0].name == "abcproduction"


def test_random_alphanumeric_names():
    specs = random_alphanumeric_names(40, seed=11, leak_channels=tuple(LeakChannel) + tuple(LeakChannel)[:4])
    assert len(specs) == 40
    assert all(len(s.name) == 16 for s in specs)
    assert len({s.name for s in specs}) == 40
    leaked = [s for s in specs if s.leak_channels]
    assert len(leaked) == 20
    for i in range(0, 20, 2):
        assert specs[i].leak_channels == specs[i + 1].leak_channels

    again = random_alphanumeric_names(40, seed=11, leak_channels=tuple(LeakChannel) + tuple(LeakChannel)[:4])
    assert [s.name for s in again] == [s.name for s in specs]


def test_name_entropy():
    assert name_entropy("aaa") == 0.0
    assert name_entropy("ab") == pytest.approx(2.0)
    assert name_entropy("612") < name_entropy("teslaproduction")
    assert name_entropy("612") == pytest.approx(3 * math.log2(3))
    with pytest.raises(ValueError):
        name_entropy("")


def test_unique_valid_names_across_seeds():
    for seed in range(1000):
        specs = random_alphanumeric_names(4, seed=seed)
        specs += org_keyword_names(["tesla"], ["production", "hidden"])
        names = [s.name for s in specs]
        assert len(names) == len(set(names))
        assert all(validate_bucket_name(n) for n in names)


def test_wordlist_and_roster_files(tmp_path):
    wl = tmp_path / "tool.txt"
    wl.write_text("# comment\nalpha-bucket\n\nbeta-bucket\n", encoding="utf-8")
    assert namegen.load_wordlist(str(wl)) == ["alpha-bucket", "beta-bucket"]

    roster = tmp_path / "roster.csv"
    roster.write_text(
        "name,rank,sector,has_vdp,has_bounty\n"
        "Oracle,91,Technology,true,false\n"
        "Polaris,419,Transportation,no,no\n",
        encoding="utf-8",
    )
    rows = namegen.load_company_roster(str(roster))
    assert rows[0] == ("Oracle", CompanyAttributes(91, True, False, "Technology"))
    assert rows[1][1].has_vdp is False


def test_compile_plan_and_round_trip():
    request = {
        "tga": {"wordlists": {"dnspop": ["origin-www", "612", "lyncdiscover", "liboyulecheng"]}, "per_tool": 2},
        "org_keyword": {"orgs": ["tesla"], "keywords": ["production", "hidden"]},
        "crypto": ["bitcoin-confidential"],
        "control": ["dont-open"],
        "random": {"count": 4, "leak_channels": ["github"]},
    }
    plan = compile_plan(request, seed=5)
    assert plan.counts == {
        "tga": 2,
        "org_keyword": 2,
        "crypto": 1,
        "control": 1,
        "random_alphanumeric": 4,
    }
    assert NamePlan.from_dict(plan.to_dict()) == plan
    assert compile_plan(request, seed=5).to_dict() == plan.to_dict()


def test_plan_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        compile_plan({"crypto": ["same-name"], "control": ["same-name"]}, seed=0)
