"""Deterministic scanner-population simulator with ground-truth identities.

Actors are built as precomputed step schedules on one logical clock;
rotation advances before every executed step so delayed replays genuinely
hit expired tokens. Identical inputs produce byte-identical logs.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .bucketsim import Deployment
from .luregen import DOC_KEY_PREFIX
from .model import (
    HOUR,
    BucketSpec,
    EventStore,
    LeakChannel,
    OperationKind,
    SshAttempt,
    StrategyKind,
    canonical_ip,
    hour_floor,
)

SSH_USERNAME = "bain_fin_analytics"

_PASSWORD_RE = re.compile(r"^<token>(\S+)$", re.MULTILINE)


class ScanKind(Enum):
    TGA_LIST = "tga_list"
    ORG_TARGETED = "org_targeted"
    RANDOM_GUESSER = "random_guesser"
    LEAK_HARVESTER = "leak_harvester"
    VPN_COLLUDER = "vpn_colluder"
    SSH_EXPLOITER = "ssh_exploiter"


@dataclass(frozen=True)
class StrategyProfile:
    """One simulated actor: scanning behavior plus its address pool.

    `start`/`end` are offsets from the deployment creation time. Explicit
    `targets` pin the actor to specific buckets and `ips` pins its address
    pool; both otherwise derive from the seed.
    """

    kind: ScanKind
    rate: float = 2.0  # operations per hour for background scanners
    start: int = 0
    end: int | None = None
    tool: str | None = None
    orgs: tuple[str, ...] = ()
    channel: LeakChannel | None = None
    ip_pool_size: int = 1
    intel_delay: int = 0
    brute: bool = False
    with_ssh: bool = True
    ip_choice: str = "round_robin"  # or "random"
    targets: tuple[str, ...] = ()
    ips: tuple[str, ...] = ()
    name: str | None = None

    def __post_init__(self) -> None:
        if self.ip_pool_size < 1:
            raise ValueError("ip_pool_size must be >= 1")
        if self.intel_delay < 0:
            raise ValueError("intel_delay must be >= 0")
        if self.ip_choice not in ("round_robin", "random"):
            raise ValueError(f"unknown ip_choice: {self.ip_choice!r}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        defaults = StrategyProfile(self.kind)
        for key in (
            "rate", "start", "end", "tool", "ip_pool_size", "intel_delay",
            "brute", "with_ssh", "ip_choice", "name",
        ):
            v = getattr(self, key)
            if v != getattr(defaults, key):
                d[key] = v
        if self.orgs:
            d["orgs"] = list(self.orgs)
        if self.channel:
            d["channel"] = self.channel.value
        if self.targets:
            d["targets"] = list(self.targets)
        if self.ips:
            d["ips"] = list(self.ips)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyProfile":
        return cls(
            kind=ScanKind(d["kind"]),
            rate=d.get("rate", 2.0),
            start=d.get("start", 0),
            end=d.get("end"),
            tool=d.get("tool"),
            orgs=tuple(d.get("orgs", ())),
            channel=LeakChannel(d["channel"]) if d.get("channel") else None,
            ip_pool_size=d.get("ip_pool_size", 1),
            intel_delay=d.get("intel_delay", 0),
            brute=d.get("brute", False),
            with_ssh=d.get("with_ssh", True),
            ip_choice=d.get("ip_choice", "round_robin"),
            targets=tuple(d.get("targets", ())),
            ips=tuple(d.get("ips", ())),
            name=d.get("name"),
        )


@dataclass
class GroundTruth:
    """Which IP belongs to which simulated actor."""

    ip_actor: dict[str, str]
    profiles: dict[str, StrategyProfile]

    def to_dict(self) -> dict:
        return {
            "ip_actor": dict(sorted(self.ip_actor.items())),
            "profiles": {k: p.to_dict() for k, p in sorted(self.profiles.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            ip_actor=dict(d["ip_actor"]),
            profiles={k: StrategyProfile.from_dict(p) for k, p in d["profiles"].items()},
        )


@dataclass
class SimulationResult:
    store: EventStore
    ssh_attempts: list[SshAttempt]
    truth: GroundTruth
    deployment: Deployment


@dataclass(frozen=True)
class _Step:
    time: int
    actor: int
    seq: int
    op: str
    target: str
    ip: str
    arg: str = ""


@dataclass
class _ActorRun:
    label: str
    profile: StrategyProfile
    ips: tuple[str, ...]
    exec_rng: random.Random
    seen_keys: dict[str, list[str]] = field(default_factory=dict)
    remembered_doc: dict[str, str] = field(default_factory=dict)
    last_doc_body: str = ""


def _resolve_targets(
    profile: StrategyProfile, specs: Sequence[BucketSpec], rng: random.Random
) -> tuple[str, ...]:
    if profile.targets:
        return profile.targets
    kind = profile.kind
    if kind is ScanKind.TGA_LIST:
        return tuple(
            s.name
            for s in specs
            if s.strategy.kind is StrategyKind.TGA and s.strategy.tool == profile.tool
        )
    if kind is ScanKind.ORG_TARGETED:
        wanted = set(profile.orgs)
        return tuple(
            s.name
            for s in specs
            if (s.strategy.org in wanted) or (s.strategy.company in wanted)
        )
    if kind is ScanKind.LEAK_HARVESTER:
        return tuple(s.name for s in specs if profile.channel in s.leak_channels)
    if kind is ScanKind.RANDOM_GUESSER:
        return tuple(s.name for s in specs)
    # Colluders and exploiters work a single bucket.
    names = [s.name for s in specs]
    return (rng.choice(names),) if names else ()


_BACKGROUND = (
    ScanKind.TGA_LIST,
    ScanKind.ORG_TARGETED,
    ScanKind.RANDOM_GUESSER,
    ScanKind.LEAK_HARVESTER,
)


def _background_steps(
    profile: StrategyProfile,
    actor: int,
    ips: tuple[str, ...],
    targets: tuple[str, ...],
    t0: int,
    t_end: int,
    rng: random.Random,
) -> list[_Step]:
    steps = []
    t = float(t0 + profile.start)
    stop = t0 + profile.end if profile.end is not None else t_end
    seq = 0
    ip_i = 0
    target_i = 0
    while True:
        t += rng.expovariate(profile.rate / HOUR)
        if t >= min(stop, t_end):
            break
        if profile.kind is ScanKind.TGA_LIST:
            target = targets[target_i % len(targets)]
            target_i += 1
        else:
            target = rng.choice(targets)
        ip = ips[ip_i % len(ips)]
        ip_i += 1
        steps.append(_Step(int(t), actor, seq, "visit", target, ip))
        seq += 1
    return steps


def _next_ip(ips: tuple[str, ...], pointer: list[int], skip: set[str]) -> str:
    for _ in range(len(ips)):
        ip = ips[pointer[0] % len(ips)]
        pointer[0] += 1
        if ip not in skip:
            return ip
    return ips[pointer[0] % len(ips)]


def _colluder_steps(
    profile: StrategyProfile,
    actor: int,
    ips: tuple[str, ...],
    targets: tuple[str, ...],
    t0: int,
    t_end: int,
    rng: random.Random,
) -> list[_Step]:
    """Chains that split the list/download/ssh sequence across the pool.

    Each chain starts just after an hour boundary so the intel delay alone
    decides whether the replayed download hits a live or an expired document
    window. Role addresses rotate through the pool (or draw at random with
    ip_choice="random"); downloads go to addresses that have never listed,
    so each chain links fresh pairs.
    """
    target = targets[0]
    delay = profile.intel_delay
    steps: list[_Step] = []
    pointer = [0]
    listers: set[str] = set()
    seq = 0
    chain_span = delay + 600
    interval = (chain_span // HOUR + 2) * HOUR
    chain_start = hour_floor(t0 + profile.start) + HOUR + 120
    stop = t0 + profile.end if profile.end is not None else t_end

    def pick(skip: set[str]) -> str:
        if profile.ip_choice == "random":
            free = [ip for ip in ips if ip not in skip]
            return rng.choice(free or list(ips))
        return _next_ip(ips, pointer, skip)

    def emit(t: int, op: str, ip: str, arg: str = "") -> None:
        nonlocal seq
        steps.append(_Step(t, actor, seq, op, target, ip, arg))
        seq += 1

    while chain_start + chain_span + 400 < min(stop, t_end):
        expired = hour_floor(chain_start + delay) > hour_floor(chain_start)
        lister = pick(set())
        listers.add(lister)
        emit(chain_start, "list", lister)
        downloader = pick(listers)
        emit(chain_start + delay, "get_doc", downloader)
        if expired:
            relister = pick(set())
            listers.add(relister)
            emit(chain_start + delay + 10, "list", relister)
            downloader = pick(listers)
            emit(chain_start + delay + 20, "get_doc", downloader)
            ssh_ip = lister
        else:
            ssh_ip = pick({downloader})
        if profile.with_ssh:
            emit(chain_start + delay + 340, "ssh", ssh_ip)
        chain_start += interval
    return steps


def _exploiter_steps(
    profile: StrategyProfile,
    actor: int,
    ips: tuple[str, ...],
    targets: tuple[str, ...],
    t0: int,
    t_end: int,
    rng: random.Random,
) -> list[_Step]:
    target = targets[0]
    ip = ips[0]
    t = hour_floor(t0 + profile.start) + HOUR + 60
    steps = [
        _Step(t, actor, 0, "list", target, ip),
        _Step(t + 30, actor, 1, "get_doc", target, ip),
    ]
    seq = 2
    if profile.brute:
        prefixes = [f"{i:03d}" for i in range(1000)]
        spacing = 2
    else:
        count = rng.randint(1, 8)
        prefixes = sorted({f"{rng.randrange(1000):03d}" for _ in range(count)})
        spacing = 5
    for i, prefix in enumerate(prefixes):
        steps.append(_Step(t + 90 + i * spacing, actor, seq, "ssh", target, ip, prefix))
        seq += 1
    return steps


def _generated_ips(actor: int, pool: int) -> tuple[str, ...]:
    return tuple(f"10.{(actor >> 8) & 255}.{actor & 255}.{i + 1}" for i in range(pool))


def run_simulation(
    deployment: Deployment,
    population: Sequence[StrategyProfile],
    duration: int,
    seed: int,
) -> SimulationResult:
    """Drive a population against a deployment for `duration` seconds."""
    if duration < HOUR:
        raise ValueError("duration must be at least one hour")
    rng = random.Random(("scansim", seed).__repr__())
    t0 = deployment.created_at
    t_end = t0 + duration

    runs: list[_ActorRun] = []
    all_steps: list[_Step] = []
    ip_actor: dict[str, str] = {}
    profiles: dict[str, StrategyProfile] = {}
    for idx, profile in enumerate(population):
        build_rng = random.Random(rng.randrange(2**63))
        exec_rng = random.Random(rng.randrange(2**63))
        label = profile.name or f"{profile.kind.value}-{idx:03d}"
        ips = tuple(canonical_ip(i) for i in profile.ips) or _generated_ips(
            idx, profile.ip_pool_size
        )
        targets = _resolve_targets(profile, deployment.specs, build_rng)
        runs.append(_ActorRun(label, profile, ips, exec_rng))
        profiles[label] = profile
        for ip in ips:
            if ip in ip_actor:
                raise ValueError(f"ip {ip} assigned to two actors")
            ip_actor[ip] = label
        if not targets:
            continue
        if profile.kind in _BACKGROUND:
            all_steps.extend(
                _background_steps(profile, idx, ips, targets, t0, t_end, build_rng)
            )
        elif profile.kind is ScanKind.VPN_COLLUDER:
            all_steps.extend(
                _colluder_steps(profile, idx, ips, targets, t0, t_end, build_rng)
            )
        else:
            all_steps.extend(
                _exploiter_steps(profile, idx, ips, targets, t0, t_end, build_rng)
            )

    all_steps.sort(key=lambda s: (s.time, s.actor, s.seq))
    ssh_attempts: list[SshAttempt] = []
    backend = deployment.backend
    for step in all_steps:
        deployment.rotate_until(step.time)
        run = runs[step.actor]
        if step.op == "ssh":
            if not run.last_doc_body:
                continue
            m = _PASSWORD_RE.search(run.last_doc_body)
            if not m:
                continue
            prefix = step.arg or f"{run.exec_rng.randrange(1000):03d}"
            ssh_attempts.append(
                SshAttempt(step.time, step.ip, SSH_USERNAME, prefix + m.group(1))
            )
            continue
        if step.op == "list":
            result = backend.request(
                step.target, time=step.time, ip=step.ip,
                operation=OperationKind.LIST_DIRECTORY,
            )
            if result.outcome.is_success and result.data is not None:
                keys = result.data.decode().split("\n") if result.data else []
                run.seen_keys[step.target] = [k for k in keys if k]
                for key in run.seen_keys[step.target]:
                    if key.startswith(DOC_KEY_PREFIX):
                        run.remembered_doc[step.target] = key
                        break
            continue
        if step.op == "get_doc":
            key = run.remembered_doc.get(step.target)
            if key is None:
                continue
            result = backend.request(
                step.target, time=step.time, ip=step.ip,
                operation=OperationKind.DOWNLOAD_OBJECT, key=key,
            )
            if result.outcome.is_success and result.data is not None:
                run.last_doc_body = result.data.decode("utf-8", errors="replace")
            continue
        if step.op == "visit":
            _background_visit(backend, run, step)
            continue
        raise AssertionError(f"unknown step op: {step.op}")

    deployment.rotate_until(t_end)
    ssh_attempts.sort(key=lambda a: (a.time, a.ip, a.password))
    store = EventStore(backend.events)
    return SimulationResult(store, ssh_attempts, GroundTruth(ip_actor, profiles), deployment)


def _background_visit(backend, run: _ActorRun, step: _Step) -> None:
    rng = run.exec_rng
    seen = run.seen_keys.get(step.target)
    if seen is None:
        op = rng.choice((OperationKind.CHECK_EXISTS, OperationKind.LIST_DIRECTORY))
    else:
        op = rng.choices(
            (
                OperationKind.CHECK_EXISTS,
                OperationKind.LIST_DIRECTORY,
                OperationKind.GET_ACL,
                OperationKind.GET_OBJECT_METADATA,
                OperationKind.DOWNLOAD_OBJECT,
            ),
            weights=(35, 20, 15, 15, 15),
        )[0]
    key = None
    if op.targets_object:
        key = rng.choice(seen) if seen else "index.html"
    result = backend.request(
        step.target, time=step.time, ip=step.ip, operation=op, key=key
    )
    if op is OperationKind.LIST_DIRECTORY and result.outcome.is_success:
        keys = result.data.decode().split("\n") if result.data else []
        run.seen_keys[step.target] = [k for k in keys if k]


def score_attribution(
    clusters: Sequence,
    truth: GroundTruth,
    observed_ips: set[str] | None = None,
) -> tuple[float, float]:
    """Pairwise precision/recall of same-actor IP pairs.

    Truth pairs are restricted to observed addresses: a pool address an
    actor never used cannot be recovered from logs and should not count
    against recall.
    """
    if observed_ips is None:
        observed_ips = set()
        for c in clusters:
            observed_ips |= set(c.ips)

    predicted: set[frozenset[str]] = set()
    for c in clusters:
        members = sorted(set(c.ips) & observed_ips)
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                predicted.add(frozenset((members[i], members[j])))

    actual: set[frozenset[str]] = set()
    obs = sorted(observed_ips)
    for i in range(len(obs)):
        for j in range(i + 1, len(obs)):
            a, b = obs[i], obs[j]
            if truth.ip_actor.get(a) is not None and truth.ip_actor.get(a) == truth.ip_actor.get(b):
                actual.add(frozenset((a, b)))

    tp = len(predicted & actual)
    precision = tp / len(predicted) if predicted else 1.0
    recall = tp / len(actual) if actual else 1.0
    return precision, recall


# --- scenario files ---------------------------------------------------------


@dataclass
class Scenario:
    specs: list[BucketSpec]
    profile: str
    population: list[StrategyProfile]
    duration: int
    seed: int
    start: int
    base_key: str

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        from .model import policy_preset

        specs = []
        for b in doc["buckets"]:
            b = dict(b)
            policy = b.get("policy", "refined")
            if isinstance(policy, str):
                b["policy"] = policy_preset(policy).to_dict()
            specs.append(BucketSpec.from_dict(b))
        return cls(
            specs=specs,
            profile=doc.get("profile", "finance"),
            population=[StrategyProfile.from_dict(p) for p in doc.get("population", [])],
            duration=int(doc.get("duration_hours", 24) * HOUR),
            seed=doc.get("seed", 0),
            start=doc.get("start", 0),
            base_key=doc.get("base_key", "62514653"),
        )

    def run(self, seed: int | None = None) -> SimulationResult:
        deployment = Deployment.create(
            self.specs, self.profile, self.seed if seed is None else seed,
            at=self.start, base_key=self.base_key,
        )
        return run_simulation(
            deployment, self.population, self.duration,
            self.seed if seed is None else seed,
        )
