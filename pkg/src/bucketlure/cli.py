"""Operator command line: plan names, deploy, rotate, simulate, ingest,
attribute, aggregate, report.

State lives in a work directory; each command reads its inputs from there
and writes outputs atomically, so reruns with identical inputs give
identical bytes. Exit codes: 0 ok, 2 usage, 3 data error, 4 internal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

from . import attrib, ingest, namegen, scansim, stats
from .bucketsim import Deployment
from .luregen import DOC_KEY_PREFIX, FINANCE_DIR_PREFIX, PILOT_KEYS
from .model import EventStore, OperationKind, SshAttempt

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

STATE_FILE = "state.json"
STORE_FILE = "store.jsonl"
SSH_FILE = "ssh.jsonl"
ACCESS_LOG = "access.log"
SSH_LOG = "ssh.log"
TRUTH_FILE = "truth.json"
ATTRIBUTION_FILE = "attribution.json"
STATS_FILE = "stats.json"


class DataError(Exception):
    pass


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, doc) -> None:
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path: str):
    if not os.path.exists(path):
        raise DataError(f"missing input file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid json ({exc.msg})") from exc


def _workdir_path(args, name: str) -> str:
    if not args.workdir:
        raise DataError("no work directory given (--workdir or BUCKETLURE_WORKDIR)")
    os.makedirs(args.workdir, exist_ok=True)
    return os.path.join(args.workdir, name)


def _load_deployment(args) -> Deployment:
    path = _workdir_path(args, STATE_FILE)
    if not os.path.exists(path):
        raise DataError(f"no deployment state at {path}; run deploy or simulate first")
    try:
        return Deployment.load(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"corrupt deployment state at {path}: {exc}") from exc


def _load_store(args) -> EventStore:
    path = _workdir_path(args, STORE_FILE)
    if not os.path.exists(path):
        raise DataError(f"no event store at {path}; run ingest first")
    return EventStore.load_jsonl(path)


def _load_ssh(args) -> list[SshAttempt]:
    path = _workdir_path(args, SSH_FILE)
    if not os.path.exists(path):
        return []
    report = ingest.IngestReport()
    return ingest.read_ssh_stream(path, report, path)


def render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


# --- subcommands ------------------------------------------------------------


def cmd_names(args) -> int:
    request = _read_json(args.plan)
    try:
        plan = namegen.compile_plan(request, args.seed)
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad plan request: {exc}") from exc
    _write_json(args.out, plan.to_dict())
    print(f"wrote {len(plan.specs)} bucket specs to {args.out}")
    for kind, count in sorted(plan.counts.items()):
        print(f"  {kind}: {count}")
    return EXIT_OK


def cmd_deploy(args) -> int:
    doc = _read_json(args.plan)
    try:
        plan = namegen.NamePlan.from_dict(doc)
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad name plan: {exc}") from exc
    deployment = Deployment.create(plan.specs, args.profile, args.seed, at=args.at)
    deployment.save(_workdir_path(args, STATE_FILE))
    print(f"deployed {len(plan.specs)} buckets with the {args.profile} profile")
    return EXIT_OK


def cmd_rotate(args) -> int:
    deployment = _load_deployment(args)
    if args.until == "now":
        until = int(time.time())
    else:
        try:
            until = int(args.until)
        except ValueError as exc:
            raise DataError(f"--until must be epoch seconds or 'now': {args.until!r}") from exc
    reports = deployment.rotate_until(until)
    rotated = [r for r in reports if r.rotated]
    deployment.save(_workdir_path(args, STATE_FILE))
    if rotated:
        print(f"rotated {len(rotated)} bucket-window(s); clock={deployment.clock}")
    else:
        print(f"no-op: already inside the current window; clock={deployment.clock}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = _read_json(args.scenario)
    try:
        scenario = scansim.Scenario.from_dict(doc)
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad scenario: {exc}") from exc
    result = scenario.run(seed=args.seed)
    lines = result.deployment.backend.fetch_access_log()
    _atomic_write(_workdir_path(args, ACCESS_LOG), "".join(l + "\n" for l in lines))
    _atomic_write(
        _workdir_path(args, SSH_LOG),
        "".join(ingest.format_ssh_line(a) + "\n" for a in result.ssh_attempts),
    )
    _write_json(_workdir_path(args, TRUTH_FILE), result.truth.to_dict())
    result.deployment.save(_workdir_path(args, STATE_FILE))
    print(
        f"simulated {len(result.truth.profiles)} actors: "
        f"{len(result.store)} access events, {len(result.ssh_attempts)} ssh attempts"
    )
    return EXIT_OK


def _stream_or_stdin(path: str):
    if path == "-":
        return sys.stdin.read().splitlines()
    return path


def cmd_ingest(args) -> int:
    store, report = ingest.merge_streams([_stream_or_stdin(p) for p in args.access])
    store.save_jsonl(_workdir_path(args, STORE_FILE))
    ssh: list[SshAttempt] = []
    for path in args.ssh or []:
        ssh.extend(ingest.read_ssh_stream(_stream_or_stdin(path), report, path))
    ssh.sort(key=lambda a: (a.time, a.ip, a.password))
    ingest.write_ssh_log(_workdir_path(args, SSH_FILE), ssh)
    _write_json(_workdir_path(args, "ingest_report.json"), report.to_dict())
    print(
        f"ingested {report.merged} events "
        f"({report.duplicates} duplicates, {report.malformed} malformed) "
        f"and {len(ssh)} ssh attempts"
    )
    return EXIT_OK


def cmd_attribute(args) -> int:
    deployment = _load_deployment(args)
    store = _load_store(args)
    ssh = _load_ssh(args)
    edges = attrib.collusion_edges(store, deployment.registry, ssh)
    all_ips = store.ips() | {a.ip for a in ssh}
    clusters = attrib.cluster_actors(edges, all_ips, merge_candidates=args.merge_candidates)
    actor_of = {ip: c.actor_id for c in clusters for ip in c.ips}
    ssh_classes = attrib.classify_ssh(ssh, deployment.registry, actor_of)
    report = attrib.attribution_report(clusters, edges, ssh_classes)
    report["ssh_noise_attempts"] = attrib.unmatched_ssh_attempts(ssh, deployment.registry)
    _write_json(_workdir_path(args, ATTRIBUTION_FILE), report)

    multi = [c for c in clusters if len(c.ips) > 1]
    print(
        f"{report['totals']['ips']} addresses -> {report['totals']['actors']} actors "
        f"({len(multi)} multi-address)"
    )
    for cluster in multi:
        print(f"  {cluster.actor_id}: {', '.join(sorted(cluster.ips))}")
    for sc in ssh_classes:
        print(
            f"  {sc.actor_id}: {sc.kind.value} "
            f"(distinct passwords: {sc.distinct_password_count})"
        )
    return EXIT_OK


def cmd_stats(args) -> int:
    deployment = _load_deployment(args)
    store = _load_store(args)
    asn_map = stats.AsnMap.load(args.asn_map) if args.asn_map else None
    groups = stats.per_day_unique(store, deployment.spec_map(), args.group_by, asn_map)
    if not groups:
        raise DataError("event store holds no events for deployed buckets")
    doc: dict = {"groups": [g.to_dict() for g in groups]}
    if len(groups) >= 2:
        sig = stats.significance_matrix(groups, sample=args.sample)
        doc["significance"] = sig.to_dict()
        starred = set(sig.starred)
    else:
        starred = set()
    _write_json(_workdir_path(args, STATS_FILE), doc)

    rows = [
        [
            g.group + ("*" if g.group in starred else ""),
            str(g.n_buckets),
            f"{g.avg_total_ips_per_bucket:.2f}",
            f"{g.avg_total_asns_per_bucket:.2f}",
            f"{g.avg_daily_ips_per_bucket:.2f}",
            f"{g.avg_daily_asns_per_bucket:.2f}",
        ]
        for g in sorted(groups, key=lambda g: -g.avg_daily_ips_per_bucket)
    ]
    print(render_table(
        ["group", "buckets", "ips/bucket", "asns/bucket", "ips/day", "asns/day"], rows
    ))
    return EXIT_OK


def _report_tables(deployment: Deployment, store: EventStore, ssh: list[SshAttempt]) -> dict:
    spec_map = deployment.spec_map()

    per_bucket: dict[str, dict] = {}
    for e in store:
        if e.bucket not in spec_map:
            continue
        entry = per_bucket.setdefault(e.bucket, {"ops": 0, "ips": set()})
        entry["ops"] += 1
        entry["ips"].add(e.ip)
    top_buckets = [
        {
            "bucket": name,
            "type": spec_map[name].strategy.kind.value,
            "ops": data["ops"],
            "ips": len(data["ips"]),
        }
        for name, data in sorted(
            per_bucket.items(), key=lambda kv: (-kv[1]["ops"], kv[0])
        )[:20]
    ]

    op_counts: dict[str, int] = {op.value: 0 for op in OperationKind}
    for e in store:
        op_counts[e.operation.value] += 1
    total_ops = max(sum(op_counts.values()), 1)
    operations = []
    rolling = 0.0
    for op, count in sorted(op_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        share = 100.0 * count / total_ops
        rolling += share
        operations.append(
            {"operation": op, "count": count, "percent": round(share, 2),
             "rolling_percent": round(rolling, 2)}
        )

    states = [deployment.backend.state(s.name) for s in deployment.specs]
    uploads = attrib.upload_summary(states)

    sensitive_prefixes = (DOC_KEY_PREFIX, FINANCE_DIR_PREFIX) + tuple(PILOT_KEYS)

    def is_operator_key(bucket: str, key: str) -> bool:
        return key.startswith(sensitive_prefixes)

    downloads = attrib.sensitive_download_actors(store, is_operator_key)
    return {
        "top_buckets": top_buckets,
        "operations": operations,
        "uploads": uploads,
        "sensitive_download_actors": len(downloads),
        "ssh_attempt_total": len(ssh),
    }


def cmd_report(args) -> int:
    deployment = _load_deployment(args)
    store = _load_store(args)
    ssh = _load_ssh(args)
    doc = _report_tables(deployment, store, ssh)

    groups = stats.per_day_unique(store, deployment.spec_map(), "type")
    doc["traffic_by_type"] = [g.to_dict() for g in groups]
    if len(groups) >= 2:
        sig = stats.significance_matrix(groups)
        doc["significance_by_type"] = sig.to_dict()
        starred = set(sig.starred)
    else:
        starred = set()

    vdp_groups = [
        g for g in stats.per_day_unique(store, deployment.spec_map(), "vdp")
        if g.group != "n/a"
    ]
    doc["traffic_by_vdp"] = [g.to_dict() for g in vdp_groups]
    vdp_starred: set[str] = set()
    if len(vdp_groups) >= 2:
        vdp_sig = stats.significance_matrix(vdp_groups)
        doc["significance_by_vdp"] = vdp_sig.to_dict()
        vdp_starred = set(vdp_sig.starred)

    attr_path = _workdir_path(args, ATTRIBUTION_FILE)
    if os.path.exists(attr_path):
        doc["attribution"] = _read_json(attr_path)

    _write_json(_workdir_path(args, "report.json"), doc)

    sections = []
    sections.append("== Most targeted buckets ==")
    sections.append(render_table(
        ["bucket", "type", "ops", "ips"],
        [[b["bucket"], b["type"], str(b["ops"]), str(b["ips"])] for b in doc["top_buckets"]],
    ))
    sections.append("")
    sections.append("== Traffic per bucket type ==")
    sections.append(render_table(
        ["type", "buckets", "ips/bucket", "ips/day"],
        [
            [
                g["group"] + ("*" if g["group"] in starred else ""),
                str(g["n_buckets"]),
                f"{g['avg_total_ips_per_bucket']:.2f}",
                f"{g['avg_daily_ips_per_bucket']:.2f}",
            ]
            for g in doc["traffic_by_type"]
        ],
    ))
    if doc["traffic_by_vdp"]:
        sections.append("")
        sections.append("== Company attributes ==")
        sections.append(render_table(
            ["attribute", "buckets", "ips/bucket"],
            [
                [
                    g["group"] + ("*" if g["group"] in vdp_starred else ""),
                    str(g["n_buckets"]),
                    f"{g['avg_total_ips_per_bucket']:.2f}",
                ]
                for g in doc["traffic_by_vdp"]
            ],
        ))
    sections.append("")
    sections.append("== Operations ==")
    sections.append(render_table(
        ["operation", "count", "%", "rolling %"],
        [
            [o["operation"], str(o["count"]), f"{o['percent']:.2f}", f"{o['rolling_percent']:.2f}"]
            for o in doc["operations"]
        ],
    ))
    sections.append("")
    sections.append("== Unsolicited uploads ==")
    sections.append(render_table(
        ["category", "count"],
        [[k, str(v)] for k, v in sorted(doc["uploads"].items())],
    ))
    if "attribution" in doc:
        totals = doc["attribution"]["totals"]
        sections.append("")
        sections.append("== Attribution ==")
        sections.append(
            f"{totals['ips']} addresses -> {totals['actors']} actors; "
            f"{totals['multi_ip_actors']} used multiple addresses; "
            f"{totals['unique_edges']} unique / {totals['candidate_edges']} candidate edges"
        )
    text = "\n".join(sections) + "\n"
    _atomic_write(_workdir_path(args, "report.txt"), text)
    print(text, end="")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bucketlure",
        description="Decoy-bucket deployment, simulation, and attribution toolkit.",
    )
    parser.add_argument("--config", help="JSON file of flag defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("names", help="compile a naming plan")
    p.add_argument("--plan", required=True, help="plan request JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output NamePlan JSON")
    p.set_defaults(fn=cmd_names)

    p = sub.add_parser("deploy", help="initialize bucket state and lures")
    p.add_argument("--plan", required=True, help="NamePlan JSON")
    p.add_argument("--profile", choices=("pilot", "finance"), required=True)
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--at", type=int, default=0, help="deployment epoch seconds")
    p.set_defaults(fn=cmd_deploy)

    p = sub.add_parser("rotate", help="advance hourly rotation")
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.add_argument("--until", required=True, help="epoch seconds to advance to, or 'now'")
    p.set_defaults(fn=cmd_rotate)

    p = sub.add_parser("simulate", help="run a scanner-population scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("ingest", help="parse and merge logs into the event store")
    p.add_argument("--access", nargs="+", required=True)
    p.add_argument("--ssh", nargs="*", default=[])
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("attribute", help="cluster actors and classify abuse")
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.add_argument("--merge-candidates", action="store_true")
    p.set_defaults(fn=cmd_attribute)

    p = sub.add_parser("stats", help="per-day aggregation and significance")
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.add_argument("--group-by", dest="group_by", choices=("type", "vdp", "sector"), default="type")
    p.add_argument("--sample", choices=("daily", "per_bucket"), default="daily")
    p.add_argument("--asn-map", dest="asn_map", help="'prefix asn' mapping file")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("report", help="consolidated tables")
    p.add_argument("--workdir", default=None, help="state directory (or BUCKETLURE_WORKDIR)")
    p.set_defaults(fn=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        defaults = _read_json(args.config)
        if not isinstance(defaults, dict):
            raise DataError("config must be a JSON object")
        given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
        for key, value in defaults.items():
            flag = "--" + key.replace("_", "-")
            attr = key.replace("-", "_")
            if flag not in given and hasattr(args, attr):
                setattr(args, attr, value)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
    except DataError as exc:
        print(json.dumps({"error": str(exc), "kind": "data"}), file=sys.stderr)
        return EXIT_DATA
    env_workdir = os.environ.get("BUCKETLURE_WORKDIR")
    if env_workdir and getattr(args, "workdir", None) in (None, ""):
        args.workdir = env_workdir
    try:
        return args.fn(args)
    except (DataError, ingest.MalformedLine, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc), "kind": "data"}), file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}", "kind": "internal"}), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
