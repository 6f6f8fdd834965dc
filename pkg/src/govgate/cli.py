"""Command-line entry point: validate, serve, sim, sweep, report, baseline.

Exit codes: 0 success, 1 domain failure (findings, invalid policy), 2 usage
or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Sequence

import yaml

from govgate import metrics
from govgate.audit import AuditStore, FormatError, read_path
from govgate.config import RunConfig, default_trust, load_config, resolve_path
from govgate.enforcement import EscalationQueue
from govgate.gateway.server import GatewayServer, parse_listen
from govgate.gateway.service import DomainSettings, FileSink, Gateway, MemorySink
from govgate.policy import CompileError, PolicyError, compile_rule_set, load_rule_set, validate_rule_set
from govgate.sim.agents import ConfigError
from govgate.sim.faults import COERCIVE_KINDS, InjectionLedger
from govgate.sim.harness import load_catalog, run_sim

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("govgate")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        policy=resolve_path(getattr(args, "policy", None), Path.cwd()),
        out=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        regime=getattr(args, "regime", None),
        listen=getattr(args, "listen", None),
    )


# -- commands -------------------------------------------------------------


def cmd_validate(args) -> int:
    path = args.policy_path or args.policy
    if not path:
        raise UsageError("validate needs a policy path")
    path = resolve_path(path, Path.cwd())
    try:
        rs = load_rule_set(path, domain=args.domain)
    except OSError as exc:
        _err(f"error: cannot read {path}: {exc}")
        return EXIT_USAGE
    except PolicyError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    report = validate_rule_set(rs)
    if not report.ok:
        for f in report.findings:
            _err(str(f))
        return EXIT_FAIL
    print(f"ok: {len(rs.rules)} rules, domain {rs.domain}, version {rs.version}")
    return EXIT_OK


def build_gateway(cfg: RunConfig) -> Gateway:
    """Gateway for ``serve``: file-backed audit and tickets when a log directory is set."""
    audit = escalations = None
    if cfg.log_dir:
        log_dir = Path(cfg.log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        audit = AuditStore(log_dir / "audit.csv")
        escalations = EscalationQueue(log_dir / "escalations.jsonl")
    sink = FileSink(cfg.sink) if cfg.sink else MemorySink()
    kind = "trade" if cfg.domain == "trading" else "essay"
    gw = Gateway({cfg.domain: DomainSettings(cfg.trust, cfg.enforcement, kind)}, audit=audit, escalations=escalations, sink=sink)
    gw.activate(cfg.rules(), cfg.domain)
    return gw


def cmd_serve(args) -> int:
    cfg = _load(args)
    try:
        gw = build_gateway(cfg)
    except PolicyError as exc:
        _err(f"refusing to start: {type(exc).__name__}: {exc}")
        return EXIT_FAIL
    host, port = parse_listen(cfg.listen)
    try:
        server = GatewayServer(gw, host, port)
    except OSError as exc:
        _err(f"cannot bind {cfg.listen}: {exc}")
        gw.audit.close()
        return EXIT_USAGE

    def stop(signum, frame) -> None:
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    print(f"listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        gw.audit.close()
    print("stopped", flush=True)
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = _load(args)
    try:
        rules = cfg.rules()
    except PolicyError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    art = run_sim(cfg.domain, cfg.sim_regime(), rules, cfg.sim_config())
    paths = art.write(cfg.out)
    print(json.dumps({"run_id": art.run_id, "out": cfg.out, **art.counts(), "files": sorted(paths)}, indent=2, sort_keys=True))
    return EXIT_OK


def _read_structured(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    return json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    doc = _read_structured(resolve_path(args.spec, Path.cwd())) or {}
    params = doc.get("parameters") or list(metrics.WEIGHTS)
    values = doc.get("values", list(metrics.DEFAULT_GRID))
    if not values:
        raise UsageError("sweep spec has an empty value list")
    try:
        specs = [metrics.SweepSpec(p, tuple(values), float(doc.get("fixed", 0.5))) for p in params]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        rules = cfg.rules()
    except PolicyError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    art = run_sim(cfg.domain, cfg.sim_regime(), rules, cfg.sim_config())
    scenario = metrics.TraceScenario(metrics.trace_from_audit(art.audit), cfg.enforcement)
    rows = [row for spec in specs for row in metrics.sweep(spec, scenario, cfg.trust)]
    text = metrics.sweep_csv(rows)
    out = Path(cfg.out)
    target = out if out.suffix == ".csv" else out / "sweep.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


REQUIRED = ("audit.csv", "ledger.csv", "manifest.json")


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    missing = [name for name in REQUIRED if not (run_dir / name).is_file()]
    if missing:
        _err(f"error: {run_dir} is missing run artifacts: {', '.join(missing)}")
        return EXIT_USAGE
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    try:
        audit = read_path(run_dir / "audit.csv")
        ledger = InjectionLedger.read(run_dir / "ledger.csv")
    except (FormatError, ValueError) as exc:
        _err(f"error: unreadable artifacts: {exc}")
        return EXIT_FAIL
    if not ledger.run_id:
        ledger.run_id = manifest["run_id"]
    try:
        summary = metrics.summarize(audit, ledger, manifest["run_id"], [k.value for k in COERCIVE_KINDS])
        series = metrics.trust_trajectories(audit)
    except (metrics.RunMismatch, metrics.BrokenChain) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "trajectories.csv").write_text(metrics.trajectories_csv(series), encoding="utf-8")
    (out / "heatmap.csv").write_text(metrics.violation_heatmap(audit).to_csv("agent_id"), encoding="utf-8")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_baseline(args) -> int:
    """Compare the keyword filter with the rule engine on the adversarial catalog."""
    catalog = load_catalog(resolve_path(args.catalog, Path.cwd()) if args.catalog else None)
    packs = {d: compile_rule_set(load_rule_set(resolve_path(f"pkg:packs/{d}.json", Path.cwd()), domain=d)) for d in ("trading", "essay")}
    settings = {
        "trading": DomainSettings(default_trust("trading"), artifact_kind="trade"),
        "essay": DomainSettings(default_trust("essay")),
    }
    outcomes = metrics.evaluate_catalog(catalog, packs, settings, metrics.load_lexicon(args.lexicon))
    print(f"{'id':<8} {'family':<20} {'engine':<9} {'keyword':<8} rules")
    for o in outcomes:
        print(f"{o.id:<8} {o.family:<20} {o.engine_verdict.value:<9} {o.keyword.value:<8} {','.join(o.engine_rules)}")
    engine = {o.id for o in outcomes if o.engine_blocked}
    keyword = {o.id for o in outcomes if o.keyword_blocked}
    print(f"engine blocked {len(engine)}, keyword blocked {len(keyword)}, keyword subset of engine: {keyword < engine}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="govgate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a rule pack")
    v.add_argument("policy_path", nargs="?")
    v.add_argument("--policy")
    v.add_argument("--domain")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("serve", help="run the gateway over HTTP")
    s.add_argument("--config", required=True)
    s.add_argument("--policy")
    s.add_argument("--listen")
    s.set_defaults(func=cmd_serve)

    m = sub.add_parser("sim", help="run a simulation and write artifacts")
    m.add_argument("--config", required=True)
    m.add_argument("--policy")
    m.add_argument("--out")
    m.add_argument("--seed", type=int)
    m.add_argument("--regime", choices=["sim1_ungoverned", "sim2_governed", "sim3_adversarial"])
    m.set_defaults(func=cmd_sim)

    w = sub.add_parser("sweep", help="trust-weight sensitivity sweep")
    w.add_argument("--config", required=True)
    w.add_argument("--spec", required=True)
    w.add_argument("--policy")
    w.add_argument("--out")
    w.add_argument("--seed", type=int)
    w.add_argument("--regime", choices=["sim1_ungoverned", "sim2_governed", "sim3_adversarial"])
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="metrics, trajectories and heatmap for a run directory")
    r.add_argument("run_dir")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("baseline", help="keyword filter vs rule engine on the adversarial catalog")
    b.add_argument("--catalog")
    b.add_argument("--lexicon")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _err(f"usage error: {exc}")
        return EXIT_USAGE
    except (ConfigError, CompileError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_FAIL
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
