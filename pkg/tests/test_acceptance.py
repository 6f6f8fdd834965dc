"""End-to-end acceptance checks, one test per criterion.

Each test also prints its own PASS/FAIL line; the terminal summary repeats
them in order (see conftest.py).
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from datetime import timedelta

import pytest

from govgate.audit import AuditRecord, dumps, loads
from govgate.cli import main
from govgate.config import default_trust, load_config
from govgate.enforcement import EnforcementConfig, Mode, Tier, TicketStatus, Verdict, matrix_verdict, resolve_priority, trust_tier
from govgate.gateway import ActionSubmission, DomainSettings, Gateway
from govgate.matcher import Side, TradeOrder, Violation
from govgate.metrics import (
    TraceScenario,
    check_chain,
    confusion,
    derive_prf,
    evaluate_catalog,
    full_grid,
    keyword_baseline,
    load_lexicon,
    sweep,
    trace_from_audit,
)
from govgate.policy import RuleType
from govgate.sim.faults import COERCIVE_KINDS
from govgate.sim.harness import load_catalog, load_drafts, run_sim
from govgate.trust import (
    Formulation,
    SeverityEvent,
    TrustConfig,
    TrustState,
    TrustWeights,
    record_action,
    replay,
    severity_sum,
    trust_factor_factored,
    trust_factor_main,
    trust_factor_normalized,
    weighted_penalty,
)

from conftest import T0

SIM_CONFIGS = ("trading_sim1", "trading_sim2", "trading_sim3", "sim2_replay", "essay_sim1", "essay_sim2", "essay_sim3")


def report(number: int, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def run_named(name: str):
    cfg = load_config(f"pkg:configs/{name}.yaml")
    return cfg, run_sim(cfg.domain, cfg.sim_regime(), cfg.rules(), cfg.sim_config())


@pytest.mark.criterion(1, "replay fixture blocks 33 of 42 and executes 9 in under 5 s")
def test_criterion_1_replay_counts():
    start = time.perf_counter()
    _, art = run_named("sim2_replay")
    elapsed = time.perf_counter() - start
    blocked = art.counts()["verdicts"]["block"]
    report(1, (art.counts()["actions"], blocked, art.executions) == (42, 33, 9) and elapsed < 5,
           f"{blocked} blocked, {art.executions} executed of {art.counts()['actions']} in {elapsed:.2f}s")


@pytest.mark.criterion(2, "coercive fault recall is 1.0 over 10,000+ adversarial steps in under 30 s")
def test_criterion_2_coercive_recall():
    start = time.perf_counter()
    _, art = run_named("trading_stress")
    elapsed = time.perf_counter() - start
    steps = len(art.responses)
    c = confusion(art.audit, art.ledger, audit_run_id=art.run_id, kinds=[k.value for k in COERCIVE_KINDS])
    applied = sum(1 for r in art.ledger.rows if r.applicable and r.fault_kind in {k.value for k in COERCIVE_KINDS})
    recall = derive_prf(c).recall
    report(2, steps >= 10_000 and recall == 1.0 and c.fn == 0 and c.tp == applied > 0 and elapsed < 30,
           f"{steps} steps, {c.tp}/{applied} coercive faults blocked, recall {recall}, {elapsed:.2f}s")


def _random_history(rng: random.Random) -> list[list[Violation]]:
    out = []
    for _ in range(rng.randint(1, 30)):
        vs = []
        for _ in range(rng.choice((0, 0, 0, 1, 1, 2, 3))):
            kind = rng.choice(list(RuleType))
            vs.append(Violation(f"R{rng.randint(1, 8)}", kind, rng.choice((0.0, rng.random(), 1.0)), ""))
        out.append(vs)
    return out


def _random_trust(rng: random.Random, formulation: Formulation) -> TrustConfig:
    weights = TrustWeights(*(rng.uniform(0.05, 1.0) for _ in range(4)))
    return TrustConfig(weights, lam=rng.choice((1.0, rng.uniform(0.01, 1.0))), epsilon=rng.choice((0.001, 0.1)), formulation=formulation)


@pytest.mark.criterion(3, "trust formulas on 1,000 random histories in under 5 s")
def test_criterion_3_trust_suite():
    rng = random.Random(20250501)
    start = time.perf_counter()
    failures = []
    for i in range(1000):
        history = _random_history(rng)
        main_cfg = _random_trust(rng, Formulation.MAIN_TEXT)
        norm_cfg = TrustConfig(main_cfg.weights, main_cfg.lam, main_cfg.epsilon, Formulation.NORMALIZED)
        for cfg in (main_cfg, norm_cfg):
            state = replay("a", history, cfg)
            clean = record_action(state, [], cfg).current_tf
            for kind in RuleType:
                worse = record_action(state, [Violation("X", kind, rng.random(), "")], cfg).current_tf
                if not worse < clean:
                    failures.append(f"{i}: {cfg.formulation.value} not decreasing for {kind.value}")
        state = replay("a", history, main_cfg)
        if abs(trust_factor_main(state, main_cfg) - trust_factor_factored(state, main_cfg)) > 1e-12:
            failures.append(f"{i}: factored form differs")
        tf = trust_factor_normalized(state, norm_cfg)
        zero = weighted_penalty(state, norm_cfg) == 0
        if tf > 1 or (tf == 1) != zero:
            failures.append(f"{i}: normalized bound broken ({tf}, zero numerator {zero})")
        events = state.severity_events
        n = state.n_actions
        if abs(severity_sum(events, n, 1.0) - sum(e.severity for e in events)) > 1e-12:
            failures.append(f"{i}: lambda=1 is not the plain sum")
        last = sum(e.severity for e in events if e.t == n)
        if severity_sum(events, n, 0.0) != last:
            failures.append(f"{i}: lambda=0 does not keep the last action")
    elapsed = time.perf_counter() - start
    report(3, not failures and elapsed < 5, f"{len(failures)} failures over 1000 histories in {elapsed:.2f}s; {failures[:3]}")


MATRIX_TABLE = {
    (Tier.HIGH, RuleType.NORMATIVE): Verdict.ALLOW,
    (Tier.HIGH, RuleType.MIMETIC): Verdict.ALLOW,
    (Tier.HIGH, RuleType.COERCIVE): Verdict.WARN,
    (Tier.MEDIUM, RuleType.NORMATIVE): Verdict.WARN,
    (Tier.MEDIUM, RuleType.MIMETIC): Verdict.WARN,
    (Tier.MEDIUM, RuleType.COERCIVE): Verdict.BLOCK,
    (Tier.LOW, None): Verdict.BLOCK,
}


@pytest.mark.criterion(4, "decision matrix rows and tier boundaries")
def test_criterion_4_decision_matrix():
    cfg = EnforcementConfig(mode=Mode.DECISION_MATRIX)
    points = {
        Tier.HIGH: (1.7, 1.0, 0.85, 0.7 + 1e-12),
        Tier.MEDIUM: (0.7, 0.55, 0.4 + 1e-12),
        Tier.LOW: (0.4, 0.2, 0.0, -3.0),
    }
    mismatches, checked = [], 0
    for tier, tfs in points.items():
        for tf in tfs:
            if trust_tier(tf, cfg) is not tier:
                mismatches.append(f"tf={tf} not {tier.value}")
            for kind in RuleType:
                expected = MATRIX_TABLE.get((tier, kind), MATRIX_TABLE.get((tier, None)))
                got = matrix_verdict(Violation("R", kind, 0.5, ""), TrustState("a", 5, current_tf=tf), cfg)
                checked += 1
                if got.verdict is not expected:
                    mismatches.append(f"{tier.value}/{kind.value} at {tf}: {got.verdict.value}")
                if tier is Tier.LOW and not got.escalate:
                    mismatches.append(f"low tier at {tf} does not offer escalation")
                if (tier, kind) == (Tier.HIGH, RuleType.NORMATIVE) and not got.notify:
                    mismatches.append("high normative lacks notification")
    report(4, not mismatches, f"{checked} cells across 7 table rows, mismatches: {mismatches}")


@pytest.mark.criterion(5, "priority resolution over every verdict multiset of size <= 4")
def test_criterion_5_priority():
    order = [Verdict.ALLOW, Verdict.WARN, Verdict.ESCALATE, Verdict.BLOCK]
    bad, count = [], 0
    for size in range(0, 5):
        for multiset in itertools.combinations_with_replacement(order, size):
            expected = max(multiset, key=order.index) if multiset else Verdict.ALLOW
            for perm in set(itertools.permutations(multiset)):
                count += 1
                if resolve_priority(perm) is not expected:
                    bad.append(perm)
    report(5, not bad, f"{count} orderings checked, {len(bad)} wrong")


def _random_record(rng: random.Random, i: int) -> AuditRecord:
    alphabet = "abcdefghijklmnopqrstuvwxyz_0123456789-, \"'"
    agent = rng.choice("abc") + "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8))) + rng.choice("xyz")
    rule_id = rng.choice(("-", "R1", "R2", "R8", "RULE,42"))
    vtype = "-" if rule_id == "-" else rng.choice(("coercive", "normative", "mimetic"))
    ts = T0 + timedelta(seconds=rng.randint(0, 10**7), microseconds=rng.choice((0, rng.randint(1, 999_999))))
    return AuditRecord(
        ts, agent, rule_id, vtype, 0.0 if rule_id == "-" else rng.random(),
        rng.uniform(-5, 2), rng.uniform(-5, 2), rng.choice(("allow", "warn", "block", "escalate")),
    )


@pytest.mark.criterion(6, "audit CSV round trip, logged sample row, and trust-chain continuity on every run")
def test_criterion_6_audit_fidelity():
    rng = random.Random(6)
    records = [_random_record(rng, i) for i in range(1000)]
    round_trip = loads(dumps(records)) == records
    sample = loads(
        "timestamp,agent_id,rule_id,violation_type,severity,trust_before,trust_after,decision\n"
        "2025-05-01T13:25:48Z, writer_agent, R5, normative, 0.7, 0.82, 0.78, warn\n"
    )
    expected = AuditRecord(T0.replace(minute=25, second=48), "writer_agent", "R5", "normative", 0.7, 0.82, 0.78, "warn")
    broken = []
    for name in SIM_CONFIGS:
        try:
            check_chain(run_named(name)[1].audit)
        except ValueError as exc:
            broken.append(f"{name}: {exc}")
    ok = round_trip and sample == [expected] and not broken
    report(6, ok, f"round trip {round_trip}, sample {sample == [expected]}, chains broken in {broken}")


ARTIFACTS = ("audit.csv", "ledger.csv", "trust.csv", "trajectories.csv", "portfolio.csv")


@pytest.mark.criterion(7, "repeated sim commands produce byte-identical artifacts in under 30 s")
def test_criterion_7_determinism(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    start = time.perf_counter()
    diffs, compared = [], 0
    for name in ("trading_sim3", "essay_sim3", "sim2_replay"):
        for run in ("a", "b"):
            out = f"{name}-{run}"
            assert main(["sim", "--config", f"pkg:configs/{name}.yaml", "--out", out]) == 0
            assert main(["report", out]) == 0
        for artifact in ARTIFACTS:
            a, b = tmp_path / f"{name}-a" / artifact, tmp_path / f"{name}-b" / artifact
            if not a.exists() and artifact == "portfolio.csv" and name.startswith("essay"):
                continue
            compared += 1
            if a.read_bytes() != b.read_bytes():
                diffs.append(f"{name}/{artifact}")
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    report(7, not diffs and elapsed < 30, f"{compared} artifact pairs compared, differing: {diffs}, {elapsed:.2f}s")


@pytest.mark.criterion(8, "mean final trust strictly decreases in each weight over the grid")
def test_criterion_8_sweep():
    cfg, art = run_named("trading_sim3")
    trace = trace_from_audit(art.audit)
    n_violations = sum(len(vs) for actions in trace.values() for vs in actions)
    scenario = TraceScenario(trace, cfg.enforcement)
    failing = []
    for spec in full_grid():
        means = [row.cell.mean_trust for row in sweep(spec, scenario, cfg.trust)]
        if not all(a > b for a, b in zip(means, means[1:])):
            failing.append(spec.parameter)
    report(8, not failing and n_violations > 0, f"{n_violations} violations in trace, non-monotone parameters: {failing}")


@pytest.mark.criterion(9, "keyword filter blocks a strict subset of the engine; ambiguous phrasing caught only by the engine")
def test_criterion_9_baseline_gap(trading_rules, essay_rules):
    settings = {"trading": DomainSettings(default_trust("trading"), artifact_kind="trade"), "essay": DomainSettings(default_trust("essay"))}
    outcomes = evaluate_catalog(load_catalog(), {"trading": trading_rules, "essay": essay_rules}, settings, load_lexicon())
    engine = {o.id for o in outcomes if o.engine_blocked}
    keyword = {o.id for o in outcomes if o.keyword_blocked}
    ambiguous = {o.id for o in outcomes if o.family == "ambiguous_phrasing"}
    only_engine = ambiguous <= engine and not ambiguous & keyword
    report(9, keyword < engine and bool(ambiguous) and only_engine,
           f"engine {len(engine)}, keyword {len(keyword)}, ambiguous family {sorted(ambiguous)} engine-only {only_engine}")


def _scenario(rng: random.Random, n: int) -> list[ActionSubmission]:
    """Mostly benign traffic with a harmful minority, spread over 40 agents."""
    drafts = load_drafts()
    clean = [d["draft"] for d in drafts if d["label"] == "clean"] + ["A short clean note."]
    harmful = [d["draft"] for d in drafts if d["label"] != "clean"] + [c["payload"] for c in load_catalog() if c["kind"] == "text"]
    prices = {"SYNA": 100.0, "SYNB": 50.0}
    subs = []
    for _ in range(n):
        agent = f"agent{rng.randrange(40)}"
        bad = rng.random() < 0.3
        if rng.random() < 0.5:
            subs.append(ActionSubmission.text(agent, rng.choice(harmful if bad else clean), context={"artifact_kind": "essay"}, domain="essay"))
            continue
        asset = rng.choice(sorted(prices))
        book = {"cash": 10_000.0, "holdings": {asset: 5}, "prices": prices, "rsi": {"SYNA": 50.0, "SYNB": 50.0}}
        order = TradeOrder(asset, rng.choice((Side.BUY, Side.SELL)), rng.choice((1, 2, 3)), prices[asset])
        if bad:
            fault = rng.choice(("oversize", "short", "low_cash", "rsi", "busy"))
            if fault == "oversize":
                order = TradeOrder(asset, Side.BUY, 30, prices[asset])
            elif fault == "short":
                order = TradeOrder(asset, Side.SELL, 9, prices[asset])
            elif fault == "low_cash":
                book["cash"] = 400.0
                order = TradeOrder(asset, Side.BUY, 1, prices[asset])
            elif fault == "rsi":
                book["rsi"] = {asset: 85.0, **{a: 50.0 for a in prices if a != asset}}
                order = TradeOrder(asset, Side.BUY, 1, prices[asset])
            else:
                book["trades_today"] = {asset: 60}
        subs.append(ActionSubmission.trade(agent, order, context=book, domain="trading"))
    return subs


@pytest.mark.criterion(10, "sink deliveries match allow/warn/approved over 500 mixed actions; chains hold under 8 threads")
def test_criterion_10_gatekeeping(trading_rules, essay_rules):
    gw = Gateway({
        "trading": DomainSettings(default_trust("trading"), EnforcementConfig(mode=Mode.DECISION_MATRIX), "trade"),
        "essay": DomainSettings(default_trust("essay"), EnforcementConfig(mode=Mode.ADAPTIVE), "essay"),
    })
    gw.activate(trading_rules, "trading")
    gw.activate(essay_rules, "essay")
    subs = _scenario(random.Random(10), 500)
    responses = []
    lock = threading.Lock()

    def worker(chunk):
        for sub in chunk:
            resp = gw.intercept(sub)
            with lock:
                responses.append(resp)

    threads = [threading.Thread(target=worker, args=(subs[i::8],)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    pending = gw.list_escalations(TicketStatus.PENDING)
    approved = 0
    for k, ticket in enumerate(pending):
        gw.resolve_escalation(ticket.id, "approve" if k % 2 == 0 else "deny", "reviewer")
        approved += k % 2 == 0

    forwarded = {(r.agent_id, r.sequence_index) for r in responses if r.verdict in (Verdict.ALLOW, Verdict.WARN)}
    approved_keys = {(t.action.agent_id, t.action.sequence_index) for t in gw.list_escalations(TicketStatus.APPROVED)}
    delivered = [(a.agent_id, a.sequence_index) for a in gw.sink.delivered]
    expected = len(forwarded) + approved
    exact = len(delivered) == expected and set(delivered) == forwarded | approved_keys and len(set(delivered)) == len(delivered)
    verdicts = {v: sum(r.verdict is v for r in responses) for v in Verdict}
    try:
        check_chain(gw.audit.records)
        chains = True
    except ValueError:
        chains = False
    per_agent = sum(gw.get_trust(f"agent{k}")["n_actions"] for k in range(40))
    ok = len(responses) == 500 and exact and chains and per_agent == 500 and approved > 0 and all(verdicts[v] > 0 for v in (Verdict.ALLOW, Verdict.WARN, Verdict.BLOCK))
    report(10, ok, f"{len(delivered)} deliveries vs {expected} expected "
                   f"({ {v.value: c for v, c in verdicts.items()} }, {approved} approved), chains continuous {chains}")
