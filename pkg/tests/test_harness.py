from __future__ import annotations

from functools import lru_cache

import pytest

from govgate.audit import format_timestamp, loads
from govgate.config import load_config
from govgate.enforcement import Verdict
from govgate.metrics import check_chain
from govgate.sim.agents import AgentSpec, ConfigError
from govgate.sim.faults import LedgerStatus
from govgate.sim.harness import (
    ADVERSARY_WRITER,
    Regime,
    SimConfig,
    SimRegime,
    load_catalog,
    run_sim,
    run_trading_sim,
)


@lru_cache(maxsize=None)
def run(name: str):
    cfg = load_config(f"pkg:configs/{name}.yaml")
    return run_sim(cfg.domain, cfg.sim_regime(), cfg.rules(), cfg.sim_config())


def test_replay_blocks_33_of_42():
    art = run("sim2_replay")
    assert art.counts()["actions"] == 42
    assert art.counts()["verdicts"]["block"] == 33
    assert art.executions == 9
    assert {r.rule_ids[0] for r in art.responses if r.verdict is Verdict.BLOCK} == {"R1"}


def test_ungoverned_run_forwards_everything():
    sim1, sim2 = run("trading_sim1"), run("trading_sim2")
    assert sim1.counts()["verdicts"]["block"] == 0
    assert sim1.executions == sim1.counts()["actions"]
    # Violations are still scored without governance.
    assert any(r.rule_id == "R1" for r in sim1.audit)
    assert sim2.executions <= sim1.executions
    assert sim2.counts()["verdicts"]["block"] > 0


def test_forwarded_orders_all_execute():
    for name in ("trading_sim2", "trading_sim3"):
        art = run(name)
        forwarded = [r for r in art.responses if r.verdict.forwards]
        assert art.executions == len(forwarded) and art.unfilled == 0


def test_warned_overtrading_still_executes():
    art = run("trading_sim3")
    warned = [r for r in art.responses if r.verdict is Verdict.WARN and "R2" in r.rule_ids]
    assert warned
    bursts = [r for r in art.ledger.rows if r.fault_kind == "overtrading_burst" and r.applicable]
    assert bursts and all(len(r.action_keys) > 0 for r in bursts)


def test_adversarial_ledger_and_r4_query():
    art = run("trading_sim3")
    rows = art.ledger.rows
    assert len(rows) == art.counts()["ledger_rows"] and all(r.status is not LedgerStatus.PENDING for r in rows)
    shorts = [r for r in rows if r.fault_kind == "short_sale" and r.applicable]
    blocked_r4 = art.gateway.audit.query(agent_id="adv_short", rule_id="R4", verdict="block")
    assert len(blocked_r4) == len(shorts) > 0
    assert {r.agent_id for r in rows} <= {"adv_oversize", "adv_lowcash", "adv_short", "adv_rsi", "adv_burst"}


def test_every_run_keeps_trust_chains():
    for name in ("trading_sim1", "trading_sim2", "trading_sim3", "sim2_replay", "essay_sim1", "essay_sim2", "essay_sim3"):
        check_chain(run(name).audit)


def test_essay_governed_pipeline():
    art = run("essay_sim2")
    by_agent = {}
    for r in art.responses:
        by_agent.setdefault(r.agent_id, []).append(r)
    assert all(r.verdict is Verdict.ALLOW for r in by_agent["idea_agent"] + by_agent["selection_agent"])
    racist = [r for r in by_agent["writer_agent"] if "R1" in r.rule_ids]
    assert racist and all(r.verdict is Verdict.BLOCK for r in racist)
    # An episode stops at its first block, so blocked drafts never reach revision.
    assert len(by_agent["revision_agent"]) < len(by_agent["writer_agent"])


def test_essay_ungoverned_allows_all_drafts():
    art = run("essay_sim1")
    assert {r.verdict for r in art.responses} == {Verdict.ALLOW}
    assert len(art.responses) == 45


def test_essay_catalog_payloads_hit_their_rules():
    art = run("essay_sim3")
    text_items = [c for c in load_catalog() if c["kind"] == "text"]
    assert len(art.ledger) == len(text_items)
    rules_by_key = {}
    for rec in art.audit:
        if rec.agent_id == ADVERSARY_WRITER:
            rules_by_key.setdefault(format_timestamp(rec.timestamp), set()).add(rec.rule_id)
    for row in art.ledger.rows:
        assert row.applicable
        (key,) = row.action_keys
        assert row.expected_rule in rules_by_key[key]


def test_runs_are_byte_identical(tmp_path):
    cfg = load_config("pkg:configs/trading_sim3.yaml")
    a = run_sim(cfg.domain, cfg.sim_regime(), cfg.rules(), cfg.sim_config())
    b = run_sim(cfg.domain, cfg.sim_regime(), cfg.rules(), cfg.sim_config())
    assert a.run_id == b.run_id and a.files() == b.files()
    other = cfg.with_overrides(seed=8)
    assert run_sim(other.domain, other.sim_regime(), other.rules(), other.sim_config()).run_id != a.run_id


def test_artifacts_write_and_parse(tmp_path):
    art = run("trading_sim2")
    paths = art.write(tmp_path)
    assert set(paths) == {"audit.csv", "ledger.csv", "trust.csv", "portfolio.csv", "manifest.json"}
    assert loads(paths["audit.csv"].read_text()) == art.audit


def test_regime_configuration_errors(trading_rules):
    with pytest.raises(ConfigError):
        run_trading_sim(SimRegime(Regime.SIM2_GOVERNED), trading_rules)
    dup = (AgentSpec("a", "momentum"), AgentSpec("a", "momentum"))
    with pytest.raises(ConfigError):
        run_trading_sim(SimRegime(Regime.SIM2_GOVERNED, agents=dup), trading_rules)
    with pytest.raises(ConfigError):
        run_sim("medical", SimRegime(Regime.SIM2_GOVERNED), trading_rules)


def test_day_limit_and_custom_kinds(trading_rules):
    regime = SimRegime(Regime.SIM3_ADVERSARIAL, seed=2, days=10, agents=(AgentSpec("m", "momentum"),))
    art = run_trading_sim(regime, trading_rules, SimConfig(fault_kinds=("short_sale",)))
    assert len(art.ledger) == 10
    assert {r.fault_kind for r in art.ledger.rows} == {"short_sale"}
    assert all(r.verdict is Verdict.BLOCK for r in art.responses if r.agent_id == "adv_short")
