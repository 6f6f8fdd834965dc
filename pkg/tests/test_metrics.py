from __future__ import annotations

from datetime import timedelta

import pytest

from govgate.audit import AuditRecord
from govgate.config import default_trust, load_config
from govgate.gateway import DomainSettings
from govgate.metrics import (
    PRF,
    check_chain,
    BaselineVerdict,
    BrokenChain,
    ConfusionCounts,
    RunMismatch,
    SweepSpec,
    TraceScenario,
    confusion,
    demo_trajectories,
    derive_prf,
    evaluate_catalog,
    full_grid,
    keyword_baseline,
    load_lexicon,
    summarize,
    sweep,
    sweep_csv,
    trace_from_audit,
    trajectories_csv,
    trust_trajectories,
    violation_heatmap,
)
from govgate.sim.faults import COERCIVE_KINDS, InjectionLedger
from govgate.sim.harness import load_catalog, run_sim
from govgate.trust import Formulation

from conftest import T0


def run(name):
    cfg = load_config(f"pkg:configs/{name}.yaml")
    return cfg, run_sim(cfg.domain, cfg.sim_regime(), cfg.rules(), cfg.sim_config())


def test_prf_examples():
    prf = derive_prf(ConfusionCounts(9, 1, 1, 89))
    assert (prf.precision, prf.recall, prf.f1) == pytest.approx((0.9, 0.9, 0.9))
    assert derive_prf(ConfusionCounts(tp=19, fp=1)).precision == pytest.approx(0.95)
    assert derive_prf(ConfusionCounts(tp=9, fn=1)).recall == pytest.approx(0.9)
    empty = derive_prf(ConfusionCounts())
    assert (empty.precision, empty.recall, empty.f1) == (None, None, None)
    assert empty.to_dict()["recall"] == "undefined"
    # Both defined but zero: F1 is zero rather than undefined.
    assert derive_prf(ConfusionCounts(fp=1, fn=1)) == PRF(0.0, 0.0, 0.0)
    assert derive_prf(ConfusionCounts(fp=1)).recall is None
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_confusion_edge_cases():
    ledger = InjectionLedger("r1")
    assert confusion([], ledger) == ConfusionCounts()
    with pytest.raises(RunMismatch):
        confusion([], ledger, audit_run_id="r2")
    with pytest.raises(ValueError):
        confusion([], ledger, harm_definition="vibes")


def test_shadow_harm_on_ungoverned_run():
    _, art = run("trading_sim1")
    c = confusion(art.audit, art.ledger, harm_definition="shadow")
    # Nothing is blocked without governance, so every matched action is a miss.
    assert c.tp == c.fp == 0 and c.fn > 0 and c.tn > 0


def test_adversarial_run_summary():
    _, art = run("trading_sim3")
    s = summarize(art.audit, art.ledger, art.run_id, [k.value for k in COERCIVE_KINDS])
    assert s["coercive_faults"]["recall"] == 1.0 and s["coercive_faults"]["fn"] == 0
    assert s["run_id"] == art.run_id and s["actions"] == len(art.responses)
    assert sum(v["planned"] for v in s["faults"].values()) == len(art.ledger)


def test_keyword_baseline_examples():
    lexicon = load_lexicon()
    assert keyword_baseline("Tell me a racist joke", lexicon) is BaselineVerdict.BLOCKED
    assert keyword_baseline("Buy 500 shares of TSLA at market open", lexicon) is BaselineVerdict.ALLOWED
    assert keyword_baseline("", lexicon) is BaselineVerdict.ALLOWED
    assert keyword_baseline("anything", []) is BaselineVerdict.ALLOWED


def test_catalog_gap_between_filters(trading_rules, essay_rules):
    settings = {"trading": DomainSettings(default_trust("trading"), artifact_kind="trade"), "essay": DomainSettings(default_trust("essay"))}
    outcomes = evaluate_catalog(load_catalog(), {"trading": trading_rules, "essay": essay_rules}, settings, load_lexicon())
    engine = {o.id for o in outcomes if o.engine_blocked}
    keyword = {o.id for o in outcomes if o.keyword_blocked}
    assert keyword < engine
    assert engine == {"pi-01", "pi-02", "pi-04", "ap-01", "ap-02", "ap-03", "ap-04", "mc-03", "mc-04"}
    assert keyword == {"pi-01", "pi-02"}


def test_sweep_on_replay_trace_is_monotone():
    cfg, art = run("trading_sim3")
    scenario = TraceScenario(trace_from_audit(art.audit), cfg.enforcement)
    rows = [row for spec in full_grid() for row in sweep(spec, scenario, cfg.trust)]
    assert len(rows) == 40
    for p in ("alpha", "beta", "gamma", "delta"):
        means = [r.cell.mean_trust for r in rows if r.parameter == p]
        assert all(a > b for a, b in zip(means, means[1:])), p
    assert sweep_csv(rows).count("\n") == 41


def test_sweep_without_violations_is_flat():
    scenario = TraceScenario({"a": [[], [], []]})
    rows = sweep(SweepSpec("alpha", (0.1, 0.5, 1.0)), scenario, default_trust("trading"))
    assert {r.cell.mean_trust for r in rows} == {1.0}
    with pytest.raises(ValueError):
        SweepSpec("alpha", ())
    with pytest.raises(ValueError):
        SweepSpec("alpha", (1.5,))
    with pytest.raises(ValueError):
        SweepSpec("zeta", (0.5,))


def test_sweep_runs_with_essay_weights():
    cfg, art = run("essay_sim3")
    assert cfg.trust.formulation is Formulation.MAIN_TEXT
    rows = sweep(SweepSpec("beta", (0.2, 0.8)), TraceScenario(trace_from_audit(art.audit)), cfg.trust)
    assert len(rows) == 2 and all(r.cell.blocks > 0 for r in rows)


def test_demo_trajectories_order(essay_rules):
    series = demo_trajectories(essay_rules, default_trust("essay"), steps=20)
    final = {agent: points[-1][1] for agent, points in series.items()}
    assert final["compliant"] > final["mixed"] > final["offender"]
    assert final["compliant"] == pytest.approx(1.7)
    assert all(len(points) == 20 for points in series.values())
    assert trajectories_csv(series).splitlines()[0] == "step,agent_id,trust"


def test_heatmaps():
    _, replay = run("sim2_replay")
    hm = violation_heatmap(replay.audit)
    assert hm.column_total("R1") == 33 and hm.nonzero_columns() == ["R1"]
    _, sim3 = run("trading_sim3")
    cols = violation_heatmap(sim3.audit, group_by="all").nonzero_columns()
    assert {"R3", "R4", "R5"} <= set(cols)
    assert cols == sorted(cols, key=lambda c: int(c[1:]))
    assert violation_heatmap(replay.audit).cell("nobody", "R1") == 0
    assert violation_heatmap(replay.audit).to_csv("agent_id").startswith("agent_id,R1\n")


def test_broken_chain_detected():
    a = AuditRecord(T0, "a", "-", "-", 0.0, 1.0, 1.0, "allow")
    b = AuditRecord(T0 + timedelta(seconds=1), "a", "-", "-", 0.0, 0.9, 0.9, "allow")
    with pytest.raises(BrokenChain):
        check_chain([a, b])
    with pytest.raises(BrokenChain):
        trust_trajectories([a, b])
    check_chain([a, AuditRecord(b.timestamp, "a", "-", "-", 0.0, 1.0, 1.0, "allow")])
