from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from govgate.policy import (
    CompileError,
    ParseError,
    RuleType,
    SchemaError,
    StructuredPredicate,
    TextPattern,
    compile_rule_set,
    load_rule_set,
    parse_rule_set,
    serialize_rule_set,
    validate_rule_set,
)

HATE_RULE = {
    "id": "R1",
    "dimension": "Ethical Compliance",
    "description": "No hate speech",
    "pattern": "racist|hate|discriminate",
    "type": "coercive",
    "severity": 0.9,
}


def doc(*rules, **top):
    return json.dumps({"rules": list(rules), **top})


def test_schema_example_rule_parses():
    rs = parse_rule_set(json.dumps([HATE_RULE]))
    (rule,) = rs.rules
    assert rule.id == "R1"
    assert rule.dimension == "Ethical Compliance"
    assert rule.description == "No hate speech"
    assert rule.condition == TextPattern("racist|hate|discriminate")
    assert rule.rule_type is RuleType.COERCIVE
    assert rule.severity == 0.9


def test_empty_rule_array_is_valid():
    rs = parse_rule_set("[]")
    assert rs.rules == ()
    assert validate_rule_set(rs).ok
    assert len(compile_rule_set(rs)) == 0


def test_duplicate_ids_rejected():
    with pytest.raises(SchemaError) as exc:
        parse_rule_set(json.dumps([HATE_RULE, HATE_RULE]))
    assert exc.value.code == "DuplicateRuleId"


def test_malformed_document_reports_location():
    with pytest.raises(ParseError) as exc:
        parse_rule_set('{"rules": [\n  {"id": "R1",, }]}')
    assert exc.value.line == 2


def test_unknown_type_names_rule():
    with pytest.raises(SchemaError) as exc:
        parse_rule_set(json.dumps([{**HATE_RULE, "id": "R9", "type": "advisory"}]))
    assert exc.value.rule_id == "R9"
    assert "R9" in str(exc.value)


def test_pattern_and_predicate_are_exclusive():
    bad = {**HATE_RULE, "predicate": {"gt": [{"field": "cash"}, 1]}}
    with pytest.raises(SchemaError):
        parse_rule_set(json.dumps([bad]))


def test_extra_fields_preserved():
    rs = parse_rule_set(json.dumps([{**HATE_RULE, "owner": "ethics-team"}]))
    assert rs.rules[0].extra == {"owner": "ethics-team"}
    assert '"owner": "ethics-team"' in serialize_rule_set(rs)


def test_shipped_packs_validate_clean(data_dir):
    for name, n in (("trading", 5), ("essay", 8)):
        rs = load_rule_set(data_dir / "packs" / f"{name}.json", domain=name)
        assert validate_rule_set(rs).findings == ()
        assert len(compile_rule_set(rs)) == n


def test_trading_pack_encodes_risk_table(data_dir):
    rs = load_rule_set(data_dir / "packs" / "trading.json")
    got = [(r.id, r.rule_type.value, r.severity) for r in rs.rules]
    assert got == [
        ("R1", "coercive", 0.9),
        ("R2", "normative", 0.4),
        ("R3", "coercive", 0.8),
        ("R4", "coercive", 1.0),
        ("R5", "mimetic", 0.3),
    ]
    assert all(isinstance(r.condition, StructuredPredicate) for r in rs.rules)


def test_severity_out_of_range_finding():
    rs = parse_rule_set(json.dumps([{**HATE_RULE, "id": "Rx", "severity": 1.5}]))
    report = validate_rule_set(rs)
    assert report.codes() == ["SeverityOutOfRange"]
    assert report.findings[0].rule_id == "Rx"


def test_unknown_field_finding():
    rule = {"id": "R9", "predicate": {"gt": [{"field": "moon_phase"}, 3]}, "type": "normative", "severity": 0.2}
    report = validate_rule_set(parse_rule_set(doc(rule, domain="trading")))
    assert "UnknownField" in report.codes()


def test_uncompilable_and_unportable_patterns():
    broken = {**HATE_RULE, "id": "A", "pattern": "(unclosed"}
    backref = {**HATE_RULE, "id": "B", "pattern": r"(a)\1"}
    report = validate_rule_set(parse_rule_set(json.dumps([broken, backref])))
    assert report.codes() == ["PatternDoesNotCompile", "UnsupportedRegexFeature"]


def test_compile_refuses_findings():
    rs = parse_rule_set(json.dumps([{**HATE_RULE, "severity": 2.0}]))
    with pytest.raises(CompileError) as exc:
        compile_rule_set(rs)
    assert exc.value.findings[0].code == "SeverityOutOfRange"


def test_version_passes_through(data_dir):
    text = (data_dir / "packs" / "trading.json").read_text()
    d = json.loads(text)
    d["version"] = 3
    compiled = compile_rule_set(parse_rule_set(json.dumps(d)))
    assert compiled.version == 3
    assert compiled.domain == "trading"


def test_domain_argument_overrides_document():
    rs = parse_rule_set(doc(HATE_RULE, domain="essay"), domain="custom")
    assert rs.domain == "custom"


_ids = st.lists(st.from_regex(r"R[0-9]{1,3}", fullmatch=True), min_size=0, max_size=6, unique=True)


@st.composite
def rule_docs(draw):
    out = []
    for rid in draw(_ids):
        base = {
            "id": rid,
            "dimension": draw(st.text(max_size=12)),
            "description": draw(st.text(max_size=20)),
            "type": draw(st.sampled_from(["coercive", "normative", "mimetic"])),
            "severity": draw(st.floats(0, 1)),
        }
        if draw(st.booleans()):
            base["pattern"] = draw(st.sampled_from(["hate", "a|b", r"\bfoo\b", "[0-9]+%"]))
        else:
            base["predicate"] = {
                draw(st.sampled_from(["gt", "lt", "ge"])): [{"field": draw(st.sampled_from(["cash", "rsi"]))}, draw(st.integers(0, 100))]
            }
        out.append(base)
    return json.dumps({"domain": "trading", "version": draw(st.integers(1, 9)), "rules": out})


@given(rule_docs())
def test_serialize_round_trip(document):
    rs = parse_rule_set(document)
    assert parse_rule_set(serialize_rule_set(rs)) == rs
    assert parse_rule_set(document) == rs
    if validate_rule_set(rs).ok:
        compile_rule_set(rs)
